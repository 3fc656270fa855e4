//! CPU operation generators bound to cores.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::cache::CpuOpKind;
use crate::protocol::{decode_value, encode_value, Address};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CpuOp {
    pub kind: CpuOpKind,
    pub address: Address,
}

impl CpuOp {
    pub fn load(address: Address) -> Self {
        CpuOp { kind: CpuOpKind::Load, address }
    }

    pub fn store(address: Address, line: Vec<u8>) -> Self {
        CpuOp { kind: CpuOpKind::Store(line), address }
    }

    pub fn evict(address: Address) -> Self {
        CpuOp { kind: CpuOpKind::Evict, address }
    }
}

impl fmt::Display for CpuOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            CpuOpKind::Store(v) => write!(f, "ST {} {:#x}", self.address, decode_value(v)),
            k => write!(f, "{} {}", k.mnemonic(), self.address),
        }
    }
}

/// Which generator produced a program; kept for reporting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadKind {
    VictimArray { base: Address, n: u64 },
    Random { seed: u64, pool: Vec<Address>, ops: usize },
    Script,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadBinding {
    pub core: usize,
    pub kind: WorkloadKind,
    pub program: Vec<CpuOp>,
    /// Cycle at which the first op issues.
    pub start: u64,
    /// Program index of each completed load → line it observed.
    pub results: BTreeMap<usize, Vec<u8>>,
}

impl WorkloadBinding {
    pub fn new(core: usize, kind: WorkloadKind, program: Vec<CpuOp>) -> Self {
        WorkloadBinding { core, kind, program, start: 0, results: BTreeMap::new() }
    }

    pub fn starting_at(mut self, cycle: u64) -> Self {
        self.start = cycle;
        self
    }

    /// Observed load values in program order, decoded as integers.
    pub fn observed_values(&self) -> Vec<u64> {
        self.results.values().map(|line| decode_value(line)).collect()
    }

    pub fn observed_sum(&self) -> u64 {
        self.observed_values().iter().sum()
    }
}

/// Stores 1,0,1,0,… to `n` consecutive lines from `base`, then loads them back.
pub fn victim_array_workload(base: Address, n: u64, core: usize, line_size: u64) -> WorkloadBinding {
    let elem = |i: u64| base.offset_lines(i, line_size);
    let stores =
        (0..n).map(|i| CpuOp::store(elem(i), encode_value(if i % 2 == 0 { 1 } else { 0 }, line_size as usize)));
    let loads = (0..n).map(|i| CpuOp::load(elem(i)));
    WorkloadBinding::new(core, WorkloadKind::VictimArray { base, n }, stores.chain(loads).collect())
}

/// Uniform 50/50 load/store mix over `pool`; stores write a random byte value.
pub fn random_workload(seed: u64, core: usize, pool: &[Address], ops: usize, line_size: u64) -> WorkloadBinding {
    assert!(!pool.is_empty() || ops == 0, "address pool must be non-empty");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let program = (0..ops)
        .map(|_| {
            let addr = pool[rng.gen_range(0..pool.len())];
            if rng.gen_bool(0.5) {
                CpuOp::load(addr)
            } else {
                CpuOp::store(addr, encode_value(u64::from(rng.gen::<u8>()), line_size as usize))
            }
        })
        .collect();
    WorkloadBinding::new(core, WorkloadKind::Random { seed, pool: pool.to_vec(), ops }, program)
}

/// Parses `LD <addr>; ST <addr> <value>; EV <addr>` scripts.
pub fn parse_script(text: &str, line_size: u64) -> Result<Vec<CpuOp>, String> {
    text.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|stmt| {
            let parts: Vec<&str> = stmt.split_whitespace().collect();
            let addr = parts
                .get(1)
                .ok_or_else(|| format!("`{stmt}`: missing address"))
                .and_then(|a| parse_u64(a).map(Address).ok_or_else(|| format!("`{stmt}`: bad address")))?;
            match (parts[0].to_ascii_uppercase().as_str(), parts.len()) {
                ("LD", 2) => Ok(CpuOp::load(addr)),
                ("EV", 2) => Ok(CpuOp::evict(addr)),
                ("ST", 3) => {
                    let v = parse_u64(parts[2]).ok_or_else(|| format!("`{stmt}`: bad value"))?;
                    Ok(CpuOp::store(addr, encode_value(v, line_size as usize)))
                }
                _ => Err(format!("`{stmt}`: expected LD/EV <addr> or ST <addr> <value>")),
            }
        })
        .collect()
}

pub fn render_script(program: &[CpuOp]) -> String {
    program.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub(crate) fn parse_u64(s: &str) -> Option<u64> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}
