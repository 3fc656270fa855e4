//! Interposer-vantage coherence monitor.
//!
//! The monitor taps every delivered message and every CPU operation,
//! maintains a golden memory model and raises [`Alert`]s. It never feeds
//! anything back into the simulation.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use crate::protocol::cache::{CacheState, CpuOpKind};
use crate::protocol::{decode_value, Address, MessageType, NodeId};
use crate::trace::{CpuStage, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AlertKind {
    SwmrViolation,
    DataValueViolation,
    WritebackProvenance,
    OwnershipWithoutDemand,
    IllegalDirectoryMessage,
    Deadlock,
}

impl AlertKind {
    pub fn name(self) -> &'static str {
        match self {
            AlertKind::SwmrViolation => "SwmrViolation",
            AlertKind::DataValueViolation => "DataValueViolation",
            AlertKind::WritebackProvenance => "WritebackProvenance",
            AlertKind::OwnershipWithoutDemand => "OwnershipWithoutDemand",
            AlertKind::IllegalDirectoryMessage => "IllegalDirectoryMessage",
            AlertKind::Deadlock => "Deadlock",
        }
    }
}

impl fmt::Display for AlertKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alert {
    pub kind: AlertKind,
    pub cycle: u64,
    pub address: Address,
    pub details: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonitorConfig {
    pub enabled: bool,
    /// Whether the monitor sees per-core CPU access logs. Without them the
    /// provenance and ownership-demand heuristics are off.
    pub cpu_visibility: bool,
}

impl Default for MonitorConfig {
    fn default() -> Self {
        MonitorConfig { enabled: true, cpu_visibility: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Access {
    Load,
    Store,
    Evict,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Committed {
    pub value: Vec<u8>,
    pub writer: NodeId,
    pub cycle: u64,
}

/// Sequential reference memory built from completed CPU stores.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GoldenModel {
    pub committed: BTreeMap<Address, Committed>,
    pub store_log: BTreeMap<usize, Vec<(u64, Address, Vec<u8>)>>,
    pub access_log: BTreeMap<usize, Vec<(u64, Address, Access)>>,
}

impl GoldenModel {
    /// Value a load of `addr` must return; cold memory reads as zeros.
    pub fn expected(&self, addr: Address, line_size: usize) -> Vec<u8> {
        self.committed.get(&addr).map(|c| c.value.clone()).unwrap_or_else(|| vec![0; line_size])
    }
}

/// Checks single-writer/multiple-reader over the stable states of one
/// address at a quiescent point.
pub fn check_swmr(addr: Address, cycle: u64, states: &[(usize, CacheState)]) -> Option<Alert> {
    let writers: Vec<usize> = states.iter().filter(|(_, s)| s.is_exclusive()).map(|(c, _)| *c).collect();
    let readers: Vec<usize> =
        states.iter().filter(|(_, s)| matches!(s, CacheState::S | CacheState::O)).map(|(c, _)| *c).collect();
    let violated = writers.len() > 1 || (!writers.is_empty() && !readers.is_empty());
    violated.then(|| {
        let list = |cores: &[usize]| cores.iter().map(|c| format!("core{c}")).collect::<Vec<_>>().join(",");
        Alert {
            kind: AlertKind::SwmrViolation,
            cycle,
            address: addr,
            details: format!("writers={} readers={}", list(&writers), list(&readers)),
        }
    })
}

/// Compares a completed load against the golden model.
pub fn check_data_value(
    core: usize,
    addr: Address,
    observed: &[u8],
    cycle: u64,
    golden: &GoldenModel,
) -> Option<Alert> {
    let expected = golden.expected(addr, observed.len());
    (observed != expected.as_slice()).then(|| Alert {
        kind: AlertKind::DataValueViolation,
        cycle,
        address: addr,
        details: format!("core{core} observed={} expected={}", decode_value(observed), decode_value(&expected)),
    })
}

/// Quiescent-state view of one line, as handed to [`Monitor::final_audit`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSnapshot {
    pub addr: Address,
    pub lines: Vec<(usize, CacheState, Vec<u8>)>,
    pub mem_data: Vec<u8>,
}

impl AddressSnapshot {
    pub fn states(&self) -> Vec<(usize, CacheState)> {
        self.lines.iter().map(|(c, s, _)| (*c, *s)).collect()
    }

    /// Memory value with any dirty cached copy folded in.
    pub fn effective_value(&self) -> &[u8] {
        let find = |want: CacheState| self.lines.iter().find(|(_, s, _)| *s == want).map(|(_, _, d)| d.as_slice());
        find(CacheState::M).or_else(|| find(CacheState::O)).unwrap_or(&self.mem_data)
    }
}

#[derive(Debug, Clone)]
pub struct Monitor {
    pub config: MonitorConfig,
    pub golden: GoldenModel,
    line_size: usize,
    pending: BTreeMap<usize, Address>,
    acquired: BTreeMap<(usize, Address), u64>,
    swmr_flagged: BTreeSet<Address>,
    pub alerts: Vec<Alert>,
}

impl Monitor {
    pub fn new(config: MonitorConfig, line_size: usize) -> Self {
        Monitor {
            config,
            golden: GoldenModel::default(),
            line_size,
            pending: BTreeMap::new(),
            acquired: BTreeMap::new(),
            swmr_flagged: BTreeSet::new(),
            alerts: Vec::new(),
        }
    }

    fn raise(&mut self, found: impl IntoIterator<Item = Alert>) -> Vec<Alert> {
        let found: Vec<Alert> = found.into_iter().collect();
        self.alerts.extend(found.iter().cloned());
        found
    }

    /// Feeds one trace record; returns the alerts it raised.
    pub fn observe(&mut self, record: &TraceRecord) -> Vec<Alert> {
        let mut found = Vec::new();
        match record {
            TraceRecord::Msg { cycle, msg, legal, .. } => {
                let to_home = !msg.destination.is_core();
                if to_home && !legal {
                    found.push(Alert {
                        kind: AlertKind::IllegalDirectoryMessage,
                        cycle: *cycle,
                        address: msg.address,
                        details: format!("{} from {}", msg.msg_type, msg.sender),
                    });
                }
                if let (NodeId::Core(c), MessageType::DATA_E) = (msg.destination, msg.msg_type) {
                    self.acquired.insert((c, msg.address), *cycle);
                    if self.config.cpu_visibility && self.pending.get(&c) != Some(&msg.address) {
                        found.push(Alert {
                            kind: AlertKind::OwnershipWithoutDemand,
                            cycle: *cycle,
                            address: msg.address,
                            details: format!("core{c} granted exclusive data without a pending access"),
                        });
                    }
                }
                if let (true, MessageType::WB_EXCLUSIVE_DIRTY, NodeId::Core(c)) = (to_home, msg.msg_type, msg.sender) {
                    if self.config.cpu_visibility && !self.stored_since_acquire(c, msg.address) {
                        found.push(Alert {
                            kind: AlertKind::WritebackProvenance,
                            cycle: *cycle,
                            address: msg.address,
                            details: format!("core{c} wrote back dirty data it never stored"),
                        });
                    }
                }
            }
            TraceRecord::Cpu { cycle, core, op, stage, value } => {
                let access = match op.kind {
                    CpuOpKind::Load => Access::Load,
                    CpuOpKind::Store(_) => Access::Store,
                    CpuOpKind::Evict => Access::Evict,
                };
                match stage {
                    CpuStage::Issue => {
                        self.pending.insert(*core, op.address);
                        self.golden.access_log.entry(*core).or_default().push((*cycle, op.address, access));
                    }
                    CpuStage::Done => {
                        self.pending.remove(core);
                        match (&op.kind, value) {
                            (CpuOpKind::Store(v), _) => {
                                self.golden.committed.insert(
                                    op.address,
                                    Committed { value: v.clone(), writer: NodeId::Core(*core), cycle: *cycle },
                                );
                                self.golden.store_log.entry(*core).or_default().push((*cycle, op.address, v.clone()));
                            }
                            (CpuOpKind::Load, Some(v)) => {
                                found.extend(check_data_value(*core, op.address, v, *cycle, &self.golden));
                            }
                            _ => {}
                        }
                    }
                }
            }
            _ => {}
        }
        self.raise(found)
    }

    fn stored_since_acquire(&self, core: usize, addr: Address) -> bool {
        let Some(&since) = self.acquired.get(&(core, addr)) else {
            return false;
        };
        self.golden
            .store_log
            .get(&core)
            .is_some_and(|log| log.iter().any(|(cycle, a, _)| *a == addr && *cycle >= since))
    }

    /// SWMR check at a point where `addr` has no messages in flight.
    /// Each address is reported at most once per run.
    pub fn check_quiescent(&mut self, addr: Address, cycle: u64, states: &[(usize, CacheState)]) -> Vec<Alert> {
        if self.swmr_flagged.contains(&addr) {
            return Vec::new();
        }
        let found = check_swmr(addr, cycle, states);
        if found.is_some() {
            self.swmr_flagged.insert(addr);
        }
        self.raise(found)
    }

    /// End-of-run audit over every touched line.
    pub fn final_audit(&mut self, snapshots: &[AddressSnapshot], cycle: u64, deadlock: Option<Address>) -> Vec<Alert> {
        let mut found = Vec::new();
        for snap in snapshots {
            found.extend(self.check_quiescent(snap.addr, cycle, &snap.states()));
            let expected = self.golden.expected(snap.addr, self.line_size);
            let actual = snap.effective_value();
            if actual != expected.as_slice() {
                let alert = Alert {
                    kind: AlertKind::DataValueViolation,
                    cycle,
                    address: snap.addr,
                    details: format!("memory={} expected={}", decode_value(actual), decode_value(&expected)),
                };
                self.alerts.push(alert.clone());
                found.push(alert);
            }
        }
        if let Some(addr) = deadlock {
            let alert = Alert { kind: AlertKind::Deadlock, cycle, address: addr, details: "no progress".into() };
            self.alerts.push(alert.clone());
            found.push(alert);
        }
        found
    }
}
