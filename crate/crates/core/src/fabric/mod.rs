//! Discrete-event fabric: topology, transport, CPU sequencing.

mod system;

use std::collections::BTreeMap;

use thiserror::Error;

use crate::monitor::Alert;
use crate::protocol::cache::ProtocolError;
use crate::protocol::{Address, NodeId};
use crate::trojan::TrojanState;
use crate::workloads::WorkloadBinding;

pub use system::{build_system, Event, System};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid `{field}`: {reason}")]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError { field: field.into(), reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SystemConfig {
    pub num_chiplets: usize,
    pub cores_per_chiplet: usize,
    pub num_mcs: usize,
    pub line_size: u64,
    pub latency_intra: u64,
    pub latency_inter: u64,
    pub latency_mc: u64,
    pub nack_retry_delay: u64,
    pub seed: u64,
    pub max_events: u64,
    /// Cycles without forward progress, while work is pending, before the
    /// run is declared deadlocked.
    pub stall_window: u64,
    /// Extra per-hop latency drawn uniformly from `0..=latency_jitter`.
    /// FIFO order per channel is preserved regardless.
    pub latency_jitter: u64,
    /// Size of the modelled physical address space in bytes.
    pub mem_size: u64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        SystemConfig {
            num_chiplets: 2,
            cores_per_chiplet: 4,
            num_mcs: 2,
            line_size: 8,
            latency_intra: 2,
            latency_inter: 10,
            latency_mc: 15,
            nack_retry_delay: 20,
            seed: 0,
            max_events: 1_000_000,
            stall_window: 1000,
            latency_jitter: 0,
            mem_size: 1 << 20,
        }
    }
}

impl SystemConfig {
    /// The 64-core, eight-chiplet, four-controller target system.
    pub fn full_scale() -> Self {
        SystemConfig { num_chiplets: 8, cores_per_chiplet: 8, num_mcs: 4, ..SystemConfig::default() }
    }

    pub fn num_cores(&self) -> usize {
        self.num_chiplets * self.cores_per_chiplet
    }

    pub fn chiplet_of(&self, core: usize) -> usize {
        core / self.cores_per_chiplet
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("num_chiplets", self.num_chiplets as u64),
            ("cores_per_chiplet", self.cores_per_chiplet as u64),
            ("num_mcs", self.num_mcs as u64),
            ("line_size", self.line_size),
            ("max_events", self.max_events),
            ("stall_window", self.stall_window),
            ("mem_size", self.mem_size),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(ConfigError::new(field, "must be at least 1"));
            }
        }
        if !self.num_mcs.is_power_of_two() {
            return Err(ConfigError::new("num_mcs", "must be a power of two"));
        }
        if !self.mem_size.is_multiple_of(self.line_size) {
            return Err(ConfigError::new("mem_size", "must be a multiple of line_size"));
        }
        Ok(())
    }

    pub fn check_address(&self, field: &str, addr: Address) -> Result<(), ConfigError> {
        if !addr.is_aligned(self.line_size) {
            return Err(ConfigError::new(field, format!("{addr} is not aligned to {} bytes", self.line_size)));
        }
        if addr.0 >= self.mem_size {
            return Err(ConfigError::new(field, format!("{addr} outside the {:#x}-byte address space", self.mem_size)));
        }
        Ok(())
    }

    pub fn check_core(&self, field: &str, core: usize) -> Result<(), ConfigError> {
        if core >= self.num_cores() {
            return Err(ConfigError::new(field, format!("core {core} does not exist ({} cores)", self.num_cores())));
        }
        Ok(())
    }
}

/// Home memory controller of a line: interleaved by line index.
pub fn addr_to_home(addr: Address, num_mcs: usize, line_size: u64) -> NodeId {
    NodeId::MemoryController((addr.line_index(line_size) % num_mcs as u64) as usize)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimReport {
    pub cycles_elapsed: u64,
    pub messages_delivered: u64,
    pub events_processed: u64,
    pub protocol_errors: Vec<(u64, ProtocolError)>,
    pub deadlocked: bool,
    pub hit_event_limit: bool,
    /// (core, line index) → last value the core loaded from that line.
    pub per_core_load_results: BTreeMap<(usize, u64), Vec<u8>>,
    pub workloads: Vec<WorkloadBinding>,
    pub monitor_alerts: Vec<Alert>,
    pub trojan: Option<TrojanState>,
}
