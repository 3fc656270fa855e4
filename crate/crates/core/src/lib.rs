pub mod fabric;
pub mod monitor;
pub mod protocol;
pub mod scenario;
pub mod trace;
pub mod trojan;
pub mod workloads;
