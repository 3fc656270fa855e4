//! Line-oriented trace records.
//!
//! Every record renders to one line of space-separated `key=value` pairs that
//! starts with `cycle=` and `kind=`. Field order is fixed per kind so traces
//! can be diffed against golden files.

use std::fmt::{self, Write as _};
use std::io;

use crate::monitor::Alert;
use crate::protocol::{hex_bytes, Address, CoherenceMessage, MessageType, NodeId};
use crate::trojan::ForgingPhase;
use crate::workloads::CpuOp;

pub const TRACE_FORMAT_HEADER: &str = "format=1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpuStage {
    Issue,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrojanEvent {
    Phase(ForgingPhase),
    Snoop { msg_type: MessageType, addr: Address },
    Block { msg_type: MessageType, addr: Address, txn: u64 },
    Inject { msg_type: MessageType, dst: NodeId, addr: Address, txn: u64 },
    Modify { from: MessageType, to: MessageType, addr: Address, txn: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceRecord {
    /// A message delivered at its destination. `via` is the physical
    /// sending node, which differs from `msg.sender` for forwarded requests
    /// and for packets whose sender field was rewritten.
    Msg {
        cycle: u64,
        via: NodeId,
        msg: CoherenceMessage,
        legal: bool,
        forged: bool,
    },
    Cpu {
        cycle: u64,
        core: usize,
        op: CpuOp,
        stage: CpuStage,
        value: Option<Vec<u8>>,
    },
    Trojan {
        cycle: u64,
        core: usize,
        event: TrojanEvent,
    },
    Alert(Alert),
    End {
        cycle: u64,
        messages: u64,
        deadlocked: bool,
        protocol_errors: usize,
        alerts: usize,
    },
}

impl TraceRecord {
    pub fn cycle(&self) -> u64 {
        match self {
            TraceRecord::Msg { cycle, .. }
            | TraceRecord::Cpu { cycle, .. }
            | TraceRecord::Trojan { cycle, .. }
            | TraceRecord::End { cycle, .. } => *cycle,
            TraceRecord::Alert(a) => a.cycle,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TraceRecord::Msg { .. } => "MSG",
            TraceRecord::Cpu { .. } => "CPU",
            TraceRecord::Trojan { .. } => "TROJAN",
            TraceRecord::Alert(_) => "ALERT",
            TraceRecord::End { .. } => "END",
        }
    }
}

fn flag(b: bool) -> u8 {
    u8::from(b)
}

impl fmt::Display for TraceRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cycle={} kind={}", self.cycle(), self.kind())?;
        match self {
            TraceRecord::Msg { via, msg, legal, forged, .. } => {
                write!(
                    f,
                    " src={} dst={} type={} addr={} txn={}",
                    msg.sender, msg.destination, msg.msg_type, msg.address, msg.txn_id
                )?;
                if *via != msg.sender {
                    write!(f, " via={via}")?;
                }
                if let Some(k) = msg.acks_expected {
                    write!(f, " acks={k}")?;
                }
                if let Some(p) = &msg.payload {
                    write!(f, " data={}", hex_bytes(p))?;
                }
                if *forged {
                    f.write_str(" forged=1")?;
                }
                write!(f, " legal={}", flag(*legal))
            }
            TraceRecord::Cpu { core, op, stage, value, .. } => {
                let stage = match stage {
                    CpuStage::Issue => "issue",
                    CpuStage::Done => "done",
                };
                write!(f, " core=core{core} stage={stage} op={} addr={}", op.kind.mnemonic(), op.address)?;
                let data = match (&op.kind, value) {
                    (_, Some(v)) => Some(v),
                    (crate::protocol::cache::CpuOpKind::Store(v), None) => Some(v),
                    _ => None,
                };
                if let Some(d) = data {
                    write!(f, " data={}", hex_bytes(d))?;
                }
                Ok(())
            }
            TraceRecord::Trojan { core, event, .. } => {
                write!(f, " core=core{core}")?;
                match event {
                    TrojanEvent::Phase(p) => write!(f, " phase={p}"),
                    TrojanEvent::Snoop { msg_type, addr } => write!(f, " action=snoop type={msg_type} addr={addr}"),
                    TrojanEvent::Block { msg_type, addr, txn } => {
                        write!(f, " action=block type={msg_type} addr={addr} txn={txn}")
                    }
                    TrojanEvent::Inject { msg_type, dst, addr, txn } => {
                        write!(f, " action=inject type={msg_type} dst={dst} addr={addr} txn={txn}")
                    }
                    TrojanEvent::Modify { from, to, addr, txn } => {
                        write!(f, " action=modify type={from} to={to} addr={addr} txn={txn}")
                    }
                }
            }
            TraceRecord::Alert(a) => {
                write!(f, " alert_kind={} addr={}", a.kind, a.address)?;
                if !a.details.is_empty() {
                    write!(f, " details={}", a.details.replace(char::is_whitespace, "_"))?;
                }
                Ok(())
            }
            TraceRecord::End { messages, deadlocked, protocol_errors, alerts, .. } => write!(
                f,
                " messages={messages} deadlocked={} protocol_errors={protocol_errors} alerts={alerts}",
                flag(*deadlocked)
            ),
        }
    }
}

/// Renders one record as its trace line (no trailing newline).
pub fn emit_trace_record(record: &TraceRecord) -> String {
    record.to_string()
}

/// Renders a whole trace, header line included.
pub fn render_trace(records: &[TraceRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 64);
    out.push_str(TRACE_FORMAT_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{r}");
    }
    out
}

pub fn write_trace<W: io::Write>(mut w: W, records: &[TraceRecord]) -> io::Result<()> {
    w.write_all(render_trace(records).as_bytes())
}

/// Splits a trace line into its `key=value` pairs.
pub fn parse_fields(line: &str) -> Vec<(&str, &str)> {
    line.split_whitespace().filter_map(|tok| tok.split_once('=')).collect()
}

/// Looks up one field of a trace line.
pub fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    parse_fields(line).into_iter().find(|(k, _)| *k == key).map(|(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::monitor::AlertKind;

    #[test]
    fn message_hop_format() {
        let msg =
            CoherenceMessage::new(MessageType::GETX, NodeId::Core(3), NodeId::MemoryController(0), Address(0x40), 5);
        let r = TraceRecord::Msg { cycle: 42, via: NodeId::Core(3), msg, legal: true, forged: false };
        assert_eq!(emit_trace_record(&r), "cycle=42 kind=MSG src=core3 dst=mc0 type=GETX addr=0x40 txn=5 legal=1");
    }

    #[test]
    fn forwarded_hop_names_physical_source() {
        let msg =
            CoherenceMessage::new(MessageType::DATA_E, NodeId::MemoryController(1), NodeId::Core(0), Address(0x8), 2)
                .with_payload(vec![1, 0])
                .with_acks(3);
        let r = TraceRecord::Msg { cycle: 7, via: NodeId::Core(4), msg, legal: false, forged: true };
        assert_eq!(
            r.to_string(),
            "cycle=7 kind=MSG src=mc1 dst=core0 type=DATA_E addr=0x8 txn=2 via=core4 acks=3 data=0100 forged=1 legal=0"
        );
    }

    #[test]
    fn trojan_phase_format() {
        let r = TraceRecord::Trojan { cycle: 57, core: 7, event: TrojanEvent::Phase(ForgingPhase::Phase1AwaitData) };
        assert_eq!(r.to_string(), "cycle=57 kind=TROJAN core=core7 phase=Phase1_AwaitData");
    }

    #[test]
    fn alert_format() {
        let a =
            Alert { kind: AlertKind::DataValueViolation, cycle: 91, address: Address(0x100), details: String::new() };
        assert_eq!(
            TraceRecord::Alert(a.clone()).to_string(),
            "cycle=91 kind=ALERT alert_kind=DataValueViolation addr=0x100"
        );
        let a = Alert { details: "core0 saw 5".into(), ..a };
        assert_eq!(field(&TraceRecord::Alert(a).to_string(), "details"), Some("core0_saw_5"));
    }

    #[test]
    fn cpu_record_format() {
        let op = CpuOp::store(Address(0x1000), vec![1, 0]);
        let r = TraceRecord::Cpu { cycle: 3, core: 0, op, stage: CpuStage::Issue, value: None };
        assert_eq!(r.to_string(), "cycle=3 kind=CPU core=core0 stage=issue op=ST addr=0x1000 data=0100");
        let r = TraceRecord::Cpu {
            cycle: 9,
            core: 1,
            op: CpuOp::load(Address(0)),
            stage: CpuStage::Done,
            value: Some(vec![5]),
        };
        assert_eq!(r.to_string(), "cycle=9 kind=CPU core=core1 stage=done op=LD addr=0x0 data=05");
    }

    #[test]
    fn render_has_header() {
        let end = TraceRecord::End { cycle: 0, messages: 0, deadlocked: false, protocol_errors: 0, alerts: 0 };
        assert_eq!(
            render_trace(&[end]),
            "format=1\ncycle=0 kind=END messages=0 deadlocked=0 protocol_errors=0 alerts=0\n"
        );
    }
}
