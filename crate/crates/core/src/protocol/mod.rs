//! Message vocabulary and state machines of the hybrid broadcast-directory
//! MOESI protocol.
//!
//! Everything in this module is a pure function over value types. The
//! cache side lives in [`cache`], the home directory side in [`directory`].
//! Sequencing, transport and timing belong to [`crate::fabric`].

pub mod cache;
pub mod directory;

use std::fmt;

pub use cache::{cache_apply_cpu_op, cache_apply_msg, CacheCtx, CacheLineEntry, CacheState, CpuOutcome};
pub use directory::{dir_apply_msg, DirOutcome, DirState, GlobalDirectoryEntry};

/// Line-aligned physical address in bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub u64);

impl Address {
    pub fn is_aligned(self, line_size: u64) -> bool {
        line_size > 0 && self.0.is_multiple_of(line_size)
    }

    pub fn line_index(self, line_size: u64) -> u64 {
        self.0 / line_size
    }

    pub fn offset_lines(self, lines: u64, line_size: u64) -> Address {
        Address(self.0 + lines * line_size)
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeId {
    Core(usize),
    MemoryController(usize),
}

impl NodeId {
    pub fn is_core(self) -> bool {
        matches!(self, NodeId::Core(_))
    }

    pub fn core_index(self) -> Option<usize> {
        match self {
            NodeId::Core(i) => Some(i),
            NodeId::MemoryController(_) => None,
        }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NodeId::Core(i) => write!(f, "core{i}"),
            NodeId::MemoryController(i) => write!(f, "mc{i}"),
        }
    }
}

impl std::str::FromStr for NodeId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |digits: &str| digits.parse::<usize>().map_err(|_| format!("bad node id `{s}`"));
        if let Some(rest) = s.strip_prefix("core") {
            Ok(NodeId::Core(parse(rest)?))
        } else if let Some(rest) = s.strip_prefix("mc") {
            Ok(NodeId::MemoryController(parse(rest)?))
        } else {
            Err(format!("bad node id `{s}`"))
        }
    }
}

#[allow(non_camel_case_types, clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MessageType {
    GETS,
    GETX,
    PUTX,
    INV,
    ACK,
    NACK,
    DATA_S,
    DATA_E,
    FWD_GETS,
    FWD_GETX,
    WB_ACK,
    WB_EXCLUSIVE_DIRTY,
    WB_CLEAN,
}

impl MessageType {
    pub const ALL: [MessageType; 13] = [
        MessageType::GETS,
        MessageType::GETX,
        MessageType::PUTX,
        MessageType::INV,
        MessageType::ACK,
        MessageType::NACK,
        MessageType::DATA_S,
        MessageType::DATA_E,
        MessageType::FWD_GETS,
        MessageType::FWD_GETX,
        MessageType::WB_ACK,
        MessageType::WB_EXCLUSIVE_DIRTY,
        MessageType::WB_CLEAN,
    ];

    /// Types that always carry a line payload. `ACK` may optionally carry
    /// dirty data piggybacked from an invalidated owner.
    pub fn carries_payload(self) -> bool {
        matches!(self, MessageType::DATA_S | MessageType::DATA_E | MessageType::WB_EXCLUSIVE_DIRTY)
    }

    pub fn is_request(self) -> bool {
        matches!(self, MessageType::GETS | MessageType::GETX | MessageType::PUTX)
    }

    pub fn name(self) -> &'static str {
        match self {
            MessageType::GETS => "GETS",
            MessageType::GETX => "GETX",
            MessageType::PUTX => "PUTX",
            MessageType::INV => "INV",
            MessageType::ACK => "ACK",
            MessageType::NACK => "NACK",
            MessageType::DATA_S => "DATA_S",
            MessageType::DATA_E => "DATA_E",
            MessageType::FWD_GETS => "FWD_GETS",
            MessageType::FWD_GETX => "FWD_GETX",
            MessageType::WB_ACK => "WB_ACK",
            MessageType::WB_EXCLUSIVE_DIRTY => "WB_EXCLUSIVE_DIRTY",
            MessageType::WB_CLEAN => "WB_CLEAN",
        }
    }
}

impl fmt::Display for MessageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for MessageType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MessageType::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown message type `{s}`"))
    }
}

/// One protocol packet on the fabric.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoherenceMessage {
    pub msg_type: MessageType,
    pub sender: NodeId,
    pub destination: NodeId,
    pub address: Address,
    pub payload: Option<Vec<u8>>,
    pub acks_expected: Option<u32>,
    pub txn_id: u64,
}

impl CoherenceMessage {
    pub fn new(msg_type: MessageType, sender: NodeId, destination: NodeId, address: Address, txn_id: u64) -> Self {
        CoherenceMessage { msg_type, sender, destination, address, payload: None, acks_expected: None, txn_id }
    }

    pub fn with_payload(mut self, payload: Vec<u8>) -> Self {
        self.payload = Some(payload);
        self
    }

    pub fn with_acks(mut self, acks: u32) -> Self {
        self.acks_expected = Some(acks);
        self
    }

    /// Checks the payload/ack-count shape rules for this message type.
    pub fn is_well_formed(&self, line_size: usize) -> bool {
        let payload_ok = match (&self.payload, self.msg_type) {
            (Some(p), t) if t.carries_payload() || t == MessageType::ACK => p.len() == line_size,
            (None, t) => !t.carries_payload(),
            _ => false,
        };
        let acks_ok = self.acks_expected.is_none() || self.msg_type == MessageType::DATA_E;
        payload_ok && acks_ok
    }
}

/// Encodes a small integer value as a little-endian line of `line_size` bytes.
pub fn encode_value(value: u64, line_size: usize) -> Vec<u8> {
    let mut line = vec![0u8; line_size];
    for (i, b) in value.to_le_bytes().iter().take(line_size).enumerate() {
        line[i] = *b;
    }
    line
}

/// Decodes the low eight bytes of a line as a little-endian integer.
pub fn decode_value(line: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    for (i, b) in line.iter().take(8).enumerate() {
        buf[i] = *b;
    }
    u64::from_le_bytes(buf)
}

pub fn hex_bytes(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn parse_hex_bytes(s: &str) -> Option<Vec<u8>> {
    let s = s.strip_prefix("0x").unwrap_or(s);
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len()).step_by(2).map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_id_round_trips_through_text() {
        for n in [NodeId::Core(0), NodeId::Core(63), NodeId::MemoryController(3)] {
            assert_eq!(n.to_string().parse::<NodeId>().unwrap(), n);
        }
        assert!("cpu1".parse::<NodeId>().is_err());
    }

    #[test]
    fn value_encoding_is_little_endian() {
        assert_eq!(encode_value(5, 8), vec![5, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(decode_value(&encode_value(0x1234, 8)), 0x1234);
        assert_eq!(encode_value(0x1ff, 1), vec![0xff]);
    }

    #[test]
    fn hex_helpers() {
        assert_eq!(hex_bytes(&[0x05, 0xab]), "05ab");
        assert_eq!(parse_hex_bytes("05ab"), Some(vec![0x05, 0xab]));
        assert_eq!(parse_hex_bytes("0x05"), Some(vec![0x05]));
        assert_eq!(parse_hex_bytes("5"), None);
        assert_eq!(parse_hex_bytes("zz"), None);
    }

    #[test]
    fn payload_shape_rules() {
        let m = CoherenceMessage::new(MessageType::GETX, NodeId::Core(0), NodeId::MemoryController(0), Address(0), 1);
        assert!(m.is_well_formed(8));
        assert!(!m.clone().with_payload(vec![0; 8]).is_well_formed(8));
        let d = CoherenceMessage::new(MessageType::DATA_E, NodeId::MemoryController(0), NodeId::Core(0), Address(0), 1);
        assert!(!d.is_well_formed(8));
        assert!(d.clone().with_payload(vec![0; 8]).with_acks(3).is_well_formed(8));
        let a = CoherenceMessage::new(MessageType::ACK, NodeId::Core(1), NodeId::MemoryController(0), Address(0), 1);
        assert!(a.is_well_formed(8));
        assert!(a.clone().with_payload(vec![1; 8]).is_well_formed(8));
        assert!(!a.with_acks(1).is_well_formed(8));
    }
}
