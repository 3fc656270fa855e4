//! Home-directory side: one slice per memory controller, owner + busy only.

use std::fmt;

use super::{CoherenceMessage, MessageType, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DirState {
    Unowned,
    Owned(NodeId),
    BusyGetx {
        requestor: NodeId,
    },
    /// Read forwarded to `owner`; waits for the requestor's unblocking ACK.
    BusyGets {
        requestor: NodeId,
        owner: NodeId,
    },
    BusyWb {
        owner: NodeId,
    },
}

impl DirState {
    pub fn is_busy(self) -> bool {
        !matches!(self, DirState::Unowned | DirState::Owned(_))
    }
}

impl fmt::Display for DirState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DirState::Unowned => f.write_str("Unowned"),
            DirState::Owned(o) => write!(f, "Owned({o})"),
            DirState::BusyGetx { requestor } => write!(f, "BusyGETX({requestor})"),
            DirState::BusyGets { requestor, owner } => write!(f, "BusyGETS({requestor},{owner})"),
            DirState::BusyWb { owner } => write!(f, "BusyWB({owner})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GlobalDirectoryEntry {
    pub dstate: DirState,
    pub mem_data: Vec<u8>,
    /// Outstanding invalidation acks; meaningful only in `BusyGetx`.
    pub acks_pending: u32,
    /// Set once a read has been served by forwarding, cleared by the next
    /// completed GETX. With no sharer list this is the only hint that clean
    /// S copies may exist after the owner writes back.
    pub sharers_possible: bool,
    /// Transaction tag of the busy request.
    pub txn: u64,
}

impl GlobalDirectoryEntry {
    pub fn new(line_size: usize) -> Self {
        GlobalDirectoryEntry {
            dstate: DirState::Unowned,
            mem_data: vec![0; line_size],
            acks_pending: 0,
            sharers_possible: false,
            txn: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirOutcome {
    pub entry: GlobalDirectoryEntry,
    pub emitted: Vec<CoherenceMessage>,
    pub legal: bool,
}

/// Applies one message at the home slice `msg.destination`.
///
/// Every input yields a result. A (state, type, sender) triple outside the
/// transition table produces a NACK to the sender with `legal = false`.
pub fn dir_apply_msg(entry: &GlobalDirectoryEntry, msg: &CoherenceMessage, num_cores: usize) -> DirOutcome {
    use DirState::*;
    use MessageType::*;

    let home = msg.destination;
    let sender = msg.sender;
    let to = |t: MessageType, dst: NodeId, txn: u64| CoherenceMessage::new(t, home, dst, msg.address, txn);
    let nack = |legal: bool| DirOutcome { entry: entry.clone(), emitted: vec![to(NACK, sender, msg.txn_id)], legal };
    let grant = |e: &mut GlobalDirectoryEntry, requestor: NodeId| {
        e.dstate = Owned(requestor);
        e.acks_pending = 0;
        e.sharers_possible = false;
        to(DATA_E, requestor, e.txn).with_payload(e.mem_data.clone()).with_acks(num_cores.saturating_sub(1) as u32)
    };

    if !sender.is_core() {
        return nack(false);
    }
    let mut next = entry.clone();
    let mut out = Vec::new();
    match (entry.dstate, msg.msg_type) {
        (Unowned, GETS) if entry.sharers_possible => {
            out.push(to(DATA_S, sender, msg.txn_id).with_payload(entry.mem_data.clone()));
        }
        (Unowned, GETS) => {
            next.dstate = Owned(sender);
            out.push(to(DATA_E, sender, msg.txn_id).with_payload(entry.mem_data.clone()).with_acks(0));
        }
        (Owned(owner), GETS) if owner != sender => {
            next.dstate = BusyGets { requestor: sender, owner };
            next.txn = msg.txn_id;
            // Sender field carries the original requestor so the owner replies directly.
            out.push(CoherenceMessage::new(FWD_GETS, sender, owner, msg.address, msg.txn_id));
        }
        (Unowned | Owned(_), GETX) => {
            next.txn = msg.txn_id;
            let others = (0..num_cores).map(NodeId::Core).filter(|c| *c != sender);
            out.extend(others.map(|c| to(INV, c, msg.txn_id)));
            if out.is_empty() {
                out.push(grant(&mut next, sender));
            } else {
                next.acks_pending = out.len() as u32;
                next.dstate = BusyGetx { requestor: sender };
            }
        }
        (Owned(owner), PUTX) if owner == sender => {
            next.dstate = BusyWb { owner };
            next.txn = msg.txn_id;
            out.push(to(WB_ACK, sender, msg.txn_id));
        }
        (BusyGetx { requestor }, ACK) if sender != requestor && entry.acks_pending > 0 => {
            if let Some(dirty) = &msg.payload {
                next.mem_data.clone_from(dirty);
            }
            next.acks_pending -= 1;
            if next.acks_pending == 0 {
                out.push(grant(&mut next, requestor));
            }
        }
        (BusyGets { requestor, owner }, ACK) if sender == requestor => {
            next.dstate = Owned(owner);
            next.sharers_possible = true;
        }
        (BusyWb { owner }, WB_EXCLUSIVE_DIRTY) if owner == sender => match &msg.payload {
            Some(data) => {
                next.mem_data.clone_from(data);
                next.dstate = Unowned;
            }
            None => return nack(false),
        },
        (BusyWb { owner }, WB_CLEAN) if owner == sender => next.dstate = Unowned,
        (BusyGetx { .. } | BusyGets { .. } | BusyWb { .. }, GETS | GETX | PUTX) => return nack(true),
        _ => return nack(false),
    }
    DirOutcome { entry: next, emitted: out, legal: true }
}
