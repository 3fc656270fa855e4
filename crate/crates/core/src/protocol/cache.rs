//! Cache-controller side of the protocol: one private unified cache per core.

use std::fmt;

use thiserror::Error;

use super::{Address, CoherenceMessage, MessageType, NodeId};

#[allow(non_camel_case_types, clippy::upper_case_acronyms)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum CacheState {
    M,
    O,
    E,
    S,
    I,
    /// GETS issued, waiting for data.
    IS_D,
    /// GETX issued, waiting for data with all acks aggregated at the home.
    IM_AD,
    /// PUTX issued, waiting for WB_ACK.
    MI_A,
}

impl CacheState {
    pub const ALL: [CacheState; 8] = [
        CacheState::M,
        CacheState::O,
        CacheState::E,
        CacheState::S,
        CacheState::I,
        CacheState::IS_D,
        CacheState::IM_AD,
        CacheState::MI_A,
    ];

    pub fn is_transient(self) -> bool {
        matches!(self, CacheState::IS_D | CacheState::IM_AD | CacheState::MI_A)
    }

    pub fn is_exclusive(self) -> bool {
        matches!(self, CacheState::M | CacheState::E)
    }

    pub fn is_owner(self) -> bool {
        matches!(self, CacheState::M | CacheState::O | CacheState::E)
    }

    pub fn is_dirty(self) -> bool {
        matches!(self, CacheState::M | CacheState::O)
    }

    pub fn can_read(self) -> bool {
        matches!(self, CacheState::M | CacheState::O | CacheState::E | CacheState::S)
    }

    pub fn name(self) -> &'static str {
        match self {
            CacheState::M => "M",
            CacheState::O => "O",
            CacheState::E => "E",
            CacheState::S => "S",
            CacheState::I => "I",
            CacheState::IS_D => "IS_D",
            CacheState::IM_AD => "IM_AD",
            CacheState::MI_A => "MI_A",
        }
    }
}

impl fmt::Display for CacheState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A core's record of one line.
///
/// `revert` is the stable state the line returns to when the outstanding
/// request is NACKed. It also remembers whether the core still owns the
/// line while a request is in flight (an O-state upgrade keeps serving
/// forwards until the directory answers). It is `I` for stable entries.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheLineEntry {
    pub state: CacheState,
    pub data: Vec<u8>,
    pub pending_acks: u32,
    pub revert: CacheState,
}

impl CacheLineEntry {
    pub fn invalid(line_size: usize) -> Self {
        CacheLineEntry { state: CacheState::I, data: vec![0; line_size], pending_acks: 0, revert: CacheState::I }
    }

    fn settle(&mut self, state: CacheState) {
        self.state = state;
        self.revert = CacheState::I;
        self.pending_acks = 0;
        if state == CacheState::I {
            self.data.iter_mut().for_each(|b| *b = 0);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum CpuOpKind {
    Load,
    /// Full-line store.
    Store(Vec<u8>),
    /// Voluntary replacement of the line.
    Evict,
}

impl CpuOpKind {
    pub fn mnemonic(&self) -> &'static str {
        match self {
            CpuOpKind::Load => "LD",
            CpuOpKind::Store(_) => "ST",
            CpuOpKind::Evict => "EV",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    Loaded(Vec<u8>),
    Stored,
    Evicted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CpuOutcome {
    pub entry: CacheLineEntry,
    pub emitted: Vec<CoherenceMessage>,
    pub completed: Option<Completion>,
}

/// Who is applying the transition: the core, its home slice for the line and the line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CacheCtx {
    pub node: NodeId,
    pub home: NodeId,
    pub addr: Address,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorTrigger {
    Message(MessageType),
    CpuOp,
}

impl fmt::Display for ErrorTrigger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorTrigger::Message(t) => write!(f, "{t}"),
            ErrorTrigger::CpuOp => f.write_str("CPU"),
        }
    }
}

/// A (state, event) pair outside the cache transition table.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{node}: no transition for ({state}, {trigger}) at {address}")]
pub struct ProtocolError {
    pub node: NodeId,
    pub address: Address,
    pub state: CacheState,
    pub trigger: ErrorTrigger,
}

/// Applies a processor request to a stable line.
pub fn cache_apply_cpu_op(
    entry: &CacheLineEntry,
    op: &CpuOpKind,
    ctx: &CacheCtx,
    txn: u64,
) -> Result<CpuOutcome, ProtocolError> {
    use CacheState::*;

    let mut next = entry.clone();
    let request = |t: MessageType| CoherenceMessage::new(t, ctx.node, ctx.home, ctx.addr, txn);
    let (emitted, completed) = match (entry.state, op) {
        (M | O | E | S, CpuOpKind::Load) => (vec![], Some(Completion::Loaded(entry.data.clone()))),
        (I, CpuOpKind::Load) => {
            next.state = IS_D;
            next.revert = I;
            (vec![request(MessageType::GETS)], None)
        }
        (M | E, CpuOpKind::Store(value)) => {
            next.settle(M);
            next.data.clone_from(value);
            (vec![], Some(Completion::Stored))
        }
        (I | S | O, CpuOpKind::Store(_)) => {
            next.state = IM_AD;
            next.revert = entry.state;
            next.pending_acks = 0;
            (vec![request(MessageType::GETX)], None)
        }
        (M | O | E, CpuOpKind::Evict) => {
            next.state = MI_A;
            next.revert = entry.state;
            (vec![request(MessageType::PUTX)], None)
        }
        (S | I, CpuOpKind::Evict) => {
            next.settle(I);
            (vec![], Some(Completion::Evicted))
        }
        (IS_D | IM_AD | MI_A, _) => {
            return Err(ProtocolError {
                node: ctx.node,
                address: ctx.addr,
                state: entry.state,
                trigger: ErrorTrigger::CpuOp,
            })
        }
    };
    Ok(CpuOutcome { entry: next, emitted, completed })
}

/// Applies an incoming message to the line. Pairs outside the table are
/// returned as [`ProtocolError`] and leave the line untouched.
pub fn cache_apply_msg(
    entry: &CacheLineEntry,
    msg: &CoherenceMessage,
    ctx: &CacheCtx,
) -> Result<(CacheLineEntry, Vec<CoherenceMessage>), ProtocolError> {
    use CacheState::*;
    use MessageType::*;

    let err = || ProtocolError {
        node: ctx.node,
        address: ctx.addr,
        state: entry.state,
        trigger: ErrorTrigger::Message(msg.msg_type),
    };
    let reply = |t: MessageType, dst: NodeId| CoherenceMessage::new(t, ctx.node, dst, ctx.addr, msg.txn_id);
    let ack_home = |dirty: Option<&Vec<u8>>| {
        let ack = reply(ACK, ctx.home);
        match dirty {
            Some(d) => ack.with_payload(d.clone()),
            None => ack,
        }
    };
    // The core is still the recorded owner while its own request is in flight.
    let owns_in_flight = matches!(entry.state, IM_AD | MI_A) && entry.revert.is_owner();

    let mut next = entry.clone();
    let mut out = Vec::new();
    match (entry.state, msg.msg_type) {
        (M | O | E | S, INV) => {
            out.push(ack_home(entry.state.is_dirty().then_some(&entry.data)));
            next.settle(I);
        }
        (I | IS_D, INV) => out.push(ack_home(None)),
        (IM_AD | MI_A, INV) => {
            out.push(ack_home(entry.revert.is_dirty().then_some(&entry.data)));
            next.revert = I;
        }

        (IS_D, DATA_S | DATA_E) => {
            let data = msg.payload.as_ref().ok_or_else(err)?;
            next.settle(if msg.msg_type == DATA_S { S } else { E });
            next.data.clone_from(data);
            // Data supplied by a peer leaves the home busy until we unblock it.
            if msg.sender.is_core() {
                out.push(ack_home(None));
            }
        }
        (IM_AD, DATA_E) => {
            let data = msg.payload.as_ref().ok_or_else(err)?;
            let keep_own = entry.revert == O;
            next.settle(M);
            if !keep_own {
                next.data.clone_from(data);
            }
            if msg.sender.is_core() {
                out.push(ack_home(None));
            }
        }

        (M | E | O, FWD_GETS) => {
            out.push(reply(DATA_S, msg.sender).with_payload(entry.data.clone()));
            next.settle(O);
        }
        (IM_AD | MI_A, FWD_GETS) if owns_in_flight => {
            out.push(reply(DATA_S, msg.sender).with_payload(entry.data.clone()));
            next.revert = O;
        }
        (M | E | O, FWD_GETX) => {
            out.push(reply(DATA_E, msg.sender).with_payload(entry.data.clone()).with_acks(0));
            next.settle(I);
        }
        (IM_AD | MI_A, FWD_GETX) if owns_in_flight => {
            out.push(reply(DATA_E, msg.sender).with_payload(entry.data.clone()).with_acks(0));
            next.revert = I;
        }

        (MI_A, WB_ACK) if entry.revert.is_owner() => {
            let wb = if entry.revert.is_dirty() {
                reply(WB_EXCLUSIVE_DIRTY, ctx.home).with_payload(entry.data.clone())
            } else {
                reply(WB_CLEAN, ctx.home)
            };
            out.push(wb);
            next.settle(I);
        }

        (IS_D | IM_AD | MI_A, NACK) => {
            let back = entry.revert;
            let data = entry.data.clone();
            next.settle(back);
            if back != I {
                next.data = data;
            }
        }

        _ => return Err(err()),
    }
    Ok((next, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: usize = 8;
    const ME: NodeId = NodeId::Core(0);
    const OTHER: NodeId = NodeId::Core(1);
    const HOME: NodeId = NodeId::MemoryController(0);

    fn ctx() -> CacheCtx {
        CacheCtx { node: ME, home: HOME, addr: Address(0x40) }
    }

    fn entry(state: CacheState, fill: u8) -> CacheLineEntry {
        CacheLineEntry { state, data: vec![fill; LINE], pending_acks: 0, revert: CacheState::I }
    }

    fn msg(t: MessageType, from: NodeId) -> CoherenceMessage {
        let m = CoherenceMessage::new(t, from, ME, Address(0x40), 9);
        if t.carries_payload() {
            m.with_payload(vec![0xaa; LINE])
        } else {
            m
        }
    }

    #[test]
    fn cold_read_miss_issues_gets() {
        let out = cache_apply_cpu_op(&CacheLineEntry::invalid(LINE), &CpuOpKind::Load, &ctx(), 1).unwrap();
        assert_eq!(out.entry.state, CacheState::IS_D);
        assert_eq!(out.emitted, vec![CoherenceMessage::new(MessageType::GETS, ME, HOME, Address(0x40), 1)]);
        assert_eq!(out.completed, None);
    }

    #[test]
    fn silent_exclusive_upgrade() {
        let out = cache_apply_cpu_op(&entry(CacheState::E, 0), &CpuOpKind::Store(vec![1; LINE]), &ctx(), 1).unwrap();
        assert_eq!(out.entry.state, CacheState::M);
        assert_eq!(out.entry.data, vec![1; LINE]);
        assert!(out.emitted.is_empty());
        assert_eq!(out.completed, Some(Completion::Stored));
    }

    #[test]
    fn shared_store_upgrades_through_getx() {
        let out = cache_apply_cpu_op(&entry(CacheState::S, 3), &CpuOpKind::Store(vec![1; LINE]), &ctx(), 4).unwrap();
        assert_eq!(out.entry.state, CacheState::IM_AD);
        assert_eq!(out.entry.revert, CacheState::S);
        assert_eq!(out.emitted.len(), 1);
        assert_eq!(out.emitted[0].msg_type, MessageType::GETX);
        assert_eq!(out.emitted[0].destination, HOME);
    }

    #[test]
    fn cpu_op_on_transient_is_an_error() {
        for s in [CacheState::IS_D, CacheState::IM_AD, CacheState::MI_A] {
            let e = cache_apply_cpu_op(&entry(s, 0), &CpuOpKind::Load, &ctx(), 1).unwrap_err();
            assert_eq!(e.trigger, ErrorTrigger::CpuOp);
        }
    }

    #[test]
    fn invalidating_clean_sharer() {
        let (next, out) = cache_apply_msg(&entry(CacheState::S, 7), &msg(MessageType::INV, HOME), &ctx()).unwrap();
        assert_eq!(next, CacheLineEntry::invalid(LINE));
        assert_eq!(out, vec![CoherenceMessage::new(MessageType::ACK, ME, HOME, Address(0x40), 9)]);
    }

    #[test]
    fn invalidating_dirty_owner_piggybacks_data() {
        for s in [CacheState::M, CacheState::O] {
            let (next, out) = cache_apply_msg(&entry(s, 7), &msg(MessageType::INV, HOME), &ctx()).unwrap();
            assert_eq!(next.state, CacheState::I);
            assert_eq!(out[0].payload, Some(vec![7; LINE]));
        }
        let (_, out) = cache_apply_msg(&entry(CacheState::E, 7), &msg(MessageType::INV, HOME), &ctx()).unwrap();
        assert_eq!(out[0].payload, None);
    }

    #[test]
    fn forwarded_read_demotes_owner_to_o() {
        let (next, out) =
            cache_apply_msg(&entry(CacheState::M, 7), &msg(MessageType::FWD_GETS, OTHER), &ctx()).unwrap();
        assert_eq!(next.state, CacheState::O);
        assert_eq!(next.data, vec![7; LINE]);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].msg_type, MessageType::DATA_S);
        assert_eq!(out[0].destination, OTHER);
        assert_eq!(out[0].payload, Some(vec![7; LINE]));
    }

    #[test]
    fn writeback_ack_releases_dirty_data() {
        let mut e = entry(CacheState::MI_A, 5);
        e.revert = CacheState::M;
        let (next, out) = cache_apply_msg(&e, &msg(MessageType::WB_ACK, HOME), &ctx()).unwrap();
        assert_eq!(next.state, CacheState::I);
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].msg_type, MessageType::WB_EXCLUSIVE_DIRTY);
        assert_eq!(out[0].destination, HOME);
        assert_eq!(out[0].payload, Some(vec![5; LINE]));

        e.revert = CacheState::E;
        let (_, out) = cache_apply_msg(&e, &msg(MessageType::WB_ACK, HOME), &ctx()).unwrap();
        assert_eq!(out[0].msg_type, MessageType::WB_CLEAN);
    }

    #[test]
    fn peer_supplied_data_unblocks_home() {
        let mut e = CacheLineEntry::invalid(LINE);
        e.state = CacheState::IS_D;
        let (next, out) = cache_apply_msg(&e, &msg(MessageType::DATA_S, OTHER), &ctx()).unwrap();
        assert_eq!(next.state, CacheState::S);
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].msg_type, out[0].destination), (MessageType::ACK, HOME));

        let (next, out) = cache_apply_msg(&e, &msg(MessageType::DATA_E, HOME), &ctx()).unwrap();
        assert_eq!(next.state, CacheState::E);
        assert!(out.is_empty());
    }

    #[test]
    fn nack_reverts_to_prior_state() {
        let start = entry(CacheState::O, 7);
        let up = cache_apply_cpu_op(&start, &CpuOpKind::Store(vec![1; LINE]), &ctx(), 1).unwrap().entry;
        let (next, _) = cache_apply_msg(&up, &msg(MessageType::NACK, HOME), &ctx()).unwrap();
        assert_eq!(next, start);
    }

    #[test]
    fn owner_upgrade_keeps_its_own_data() {
        let up =
            cache_apply_cpu_op(&entry(CacheState::O, 7), &CpuOpKind::Store(vec![1; LINE]), &ctx(), 1).unwrap().entry;
        let (next, _) = cache_apply_msg(&up, &msg(MessageType::DATA_E, HOME), &ctx()).unwrap();
        assert_eq!(next.state, CacheState::M);
        assert_eq!(next.data, vec![7; LINE]);
    }

    #[test]
    fn unlisted_pairs_become_protocol_errors() {
        let e = cache_apply_msg(&CacheLineEntry::invalid(LINE), &msg(MessageType::DATA_E, HOME), &ctx()).unwrap_err();
        assert_eq!(e.state, CacheState::I);
        assert_eq!(e.trigger, ErrorTrigger::Message(MessageType::DATA_E));
        assert!(cache_apply_msg(&entry(CacheState::S, 0), &msg(MessageType::FWD_GETS, OTHER), &ctx()).is_err());
    }

    #[test]
    fn every_pair_is_handled_and_pure() {
        for state in CacheState::ALL {
            for revert in CacheState::ALL {
                if !state.is_transient() && revert != CacheState::I {
                    continue;
                }
                let mut e = entry(state, 1);
                e.revert = revert;
                for t in MessageType::ALL {
                    for from in [HOME, OTHER] {
                        let m = msg(t, from);
                        let a = cache_apply_msg(&e, &m, &ctx());
                        let b = cache_apply_msg(&e, &m, &ctx());
                        assert_eq!(a, b);
                        if let Ok((next, out)) = a {
                            assert!(out.iter().all(|o| o.is_well_formed(LINE)));
                            assert_eq!(next.data.len(), LINE);
                            if !next.state.is_transient() {
                                assert_eq!(next.revert, CacheState::I);
                            }
                        }
                    }
                }
                for op in [CpuOpKind::Load, CpuOpKind::Store(vec![2; LINE]), CpuOpKind::Evict] {
                    let a = cache_apply_cpu_op(&e, &op, &ctx(), 3);
                    assert_eq!(a, cache_apply_cpu_op(&e, &op, &ctx(), 3));
                    assert_eq!(a.is_err(), state.is_transient());
                }
            }
        }
    }
}
