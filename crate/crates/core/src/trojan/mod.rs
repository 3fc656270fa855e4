//! Interception layer between a compromised core's network interface and
//! its local state directory.
//!
//! Every message delivered to the compromised core is offered to
//! [`TrojanState::intercept_inbound`] before the cache sees it, and every
//! message the cache emits is offered to [`TrojanState::intercept_outbound`]
//! before it reaches the network. The returned [`FilterAction`] tells the
//! simulation loop what actually happens to the packet.

mod forging;

use std::fmt;

use crate::fabric::addr_to_home;
use crate::protocol::cache::CacheLineEntry;
use crate::protocol::{Address, CoherenceMessage, MessageType, NodeId};

pub use forging::Stimulus;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Then {
    Pass,
    Block,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FilterAction {
    Pass,
    Block,
    Modify(CoherenceMessage),
    /// Send `extra` from the compromised core, then pass or block the original.
    Inject {
        extra: Vec<CoherenceMessage>,
        then: Then,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ForgingPhase {
    Dormant,
    Phase1AwaitData,
    Phase1Complete,
    Phase2AwaitWbAck,
    Done,
}

impl fmt::Display for ForgingPhase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForgingPhase::Dormant => "Dormant",
            ForgingPhase::Phase1AwaitData => "Phase1_AwaitData",
            ForgingPhase::Phase1Complete => "Phase1_Complete",
            ForgingPhase::Phase2AwaitWbAck => "Phase2_AwaitWbAck",
            ForgingPhase::Done => "Done",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerMode {
    Immediate,
    OnInvalidation,
    OnNthObservation(u32),
}

impl fmt::Display for TriggerMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TriggerMode::Immediate => f.write_str("immediate"),
            TriggerMode::OnInvalidation => f.write_str("on_invalidation"),
            TriggerMode::OnNthObservation(n) => write!(f, "nth:{n}"),
        }
    }
}

/// Which packets a masquerading Trojan re-labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MasqueradeTarget {
    /// Swallow inbound INVs and answer them with an ACK under another core's id.
    Responses,
    /// Rewrite the sender field of the host's own outgoing requests.
    Requests,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModifyRule {
    /// Rewrite the type of outgoing messages of type `from`.
    Rewrite { from: MessageType, to: MessageType },
    /// Swallow inbound FWD_GETS and invalidate the requestor instead.
    ForwardIntercept,
}

/// How the diverted INV gets answered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivertResponse {
    /// The divert target receives the INV and acknowledges it.
    Ack,
    /// The Trojan answers the home with a NACK labelled as the divert target.
    Nack,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForgingSpec {
    pub target: Address,
    pub payload: Vec<u8>,
    pub trigger: TriggerMode,
    /// Byte offset inside the line where `payload` is written.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackKind {
    PassiveReading,
    Masquerading { fake_sender: NodeId, target: MasqueradeTarget },
    Modifying { rule: ModifyRule },
    Diverting { divert_to: NodeId, response: DivertResponse },
    Forging(ForgingSpec),
}

impl AttackKind {
    pub fn name(&self) -> &'static str {
        match self {
            AttackKind::PassiveReading => "passive",
            AttackKind::Masquerading { .. } => "masquerading",
            AttackKind::Modifying { .. } => "modifying",
            AttackKind::Diverting { .. } => "diverting",
            AttackKind::Forging(_) => "forging",
        }
    }
}

/// Timer events a Trojan can ask the simulation loop for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Wakeup {
    Start,
    RetryRequest,
    AfterAcks,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub action: FilterAction,
    /// Delay and kind of a timer to arm.
    pub wake: Option<(u64, Wakeup)>,
}

impl Verdict {
    fn of(action: FilterAction) -> Self {
        Verdict { action, wake: None }
    }
}

/// What the Trojan can see of the system around it.
#[derive(Debug)]
pub struct TrojanCtx<'a> {
    pub now: u64,
    pub num_mcs: usize,
    pub line_size: u64,
    pub retry_delay: u64,
    pub next_txn: &'a mut u64,
}

impl TrojanCtx<'_> {
    pub(crate) fn fresh_txn(&mut self) -> u64 {
        *self.next_txn += 1;
        *self.next_txn
    }

    pub(crate) fn home(&self, addr: Address) -> NodeId {
        addr_to_home(addr, self.num_mcs, self.line_size)
    }
}

/// Registers held by the Trojan.
///
/// `shadow` imitates the compromised core's local directory entry for the
/// forging target: the Trojan answers the home from it while the real
/// cache never sees the target line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrojanState {
    pub kind: AttackKind,
    pub core: usize,
    pub phase: ForgingPhase,
    pub shadow: CacheLineEntry,
    pub acks_seen: u32,
    pub observations: u32,
    pub snoop_log: Vec<(u64, Address, MessageType)>,
    pub blocked_count: u64,
}

impl TrojanState {
    pub fn new(kind: AttackKind, core: usize, line_size: usize) -> Result<Self, String> {
        if let AttackKind::Forging(spec) = &kind {
            if spec.payload.len() != line_size {
                return Err(format!("payload is {} bytes, line size is {line_size}", spec.payload.len()));
            }
            if spec.offset >= line_size {
                return Err(format!("offset {} outside a {line_size}-byte line", spec.offset));
            }
            if matches!(spec.trigger, TriggerMode::OnNthObservation(0)) {
                return Err("nth trigger must be at least 1".into());
            }
        }
        Ok(TrojanState {
            kind,
            core,
            phase: ForgingPhase::Dormant,
            shadow: CacheLineEntry::invalid(line_size),
            acks_seen: 0,
            observations: 0,
            snoop_log: Vec::new(),
            blocked_count: 0,
        })
    }

    pub fn node(&self) -> NodeId {
        NodeId::Core(self.core)
    }

    /// Timer to arm when the simulation starts.
    pub fn initial_wake(&self) -> Option<(u64, Wakeup)> {
        match &self.kind {
            AttackKind::Forging(spec) if spec.trigger == TriggerMode::Immediate => Some((0, Wakeup::Start)),
            _ => None,
        }
    }

    /// Whether the Trojan is between trigger and completion of an attack.
    pub fn is_active(&self) -> bool {
        !matches!(self.phase, ForgingPhase::Dormant | ForgingPhase::Done)
    }

    pub fn intercept_inbound(&mut self, msg: &CoherenceMessage, ctx: &mut TrojanCtx<'_>) -> Verdict {
        let verdict = match self.kind.clone() {
            AttackKind::PassiveReading => {
                self.snoop_log.push((ctx.now, msg.address, msg.msg_type));
                Verdict::of(FilterAction::Pass)
            }
            AttackKind::Masquerading { fake_sender, target: MasqueradeTarget::Responses }
                if msg.msg_type == MessageType::INV =>
            {
                let ack = CoherenceMessage::new(MessageType::ACK, fake_sender, msg.sender, msg.address, msg.txn_id);
                Verdict::of(FilterAction::Inject { extra: vec![ack], then: Then::Block })
            }
            AttackKind::Diverting { divert_to, response } if msg.msg_type == MessageType::INV => {
                let extra = match response {
                    DivertResponse::Ack => CoherenceMessage { destination: divert_to, ..msg.clone() },
                    DivertResponse::Nack => {
                        CoherenceMessage::new(MessageType::NACK, divert_to, msg.sender, msg.address, msg.txn_id)
                    }
                };
                Verdict::of(FilterAction::Inject { extra: vec![extra], then: Then::Block })
            }
            AttackKind::Modifying { rule: ModifyRule::ForwardIntercept } if msg.msg_type == MessageType::FWD_GETS => {
                // Posing as the home: the requestor is told to drop its copy.
                let inv =
                    CoherenceMessage::new(MessageType::INV, ctx.home(msg.address), msg.sender, msg.address, msg.txn_id);
                Verdict::of(FilterAction::Inject { extra: vec![inv], then: Then::Block })
            }
            AttackKind::Forging(_) => self.forging_step(Stimulus::Observed(msg), ctx),
            _ => Verdict::of(FilterAction::Pass),
        };
        self.count_block(&verdict.action);
        verdict
    }

    pub fn intercept_outbound(&mut self, msg: &CoherenceMessage) -> FilterAction {
        let action = match &self.kind {
            AttackKind::Modifying { rule: ModifyRule::Rewrite { from, to } } if msg.msg_type == *from => {
                FilterAction::Modify(retype(msg, *to))
            }
            AttackKind::Masquerading { fake_sender, target: MasqueradeTarget::Requests }
                if msg.msg_type.is_request() =>
            {
                FilterAction::Modify(CoherenceMessage { sender: *fake_sender, ..msg.clone() })
            }
            _ => FilterAction::Pass,
        };
        self.count_block(&action);
        action
    }

    pub fn on_wake(&mut self, wake: Wakeup, ctx: &mut TrojanCtx<'_>) -> Verdict {
        let stimulus = match wake {
            Wakeup::Start => Stimulus::Start,
            Wakeup::RetryRequest => Stimulus::RetryRequest,
            Wakeup::AfterAcks => Stimulus::TickAfterAcks,
        };
        match self.kind {
            AttackKind::Forging(_) => self.forging_step(stimulus, ctx),
            _ => Verdict::of(FilterAction::Pass),
        }
    }

    fn count_block(&mut self, action: &FilterAction) {
        if matches!(action, FilterAction::Block | FilterAction::Inject { then: Then::Block, .. }) {
            self.blocked_count += 1;
        }
    }
}

/// Changes the type of a message, fixing up payload and ack fields so the
/// result is well formed.
fn retype(msg: &CoherenceMessage, to: MessageType) -> CoherenceMessage {
    let mut out = CoherenceMessage { msg_type: to, ..msg.clone() };
    if to.carries_payload() {
        if out.payload.is_none() {
            out.payload = Some(Vec::new());
        }
    } else if to != MessageType::ACK {
        out.payload = None;
    }
    if to != MessageType::DATA_E {
        out.acks_expected = None;
    }
    out
}
