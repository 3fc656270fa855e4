//! Two-phase forging attack.
//!
//! Phase 1 obtains directory-recognised ownership of the target with a
//! forged GETX while hiding every response from the host cache. Phase 2
//! evicts the line with a PUTX and answers the WB_ACK with a dirty
//! writeback carrying the attack payload. All traffic toward the home is
//! produced by running the ordinary cache state machine on the shadow
//! entry, which is why the directory accepts each step as legal.

use super::{
    AttackKind, FilterAction, ForgingPhase, ForgingSpec, Then, TriggerMode, TrojanCtx, TrojanState, Verdict, Wakeup,
};
use crate::protocol::cache::{cache_apply_cpu_op, cache_apply_msg, CacheCtx, CacheState, CpuOpKind};
use crate::protocol::{CoherenceMessage, MessageType};

#[derive(Debug, Clone, Copy)]
pub enum Stimulus<'m> {
    Observed(&'m CoherenceMessage),
    Start,
    TickAfterAcks,
    RetryRequest,
}

impl TrojanState {
    fn spec(&self) -> &ForgingSpec {
        match &self.kind {
            AttackKind::Forging(spec) => spec,
            _ => unreachable!("forging_step on a non-forging Trojan"),
        }
    }

    fn shadow_ctx(&self, ctx: &TrojanCtx<'_>) -> CacheCtx {
        let addr = self.spec().target;
        CacheCtx { node: self.node(), home: ctx.home(addr), addr }
    }

    /// Issues a request from the shadow entry (GETX for a store, PUTX for an evict).
    fn shadow_request(&mut self, op: CpuOpKind, ctx: &mut TrojanCtx<'_>) -> Vec<CoherenceMessage> {
        let cctx = self.shadow_ctx(ctx);
        let txn = ctx.fresh_txn();
        match cache_apply_cpu_op(&self.shadow, &op, &cctx, txn) {
            Ok(out) => {
                self.shadow = out.entry;
                out.emitted
            }
            Err(_) => Vec::new(),
        }
    }

    fn triggered_by(&mut self, msg: &CoherenceMessage) -> bool {
        self.observations += 1;
        match self.spec().trigger {
            TriggerMode::Immediate => false,
            TriggerMode::OnInvalidation => msg.msg_type == MessageType::INV,
            TriggerMode::OnNthObservation(n) => self.observations >= n,
        }
    }

    fn plant_payload(&mut self) {
        let spec = self.spec().clone();
        let line = &mut self.shadow.data;
        let room = line.len().saturating_sub(spec.offset);
        line[spec.offset..].copy_from_slice(&spec.payload[..room]);
    }

    pub fn forging_step(&mut self, stimulus: Stimulus<'_>, ctx: &mut TrojanCtx<'_>) -> Verdict {
        let target = self.spec().target;
        let store = CpuOpKind::Store(self.spec().payload.clone());
        let inject = |extra: Vec<CoherenceMessage>, then: Then| FilterAction::Inject { extra, then };

        match (self.phase, stimulus) {
            (ForgingPhase::Dormant, Stimulus::Start) if self.spec().trigger == TriggerMode::Immediate => {
                let getx = self.shadow_request(store, ctx);
                self.phase = ForgingPhase::Phase1AwaitData;
                Verdict { action: inject(getx, Then::Pass), wake: None }
            }
            (ForgingPhase::Dormant, Stimulus::Observed(msg)) if msg.address == target => {
                if self.triggered_by(msg) {
                    let getx = self.shadow_request(store, ctx);
                    self.phase = ForgingPhase::Phase1AwaitData;
                    // The trigger itself still reaches the host so it can answer the home.
                    Verdict { action: inject(getx, Then::Pass), wake: None }
                } else {
                    Verdict { action: FilterAction::Pass, wake: None }
                }
            }
            (ForgingPhase::Phase1AwaitData, Stimulus::RetryRequest) if self.shadow.state == CacheState::I => {
                let getx = self.shadow_request(store, ctx);
                Verdict { action: inject(getx, Then::Pass), wake: None }
            }
            (ForgingPhase::Phase1Complete, Stimulus::TickAfterAcks) => {
                let putx = self.shadow_request(CpuOpKind::Evict, ctx);
                self.phase = ForgingPhase::Phase2AwaitWbAck;
                Verdict { action: inject(putx, Then::Pass), wake: None }
            }
            (ForgingPhase::Phase2AwaitWbAck, Stimulus::RetryRequest) if self.shadow.state.is_owner() => {
                let putx = self.shadow_request(CpuOpKind::Evict, ctx);
                Verdict { action: inject(putx, Then::Pass), wake: None }
            }
            (phase, Stimulus::Observed(msg))
                if msg.address == target && phase != ForgingPhase::Dormant && phase != ForgingPhase::Done =>
            {
                self.absorb(msg, ctx)
            }
            _ => Verdict { action: FilterAction::Pass, wake: None },
        }
    }

    /// Handles a target-line message while the attack is in progress: the
    /// host never sees it, the shadow entry answers in its place.
    fn absorb(&mut self, msg: &CoherenceMessage, ctx: &mut TrojanCtx<'_>) -> Verdict {
        let cctx = self.shadow_ctx(ctx);
        let Ok((next, replies)) = cache_apply_msg(&self.shadow, msg, &cctx) else {
            return Verdict { action: FilterAction::Block, wake: None };
        };
        self.shadow = next;
        let mut wake = None;
        match (self.phase, msg.msg_type) {
            (ForgingPhase::Phase1AwaitData, MessageType::DATA_E) if self.shadow.state == CacheState::M => {
                self.acks_seen = msg.acks_expected.unwrap_or(0);
                self.plant_payload();
                self.phase = ForgingPhase::Phase1Complete;
                wake = Some((0, Wakeup::AfterAcks));
            }
            (ForgingPhase::Phase1AwaitData | ForgingPhase::Phase2AwaitWbAck, MessageType::NACK) => {
                if self.phase == ForgingPhase::Phase2AwaitWbAck && !self.shadow.state.is_owner() {
                    // Ownership was taken away while the PUTX was in flight.
                    self.phase = ForgingPhase::Done;
                } else {
                    wake = Some((ctx.retry_delay, Wakeup::RetryRequest));
                }
            }
            (ForgingPhase::Phase2AwaitWbAck, MessageType::WB_ACK) => self.phase = ForgingPhase::Done,
            _ => {}
        }
        let action = if replies.is_empty() {
            FilterAction::Block
        } else {
            FilterAction::Inject { extra: replies, then: Then::Block }
        };
        Verdict { action, wake }
    }
}
