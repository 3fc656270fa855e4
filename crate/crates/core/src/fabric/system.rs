use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{addr_to_home, ConfigError, SimReport, SystemConfig};
use crate::monitor::{AddressSnapshot, Monitor, MonitorConfig};
use crate::protocol::cache::{
    cache_apply_cpu_op, cache_apply_msg, CacheCtx, CacheLineEntry, CacheState, Completion, ErrorTrigger, ProtocolError,
};
use crate::protocol::directory::{dir_apply_msg, GlobalDirectoryEntry};
use crate::protocol::{Address, CoherenceMessage, MessageType, NodeId};
use crate::trace::{CpuStage, TraceRecord, TrojanEvent};
use crate::trojan::{FilterAction, Then, TrojanCtx, TrojanState, Verdict, Wakeup};
use crate::workloads::{CpuOp, WorkloadBinding};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    /// `from` is the physical node that put the packet on the wire.
    Deliver {
        from: NodeId,
        msg: CoherenceMessage,
        forged: bool,
    },
    CpuOp {
        core: usize,
    },
    Retry {
        core: usize,
    },
    TrojanWake(Wakeup),
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl Ord for Scheduled {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.time, self.seq).cmp(&(other.time, other.seq))
    }
}

impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Default)]
struct CoreCtl {
    binding: Option<usize>,
    pc: usize,
    outstanding: Option<CpuOp>,
    stuck: bool,
}

/// One simulated machine. Strictly single-threaded; independent systems
/// share nothing and may run on different threads.
#[derive(Debug)]
pub struct System {
    config: SystemConfig,
    caches: Vec<BTreeMap<Address, CacheLineEntry>>,
    dirs: Vec<BTreeMap<Address, GlobalDirectoryEntry>>,
    queue: BinaryHeap<Reverse<Scheduled>>,
    seq: u64,
    channel_clock: BTreeMap<(NodeId, NodeId), u64>,
    rng: ChaCha8Rng,
    workloads: Vec<WorkloadBinding>,
    cores: Vec<CoreCtl>,
    trojan: Option<TrojanState>,
    monitor: Option<Monitor>,
    trace: Vec<TraceRecord>,
    staged: Vec<TraceRecord>,
    inflight: BTreeMap<Address, usize>,
    next_txn: u64,
    now: u64,
    protocol_errors: Vec<(u64, ProtocolError)>,
    per_core_load_results: BTreeMap<(usize, u64), Vec<u8>>,
    messages_delivered: u64,
    events_processed: u64,
    last_progress: u64,
    started: bool,
    finished: bool,
    deadlocked: bool,
    hit_event_limit: bool,
}

pub fn build_system(config: SystemConfig) -> Result<System, ConfigError> {
    config.validate()?;
    let n = config.num_cores();
    Ok(System {
        caches: vec![BTreeMap::new(); n],
        dirs: vec![BTreeMap::new(); config.num_mcs],
        queue: BinaryHeap::new(),
        seq: 0,
        channel_clock: BTreeMap::new(),
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        workloads: Vec::new(),
        cores: vec![CoreCtl::default(); n],
        trojan: None,
        monitor: None,
        trace: Vec::new(),
        staged: Vec::new(),
        inflight: BTreeMap::new(),
        next_txn: 0,
        now: 0,
        protocol_errors: Vec::new(),
        per_core_load_results: BTreeMap::new(),
        messages_delivered: 0,
        events_processed: 0,
        last_progress: 0,
        started: false,
        finished: false,
        deadlocked: false,
        hit_event_limit: false,
        config,
    })
}

impl System {
    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn nodes(&self) -> Vec<NodeId> {
        let cores = (0..self.config.num_cores()).map(NodeId::Core);
        cores.chain((0..self.config.num_mcs).map(NodeId::MemoryController)).collect()
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn trace(&self) -> &[TraceRecord] {
        &self.trace
    }

    pub fn workloads(&self) -> &[WorkloadBinding] {
        &self.workloads
    }

    pub fn trojan(&self) -> Option<&TrojanState> {
        self.trojan.as_ref()
    }

    pub fn monitor(&self) -> Option<&Monitor> {
        self.monitor.as_ref()
    }

    pub fn cache_entry(&self, core: usize, addr: Address) -> CacheLineEntry {
        self.caches[core].get(&addr).cloned().unwrap_or_else(|| CacheLineEntry::invalid(self.line()))
    }

    pub fn cache_state(&self, core: usize, addr: Address) -> CacheState {
        self.caches[core].get(&addr).map_or(CacheState::I, |e| e.state)
    }

    pub fn dir_entry(&self, addr: Address) -> GlobalDirectoryEntry {
        let home = self.home_index(addr);
        self.dirs[home].get(&addr).cloned().unwrap_or_else(|| GlobalDirectoryEntry::new(self.line()))
    }

    /// Every address any cache or directory slice has touched, ascending.
    pub fn touched_addresses(&self) -> Vec<Address> {
        let mut all = BTreeSet::new();
        all.extend(self.caches.iter().flat_map(|c| c.keys().copied()));
        all.extend(self.dirs.iter().flat_map(|d| d.keys().copied()));
        all.into_iter().collect()
    }

    pub fn snapshot(&self, addr: Address) -> AddressSnapshot {
        let lines = (0..self.config.num_cores())
            .map(|c| {
                let e = self.cache_entry(c, addr);
                (c, e.state, e.data)
            })
            .collect();
        AddressSnapshot { addr, lines, mem_data: self.dir_entry(addr).mem_data }
    }

    fn line(&self) -> usize {
        self.config.line_size as usize
    }

    fn home_index(&self, addr: Address) -> usize {
        match addr_to_home(addr, self.config.num_mcs, self.config.line_size) {
            NodeId::MemoryController(i) => i,
            NodeId::Core(_) => unreachable!(),
        }
    }

    pub fn bind_workload(&mut self, binding: WorkloadBinding) -> Result<(), ConfigError> {
        self.config.check_core("core", binding.core)?;
        if self.cores[binding.core].binding.is_some() {
            return Err(ConfigError::new("core", format!("core {} already has a workload", binding.core)));
        }
        for op in &binding.program {
            self.config.check_address("address", op.address)?;
            if let crate::protocol::cache::CpuOpKind::Store(v) = &op.kind {
                if v.len() != self.line() {
                    return Err(ConfigError::new("value", "store value must be one full line"));
                }
            }
        }
        self.cores[binding.core].binding = Some(self.workloads.len());
        self.workloads.push(binding);
        Ok(())
    }

    pub fn attach_trojan(&mut self, trojan: TrojanState) -> Result<(), ConfigError> {
        self.config.check_core("core", trojan.core)?;
        self.trojan = Some(trojan);
        Ok(())
    }

    pub fn attach_monitor(&mut self, config: MonitorConfig) {
        if config.enabled {
            self.monitor = Some(Monitor::new(config, self.line()));
        }
    }

    fn schedule(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.queue.push(Reverse(Scheduled { time, seq: self.seq, event }));
    }

    fn latency(&self, from: NodeId, to: NodeId) -> u64 {
        match (from, to) {
            (NodeId::Core(a), NodeId::Core(b)) if self.config.chiplet_of(a) == self.config.chiplet_of(b) => {
                self.config.latency_intra
            }
            (NodeId::Core(_), NodeId::Core(_)) => self.config.latency_inter,
            _ => self.config.latency_mc,
        }
    }

    fn send(&mut self, from: NodeId, msg: CoherenceMessage, forged: bool) {
        let mut lat = self.latency(from, msg.destination);
        if self.config.latency_jitter > 0 {
            lat += self.rng.gen_range(0..=self.config.latency_jitter);
        }
        let clock = self.channel_clock.entry((from, msg.destination)).or_insert(0);
        let at = (self.now + lat).max(*clock);
        *clock = at;
        *self.inflight.entry(msg.address).or_insert(0) += 1;
        self.schedule(at, Event::Deliver { from, msg, forged });
    }

    fn record(&mut self, rec: TraceRecord) {
        self.staged.push(rec);
    }

    fn flush(&mut self) {
        for rec in std::mem::take(&mut self.staged) {
            let alerts = self.monitor.as_mut().map(|m| m.observe(&rec)).unwrap_or_default();
            self.trace.push(rec);
            self.trace.extend(alerts.into_iter().map(TraceRecord::Alert));
        }
    }

    fn fresh_txn(&mut self) -> u64 {
        self.next_txn += 1;
        self.next_txn
    }

    fn compromised(&self, core: usize) -> bool {
        self.trojan.as_ref().is_some_and(|t| t.core == core)
    }

    /// Runs a Trojan callback with the context it needs.
    fn with_trojan<R>(&mut self, f: impl FnOnce(&mut TrojanState, &mut TrojanCtx<'_>) -> R) -> Option<R> {
        let mut trojan = self.trojan.take()?;
        let mut ctx = TrojanCtx {
            now: self.now,
            num_mcs: self.config.num_mcs,
            line_size: self.config.line_size,
            retry_delay: self.config.nack_retry_delay,
            next_txn: &mut self.next_txn,
        };
        let out = f(&mut trojan, &mut ctx);
        self.trojan = Some(trojan);
        Some(out)
    }

    fn trojan_event(&mut self, event: TrojanEvent) {
        let core = self.trojan.as_ref().map_or(0, |t| t.core);
        self.record(TraceRecord::Trojan { cycle: self.now, core, event });
    }

    fn inject(&mut self, core: usize, extra: Vec<CoherenceMessage>) {
        for m in extra {
            self.trojan_event(TrojanEvent::Inject {
                msg_type: m.msg_type,
                dst: m.destination,
                addr: m.address,
                txn: m.txn_id,
            });
            self.send(NodeId::Core(core), m, true);
        }
    }

    /// Applies a Trojan verdict; returns the message (if any) the host cache receives.
    fn apply_verdict(
        &mut self,
        core: usize,
        msg: &CoherenceMessage,
        verdict: Verdict,
        phase_before: crate::trojan::ForgingPhase,
    ) -> Option<CoherenceMessage> {
        let block = |s: &mut Self| {
            s.trojan_event(TrojanEvent::Block { msg_type: msg.msg_type, addr: msg.address, txn: msg.txn_id })
        };
        let delivered = match verdict.action {
            FilterAction::Pass => Some(msg.clone()),
            FilterAction::Block => {
                block(self);
                None
            }
            FilterAction::Modify(m) => {
                self.trojan_event(TrojanEvent::Modify {
                    from: msg.msg_type,
                    to: m.msg_type,
                    addr: m.address,
                    txn: m.txn_id,
                });
                Some(m)
            }
            FilterAction::Inject { extra, then } => {
                if then == Then::Block {
                    block(self);
                }
                self.inject(core, extra);
                (then == Then::Pass).then(|| msg.clone())
            }
        };
        if let Some((delay, wake)) = verdict.wake {
            self.schedule(self.now + delay, Event::TrojanWake(wake));
        }
        self.note_phase(phase_before);
        delivered
    }

    fn note_phase(&mut self, before: crate::trojan::ForgingPhase) {
        if let Some(p) = self.trojan.as_ref().map(|t| t.phase).filter(|p| *p != before) {
            self.last_progress = self.now;
            self.trojan_event(TrojanEvent::Phase(p));
        }
    }

    /// Sends what a core's cache emitted, through the outbound filter when compromised.
    fn emit_from_core(&mut self, core: usize, msgs: Vec<CoherenceMessage>) {
        for m in msgs {
            if !self.compromised(core) {
                self.send(NodeId::Core(core), m, false);
                continue;
            }
            let action = self.trojan.as_mut().map(|t| t.intercept_outbound(&m)).unwrap_or(FilterAction::Pass);
            match action {
                FilterAction::Pass => self.send(NodeId::Core(core), m, false),
                FilterAction::Block => {
                    self.trojan_event(TrojanEvent::Block { msg_type: m.msg_type, addr: m.address, txn: m.txn_id })
                }
                FilterAction::Modify(changed) => {
                    self.trojan_event(TrojanEvent::Modify {
                        from: m.msg_type,
                        to: changed.msg_type,
                        addr: changed.address,
                        txn: changed.txn_id,
                    });
                    self.send(NodeId::Core(core), changed, false);
                }
                FilterAction::Inject { extra, then } => {
                    self.inject(core, extra);
                    if then == Then::Pass {
                        self.send(NodeId::Core(core), m, false);
                    } else {
                        self.trojan_event(TrojanEvent::Block { msg_type: m.msg_type, addr: m.address, txn: m.txn_id });
                    }
                }
            }
        }
    }

    fn next_op(&self, core: usize) -> Option<CpuOp> {
        let ctl = &self.cores[core];
        if let Some(op) = &ctl.outstanding {
            return Some(op.clone());
        }
        let program = &self.workloads[ctl.binding?].program;
        program.get(ctl.pc).cloned()
    }

    /// Issues (or re-issues) the core's current operation.
    fn issue_op(&mut self, core: usize) {
        let Some(op) = self.next_op(core) else { return };
        let first = self.cores[core].outstanding.is_none();
        if first {
            self.record(TraceRecord::Cpu {
                cycle: self.now,
                core,
                op: op.clone(),
                stage: CpuStage::Issue,
                value: None,
            });
        }
        let entry = self.cache_entry(core, op.address);
        let ctx = CacheCtx {
            node: NodeId::Core(core),
            home: addr_to_home(op.address, self.config.num_mcs, self.config.line_size),
            addr: op.address,
        };
        let txn = self.fresh_txn();
        match cache_apply_cpu_op(&entry, &op.kind, &ctx, txn) {
            Err(e) => {
                self.protocol_errors.push((self.now, e));
                self.cores[core].stuck = true;
                self.cores[core].outstanding = Some(op);
            }
            Ok(out) => {
                self.caches[core].insert(op.address, out.entry);
                self.emit_from_core(core, out.emitted);
                match out.completed {
                    None => self.cores[core].outstanding = Some(op),
                    Some(done) => self.complete_op(core, op, done),
                }
            }
        }
    }

    fn complete_op(&mut self, core: usize, op: CpuOp, done: Completion) {
        let value = match done {
            Completion::Loaded(v) => Some(v),
            _ => None,
        };
        self.record(TraceRecord::Cpu {
            cycle: self.now,
            core,
            op: op.clone(),
            stage: CpuStage::Done,
            value: value.clone(),
        });
        let ctl = &mut self.cores[core];
        let pc = ctl.pc;
        ctl.pc += 1;
        ctl.outstanding = None;
        if let (Some(v), Some(b)) = (value, ctl.binding) {
            self.workloads[b].results.insert(pc, v.clone());
            self.per_core_load_results.insert((core, op.address.line_index(self.config.line_size)), v);
        }
        self.last_progress = self.now;
        if self.next_op(core).is_some() {
            self.schedule(self.now + 1, Event::CpuOp { core });
        }
    }

    /// Delivers a message to the host cache. Returns false on a protocol error.
    fn cache_deliver(&mut self, core: usize, msg: &CoherenceMessage) -> bool {
        let addr = msg.address;
        let entry = self.cache_entry(core, addr);
        let ctx = CacheCtx {
            node: NodeId::Core(core),
            home: addr_to_home(addr, self.config.num_mcs, self.config.line_size),
            addr,
        };
        match cache_apply_msg(&entry, msg, &ctx) {
            Err(e) => {
                self.protocol_errors.push((self.now, e));
                false
            }
            Ok((next, out)) => {
                let stable = !next.state.is_transient();
                self.caches[core].insert(addr, next);
                self.emit_from_core(core, out);
                let waiting = self.cores[core].outstanding.as_ref().is_some_and(|op| op.address == addr);
                if waiting && stable && entry.state.is_transient() {
                    if msg.msg_type == MessageType::NACK {
                        self.schedule(self.now + self.config.nack_retry_delay, Event::Retry { core });
                    } else {
                        self.issue_op(core);
                    }
                }
                true
            }
        }
    }

    fn deliver(&mut self, from: NodeId, msg: CoherenceMessage, forged: bool) {
        self.messages_delivered += 1;
        let addr = msg.address;
        if let Some(n) = self.inflight.get_mut(&addr) {
            *n -= 1;
        }
        let legal = match msg.destination {
            NodeId::MemoryController(j) => {
                let entry = self.dirs[j].get(&addr).cloned().unwrap_or_else(|| GlobalDirectoryEntry::new(self.line()));
                let out = dir_apply_msg(&entry, &msg, self.config.num_cores());
                self.dirs[j].insert(addr, out.entry);
                for e in out.emitted {
                    self.send(msg.destination, e, false);
                }
                out.legal
            }
            NodeId::Core(c) if self.compromised(c) => {
                let (snoops, phase) = self.trojan.as_ref().map(|t| (t.snoop_log.len(), t.phase)).unwrap();
                let verdict = self.with_trojan(|t, ctx| t.intercept_inbound(&msg, ctx)).unwrap();
                let logged: Vec<_> = self.trojan.as_ref().unwrap().snoop_log[snoops..].to_vec();
                for (_, a, t) in logged {
                    self.trojan_event(TrojanEvent::Snoop { msg_type: t, addr: a });
                }
                match self.apply_verdict(c, &msg, verdict, phase) {
                    Some(m) => self.cache_deliver(c, &m),
                    None => true,
                }
            }
            NodeId::Core(c) => self.cache_deliver(c, &msg),
        };
        self.staged.insert(0, TraceRecord::Msg { cycle: self.now, via: from, msg, legal, forged });
        self.check_quiescent(addr);
    }

    fn check_quiescent(&mut self, addr: Address) {
        if self.monitor.is_none()
            || self.inflight.get(&addr).copied().unwrap_or(0) > 0
            || self.dir_entry(addr).dstate.is_busy()
        {
            return;
        }
        let states: Vec<(usize, CacheState)> =
            (0..self.config.num_cores()).map(|c| (c, self.cache_state(c, addr))).collect();
        if states.iter().any(|(_, s)| s.is_transient()) {
            return;
        }
        let now = self.now;
        if let Some(m) = self.monitor.as_mut() {
            let alerts = m.check_quiescent(addr, now, &states);
            self.staged.extend(alerts.into_iter().map(TraceRecord::Alert));
        }
    }

    fn pending_work(&self) -> bool {
        let cpu = (0..self.cores.len()).any(|c| self.next_op(c).is_some());
        cpu || self.trojan.as_ref().is_some_and(TrojanState::is_active)
    }

    fn first_pending_address(&self) -> Address {
        (0..self.cores.len())
            .find_map(|c| self.next_op(c).map(|op| op.address))
            .or_else(|| match &self.trojan.as_ref()?.kind {
                crate::trojan::AttackKind::Forging(spec) => Some(spec.target),
                _ => None,
            })
            .unwrap_or_default()
    }

    /// Arms the initial CPU and Trojan events. Idempotent.
    pub fn start(&mut self) {
        if self.started {
            return;
        }
        self.started = true;
        for b in 0..self.workloads.len() {
            let (core, start, empty) = {
                let w = &self.workloads[b];
                (w.core, w.start, w.program.is_empty())
            };
            if !empty {
                self.schedule(start, Event::CpuOp { core });
            }
        }
        if let Some((delay, wake)) = self.trojan.as_ref().and_then(TrojanState::initial_wake) {
            self.schedule(delay, Event::TrojanWake(wake));
        }
    }

    /// Processes one event. Returns false once the run has ended.
    pub fn step(&mut self) -> bool {
        self.start();
        if self.finished {
            return false;
        }
        if self.events_processed >= self.config.max_events {
            self.hit_event_limit = !self.queue.is_empty();
            return self.finish();
        }
        let Some(Reverse(next)) = self.queue.peek() else {
            self.deadlocked = self.pending_work();
            return self.finish();
        };
        if self.pending_work() && next.time > self.last_progress + self.config.stall_window {
            self.now = self.last_progress + self.config.stall_window;
            self.deadlocked = true;
            return self.finish();
        }
        let Reverse(Scheduled { time, event, .. }) = self.queue.pop().unwrap();
        self.now = time;
        self.events_processed += 1;
        match event {
            Event::Deliver { from, msg, forged } => self.deliver(from, msg, forged),
            Event::CpuOp { core } => self.issue_op(core),
            Event::Retry { core } => {
                if self.cores[core].outstanding.is_some() && !self.cores[core].stuck {
                    self.issue_op(core);
                }
            }
            Event::TrojanWake(wake) => {
                let phase = self.trojan.as_ref().map(|t| t.phase);
                if let (Some(phase), Some(verdict)) = (phase, self.with_trojan(|t, ctx| t.on_wake(wake, ctx))) {
                    if let FilterAction::Inject { extra, .. } = verdict.action {
                        let core = self.trojan.as_ref().unwrap().core;
                        self.inject(core, extra);
                    }
                    if let Some((delay, w)) = verdict.wake {
                        self.schedule(self.now + delay, Event::TrojanWake(w));
                    }
                    self.note_phase(phase);
                }
            }
        }
        self.flush();
        true
    }

    fn finish(&mut self) -> bool {
        self.finished = true;
        let snapshots: Vec<AddressSnapshot> = self.touched_addresses().into_iter().map(|a| self.snapshot(a)).collect();
        let deadlock = self.deadlocked.then(|| self.first_pending_address());
        let now = self.now;
        if let Some(m) = self.monitor.as_mut() {
            let alerts = m.final_audit(&snapshots, now, deadlock);
            self.staged.extend(alerts.into_iter().map(TraceRecord::Alert));
        }
        let alerts = self.monitor.as_ref().map_or(0, |m| m.alerts.len());
        self.staged.push(TraceRecord::End {
            cycle: now,
            messages: self.messages_delivered,
            deadlocked: self.deadlocked,
            protocol_errors: self.protocol_errors.len(),
            alerts,
        });
        // Audit alerts are already accounted for; append without re-observing.
        self.trace.append(&mut self.staged);
        false
    }

    pub fn run(&mut self) -> SimReport {
        while self.step() {}
        self.report()
    }

    pub fn report(&self) -> SimReport {
        SimReport {
            cycles_elapsed: self.now,
            messages_delivered: self.messages_delivered,
            events_processed: self.events_processed,
            protocol_errors: self.protocol_errors.clone(),
            deadlocked: self.deadlocked,
            hit_event_limit: self.hit_event_limit,
            per_core_load_results: self.per_core_load_results.clone(),
            workloads: self.workloads.clone(),
            monitor_alerts: self.monitor.as_ref().map(|m| m.alerts.clone()).unwrap_or_default(),
            trojan: self.trojan.clone(),
        }
    }
}

impl ProtocolError {
    pub fn is_cpu_side(&self) -> bool {
        self.trigger == ErrorTrigger::CpuOp
    }
}
