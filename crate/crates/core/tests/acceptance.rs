//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fail.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::time::{Duration, Instant};

use coherence_sim::fabric::{build_system, SystemConfig};
use coherence_sim::monitor::{AlertKind, MonitorConfig};
use coherence_sim::protocol::{decode_value, encode_value, Address, MessageType, NodeId};
use coherence_sim::scenario::{exit_code, load_config, prepare, render_config, simulate, ScenarioConfig};
use coherence_sim::trace::{render_trace, TraceRecord};
use coherence_sim::trojan::AttackKind;
use coherence_sim::workloads::{random_workload, CpuOp, WorkloadBinding, WorkloadKind};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn scenario(name: &str) -> ScenarioConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(format!("{name}.cfg"));
    load_config(&path).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(cond: bool, why: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(why())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    ensure(elapsed < limit, || format!("took {elapsed:?}, limit {limit:?}"))
}

fn victim_loads(cfg: &ScenarioConfig) -> Result<(Vec<u64>, i32, usize, Duration), String> {
    let t = Instant::now();
    let (_, report) = simulate(cfg).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    let victim = report
        .workloads
        .iter()
        .find(|w| matches!(w.kind, WorkloadKind::VictimArray { .. }))
        .ok_or("no victim workload")?;
    Ok((victim.observed_values(), exit_code(&report), report.monitor_alerts.len(), elapsed))
}

fn alternating_loads(n: usize, first: u64) -> Vec<u64> {
    let mut v: Vec<u64> = (0..n).map(|i| u64::from(i % 2 == 0)).collect();
    v[0] = first;
    v
}

fn victim_demo() -> Outcome {
    let cfg = scenario("victim_demo");
    ensure(cfg.system.num_chiplets == 2 && cfg.system.cores_per_chiplet == 4 && cfg.system.num_mcs == 2, || {
        "victim_demo is not 2x4 with 2 MCs".into()
    })?;
    let (loads, code, alerts, elapsed) = victim_loads(&cfg)?;
    ensure(loads == alternating_loads(16, 1), || format!("loads {loads:?}"))?;
    let sum: u64 = loads.iter().sum();
    ensure(sum == 8, || format!("sum {sum}"))?;
    ensure(alerts == 0 && code == 0, || format!("alerts={alerts} exit={code}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("loads={loads:?} sum={sum} exit={code} in {elapsed:?}"))
}

fn forging_demo() -> Outcome {
    let cfg = scenario("forging_demo");
    let attack = cfg.attack.as_ref().ok_or("no attack")?;
    let victim = cfg.workloads[0].core;
    ensure(cfg.system.chiplet_of(attack.core) != cfg.system.chiplet_of(victim), || "same chiplet".into())?;
    let (loads, code, _, elapsed) = victim_loads(&cfg)?;
    ensure(loads == alternating_loads(16, 5), || format!("loads {loads:?}"))?;
    let sum: u64 = loads.iter().sum();
    ensure(sum == 12, || format!("sum {sum}"))?;
    ensure(code == 2, || format!("exit {code}"))?;
    within(elapsed, Duration::from_secs(1))?;
    Ok(format!("loads[..4]={:?} sum={sum} exit={code} in {elapsed:?}", &loads[..4]))
}

fn forging_legality() -> Outcome {
    let (sys, _) = simulate(&scenario("forging_demo")).map_err(|e| e.to_string())?;
    let text = render_trace(sys.trace());
    let injected: Vec<&str> = text.lines().filter(|l| l.contains("kind=MSG") && l.contains("forged=1")).collect();
    let to_dir: Vec<&&str> = injected.iter().filter(|l| l.contains("dst=mc")).collect();
    ensure(!to_dir.is_empty(), || "no injected directory hops".into())?;
    let bad: Vec<&&str> = injected.iter().filter(|l| !l.ends_with("legal=1")).collect();
    ensure(bad.is_empty(), || format!("illegal injected hops: {bad:?}"))?;
    Ok(format!("{} injected hops, {} to a directory, all legal=1", injected.len(), to_dir.len()))
}

fn host_blindness() -> Outcome {
    let cfg = scenario("forging_demo");
    let attack = cfg.attack.as_ref().ok_or("no attack")?;
    let AttackKind::Forging(spec) = &attack.kind else { return Err("not forging".into()) };
    let mut sys = prepare(&cfg).map_err(|e| e.to_string())?;
    let mut steps = 0u64;
    loop {
        let st = sys.cache_state(attack.core, spec.target);
        ensure(st == coherence_sim::protocol::cache::CacheState::I, || format!("host state {st:?} at {}", sys.now()))?;
        if !sys.step() {
            break;
        }
        steps += 1;
    }
    let victim = &cfg.workloads[0];
    let program = victim.bind(cfg.system.line_size).program;
    let issued: Vec<CpuOp> = sys
        .trace()
        .iter()
        .filter_map(|r| match r {
            TraceRecord::Cpu { core, op, stage: coherence_sim::trace::CpuStage::Issue, .. } if *core == victim.core => {
                Some(op.clone())
            }
            _ => None,
        })
        .collect();
    ensure(issued == program, || format!("victim issued {} ops, programmed {}", issued.len(), program.len()))?;
    let host_ops =
        sys.trace().iter().filter(|r| matches!(r, TraceRecord::Cpu { core, .. } if *core == attack.core)).count();
    ensure(host_ops == 0, || format!("host core ran {host_ops} ops"))?;
    Ok(format!("host line I across {steps} events; victim ops == program ({})", program.len()))
}

fn strip_trojan(text: &str) -> String {
    text.lines().filter(|l| !l.contains("kind=TROJAN")).map(|l| format!("{l}\n")).collect()
}

fn basic_attacks() -> Outcome {
    let mut notes = Vec::new();

    let (_, r) = simulate(&scenario("masquerading_demo")).map_err(|e| e.to_string())?;
    let swmr = r.monitor_alerts.iter().any(|a| a.kind == AlertKind::SwmrViolation);
    ensure(r.deadlocked || swmr, || "masquerading: neither deadlock nor SWMR".into())?;
    notes.push(format!("masq: deadlock={} swmr={swmr}", r.deadlocked));

    let (_, r) = simulate(&scenario("modifying_demo")).map_err(|e| e.to_string())?;
    let swmr = r.monitor_alerts.iter().any(|a| a.kind == AlertKind::SwmrViolation);
    ensure(!r.protocol_errors.is_empty() || swmr, || "modifying: no protocol error or SWMR".into())?;
    notes.push(format!("mod: errors={} swmr={swmr}", r.protocol_errors.len()));

    let cfg = scenario("diverting_demo");
    let (sys, r) = simulate(&cfg).map_err(|e| e.to_string())?;
    let requestors: BTreeSet<String> = sys
        .trace()
        .iter()
        .filter_map(|rec| match rec {
            TraceRecord::Msg { msg, .. } if msg.msg_type == MessageType::GETX && msg.sender.is_core() => {
                Some(msg.sender.to_string())
            }
            _ => None,
        })
        .collect();
    let hit = r
        .monitor_alerts
        .iter()
        .filter(|a| a.kind == AlertKind::SwmrViolation)
        .find(|a| requestors.iter().any(|req| a.details.split(|c: char| !c.is_alphanumeric()).any(|w| w == req)));
    let hit = hit.ok_or_else(|| format!("diverting: no SWMR alert naming a requestor {requestors:?}"))?;
    notes.push(format!("div: {}", hit.details));

    let attacked = scenario("passive_demo");
    let mut baseline = attacked.clone();
    baseline.attack = None;
    let (a_sys, a_rep) = simulate(&attacked).map_err(|e| e.to_string())?;
    let (b_sys, _) = simulate(&baseline).map_err(|e| e.to_string())?;
    let (a_text, b_text) = (strip_trojan(&render_trace(a_sys.trace())), render_trace(b_sys.trace()));
    ensure(a_text == b_text, || "passive: trace differs from baseline".into())?;
    let host = NodeId::Core(attacked.attack.as_ref().unwrap().core);
    let delivered: BTreeSet<Address> = a_sys
        .trace()
        .iter()
        .filter_map(|rec| match rec {
            TraceRecord::Msg { msg, .. } if msg.msg_type == MessageType::INV && msg.destination == host => {
                Some(msg.address)
            }
            _ => None,
        })
        .collect();
    let logged: BTreeSet<Address> =
        a_rep.trojan.as_ref().ok_or("no trojan")?.snoop_log.iter().map(|(_, a, _)| *a).collect();
    ensure(!delivered.is_empty(), || "passive: no INV reached the host".into())?;
    ensure(delivered.is_subset(&logged), || format!("passive: missed {:?}", delivered.difference(&logged)))?;
    notes.push(format!("passive: identical, {} INV addrs snooped", delivered.len()));

    Ok(notes.join("; "))
}

/// Replays committed stores in completion order; final value per address.
fn golden_replay(trace: &[TraceRecord]) -> BTreeMap<Address, Vec<u8>> {
    let mut mem = BTreeMap::new();
    for rec in trace {
        if let TraceRecord::Cpu { op, stage: coherence_sim::trace::CpuStage::Done, .. } = rec {
            if let coherence_sim::protocol::cache::CpuOpKind::Store(v) = &op.kind {
                mem.insert(op.address, v.clone());
            }
        }
    }
    mem
}

fn no_trojan_soundness() -> Outcome {
    let t = Instant::now();
    let pool = [Address(0x100), Address(0x108)];
    let mut total_ops = 0;
    for seed in 0..10u64 {
        let mut sys =
            build_system(SystemConfig { num_chiplets: 2, cores_per_chiplet: 2, seed, ..SystemConfig::default() })
                .map_err(|e| e.to_string())?;
        for core in 0..4 {
            sys.bind_workload(random_workload(seed * 16 + core as u64, core, &pool, 500, 8))
                .map_err(|e| e.to_string())?;
        }
        sys.attach_monitor(MonitorConfig::default());
        let r = sys.run();
        ensure(r.monitor_alerts.is_empty(), || format!("seed {seed}: {:?}", r.monitor_alerts.first()))?;
        ensure(!r.deadlocked && !r.hit_event_limit, || format!("seed {seed}: did not quiesce"))?;
        ensure(r.protocol_errors.is_empty(), || format!("seed {seed}: {:?}", r.protocol_errors.first()))?;
        let done = r.workloads.iter().all(|w| w.program.len() == 500);
        ensure(done, || format!("seed {seed}: wrong program length"))?;
        let golden = golden_replay(sys.trace());
        for a in pool {
            let actual = sys.snapshot(a).effective_value().to_vec();
            let want = golden.get(&a).cloned().unwrap_or_else(|| vec![0; 8]);
            ensure(actual == want, || {
                format!("seed {seed} {a}: {} != {}", decode_value(&actual), decode_value(&want))
            })?;
        }
        total_ops += sys
            .trace()
            .iter()
            .filter(|r| matches!(r, TraceRecord::Cpu { stage: coherence_sim::trace::CpuStage::Done, .. }))
            .count();
    }
    let elapsed = t.elapsed();
    ensure(total_ops == 10 * 4 * 500, || format!("{total_ops} ops completed"))?;
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("10/10 seeds, {total_ops} ops, in {elapsed:?}"))
}

fn small_model_check() -> Outcome {
    let a = Address(0x40);
    let mut schedules = BTreeSet::new();
    let mut runs = 0;
    for (chiplets, per) in [(1, 2), (2, 1)] {
        for lat_mc in 1..=8u64 {
            for lat_peer in 1..=8u64 {
                for (offset, jitter) in (0..8u64).flat_map(|o| [(o, 0), (o, 6)]) {
                    let cfg = SystemConfig {
                        num_chiplets: chiplets,
                        cores_per_chiplet: per,
                        num_mcs: 1,
                        latency_mc: lat_mc,
                        latency_intra: lat_peer,
                        latency_inter: lat_peer,
                        nack_retry_delay: 1 + offset,
                        latency_jitter: jitter,
                        seed: lat_mc * 64 + lat_peer * 8 + offset,
                        ..SystemConfig::default()
                    };
                    let mut sys = build_system(cfg.clone()).map_err(|e| e.to_string())?;
                    for core in 0..2 {
                        let base = 10 * core as u64;
                        let program = vec![
                            CpuOp::store(a, encode_value(base + 1, 8)),
                            CpuOp::store(a, encode_value(base + 2, 8)),
                            CpuOp::load(a),
                        ];
                        let start = if core == 1 { offset } else { 0 };
                        sys.bind_workload(WorkloadBinding::new(core, WorkloadKind::Script, program).starting_at(start))
                            .map_err(|e| e.to_string())?;
                    }
                    sys.attach_monitor(MonitorConfig::default());
                    loop {
                        // SWMR over stable states after every event, not just at quiescence.
                        let states = [sys.cache_state(0, a), sys.cache_state(1, a)];
                        let excl = states.iter().filter(|s| s.is_exclusive()).count();
                        let readable = states.iter().filter(|s| s.can_read()).count();
                        ensure(excl == 0 || readable == 1, || format!("SWMR {states:?} at {}", sys.now()))?;
                        if !sys.step() {
                            break;
                        }
                    }
                    let r = sys.report();
                    ensure(r.monitor_alerts.is_empty(), || format!("{cfg:?}: {:?}", r.monitor_alerts))?;
                    ensure(!r.deadlocked && r.protocol_errors.is_empty(), || "stuck or protocol error".into())?;
                    let order: Vec<String> = sys
                        .trace()
                        .iter()
                        .filter(|r| matches!(r, TraceRecord::Cpu { stage: coherence_sim::trace::CpuStage::Done, .. }))
                        .map(|r| r.to_string().split_once(' ').map(|(_, rest)| rest.to_string()).unwrap_or_default())
                        .collect();
                    schedules.insert(order);
                    runs += 1;
                }
            }
        }
    }
    ensure(runs >= 1000, || format!("only {runs} schedules"))?;
    Ok(format!("{runs} latency schedules, {} distinct completion orders, no violation", schedules.len()))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let names = [
        "victim_demo",
        "forging_demo",
        "forging_demo_64",
        "masquerading_demo",
        "modifying_demo",
        "diverting_demo",
        "passive_demo",
    ];
    for name in names {
        let mut bytes = Vec::new();
        for i in 0..2 {
            let mut cfg = scenario(name);
            let path = dir.path().join(format!("{name}.{i}.trace"));
            cfg.trace_path = Some(path.clone());
            coherence_sim::scenario::run_scenario(&cfg).map_err(|e| e.to_string())?;
            bytes.push(std::fs::read(&path).map_err(|e| e.to_string())?);
        }
        ensure(bytes[0] == bytes[1] && !bytes[0].is_empty(), || format!("{name}: traces differ"))?;
    }
    Ok(format!("{} shipped configs byte-identical across two runs", names.len()))
}

fn monitor_detection() -> Outcome {
    let on = scenario("forging_demo");
    let (_, r) = simulate(&on).map_err(|e| e.to_string())?;
    let wp_on = r.monitor_alerts.iter().filter(|a| a.kind == AlertKind::WritebackProvenance).count();
    let dv_on = r.monitor_alerts.iter().filter(|a| a.kind == AlertKind::DataValueViolation).count();
    ensure(wp_on >= 1 && dv_on >= 1, || format!("visibility on: wp={wp_on} dv={dv_on}"))?;

    let mut off = on.clone();
    off.monitor.cpu_visibility = false;
    let (_, r) = simulate(&off).map_err(|e| e.to_string())?;
    let wp_off = r.monitor_alerts.iter().filter(|a| a.kind == AlertKind::WritebackProvenance).count();
    let victim = format!("core{}", off.workloads[0].core);
    let at_read = r
        .monitor_alerts
        .iter()
        .filter(|a| a.kind == AlertKind::DataValueViolation && a.details.contains(&victim))
        .count();
    ensure(wp_off == 0 && at_read >= 1, || format!("visibility off: wp={wp_off} dv_at_read={at_read}"))?;

    let mut baselines = vec![scenario("victim_demo")];
    let mut stripped = scenario("passive_demo");
    stripped.attack = None;
    baselines.push(stripped);
    for cfg in [&on, &off] {
        let mut b = cfg.clone();
        b.attack = None;
        baselines.push(b);
    }
    for b in &baselines {
        let (_, r) = simulate(b).map_err(|e| e.to_string())?;
        ensure(r.monitor_alerts.is_empty(), || {
            format!("baseline alerts: {:?}\n{}", r.monitor_alerts, render_config(b))
        })?;
    }
    Ok(format!(
        "on: {wp_on} provenance, {dv_on} data-value; off: 0 provenance, {at_read} data-value at victim read; {} baselines clean",
        baselines.len()
    ))
}

fn full_scale() -> Outcome {
    let t = Instant::now();
    let sys = build_system(SystemConfig::full_scale()).map_err(|e| e.to_string())?;
    let nodes = sys.nodes();
    ensure(nodes.len() == 68, || format!("{} nodes", nodes.len()))?;
    let cfg = scenario("forging_demo_64");
    ensure(cfg.system == SystemConfig { line_size: 8, ..SystemConfig::full_scale() }, || "not 8x8x4".into())?;
    let (loads, code, _, _) = victim_loads(&cfg)?;
    let elapsed = t.elapsed();
    ensure(loads == alternating_loads(16, 5), || format!("loads {loads:?}"))?;
    ensure(code == 2, || format!("exit {code}"))?;
    within(elapsed, Duration::from_secs(30))?;
    Ok(format!("64 cores / 4 MCs; loads[..4]={:?} sum={} in {elapsed:?}", &loads[..4], loads.iter().sum::<u64>()))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("victim_demo_loads", victim_demo),
        ("forging_demo_loads", forging_demo),
        ("forging_legality", forging_legality),
        ("forging_host_blindness", host_blindness),
        ("basic_attack_effects", basic_attacks),
        ("no_trojan_soundness", no_trojan_soundness),
        ("small_model_check", small_model_check),
        ("determinism", determinism),
        ("monitor_detection", monitor_detection),
        ("full_scale_forging", full_scale),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
