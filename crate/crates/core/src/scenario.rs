//! Scenario files: parsing, rendering and batch execution.
//!
//! ```text
//! format=1
//! trace=out.trace
//! [system]
//! num_chiplets=2
//! [workload.0]
//! kind=victim_array
//! core=0
//! base=0x1000
//! n=16
//! [attack]
//! kind=forging
//! core=7
//! target=0x1000
//! payload=0500000000000000
//! [monitor]
//! enabled=true
//! ```

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::fabric::{build_system, ConfigError, SimReport, System, SystemConfig};
use crate::monitor::MonitorConfig;
use crate::protocol::{decode_value, hex_bytes, parse_hex_bytes, Address, MessageType, NodeId};
use crate::trace::write_trace;
use crate::trojan::{AttackKind, DivertResponse, ForgingSpec, MasqueradeTarget, ModifyRule, TriggerMode, TrojanState};
use crate::workloads::{
    parse_script, parse_u64, random_workload, render_script, victim_array_workload, CpuOp, WorkloadBinding,
    WorkloadKind,
};

pub const FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_ALERTS: i32 = 2;
pub const EXIT_DEADLOCK: i32 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WorkloadPlan {
    VictimArray { base: Address, n: u64 },
    Random { seed: u64, pool: Vec<Address>, ops: usize },
    Script(Vec<CpuOp>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadSpec {
    pub core: usize,
    /// First cycle at which the core issues.
    pub start: u64,
    pub plan: WorkloadPlan,
}

impl WorkloadSpec {
    pub fn bind(&self, line_size: u64) -> WorkloadBinding {
        let binding = match &self.plan {
            WorkloadPlan::VictimArray { base, n } => victim_array_workload(*base, *n, self.core, line_size),
            WorkloadPlan::Random { seed, pool, ops } => random_workload(*seed, self.core, pool, *ops, line_size),
            WorkloadPlan::Script(program) => WorkloadBinding::new(self.core, WorkloadKind::Script, program.clone()),
        };
        binding.starting_at(self.start)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackSpec {
    pub core: usize,
    pub kind: AttackKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScenarioConfig {
    pub system: SystemConfig,
    pub workloads: Vec<WorkloadSpec>,
    pub attack: Option<AttackSpec>,
    pub monitor: MonitorConfig,
    pub trace_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub field: String,
    pub reason: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: `{}`: {}", self.line, self.field, self.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{}", render_errors(.0))]
pub struct ParseErrors(pub Vec<ParseError>);

fn render_errors(errs: &[ParseError]) -> String {
    errs.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{0}")]
    Parse(#[from] ParseErrors),
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl ScenarioError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        ScenarioError::Io { path: path.to_path_buf(), source }
    }
}

#[derive(Debug, Default)]
struct Section {
    header_line: usize,
    keys: BTreeMap<String, (usize, String)>,
}

/// Reads typed values out of one section, collecting errors as it goes.
struct Reader<'a> {
    name: String,
    section: &'a mut Section,
    errors: &'a mut Vec<ParseError>,
}

impl Reader<'_> {
    fn err(&mut self, line: usize, field: &str, reason: impl Into<String>) {
        self.errors.push(ParseError { line, field: format!("{}.{field}", self.name), reason: reason.into() });
    }

    fn take_raw(&mut self, key: &str) -> Option<(usize, String)> {
        self.section.keys.remove(key)
    }

    fn take<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<(usize, T)> {
        let (line, raw) = self.take_raw(key)?;
        match parse(&raw) {
            Ok(v) => Some((line, v)),
            Err(reason) => {
                self.err(line, key, reason);
                None
            }
        }
    }

    fn opt<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        self.take(key, parse).map(|(_, v)| v)
    }

    fn required<T>(&mut self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Option<T> {
        if !self.section.keys.contains_key(key) {
            let line = self.section.header_line;
            self.err(line, key, "missing required key");
            return None;
        }
        self.opt(key, parse)
    }

    fn line_of(&self, key: &str) -> usize {
        self.section.keys.get(key).map_or(self.section.header_line, |(l, _)| *l)
    }

    fn finish(self) {
        let leftovers: Vec<_> = self.section.keys.iter().map(|(k, (l, _))| (k.clone(), *l)).collect();
        for (key, line) in leftovers {
            self.errors.push(ParseError { line, field: format!("{}.{key}", self.name), reason: "unknown key".into() });
        }
    }
}

fn num(s: &str) -> Result<u64, String> {
    parse_u64(s).ok_or_else(|| format!("`{s}` is not a number"))
}

fn usize_num(s: &str) -> Result<usize, String> {
    num(s).map(|v| v as usize)
}

fn addr(s: &str) -> Result<Address, String> {
    num(s).map(Address)
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" | "on" | "1" | "yes" => Ok(true),
        "false" | "off" | "0" | "no" => Ok(false),
        _ => Err(format!("`{s}` is not a boolean")),
    }
}

fn node(s: &str) -> Result<NodeId, String> {
    NodeId::from_str(s).map_err(|_| format!("`{s}` is not a node (coreN or mcN)"))
}

fn msg_type(s: &str) -> Result<MessageType, String> {
    MessageType::from_str(s).map_err(|_| format!("`{s}` is not a message type"))
}

pub fn parse_trigger(s: &str) -> Result<TriggerMode, String> {
    match s {
        "immediate" => Ok(TriggerMode::Immediate),
        "on_invalidation" => Ok(TriggerMode::OnInvalidation),
        _ => match s.strip_prefix("nth:").map(str::parse::<u32>) {
            Some(Ok(n)) if n >= 1 => Ok(TriggerMode::OnNthObservation(n)),
            _ => Err(format!("`{s}`: expected immediate, on_invalidation or nth:<N>=1..")),
        },
    }
}

/// Parses and fully validates a scenario file. All problems are reported,
/// each with its line number.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ParseErrors> {
    let mut errors = Vec::new();
    let mut top = Section::default();
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        // No value ever contains '#', so everything after one is a comment.
        let s = raw.split('#').next().unwrap_or_default().trim();
        if s.is_empty() {
            continue;
        }
        if let Some(name) = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
            let name = name.trim().to_string();
            let known = matches!(name.as_str(), "system" | "attack" | "monitor")
                || name.strip_prefix("workload.").is_some_and(|n| n.parse::<usize>().is_ok());
            if !known {
                errors.push(ParseError { line, field: name.clone(), reason: "unknown section".into() });
            } else if sections.contains_key(&name) {
                errors.push(ParseError { line, field: name.clone(), reason: "duplicate section".into() });
            } else {
                sections.insert(name.clone(), Section { header_line: line, keys: BTreeMap::new() });
            }
            current = Some(name);
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            errors.push(ParseError { line, field: s.to_string(), reason: "expected key=value".into() });
            continue;
        };
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        let target = match &current {
            None => Some(&mut top),
            Some(name) => sections.get_mut(name),
        };
        let Some(sec) = target else { continue };
        if sec.keys.insert(k.clone(), (line, v)).is_some() {
            let field = current.as_deref().map_or(k.clone(), |n| format!("{n}.{k}"));
            errors.push(ParseError { line, field, reason: "duplicate key".into() });
        }
    }

    let mut cfg = ScenarioConfig::default();

    let mut r = Reader { name: "top".into(), section: &mut top, errors: &mut errors };
    match r.take("format", |s| s.parse::<u32>().map_err(|_| format!("`{s}` is not a version"))) {
        Some((_, FORMAT_VERSION)) => {}
        Some((line, v)) => r.err(line, "format", format!("unsupported format version {v}")),
        None if !r.errors.iter().any(|e| e.field == "top.format") => r.err(1, "format", "missing `format=1` header"),
        None => {}
    }
    cfg.trace_path = r.opt("trace", |s| Ok(PathBuf::from(s)));
    r.finish();

    let mut sys_lines = BTreeMap::new();
    if let Some(sec) = sections.get_mut("system") {
        let mut r = Reader { name: "system".into(), section: sec, errors: &mut errors };
        let s = &mut cfg.system;
        macro_rules! field {
            ($key:literal, $slot:expr, $parse:expr) => {
                sys_lines.insert($key, r.line_of($key));
                if let Some(v) = r.opt($key, $parse) {
                    $slot = v;
                }
            };
        }
        field!("num_chiplets", s.num_chiplets, usize_num);
        field!("cores_per_chiplet", s.cores_per_chiplet, usize_num);
        field!("num_mcs", s.num_mcs, usize_num);
        field!("line_size", s.line_size, num);
        field!("latency_intra", s.latency_intra, num);
        field!("latency_inter", s.latency_inter, num);
        field!("latency_mc", s.latency_mc, num);
        field!("nack_retry_delay", s.nack_retry_delay, num);
        field!("seed", s.seed, num);
        field!("max_events", s.max_events, num);
        field!("stall_window", s.stall_window, num);
        field!("latency_jitter", s.latency_jitter, num);
        field!("mem_size", s.mem_size, num);
        r.finish();
    }
    let system_line = sections.get("system").map_or(1, |s| s.header_line);
    let system_ok = match cfg.system.validate() {
        Ok(()) => true,
        Err(e) => {
            let line = sys_lines.get(e.field.as_str()).copied().unwrap_or(system_line);
            errors.push(ParseError { line, field: format!("system.{}", e.field), reason: e.reason });
            false
        }
    };
    let sys = cfg.system.clone();
    let check = |errors: &mut Vec<ParseError>, line: usize, field: String, res: Result<(), ConfigError>| {
        if let (true, Err(e)) = (system_ok, res) {
            errors.push(ParseError { line, field, reason: e.reason });
        }
    };

    let mut workload_sections: Vec<(usize, String)> = sections
        .keys()
        .filter_map(|k| k.strip_prefix("workload.").and_then(|n| n.parse().ok()).map(|n| (n, k.clone())))
        .collect();
    workload_sections.sort();
    let mut bound_cores: BTreeMap<usize, usize> = BTreeMap::new();
    for (_, name) in workload_sections {
        let sec = sections.get_mut(&name).unwrap();
        let mut r = Reader { name: name.clone(), section: sec, errors: &mut errors };
        let core_line = r.line_of("core");
        let core = r.required("core", usize_num);
        let start = r.opt("start", num).unwrap_or(0);
        let kind_line = r.line_of("kind");
        let plan = match r.required("kind", |s| Ok(s.to_string())).as_deref() {
            Some("victim_array") => {
                let base_line = r.line_of("base");
                let base = r.required("base", addr);
                let n = r.required("n", num);
                if let Some(b) = base {
                    check(r.errors, base_line, format!("{name}.base"), sys.check_address("base", b));
                    if let Some(n) = n {
                        let last = b.offset_lines(n.saturating_sub(1), sys.line_size);
                        check(r.errors, base_line, format!("{name}.n"), sys.check_address("n", last));
                    }
                }
                base.zip(n).map(|(base, n)| WorkloadPlan::VictimArray { base, n })
            }
            Some("random") => {
                let seed = r.opt("seed", num).unwrap_or(0);
                let ops = r.required("ops", usize_num);
                let pool_line = r.line_of("pool");
                let pool = r.required("pool", |s| s.split(',').map(|a| addr(a.trim())).collect::<Result<Vec<_>, _>>());
                if let Some(pool) = &pool {
                    if pool.is_empty() {
                        r.err(pool_line, "pool", "must list at least one address");
                    }
                    for a in pool {
                        check(r.errors, pool_line, format!("{name}.pool"), sys.check_address("pool", *a));
                    }
                }
                pool.zip(ops).map(|(pool, ops)| WorkloadPlan::Random { seed, pool, ops })
            }
            Some("script") => {
                let line_size = sys.line_size.max(1);
                let program_line = r.line_of("program");
                let program = r.required("program", |s| parse_script(s, line_size));
                for op in program.iter().flatten() {
                    check(r.errors, program_line, format!("{name}.program"), sys.check_address("program", op.address));
                }
                program.map(WorkloadPlan::Script)
            }
            Some(other) => {
                r.err(kind_line, "kind", format!("`{other}`: expected victim_array, random or script"));
                None
            }
            None => None,
        };
        if let Some(c) = core {
            check(r.errors, core_line, format!("{name}.core"), sys.check_core("core", c));
            if let Some(prev) = bound_cores.insert(c, core_line) {
                r.err(core_line, "core", format!("core {c} already bound by the workload at line {prev}"));
            }
        }
        r.finish();
        if let (Some(core), Some(plan)) = (core, plan) {
            cfg.workloads.push(WorkloadSpec { core, start, plan });
        }
    }

    if let Some(sec) = sections.get_mut("attack") {
        let mut r = Reader { name: "attack".into(), section: sec, errors: &mut errors };
        let core_line = r.line_of("core");
        let core = r.required("core", usize_num);
        if let Some(c) = core {
            check(r.errors, core_line, "attack.core".into(), sys.check_core("core", c));
        }
        let check_node = |r: &mut Reader<'_>, key: &str, line: usize, n: NodeId| {
            if let NodeId::Core(c) = n {
                check(r.errors, line, format!("attack.{key}"), sys.check_core(key, c));
            } else if let NodeId::MemoryController(m) = n {
                if m >= sys.num_mcs && system_ok {
                    r.err(line, key, format!("memory controller {m} does not exist"));
                }
            }
        };
        let kind_line = r.line_of("kind");
        let kind = match r.required("kind", |s| Ok(s.to_string())).as_deref() {
            Some("passive") => Some(AttackKind::PassiveReading),
            Some("masquerading") => {
                let line = r.line_of("fake_sender");
                let fake = r.required("fake_sender", node);
                if let Some(n) = fake {
                    check_node(&mut r, "fake_sender", line, n);
                }
                let target = r
                    .opt("variant", |s| match s {
                        "response" => Ok(MasqueradeTarget::Responses),
                        "request" => Ok(MasqueradeTarget::Requests),
                        _ => Err(format!("`{s}`: expected response or request")),
                    })
                    .unwrap_or(MasqueradeTarget::Responses);
                fake.map(|fake_sender| AttackKind::Masquerading { fake_sender, target })
            }
            Some("modifying") => {
                let variant = r.opt("variant", |s| Ok(s.to_string())).unwrap_or_else(|| "rewrite".into());
                match variant.as_str() {
                    "rewrite" => {
                        let from = r.opt("from", msg_type).unwrap_or(MessageType::DATA_S);
                        let to = r.opt("to", msg_type).unwrap_or(MessageType::DATA_E);
                        Some(AttackKind::Modifying { rule: ModifyRule::Rewrite { from, to } })
                    }
                    "forward_intercept" => Some(AttackKind::Modifying { rule: ModifyRule::ForwardIntercept }),
                    other => {
                        let line = kind_line;
                        r.err(line, "variant", format!("`{other}`: expected rewrite or forward_intercept"));
                        None
                    }
                }
            }
            Some("diverting") => {
                let line = r.line_of("divert_to");
                let to = r.required("divert_to", node);
                if let Some(n) = to {
                    check_node(&mut r, "divert_to", line, n);
                }
                let response = r
                    .opt("response", |s| match s {
                        "ack" => Ok(DivertResponse::Ack),
                        "nack" => Ok(DivertResponse::Nack),
                        _ => Err(format!("`{s}`: expected ack or nack")),
                    })
                    .unwrap_or(DivertResponse::Ack);
                to.map(|divert_to| AttackKind::Diverting { divert_to, response })
            }
            Some("forging") => {
                let target_line = r.line_of("target");
                let target = r.required("target", addr);
                if let Some(t) = target {
                    check(r.errors, target_line, "attack.target".into(), sys.check_address("target", t));
                }
                let payload_line = r.line_of("payload");
                let payload = r.required("payload", |s| {
                    parse_hex_bytes(s).ok_or_else(|| format!("`{s}` is not a hex byte string"))
                });
                let line_size = sys.line_size as usize;
                if let Some(p) = &payload {
                    if system_ok && p.len() != line_size {
                        r.err(
                            payload_line,
                            "payload",
                            format!("{} bytes, must be exactly one {line_size}-byte line", p.len()),
                        );
                    }
                }
                let trigger = r.opt("trigger", parse_trigger).unwrap_or(TriggerMode::OnInvalidation);
                let offset_line = r.line_of("offset");
                let offset = r.opt("offset", usize_num).unwrap_or(0);
                if system_ok && offset >= line_size {
                    r.err(offset_line, "offset", format!("must be below the line size ({line_size})"));
                }
                target
                    .zip(payload)
                    .map(|(target, payload)| AttackKind::Forging(ForgingSpec { target, payload, trigger, offset }))
            }
            Some(other) => {
                r.err(
                    kind_line,
                    "kind",
                    format!("`{other}`: expected passive, masquerading, modifying, diverting or forging"),
                );
                None
            }
            None => None,
        };
        r.finish();
        if let (Some(core), Some(kind)) = (core, kind) {
            cfg.attack = Some(AttackSpec { core, kind });
        }
    }

    if let Some(sec) = sections.get_mut("monitor") {
        let mut r = Reader { name: "monitor".into(), section: sec, errors: &mut errors };
        if let Some(v) = r.opt("enabled", boolean) {
            cfg.monitor.enabled = v;
        }
        if let Some(v) = r.opt("cpu_visibility", boolean) {
            cfg.monitor.cpu_visibility = v;
        }
        r.finish();
    }

    errors.sort_by_key(|e| e.line);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ParseErrors(errors))
    }
}

fn node_name(n: NodeId) -> String {
    n.to_string()
}

/// Renders a config in canonical form; `parse_config` reads it back unchanged.
pub fn render_config(cfg: &ScenarioConfig) -> String {
    let mut out = format!("format={FORMAT_VERSION}\n");
    if let Some(p) = &cfg.trace_path {
        let _ = writeln!(out, "trace={}", p.display());
    }
    let s = &cfg.system;
    let _ = write!(
        out,
        "[system]\nnum_chiplets={}\ncores_per_chiplet={}\nnum_mcs={}\nline_size={}\nlatency_intra={}\n\
         latency_inter={}\nlatency_mc={}\nnack_retry_delay={}\nseed={}\nmax_events={}\nstall_window={}\n\
         latency_jitter={}\nmem_size={:#x}\n",
        s.num_chiplets,
        s.cores_per_chiplet,
        s.num_mcs,
        s.line_size,
        s.latency_intra,
        s.latency_inter,
        s.latency_mc,
        s.nack_retry_delay,
        s.seed,
        s.max_events,
        s.stall_window,
        s.latency_jitter,
        s.mem_size,
    );
    for (i, w) in cfg.workloads.iter().enumerate() {
        let _ = write!(out, "[workload.{i}]\ncore={}\nstart={}\n", w.core, w.start);
        match &w.plan {
            WorkloadPlan::VictimArray { base, n } => {
                let _ = write!(out, "kind=victim_array\nbase={base}\nn={n}\n");
            }
            WorkloadPlan::Random { seed, pool, ops } => {
                let pool: Vec<String> = pool.iter().map(ToString::to_string).collect();
                let _ = write!(out, "kind=random\nseed={seed}\nops={ops}\npool={}\n", pool.join(","));
            }
            WorkloadPlan::Script(program) => {
                let _ = write!(out, "kind=script\nprogram={}\n", render_script(program));
            }
        }
    }
    if let Some(a) = &cfg.attack {
        let _ = write!(out, "[attack]\ncore={}\nkind={}\n", a.core, a.kind.name());
        match &a.kind {
            AttackKind::PassiveReading => {}
            AttackKind::Masquerading { fake_sender, target } => {
                let v = if *target == MasqueradeTarget::Responses { "response" } else { "request" };
                let _ = write!(out, "fake_sender={}\nvariant={v}\n", node_name(*fake_sender));
            }
            AttackKind::Modifying { rule: ModifyRule::Rewrite { from, to } } => {
                let _ = write!(out, "variant=rewrite\nfrom={}\nto={}\n", from.name(), to.name());
            }
            AttackKind::Modifying { rule: ModifyRule::ForwardIntercept } => out.push_str("variant=forward_intercept\n"),
            AttackKind::Diverting { divert_to, response } => {
                let r = if *response == DivertResponse::Ack { "ack" } else { "nack" };
                let _ = write!(out, "divert_to={}\nresponse={r}\n", node_name(*divert_to));
            }
            AttackKind::Forging(f) => {
                let _ = write!(
                    out,
                    "target={}\npayload={}\ntrigger={}\noffset={}\n",
                    f.target,
                    hex_bytes(&f.payload),
                    f.trigger,
                    f.offset
                );
            }
        }
    }
    let _ = write!(out, "[monitor]\nenabled={}\ncpu_visibility={}\n", cfg.monitor.enabled, cfg.monitor.cpu_visibility);
    out
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, ScenarioError> {
    let text = fs::read_to_string(path).map_err(|e| ScenarioError::io(path, e))?;
    Ok(parse_config(&text)?)
}

/// Builds the system described by `cfg` with everything bound, ready to run.
pub fn prepare(cfg: &ScenarioConfig) -> Result<System, ConfigError> {
    let mut sys = build_system(cfg.system.clone())?;
    for w in &cfg.workloads {
        sys.bind_workload(w.bind(cfg.system.line_size))?;
    }
    if let Some(a) = &cfg.attack {
        let trojan = TrojanState::new(a.kind.clone(), a.core, cfg.system.line_size as usize)
            .map_err(|reason| ConfigError::new("attack", reason))?;
        sys.attach_trojan(trojan)?;
    }
    sys.attach_monitor(cfg.monitor);
    Ok(sys)
}

pub fn simulate(cfg: &ScenarioConfig) -> Result<(System, SimReport), ConfigError> {
    let mut sys = prepare(cfg)?;
    let report = sys.run();
    Ok((sys, report))
}

/// Exit code for a finished run: deadlock or non-quiescence beats alerts.
pub fn exit_code(report: &SimReport) -> i32 {
    if report.deadlocked || report.hit_event_limit {
        EXIT_DEADLOCK
    } else if !report.monitor_alerts.is_empty() || !report.protocol_errors.is_empty() {
        EXIT_ALERTS
    } else {
        EXIT_OK
    }
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub exit_code: i32,
    pub report: SimReport,
    pub text: String,
}

/// Runs a scenario, writes its trace if one was requested, and renders the report.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, ScenarioError> {
    let (sys, report) = simulate(cfg)?;
    if let Some(path) = &cfg.trace_path {
        let file = fs::File::create(path).map_err(|e| ScenarioError::io(path, e))?;
        write_trace(std::io::BufWriter::new(file), sys.trace()).map_err(|e| ScenarioError::io(path, e))?;
    }
    let code = exit_code(&report);
    let text = render_report(cfg, &sys, &report, code);
    Ok(ScenarioOutcome { exit_code: code, report, text })
}

pub fn render_report(cfg: &ScenarioConfig, sys: &System, report: &SimReport, code: i32) -> String {
    let mut out = String::new();
    let s = &cfg.system;
    let _ = writeln!(
        out,
        "system: {} chiplets x {} cores, {} memory controllers, line {} B",
        s.num_chiplets, s.cores_per_chiplet, s.num_mcs, s.line_size
    );
    if let Some(a) = &cfg.attack {
        let _ = writeln!(out, "attack: {} on core{}", a.kind.name(), a.core);
    }
    out.push_str("\nload results\n");
    for w in &report.workloads {
        let values = w.observed_values();
        let _ = writeln!(out, "  core{:<3} {} loads, sum={}", w.core, values.len(), w.observed_sum());
        if let WorkloadKind::VictimArray { base, .. } = &w.kind {
            for (pc, v) in &w.results {
                let op = &w.program[*pc];
                let idx = (op.address.0 - base.0) / s.line_size;
                let _ = writeln!(out, "    array[{idx:>2}] = {}", decode_value(v));
            }
        } else if !values.is_empty() {
            let shown: Vec<String> = values.iter().take(32).map(ToString::to_string).collect();
            let more = if values.len() > 32 { " ..." } else { "" };
            let _ = writeln!(out, "    {}{more}", shown.join(" "));
        }
    }

    let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
    for rec in sys.trace() {
        if let crate::trace::TraceRecord::Msg { msg, .. } = rec {
            *counts.entry(msg.msg_type.name()).or_default() += 1;
        }
    }
    let _ = writeln!(out, "\nmessages: {} delivered in {} cycles", report.messages_delivered, report.cycles_elapsed);
    for (t, n) in &counts {
        let _ = writeln!(out, "  {t:<20} {n}");
    }
    let _ = writeln!(out, "\nprotocol errors: {}", report.protocol_errors.len());
    for (cycle, e) in &report.protocol_errors {
        let _ = writeln!(out, "  cycle {cycle}: {e}");
    }
    let _ = writeln!(out, "alerts: {}", report.monitor_alerts.len());
    for a in &report.monitor_alerts {
        let _ = writeln!(out, "  cycle {} {} {} {}", a.cycle, a.kind.name(), a.address, a.details);
    }
    let _ = writeln!(out, "deadlocked: {}", report.deadlocked);
    if report.hit_event_limit {
        let _ = writeln!(out, "event limit reached before quiescence");
    }
    let _ = writeln!(out, "exit: {code}");
    out
}

#[derive(Debug)]
pub struct SweepEntry {
    pub path: PathBuf,
    pub result: Result<i32, String>,
}

/// Runs every `*.cfg` in `dir`, one thread per scenario.
pub fn sweep(dir: &Path) -> Result<Vec<SweepEntry>, ScenarioError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ScenarioError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .collect();
    paths.sort();
    let results = std::thread::scope(|scope| {
        let handles: Vec<_> = paths
            .iter()
            .map(|p| {
                scope.spawn(move || {
                    let cfg = load_config(p).map_err(|e| e.to_string())?;
                    run_scenario(&cfg).map(|o| o.exit_code).map_err(|e| e.to_string())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("panicked".into()))).collect::<Vec<_>>()
    });
    Ok(paths.into_iter().zip(results).map(|(path, result)| SweepEntry { path, result }).collect())
}
