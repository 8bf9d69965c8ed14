use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use auditsim::bench::{self, StepReport, FROZEN_C};
use auditsim::checker::{certify, check_bruteforce, CheckError, History, SpecChoice, Verdict};
use auditsim::invariants::{self, op_steps};
use auditsim::sim::{
    emit_trace, explore, parse_trace, run, run_threads, ExploreOptions, ObjectSpec, Programs, Scenario, Schedule, Trace,
};
use auditsim::workload::{self, Workload};
use auditsim::{check_decisions, ConsensusConfig, DenyListConfig, LlScConfig, RegisterConfig, SimError};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

const EXIT_NOT_LINEARIZABLE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_RUNTIME: u8 = 3;
const EXIT_DISAGREE: u8 = 4;
const EXIT_EXPLORE_FAIL: u8 = 5;
const EXIT_BUDGET: u8 = 6;

#[derive(Parser)]
#[command(name = "auditsim", version, about = "Simulate and check auditable shared objects")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute one workload and write its trace as JSON lines.
    Run(RunArgs),
    /// Check a recorded trace for linearizability.
    Check(CheckArgs),
    /// Run and check every interleaving of a small workload.
    Explore(ExploreArgs),
    /// Report primitive step counts per operation kind.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ObjectKind {
    Register,
    Llsc,
    Denylist,
    Consensus,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchedArg {
    Rr,
    Random,
    Exhaustive,
    /// One OS thread per process; records invocations and responses only.
    Threads,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Bruteforce,
    Certify,
    Both,
}

#[derive(Args, Clone)]
struct ObjArgs {
    #[arg(long, value_enum, default_value = "register")]
    object: ObjectKind,
    /// Writers of a register.
    #[arg(long, default_value_t = 1)]
    writers: usize,
    /// Readers of a register, or of the top consensus instance.
    #[arg(long)]
    readers: Option<usize>,
    #[arg(long, default_value_t = 0)]
    auditors: usize,
    /// Resources of a deny list.
    #[arg(long, default_value_t = 1)]
    resources: usize,
    /// Processes of an LL/SC object, deny list or consensus instance.
    #[arg(long, default_value_t = 2)]
    procs: usize,
    #[arg(long, default_value_t = 1)]
    ops_per_proc: usize,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    obj: ObjArgs,
    #[arg(long, value_enum, default_value = "rr")]
    schedule: SchedArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Step bound of the exhaustive schedule.
    #[arg(long, default_value_t = 10_000)]
    depth: usize,
    /// Trace output file; standard output when absent.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace file to check.
    #[arg(long)]
    trace: PathBuf,
    /// Specification name (register, llsc, denylist); taken from the trace when absent.
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, value_enum, default_value = "both")]
    mode: Mode,
}

#[derive(Args)]
struct ExploreArgs {
    #[command(flatten)]
    obj: ObjArgs,
    #[arg(long, default_value_t = 10_000)]
    depth: usize,
    /// Most interleavings to run; AUDITSIM_CAP overrides it.
    #[arg(long, default_value_t = 1_000_000)]
    cap: usize,
    /// Where to write the first failing trace.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    obj: ObjArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random runs per system size.
    #[arg(long, default_value_t = 5)]
    runs: u64,
    /// Operations per run, spread over all processes.
    #[arg(long, default_value_t = 1000)]
    total_ops: usize,
    /// Measure every size from 2 to 16 processes and fit the growth.
    #[arg(long)]
    sweep: bool,
}

/// A command failure with its exit code.
struct Fail(u8, String);

impl From<SimError> for Fail {
    fn from(e: SimError) -> Self {
        let code = match e {
            SimError::Config(_) | SimError::WellFormedness(_) => EXIT_USAGE,
            SimError::BudgetExceeded { .. } => EXIT_BUDGET,
            _ => EXIT_RUNTIME,
        };
        Fail(code, e.to_string())
    }
}

fn io_fail(e: io::Error) -> Fail {
    Fail(EXIT_USAGE, e.to_string())
}

enum Object {
    Register(RegisterConfig),
    LlSc(LlScConfig),
    DenyList(DenyListConfig),
    Consensus(ConsensusConfig),
}

impl Object {
    fn from_args(a: &ObjArgs) -> Result<Self, Fail> {
        let bad = |msg: &str| Err(Fail(EXIT_USAGE, msg.to_string()));
        match a.object {
            ObjectKind::Register => {
                let readers = a.readers.unwrap_or(1);
                if a.writers == 0 || readers == 0 {
                    return bad("a register needs at least one writer and one reader");
                }
                Ok(Object::Register(RegisterConfig::new(a.writers, readers).with_auditors(a.auditors)))
            }
            ObjectKind::Llsc if a.procs == 0 => bad("an LL/SC object needs at least one process"),
            ObjectKind::Llsc => Ok(Object::LlSc(LlScConfig::new(a.procs).with_auditors(a.auditors))),
            ObjectKind::Denylist if a.procs < 2 || a.resources == 0 => {
                bad("a deny list needs at least two processes and one resource")
            }
            ObjectKind::Denylist => {
                Ok(Object::DenyList(DenyListConfig::new(a.procs, a.resources).with_auditors(a.auditors)))
            }
            ObjectKind::Consensus => {
                let cfg = match a.readers {
                    Some(m) => ConsensusConfig::new(a.procs, m),
                    None => ConsensusConfig::balanced(a.procs),
                };
                Ok(Object::Consensus(cfg))
            }
        }
    }

    fn scenario(&self) -> &dyn Scenario {
        match self {
            Object::Register(c) => c,
            Object::LlSc(c) => c,
            Object::DenyList(c) => c,
            Object::Consensus(c) => c,
        }
    }

    fn programs(&self, ops: usize, w: Workload) -> Programs {
        match self {
            Object::Register(c) => workload::register(c, ops, w),
            Object::LlSc(c) => workload::llsc(c, ops, w),
            Object::DenyList(c) => workload::denylist(c, ops, w),
            Object::Consensus(c) => workload::consensus(c),
        }
    }
}

fn write_trace(t: &Trace, path: Option<&PathBuf>) -> Result<(), Fail> {
    match path {
        Some(p) => {
            let mut out = BufWriter::new(File::create(p).map_err(io_fail)?);
            emit_trace(t, &mut out).and_then(|()| out.flush()).map_err(io_fail)
        }
        None => emit_trace(t, &mut io::stdout().lock()).map_err(io_fail),
    }
}

/// Safety checks that need no linearizability search.
fn runtime_checks(t: &Trace) -> Result<(), String> {
    invariants::check_all(t).map_err(|e| e.to_string())?;
    if let Some(ObjectSpec::Consensus { .. }) = t.meta {
        check_decisions(t).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_run(a: RunArgs) -> Result<(), Fail> {
    let obj = Object::from_args(&a.obj)?;
    let (sched, w) = match a.schedule {
        SchedArg::Rr | SchedArg::Threads => (Schedule::RoundRobin, Workload::Canonical),
        SchedArg::Random => (Schedule::Random(a.seed), Workload::Random(a.seed)),
        SchedArg::Exhaustive => (Schedule::Exhaustive(a.depth), Workload::Canonical),
    };
    let programs = obj.programs(a.obj.ops_per_proc, w);
    let result = match a.schedule {
        SchedArg::Threads => run_threads(obj.scenario(), &programs),
        _ => run(obj.scenario(), &programs, &sched),
    };
    let trace = match result {
        Ok(t) => t,
        Err(SimError::ScheduleExhausted(t)) => {
            write_trace(&t, a.trace.as_ref())?;
            return Err(Fail(EXIT_RUNTIME, format!("depth bound {} reached with operations pending", a.depth)));
        }
        Err(e) => return Err(e.into()),
    };
    write_trace(&trace, a.trace.as_ref())?;
    runtime_checks(&trace).map_err(|e| Fail(EXIT_RUNTIME, e))?;
    eprintln!("{} operations, {} events", trace.op_count(), trace.events.len());
    Ok(())
}

fn check_error(e: CheckError) -> Fail {
    let code = match e {
        CheckError::BudgetExceeded { .. } | CheckError::TooManyOps(_) => EXIT_BUDGET,
        _ => EXIT_USAGE,
    };
    Fail(code, e.to_string())
}

/// Verdicts of the selected checkers. The certifying pipeline only covers
/// registers and LL/SC traces with recorded steps; in both-mode it is skipped
/// for anything else.
fn verdicts(t: &Trace, spec: &SpecChoice, mode: Mode) -> Result<(Option<Verdict>, Option<Verdict>), CheckError> {
    let brute = match mode {
        Mode::Certify => None,
        _ => Some(check_bruteforce(&History::from_trace(t)?, spec)?),
    };
    let cert = match (mode, spec) {
        (Mode::Bruteforce, _) | (Mode::Both, SpecChoice::DenyList) => None,
        (Mode::Both, _) if !t.has_steps() => None,
        _ => Some(certify(t)?),
    };
    Ok((brute, cert))
}

fn cmd_check(a: CheckArgs) -> Result<(), Fail> {
    let file = File::open(&a.trace).map_err(io_fail)?;
    let t = parse_trace(BufReader::new(file)).map_err(|e| Fail(EXIT_USAGE, e.to_string()))?;
    let spec = match &a.spec {
        Some(name) => SpecChoice::by_name(name, t.meta.as_ref()),
        None => SpecChoice::for_trace(&t),
    }
    .map_err(check_error)?;
    let (brute, cert) = verdicts(&t, &spec, a.mode).map_err(check_error)?;
    let out = match (&brute, &cert) {
        (Some(b), Some(c)) => {
            let mut j = b.to_json();
            j["certify"] = c.to_json();
            j
        }
        (Some(v), None) | (None, Some(v)) => v.to_json(),
        (None, None) => unreachable!("some checker always runs"),
    };
    println!("{out}");
    let results: Vec<bool> = brute.iter().chain(&cert).map(|v| v.linearizable).collect();
    if results.windows(2).any(|w| w[0] != w[1]) {
        return Err(Fail(EXIT_DISAGREE, "checkers disagree".into()));
    }
    if !results[0] {
        return Err(Fail(EXIT_NOT_LINEARIZABLE, "not linearizable".into()));
    }
    Ok(())
}

/// Everything explore verifies about one trace.
fn check_explored(t: &Trace) -> Result<(), String> {
    runtime_checks(t)?;
    if let Some(ObjectSpec::Consensus { .. }) = t.meta {
        return Ok(());
    }
    let spec = SpecChoice::for_trace(t).map_err(|e| e.to_string())?;
    let (brute, cert) = verdicts(t, &spec, Mode::Both).map_err(|e| e.to_string())?;
    for v in brute.iter().chain(&cert) {
        if let Some(viol) = &v.violation {
            return Err(format!("not linearizable: {}", viol.reason));
        }
    }
    Ok(())
}

fn cap_from_env(flag: usize) -> Result<usize, Fail> {
    match std::env::var("AUDITSIM_CAP") {
        Ok(s) => s.trim().parse().map_err(|_| Fail(EXIT_USAGE, format!("AUDITSIM_CAP is not a count: {s}"))),
        Err(_) => Ok(flag),
    }
}

fn cmd_explore(a: ExploreArgs) -> Result<(), Fail> {
    let obj = Object::from_args(&a.obj)?;
    let cap = cap_from_env(a.cap)?;
    let programs = obj.programs(a.obj.ops_per_proc, Workload::Canonical);
    let opts = ExploreOptions { depth_bound: a.depth, cap, ..ExploreOptions::reduced() };
    let mut ex = explore(obj.scenario(), &programs, opts);
    let mut traces = 0usize;
    let mut max_iters = 0u32;
    let mut max_steps: BTreeMap<&'static str, usize> = BTreeMap::new();
    for t in ex.by_ref() {
        let t = t?;
        traces += 1;
        if let Err(why) = check_explored(&t) {
            if let Some(p) = &a.trace {
                write_trace(&t, Some(p))?;
            }
            return Err(Fail(EXIT_EXPLORE_FAIL, format!("interleaving {traces}: {why}")));
        }
        max_iters = max_iters.max(t.notes.iter().map(|n| n.loop_iters).max().unwrap_or(0));
        for s in op_steps(&t) {
            let m = max_steps.entry(s.name).or_default();
            *m = (*m).max(s.steps);
        }
    }
    let summary = json!({
        "traces": traces,
        "pruned": ex.pruned(),
        "states": ex.states(),
        "max_loop_iters": max_iters,
        "max_steps": max_steps,
    });
    println!("{summary}");
    Ok(())
}

fn print_report(r: &StepReport) {
    for (kind, s) in &r.kinds {
        println!("size {:>2}  {kind:<8} ops {:>6}  max {:>4}  mean {:>7.2}", r.size, s.ops, s.max, s.mean);
    }
    println!("size {:>2}  C = {:.3} (bound {FROZEN_C})", r.size, r.c());
}

fn cmd_bench(a: BenchArgs) -> Result<(), Fail> {
    let obj = Object::from_args(&a.obj)?;
    let configs: Vec<Object> = match (obj, a.sweep) {
        (Object::Register(_), true) => (2..=16)
            .map(|size| {
                let (n, m) = bench::split(size);
                Object::Register(RegisterConfig::new(n, m))
            })
            .collect(),
        (Object::LlSc(_), true) => (2..=16).map(|n| Object::LlSc(LlScConfig::new(n))).collect(),
        (o @ (Object::Register(_) | Object::LlSc(_)), false) => vec![o],
        _ => return Err(Fail(EXIT_USAGE, "bench supports register and llsc".into())),
    };
    let mut reports = Vec::new();
    for cfg in &configs {
        let r = match cfg {
            Object::Register(c) => bench::register_steps(c.writers, c.readers, a.total_ops, a.runs, a.seed)?,
            Object::LlSc(c) => bench::llsc_steps(c.procs, a.total_ops, a.runs, a.seed)?,
            _ => unreachable!("filtered above"),
        };
        print_report(&r);
        reports.push(r);
    }
    let worst = reports.iter().map(StepReport::c).fold(0.0, f64::max);
    if worst > FROZEN_C {
        return Err(Fail(EXIT_RUNTIME, format!("C = {worst:.3} exceeds the frozen bound {FROZEN_C}")));
    }
    if a.sweep {
        let xs: Vec<f64> = reports.iter().map(|r| r.size as f64).collect();
        let kinds: Vec<&str> = reports[0].kinds.keys().copied().collect();
        for kind in kinds {
            let ys: Vec<f64> = reports.iter().map(|r| r.kinds.get(kind).map_or(0.0, |k| k.max as f64)).collect();
            let f = bench::fit(&xs, &ys).ok_or_else(|| Fail(EXIT_USAGE, "degenerate sweep".into()))?;
            println!(
                "{kind:<8} slope {:.3}  intercept {:.3}  quadratic {:.5}  superlinear share {:.3}",
                f.slope, f.intercept, f.quad, f.superlinear_share
            );
            if !f.is_linear() {
                return Err(Fail(EXIT_RUNTIME, format!("{kind} steps grow faster than linearly")));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Run(a) => cmd_run(a),
        Cmd::Check(a) => cmd_check(a),
        Cmd::Explore(a) => cmd_explore(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
