//! `lazysub` command line: litmus verdicts, explorations, benchmarks and replays.
//!
//! Records go to stdout as one JSON object per line; human-readable summary
//! lines follow, each starting with `# `.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use lazysub::bench::{bench_run, BenchOptions, BenchStats, Workload};
use lazysub::config::parse_pairs;
use lazysub::litmus::{
    builtin_scenarios, check_against, load_bundle, lock_only_oracle, Scenario, Verdict,
};
use lazysub::sched::{explore, replay, ExplorationReport, ExploreBounds, ScheduleTrace};
use lazysub::tle::{TleMode, TleVariant};

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

#[derive(Parser)]
#[command(name = "lazysub", version, about = "HTM lock-subscription simulator and litmus explorer")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the available scenarios.
    List(ListArgs),
    /// Check scenarios against their lock-only oracle.
    Litmus(LitmusArgs),
    /// Explore one scenario and print every final state.
    Explore(ExploreArgs),
    /// Run an abort-rate workload.
    Bench(BenchArgs),
    /// Re-execute a schedule trace file.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct ListArgs {
    /// Also list scenarios from these bundle directories.
    #[arg(long)]
    bundle: Vec<PathBuf>,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// key=value file of engine settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Engine setting override, applied after --config. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Clone)]
struct VariantArgs {
    /// eager, lazy_unsafe, lazy_ext or lock_only. Defaults to each scenario's own.
    #[arg(long)]
    variant: Option<TleMode>,
    /// Use the waiting subscription routine.
    #[arg(long)]
    waiting: bool,
    /// Hardware attempts before falling back to the lock.
    #[arg(long)]
    attempts: Option<u32>,
    /// Register inflatable locks as plain zero-word slots.
    #[arg(long)]
    approximate_simple: bool,
}

#[derive(Args, Clone)]
struct BoundsArgs {
    #[arg(long, default_value_t = ExploreBounds::default().preemption_bound)]
    preemption_bound: u32,
    #[arg(long, default_value_t = ExploreBounds::default().max_steps_total)]
    max_steps: u64,
    #[arg(long, default_value_t = ExploreBounds::default().max_states)]
    max_states: u64,
    /// Disable state-hash deduplication.
    #[arg(long)]
    no_dedup: bool,
}

#[derive(Args)]
struct LitmusArgs {
    /// Run every scenario.
    #[arg(long, conflicts_with = "name")]
    all: bool,
    /// Scenario to run. Repeatable.
    #[arg(long)]
    name: Vec<String>,
    /// Load scenarios from bundle directories. Repeatable.
    #[arg(long)]
    bundle: Vec<PathBuf>,
    /// Expected verdict for every scenario run.
    #[arg(long)]
    expect: Option<Expect>,
    /// Directory for report.jsonl and witness traces.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    variant: VariantArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    bounds: BoundsArgs,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Expect {
    Safe,
    Unsafe,
}

#[derive(Args)]
struct ExploreArgs {
    #[arg(long)]
    name: String,
    #[arg(long)]
    bundle: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    variant: VariantArgs,
    #[command(flatten)]
    engine: EngineArgs,
    #[command(flatten)]
    bounds: BoundsArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value = "churn")]
    workload: Workload,
    /// Variants to compare. Defaults to eager and lazy_ext.
    #[arg(long = "variant")]
    variants: Vec<TleMode>,
    #[arg(long)]
    waiting: bool,
    #[arg(long, default_value_t = 4)]
    threads: usize,
    /// Number of seeds, starting at --seed-start.
    #[arg(long, default_value_t = 200)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    seed_start: u64,
    /// Critical sections per thread.
    #[arg(long, default_value_t = 200)]
    iterations: u64,
    #[arg(long, default_value_t = BenchOptions::default().delay)]
    delay: u64,
    /// Step cap per run.
    #[arg(long, default_value_t = BenchOptions::default().max_steps)]
    steps: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args)]
struct ReplayArgs {
    trace: PathBuf,
    /// Bundle directories to search for the trace's scenario.
    #[arg(long)]
    bundle: Vec<PathBuf>,
}

/// Error with the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult = Result<u8, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.cmd {
        Command::List(a) => list(a),
        Command::Litmus(a) => litmus(a),
        Command::Explore(a) => explore_cmd(a),
        Command::Bench(a) => bench(a),
        Command::Replay(a) => replay_cmd(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("lazysub: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn emit<T: Serialize>(record: &T, sink: &mut Vec<String>) {
    let line = serde_json::to_string(record).expect("records serialize");
    out!("{line}");
    sink.push(line);
}

fn write_out(dir: &Path, file: &str, text: &str) -> Result<PathBuf, Failure> {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    let path = dir.join(file);
    std::fs::write(&path, text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn overrides(e: &EngineArgs) -> Result<Vec<(String, String)>, Failure> {
    let mut out = Vec::new();
    if let Some(path) = &e.config {
        let text = std::fs::read_to_string(path)
            .map_err(|err| usage(format!("{}: {err}", path.display())))?;
        out = parse_pairs(&text).map_err(|err| usage(format!("{}: {err}", path.display())))?;
    }
    let mut text = String::new();
    for s in &e.set {
        if !s.contains('=') {
            return Err(usage(format!("--set expects KEY=VALUE, got `{s}`")));
        }
        text.push_str(s);
        text.push('\n');
    }
    out.extend(parse_pairs(&text).map_err(|err| usage(format!("--set: {err}")))?);
    Ok(out)
}

fn bounds(b: &BoundsArgs) -> ExploreBounds {
    ExploreBounds {
        max_steps_total: b.max_steps,
        preemption_bound: b.preemption_bound,
        max_states: b.max_states,
        dedup: !b.no_dedup,
    }
}

fn variant_for(s: &Scenario, v: &VariantArgs) -> TleVariant {
    let mut out = s.variant;
    if let Some(m) = v.variant {
        out.mode = m;
    }
    out.waiting |= v.waiting;
    out.approximate_simple |= v.approximate_simple;
    if let Some(a) = v.attempts {
        out.attempts = a;
    }
    out
}

fn catalog(bundles: &[PathBuf]) -> Result<Vec<Scenario>, Failure> {
    let mut all = builtin_scenarios();
    for b in bundles {
        let s = load_bundle(b).map_err(|e| usage(format!("{}: {e}", b.display())))?;
        all.retain(|x| x.name != s.name);
        all.push(s);
    }
    Ok(all)
}

fn find(all: &[Scenario], name: &str) -> Result<Scenario, Failure> {
    all.iter().find(|s| s.name == name).cloned().ok_or_else(|| {
        let names: Vec<_> = all.iter().map(|s| s.name.as_str()).collect();
        usage(format!("unknown scenario `{name}` (known: {})", names.join(", ")))
    })
}

fn list(a: ListArgs) -> CliResult {
    let all = catalog(&a.bundle)?;
    let width = all.iter().map(|s| s.name.len()).max().unwrap_or(0);
    for s in &all {
        out!("{:width$}  {:11}  {}", s.name, s.variant.mode.name(), s.description);
    }
    Ok(0)
}

#[derive(Serialize)]
struct CensusRecord {
    aborts: BTreeMap<String, u64>,
    commits: u64,
    faults: u64,
}

fn census(r: &ExplorationReport) -> CensusRecord {
    CensusRecord {
        aborts: r
            .census
            .aborts
            .iter()
            .map(|(k, v)| (k.name().to_string(), *v))
            .collect(),
        commits: r.census.commits,
        faults: r.census.faults,
    }
}

#[derive(Serialize)]
struct LitmusRecord {
    record: &'static str,
    scenario: String,
    variant: String,
    waiting: bool,
    verdict: String,
    complete: bool,
    incomplete_reason: Option<String>,
    oracle_windows: Vec<Vec<u64>>,
    explored_windows: Vec<Vec<u64>>,
    bad_state: Option<Vec<u64>>,
    witness: Option<Vec<usize>>,
    witness_path: Option<String>,
    states: u64,
    transitions: u64,
    census: CensusRecord,
    config_hash: String,
}

fn litmus(a: LitmusArgs) -> CliResult {
    let all = catalog(&a.bundle)?;
    let mut names = a.name.clone();
    if !a.all {
        // bundles given on their own are run by name
        for b in &a.bundle {
            let s = load_bundle(b).map_err(|e| usage(format!("{}: {e}", b.display())))?;
            if !names.contains(&s.name) {
                names.push(s.name);
            }
        }
    }
    let selected: Vec<Scenario> = if a.all {
        all.clone()
    } else if names.is_empty() {
        return Err(usage("litmus needs --all, --name or --bundle"));
    } else {
        names.iter().map(|n| find(&all, n)).collect::<Result<_, _>>()?
    };
    let ov = overrides(&a.engine)?;
    let b = bounds(&a.bounds);
    let mut lines = Vec::new();
    let mut summary = Vec::new();
    let mut mismatches = 0;
    for s in &selected {
        let v = variant_for(s, &a.variant);
        let run = lock_only_oracle(s, &b, &ov).and_then(|o| check_against(s, &v, o, &b, &ov));
        let r = run.map_err(|e| usage(format!("{}: {e}", s.name)))?;
        let mut witness_path = None;
        let (bad_state, witness) = match &r.verdict {
            Verdict::Unsafe { witness, bad_state } => {
                if let Some(dir) = &a.out {
                    let p = write_out(dir, &format!("{}.{}.trace", s.name, v.mode), &witness.to_text())?;
                    witness_path = Some(p.display().to_string());
                }
                (Some(bad_state.window.clone()), Some(witness.choices.clone()))
            }
            _ => (None, None),
        };
        let matches = match a.expect {
            None => true,
            Some(Expect::Safe) => r.verdict.is_safe(),
            Some(Expect::Unsafe) => r.verdict.is_unsafe(),
        };
        if !matches {
            mismatches += 1;
        }
        summary.push(format!(
            "# {:20} {:11} {:10} states={} census={:?}{}{}",
            s.name,
            v.mode.name(),
            r.verdict.label(),
            r.explored.states,
            r.explored.census.aborts,
            witness_path
                .as_ref()
                .map(|p| format!(" witness={p}"))
                .unwrap_or_default(),
            if matches { "" } else { "  <-- unexpected" }
        ));
        let complete = r.explored.complete && r.oracle.complete;
        emit(
            &LitmusRecord {
                record: "litmus",
                scenario: s.name.clone(),
                variant: v.mode.name().into(),
                waiting: v.waiting,
                verdict: r.verdict.label().into(),
                complete,
                incomplete_reason: match &r.verdict {
                    Verdict::Incomplete { reason } => Some(reason.clone()),
                    _ => None,
                },
                oracle_windows: r.oracle.windows().into_iter().collect(),
                explored_windows: r.explored.windows().into_iter().collect(),
                bad_state,
                witness,
                witness_path,
                states: r.explored.states,
                transitions: r.explored.transitions,
                census: census(&r.explored),
                config_hash: format!("{:#018x}", r.config.fingerprint()),
            },
            &mut lines,
        );
    }
    for l in &summary {
        out!("{l}");
    }
    out!(
        "# {} scenario(s), {} unexpected verdict(s)",
        selected.len(),
        mismatches
    );
    if let Some(dir) = &a.out {
        write_out(dir, "report.jsonl", &(lines.join("\n") + "\n"))?;
    }
    Ok(if mismatches > 0 { 1 } else { 0 })
}

#[derive(Serialize)]
struct FinalRecord {
    record: &'static str,
    window: Vec<u64>,
    statuses: Vec<&'static str>,
    witness_len: usize,
    hash: String,
}

#[derive(Serialize)]
struct ExploreRecord {
    record: &'static str,
    scenario: String,
    variant: String,
    complete: bool,
    incomplete_reason: Option<String>,
    finals: usize,
    states: u64,
    transitions: u64,
    census: CensusRecord,
}

fn explore_cmd(a: ExploreArgs) -> CliResult {
    let all = catalog(&a.bundle)?;
    let s = find(&all, &a.name)?;
    let v = variant_for(&s, &a.variant);
    let ov = overrides(&a.engine)?;
    let built = s
        .build(&v, &ov)
        .map_err(|e| usage(format!("{}: {e}", s.name)))?;
    let r = explore(&built.machine, &built.observe, &bounds(&a.bounds));
    let mut lines = Vec::new();
    for (key, out) in &r.finals {
        emit(
            &FinalRecord {
                record: "final",
                window: key.window.clone(),
                statuses: key.statuses.iter().map(|s| s.name()).collect(),
                witness_len: out.witness.len(),
                hash: format!("{:#018x}", out.hash),
            },
            &mut lines,
        );
    }
    emit(
        &ExploreRecord {
            record: "explore",
            scenario: s.name.clone(),
            variant: v.mode.name().into(),
            complete: r.complete,
            incomplete_reason: r.incomplete_reason.clone(),
            finals: r.finals.len(),
            states: r.states,
            transitions: r.transitions,
            census: census(&r),
        },
        &mut lines,
    );
    out!(
        "# {} under {}: {} final state(s), {} states, {}",
        s.name,
        v.mode,
        r.finals.len(),
        r.states,
        if r.complete { "complete" } else { "INCOMPLETE" }
    );
    if let Some(dir) = &a.out {
        write_out(dir, "explore.jsonl", &(lines.join("\n") + "\n"))?;
    }
    Ok(0)
}

#[derive(Serialize)]
struct BenchRecord {
    record: &'static str,
    workload: String,
    variant: String,
    waiting: bool,
    threads: usize,
    seeds: u64,
    iterations: u64,
    runs: u64,
    commits: u64,
    lock_acquisitions: u64,
    critical_sections: u64,
    aborts: BTreeMap<String, u64>,
    subscription_conflict_aborts: u64,
    data_conflict_aborts: u64,
    steps: u64,
    truncated_runs: u64,
    consistent: bool,
}

fn bench(a: BenchArgs) -> CliResult {
    if a.threads < 2 {
        return Err(usage("bench needs --threads >= 2"));
    }
    let variants = if a.variants.is_empty() {
        vec![TleMode::Eager, TleMode::LazyExt]
    } else {
        a.variants.clone()
    };
    let opts = BenchOptions {
        threads: a.threads,
        seeds: (a.seed_start..a.seed_start + a.seeds).collect(),
        iterations: a.iterations,
        delay: a.delay,
        max_steps: a.steps,
        overrides: overrides(&a.engine)?,
    };
    let mut lines = Vec::new();
    let mut rows: Vec<(TleMode, BenchStats)> = Vec::new();
    for mode in variants {
        let v = TleVariant {
            waiting: a.waiting,
            ..TleVariant::new(mode)
        };
        let st = bench_run(a.workload, &v, &opts).map_err(|e| usage(e.to_string()))?;
        emit(
            &BenchRecord {
                record: "bench",
                workload: a.workload.name().into(),
                variant: mode.name().into(),
                waiting: a.waiting,
                threads: a.threads,
                seeds: a.seeds,
                iterations: a.iterations,
                runs: st.runs,
                commits: st.commits,
                lock_acquisitions: st.lock_acquisitions,
                critical_sections: st.critical_sections,
                aborts: st
                    .aborts
                    .iter()
                    .map(|(k, v)| (k.name().to_string(), *v))
                    .collect(),
                subscription_conflict_aborts: st.subscription_conflict_aborts,
                data_conflict_aborts: st.data_conflict_aborts,
                steps: st.steps,
                truncated_runs: st.truncated_runs,
                consistent: st.consistent(),
            },
            &mut lines,
        );
        rows.push((mode, st));
    }
    out!(
        "# {:11} {:>10} {:>10} {:>12} {:>12} {:>10}",
        "variant", "commits", "fallback", "sub_aborts", "data_aborts", "steps"
    );
    for (mode, st) in &rows {
        out!(
            "# {:11} {:>10} {:>10} {:>12} {:>12} {:>10}",
            mode.name(),
            st.commits,
            st.lock_acquisitions,
            st.subscription_conflict_aborts,
            st.data_conflict_aborts,
            st.steps
        );
    }
    if let Some(dir) = &a.out {
        write_out(dir, "bench.jsonl", &(lines.join("\n") + "\n"))?;
    }
    Ok(if rows.iter().all(|(_, s)| s.consistent()) { 0 } else { 1 })
}

#[derive(Serialize)]
struct ReplayRecord {
    record: &'static str,
    scenario: String,
    variant: String,
    window: Vec<u64>,
    statuses: Vec<&'static str>,
    steps: u64,
    hash: String,
}

fn replay_cmd(a: ReplayArgs) -> CliResult {
    let text = std::fs::read_to_string(&a.trace)
        .map_err(|e| usage(format!("{}: {e}", a.trace.display())))?;
    let trace = ScheduleTrace::from_text(&text).map_err(|e| usage(e.to_string()))?;
    let meta = |k: &str| trace.meta.get(k).cloned();
    let name = meta("scenario").ok_or_else(|| usage("trace has no meta.scenario header"))?;
    let all = catalog(&a.bundle)?;
    let s = find(&all, &name)?;
    let mut v = s.variant;
    if let Some(m) = meta("variant") {
        v.mode = m.parse().map_err(usage)?;
    }
    let flag = |k: &str| meta(k).map(|x| x == "true");
    v.waiting = flag("waiting").unwrap_or(v.waiting);
    v.approximate_simple = flag("approximate_simple").unwrap_or(v.approximate_simple);
    if let Some(n) = meta("attempts") {
        v.attempts = n.parse().map_err(|_| usage(format!("bad attempts `{n}`")))?;
    }
    let ov: Vec<(String, String)> = trace
        .meta
        .iter()
        .filter_map(|(k, val)| k.strip_prefix("set.").map(|k| (k.to_string(), val.clone())))
        .collect();
    let built = s
        .build(&v, &ov)
        .map_err(|e| usage(format!("{}: {e}", s.name)))?;
    match replay(&built.machine, &built.observe, &trace) {
        Ok(fs) => {
            emit(
                &ReplayRecord {
                    record: "replay",
                    scenario: s.name.clone(),
                    variant: v.mode.name().into(),
                    window: fs.window.clone(),
                    statuses: fs.statuses.iter().map(|s| s.name()).collect(),
                    steps: fs.steps,
                    hash: format!("{:#018x}", fs.hash),
                },
                &mut Vec::new(),
            );
            out!("# replayed {} steps of {} under {}: window {:?}", fs.steps, s.name, v.mode, fs.window);
            Ok(0)
        }
        Err(e) => {
            eprintln!("lazysub: replay failed: {e}");
            Ok(1)
        }
    }
}
