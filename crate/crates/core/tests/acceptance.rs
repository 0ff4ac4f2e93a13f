//! Acceptance run. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

use std::time::{Duration, Instant};

use lazysub::audit::audit_seed;
use lazysub::bench::{bench_run, BenchOptions, Workload};
use lazysub::htm::{AbortReason, EngineEvent};
use lazysub::litmus::{
    builtin_scenarios, check_safety, lock_only_oracle, scenario, Scenario, ThreadSpec, Verdict,
};
use lazysub::sched::{explore, random_run, replay, ExploreBounds};
use lazysub::tle::{LockDescriptor, LockKind, TleMode, TleVariant};
use lazysub::vm::StepOutcome;

const PITFALLS: [&str; 7] = [
    "indirect_branch",
    "lock_scribble",
    "wrong_lock",
    "self_modify",
    "corrupted_return",
    "conditional_commit",
    "nt_store_hazard",
];

/// Aborts that stop a commit-time subscription or a transaction touching what it subscribed.
const SUBSCRIPTION_REASONS: [AbortReason; 5] = [
    AbortReason::SubscriptionFailed,
    AbortReason::ReadOwnWriteInSubscription,
    AbortReason::ExecuteOwnWrite,
    AbortReason::LarStore,
    AbortReason::StoreInSubscription,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn bounds() -> ExploreBounds {
    ExploreBounds {
        preemption_bound: 4,
        max_steps_total: 4000,
        ..ExploreBounds::default()
    }
}

fn in_mode(s: &Scenario, mode: TleMode) -> TleVariant {
    TleVariant { mode, ..s.variant }
}

fn criterion_1() -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for name in PITFALLS {
        let t = Instant::now();
        let s = scenario(name).expect("builtin");
        let v = in_mode(&s, TleMode::LazyUnsafe);
        let built = s.build(&v, &[]).expect("builds");
        let sizes_ok = (0..s.threads.len()).all(|t| built.thread_instructions(t) <= 60);
        let r = check_safety(&s, &v, &bounds(), &[]).expect("explores");
        let complete = r.explored.complete && r.oracle.complete;
        let witness_ok = match &r.verdict {
            Verdict::Unsafe { witness, bad_state } => {
                let again = s.build(&v, &[]).expect("builds");
                match replay(&again.machine, &again.observe, witness) {
                    Ok(fs) => {
                        fs.window == bad_state.window
                            && !r.oracle.windows().contains(&fs.window)
                            && fs.statuses.len() == s.threads.len()
                    }
                    Err(_) => false,
                }
            }
            _ => false,
        };
        let elapsed = t.elapsed();
        let ok = sizes_ok && complete && witness_ok && elapsed < Duration::from_secs(60);
        pass &= ok;
        notes.push(format!("{name}={}{}", r.verdict.label(), if ok { "" } else { "(!)" }));
    }
    Outcome {
        pass,
        detail: notes.join(" "),
    }
}

fn soundness_under(mode: TleMode, census: bool) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    for name in PITFALLS {
        let t = Instant::now();
        let s = scenario(name).expect("builtin");
        let r = check_safety(&s, &in_mode(&s, mode), &bounds(), &[]).expect("explores");
        let complete = r.explored.complete && r.oracle.complete;
        let c = &r.explored.census;
        let documented = c.faults == 0
            && c.aborts.keys().all(|k| AbortReason::ALL.contains(k))
            && (!census || SUBSCRIPTION_REASONS.iter().any(|k| c.aborts.contains_key(k)));
        let ok = r.verdict.is_safe() && complete && documented && t.elapsed() < Duration::from_secs(60);
        pass &= ok;
        if census {
            let aborts: Vec<String> = c.aborts.iter().map(|(k, n)| format!("{}:{n}", k.name())).collect();
            notes.push(format!("{name}={} [{}]", r.verdict.label(), aborts.join(",")));
        } else {
            notes.push(format!("{name}={}", r.verdict.label()));
        }
    }
    Outcome {
        pass,
        detail: notes.join(" "),
    }
}

fn criterion_4() -> Outcome {
    let s = scenario("nested_wrong_lock").expect("builtin");
    let v = in_mode(&s, TleMode::LazyExt);
    let r = check_safety(&s, &v, &bounds(), &[]).expect("explores");
    let complete = r.explored.complete && r.oracle.complete;

    // random schedules: no publish of a subscribed transaction while L1 is held,
    // and at least one run where the inner slot really named the decoy
    let built = s.build(&v, &[]).expect("builds");
    let l1 = built.label("L1").expect("L1");
    let decoy = built.label("decoy").expect("decoy");
    let mut held_commits = 0;
    let mut corrupted_runs = 0;
    let start = built.machine.clone().with_instrumentation();
    for seed in 0..3000 {
        let (mut end, _, _) = random_run(&start, &built.observe, seed, 100_000);
        let mut lock_word = start.mem.cells[l1.index()];
        let mut saw_decoy = false;
        for e in end.take_events() {
            match e {
                EngineEvent::DirectStore { addr, value, .. } if addr == l1 => lock_word = value,
                EngineEvent::SlotPush { slot, .. } if slot.lar == decoy => saw_decoy = true,
                EngineEvent::Publish { writes, slots, .. } => {
                    if !slots.is_empty() && lock_word != 0 {
                        held_commits += 1;
                    }
                    if let Some((_, w)) = writes.iter().find(|(a, _)| *a == l1) {
                        lock_word = *w;
                    }
                }
                _ => {}
            }
        }
        if saw_decoy {
            corrupted_runs += 1;
        }
    }
    Outcome {
        pass: r.verdict.is_safe() && complete && held_commits == 0 && corrupted_runs > 0,
        detail: format!(
            "verdict={} complete={complete} commits_while_outer_held={held_commits} runs_with_corrupted_inner_slot={corrupted_runs}/3000",
            r.verdict.label()
        ),
    }
}

fn criterion_5() -> Outcome {
    let s = scenario("false_share").expect("builtin");
    let v = in_mode(&s, TleMode::LazyExt);
    let line = [("word_bits".to_string(), "false".to_string())];
    let word = [("word_bits".to_string(), "true".to_string())];
    let mut cl = s.config_for(&v, &line).expect("config");
    let cw = s.config_for(&v, &word).expect("config");
    cl.word_bits = true;
    let only_flag = cl == cw;

    let rl = check_safety(&s, &v, &bounds(), &line).expect("explores");
    let rw = check_safety(&s, &v, &bounds(), &word).expect("explores");
    let row = |r: &lazysub::litmus::SafetyReport| {
        r.explored
            .census
            .aborts
            .get(&AbortReason::ReadOwnWriteInSubscription)
            .copied()
            .unwrap_or(0)
    };
    let (row_l, row_w) = (row(&rl), row(&rw));
    let (com_l, com_w) = (rl.explored.census.commits, rw.explored.census.commits);
    Outcome {
        pass: only_flag
            && rl.explored.complete
            && rw.explored.complete
            && row_l > 0
            && com_l == 0
            && row_w == 0
            && com_w > 0,
        detail: format!(
            "per-line: ReadOwnWriteInSubscription={row_l} commits={com_l}; per-word: ReadOwnWriteInSubscription={row_w} commits={com_w}; configs differ only in word_bits={only_flag}"
        ),
    }
}

fn criterion_6() -> Outcome {
    let s = scenario("nt_store_hazard").expect("builtin");
    let v = in_mode(&s, TleMode::LazyExt);
    let set = |b: &str| [("all_stores_transactional".to_string(), b.to_string())];
    let off = check_safety(&s, &v, &bounds(), &set("false")).expect("explores");
    let on = check_safety(&s, &v, &bounds(), &set("true")).expect("explores");
    Outcome {
        pass: off.verdict.is_unsafe() && on.verdict.is_safe() && on.explored.complete,
        detail: format!(
            "all_stores_transactional=false: {}; true: {}",
            off.verdict.label(),
            on.verdict.label()
        ),
    }
}

fn churn(v: TleVariant) -> lazysub::bench::BenchStats {
    let opts = BenchOptions {
        threads: 4,
        seeds: (0..200).collect(),
        iterations: 200,
        ..BenchOptions::default()
    };
    bench_run(Workload::Churn, &v, &opts).expect("bench runs")
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let eager = churn(TleVariant::new(TleMode::Eager));
    let lazy = churn(TleVariant::new(TleMode::LazyExt));
    let elapsed = t.elapsed();
    let per_thread_ok = eager.critical_sections >= 200 * 4 * 200 && lazy.critical_sections >= 200 * 4 * 200;
    Outcome {
        pass: 2 * lazy.subscription_conflict_aborts <= eager.subscription_conflict_aborts
            && eager.consistent()
            && lazy.consistent()
            && per_thread_ok
            && elapsed < Duration::from_secs(300),
        detail: format!(
            "subscription_conflict_aborts eager={} lazy_ext={} (ratio {:.3}); {:.1}s",
            eager.subscription_conflict_aborts,
            lazy.subscription_conflict_aborts,
            lazy.subscription_conflict_aborts as f64 / eager.subscription_conflict_aborts.max(1) as f64,
            elapsed.as_secs_f64()
        ),
    }
}

fn criterion_8() -> Outcome {
    let plain = churn(TleVariant::new(TleMode::LazyExt));
    let waiting = churn(TleVariant {
        waiting: true,
        ..TleVariant::new(TleMode::LazyExt)
    });
    Outcome {
        pass: waiting.subscription_conflict_aborts <= plain.subscription_conflict_aborts
            && waiting.consistent(),
        detail: format!(
            "subscription_conflict_aborts waiting={} non-waiting={}",
            waiting.subscription_conflict_aborts, plain.subscription_conflict_aborts
        ),
    }
}

fn criterion_9() -> Outcome {
    let mut runs = 0u64;
    let mut violations = Vec::new();
    let catalog = builtin_scenarios();
    let per = 10_000u64.div_ceil((catalog.len() * TleMode::ALL.len()) as u64);
    for s in &catalog {
        for mode in TleMode::ALL {
            let b = s.build(&in_mode(s, mode), &[]).expect("builds");
            for seed in 0..per {
                runs += 1;
                for v in audit_seed(&b.machine, &b.observe, &s.locks, seed, 100_000) {
                    violations.push(format!("{} {mode} seed {seed}: {v}", s.name));
                }
            }
        }
    }
    Outcome {
        pass: runs >= 10_000 && violations.is_empty(),
        detail: format!(
            "{runs} runs, {} violation(s){}",
            violations.len(),
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    }
}

fn spin_scenario() -> Scenario {
    let body = "@main:
    ACQUIRE L
@spin:
    LOAD r1, r0, flag
    BNE r1, r0, @spin
    MOVI r2, 1
    STORE r2, r0, flag
    STORE r0, r0, flag
    RELEASE L
    HALT
";
    Scenario {
        name: "spin_on_transient".into(),
        description: "zombie spins on a flag that is 1 only inside the critical section".into(),
        locks: vec![LockDescriptor::new("L", LockKind::SimpleZero, 640)],
        shared: ".org 16\nflag: .word 0\n.observe flag\n".into(),
        threads: vec![
            ThreadSpec {
                template: body.into(),
                elides: true,
            },
            ThreadSpec {
                template: body.into(),
                elides: false,
            },
        ],
        variant: TleVariant::new(TleMode::LazyUnsafe),
        config: Vec::new(),
        scoped: Vec::new(),
    }
}

fn criterion_10() -> Outcome {
    let s = spin_scenario();
    let built = s.build(&s.variant, &[]).expect("builds");
    let bound = built.machine.config.tx_length_bound;
    let flag = built.label("flag").expect("flag");
    let mut m = built.machine.clone();
    // lock holder runs until the flag is visibly set
    let mut guard = 0;
    while m.mem.cells[flag.index()] == 0 && guard < 1000 {
        m.step(1);
        guard += 1;
    }
    // elision prologue up to and including TXBEGIN
    let mut guard = 0;
    while !m.txs[0].in_tx() && guard < 100 {
        m.step(0);
        guard += 1;
    }
    // ticks spent inside the transaction; the last one is the aborting tick
    let mut steps = 0u64;
    let mut reason = None;
    while m.txs[0].in_tx() && steps <= bound + 100 {
        steps += 1;
        if let StepOutcome::TxAborted(r) = m.step(0) {
            reason = Some(r);
            break;
        }
    }
    let executed = steps.saturating_sub(1);
    let directed = reason == Some(AbortReason::LengthExceeded) && executed <= bound;

    // and the explorer terminates with the bound lowered to fit its step budget
    let small = [("tx_length_bound".to_string(), "64".to_string())];
    let oracle = lock_only_oracle(&s, &bounds(), &small).expect("explores");
    let b2 = s.build(&s.variant, &small).expect("builds");
    let r = explore(&b2.machine, &b2.observe, &bounds());
    let spun = r
        .census
        .aborts
        .get(&AbortReason::LengthExceeded)
        .copied()
        .unwrap_or(0);
    Outcome {
        pass: directed && r.complete && oracle.complete && spun > 0,
        detail: format!(
            "zombie aborted with {:?} after executing {executed} transactional instructions (bound {bound}); explorer complete={} with {spun} LengthExceeded aborts",
            reason.map(|r| r.name()),
            r.complete
        ),
    }
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Outcome);
    let criteria: Vec<Criterion> = vec![
        (1, "pitfall reproduction under lazy_unsafe", criterion_1),
        (2, "extension soundness under lazy_ext", || soundness_under(TleMode::LazyExt, true)),
        (3, "eager baseline soundness", || soundness_under(TleMode::Eager, false)),
        (4, "nested wrong lock", criterion_4),
        (5, "granularity differential", criterion_5),
        (6, "nt-store hazard toggle", criterion_6),
        (7, "lazy subscription benefit", criterion_7),
        (8, "nt-wait benefit", criterion_8),
        (9, "engine invariants", criterion_9),
        (10, "length bound", criterion_10),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, title, run) in criteria {
        if !filter.is_empty() && !filter.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let o = run();
        println!(
            "criterion {n:2} {}: {title}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
        if !o.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
