//! Abort-rate workloads. `churn` pairs one thread that keeps taking the real
//! lock for a short private critical section with threads that elide
//! critical sections on their own data. `disjoint` drops the lock taker.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use crate::htm::{AbortReason, Address, EngineEvent};
use crate::litmus::{LitmusError, Scenario, ThreadSpec};
use crate::sched::{RandomScheduler, Scheduler};
use crate::tle::{LockDescriptor, LockKind, TleVariant, LOCK_BUSY_CODE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    Churn,
    Disjoint,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Workload::Churn => "churn",
            Workload::Disjoint => "disjoint",
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "churn" => Ok(Workload::Churn),
            "disjoint" => Ok(Workload::Disjoint),
            _ => Err(format!("unknown workload `{s}` (churn, disjoint)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BenchOptions {
    pub threads: usize,
    pub seeds: Vec<u64>,
    /// Critical sections per thread.
    pub iterations: u64,
    /// Busy-wait iterations the lock taker spends between acquisitions.
    pub delay: u64,
    /// Per-run step cap.
    pub max_steps: u64,
    pub overrides: Vec<(String, String)>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            threads: 4,
            seeds: (0..200).collect(),
            iterations: 200,
            delay: 12,
            max_steps: 2_000_000,
            overrides: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BenchStats {
    pub runs: u64,
    /// Critical sections that committed as transactions.
    pub commits: u64,
    /// Critical sections that ran holding the lock.
    pub lock_acquisitions: u64,
    pub critical_sections: u64,
    pub aborts: BTreeMap<AbortReason, u64>,
    /// Aborts caused by the lock being (or becoming) held.
    pub subscription_conflict_aborts: u64,
    /// Aborts caused by other transactions' data accesses.
    pub data_conflict_aborts: u64,
    pub steps: u64,
    /// Runs stopped by the step cap.
    pub truncated_runs: u64,
}

impl BenchStats {
    /// Every completed critical section either committed or held the lock.
    pub fn consistent(&self) -> bool {
        self.commits + self.lock_acquisitions == self.critical_sections
    }

    pub fn total_aborts(&self) -> u64 {
        self.aborts.values().sum()
    }

    pub fn merge(&mut self, o: &BenchStats) {
        self.runs += o.runs;
        self.commits += o.commits;
        self.lock_acquisitions += o.lock_acquisitions;
        self.critical_sections += o.critical_sections;
        for (r, n) in &o.aborts {
            *self.aborts.entry(*r).or_default() += n;
        }
        self.subscription_conflict_aborts += o.subscription_conflict_aborts;
        self.data_conflict_aborts += o.data_conflict_aborts;
        self.steps += o.steps;
        self.truncated_runs += o.truncated_runs;
    }
}

const LOCK_BASE: u64 = 1000;

const WORKER: &str = "@main:
    MOVI r6, ITER
@loop:
    ACQUIRE L
    LOAD r1, r0, @d
    ADDI r1, r1, 1
    STORE r1, r0, @d
    LOAD r2, r0, @d+1
    ADD r2, r2, r1
    STORE r2, r0, @d+1
    LOAD r3, r0, @d+2
    ADD r3, r3, r2
    STORE r3, r0, @d+2
    LOAD r4, r0, @d+3
    SUB r4, r4, r1
    STORE r4, r0, @d+3
    LOAD r5, r0, @d+4
    OR r5, r5, r3
    ADDI r5, r5, 1
    STORE r5, r0, @d+4
    ADD r1, r1, r5
    STORE r1, r0, @d+5
    RELEASE L
    ADDI r6, r6, -1
    BNE r6, r0, @loop
    HALT
.align 8
@d: .word 0, 0, 0, 0, 0, 0, 0, 0
";

const CHURNER: &str = "@main:
    MOVI r6, ITER
@loop:
    ACQUIRE L
    LOAD r1, r0, @d
    ADDI r1, r1, 1
    STORE r1, r0, @d
    RELEASE L
    MOVI r7, DELAY
@delay:
    ADDI r7, r7, -1
    BNE r7, r0, @delay
    ADDI r6, r6, -1
    BNE r6, r0, @loop
    HALT
.align 8
@d: .word 0, 0, 0, 0, 0, 0, 0, 0
";

/// The workload as a scenario: thread 0 is the lock taker under `churn`.
pub fn workload_scenario(w: Workload, variant: &TleVariant, opts: &BenchOptions) -> Scenario {
    let fill = |t: &str| {
        t.replace("ITER", &opts.iterations.to_string())
            .replace("DELAY", &opts.delay.max(1).to_string())
    };
    let threads = (0..opts.threads)
        .map(|i| match (w, i) {
            (Workload::Churn, 0) => ThreadSpec {
                template: fill(CHURNER),
                elides: false,
            },
            _ => ThreadSpec {
                template: fill(WORKER),
                elides: true,
            },
        })
        .collect();
    Scenario {
        name: format!("bench_{w}"),
        description: format!("{w} workload with {} threads", opts.threads),
        locks: vec![LockDescriptor::new("L", LockKind::SimpleZero, LOCK_BASE)],
        shared: ".org 16\n".into(),
        threads,
        variant: *variant,
        config: vec![("memory_size".into(), "2048".into())],
        scoped: Vec::new(),
    }
}

/// Runs `w` under `variant` for every seed and sums the results.
pub fn bench_run(
    w: Workload,
    variant: &TleVariant,
    opts: &BenchOptions,
) -> Result<BenchStats, LitmusError> {
    let s = workload_scenario(w, variant, opts);
    let built = s.build(variant, &opts.overrides)?;
    let site_labels = |suffix: &str| -> Vec<Vec<Address>> {
        built
            .sites
            .iter()
            .map(|ps| ps.iter().filter_map(|p| built.label(&format!("{p}_{suffix}"))).collect())
            .collect()
    };
    let held = site_labels("held");
    let done = site_labels("done");
    let line_words = built.machine.config.line_words;
    let lock_lines: Vec<u64> = s
        .locks
        .iter()
        .flat_map(|l| (0..l.footprint()).map(move |k| (l.base.0 + k) / line_words))
        .collect();

    let mut total = BenchStats::default();
    let base = built.machine.clone().with_instrumentation();
    for &seed in &opts.seeds {
        let mut m = base.clone();
        let mut sched = RandomScheduler::new(seed);
        let mut st = BenchStats {
            runs: 1,
            ..BenchStats::default()
        };
        loop {
            let runnable = m.runnable();
            if runnable.is_empty() {
                break;
            }
            if st.steps >= opts.max_steps {
                st.truncated_runs = 1;
                break;
            }
            let t = sched.pick(&runnable).expect("runnable set is non-empty");
            m.step(t);
            st.steps += 1;
            let pc = m.threads[t].pc;
            if held[t].contains(&pc) {
                st.lock_acquisitions += 1;
            }
            if done[t].contains(&pc) {
                st.critical_sections += 1;
            }
            for e in m.take_events() {
                if let EngineEvent::Abort {
                    reason,
                    code,
                    doomed_by,
                    ..
                } = e
                {
                    *st.aborts.entry(reason).or_default() += 1;
                    let on_lock = doomed_by.is_some_and(|a| lock_lines.contains(&(a.0 / line_words)));
                    match reason {
                        AbortReason::SubscriptionFailed => st.subscription_conflict_aborts += 1,
                        AbortReason::Explicit if code == LOCK_BUSY_CODE as u64 => {
                            st.subscription_conflict_aborts += 1
                        }
                        AbortReason::Doomed if on_lock => st.subscription_conflict_aborts += 1,
                        AbortReason::Doomed | AbortReason::Conflict => st.data_conflict_aborts += 1,
                        _ => {}
                    }
                }
            }
        }
        st.commits = m.stats.commits;
        total.merge(&st);
    }
    Ok(total)
}
