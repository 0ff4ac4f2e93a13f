//! Schedulers, schedule traces and replay.

mod explore;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use explore::{explore, Census, ExplorationReport, ExploreBounds, FinalKey, FinalOutcome};

use crate::config::parse_u64;
use crate::htm::{Address, ThreadId};
use crate::machine::Machine;
use crate::vm::FinalState;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("no runnable thread")]
    NoRunnable,
    #[error("trace exhausted after {step} steps with threads still runnable")]
    TraceExhausted { step: usize },
    #[error("step {step}: trace picks thread {thread}, which is not runnable")]
    NotRunnable { step: usize, thread: ThreadId },
    #[error("config fingerprint {found:#018x} does not match trace ({expected:#018x})")]
    ConfigMismatch { expected: u64, found: u64 },
    #[error("final state hash {found:#018x} differs from trace ({expected:#018x}) after {steps} steps")]
    FinalHashMismatch { expected: u64, found: u64, steps: usize },
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Chooses the next thread to step.
pub trait Scheduler {
    fn pick(&mut self, runnable: &[ThreadId]) -> Result<ThreadId, ScheduleError>;
}

/// Cycles through thread ids in ascending order, skipping stopped threads.
#[derive(Debug, Clone, Default)]
pub struct RoundRobin {
    next: ThreadId,
}

impl Scheduler for RoundRobin {
    fn pick(&mut self, runnable: &[ThreadId]) -> Result<ThreadId, ScheduleError> {
        let t = runnable
            .iter()
            .copied()
            .find(|t| *t >= self.next)
            .or_else(|| runnable.first().copied())
            .ok_or(ScheduleError::NoRunnable)?;
        self.next = t + 1;
        Ok(t)
    }
}

/// Uniform choice among runnable threads from a seeded ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct RandomScheduler {
    rng: ChaCha8Rng,
}

impl RandomScheduler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Scheduler for RandomScheduler {
    fn pick(&mut self, runnable: &[ThreadId]) -> Result<ThreadId, ScheduleError> {
        if runnable.is_empty() {
            return Err(ScheduleError::NoRunnable);
        }
        Ok(runnable[self.rng.gen_range(0..runnable.len())])
    }
}

/// Replays a fixed list of choices.
#[derive(Debug, Clone)]
pub struct TraceScheduler {
    choices: Vec<ThreadId>,
    pos: usize,
}

impl TraceScheduler {
    pub fn new(choices: Vec<ThreadId>) -> Self {
        Self { choices, pos: 0 }
    }
}

impl Scheduler for TraceScheduler {
    fn pick(&mut self, runnable: &[ThreadId]) -> Result<ThreadId, ScheduleError> {
        let step = self.pos;
        let t = *self
            .choices
            .get(step)
            .ok_or(ScheduleError::TraceExhausted { step })?;
        if !runnable.contains(&t) {
            return Err(ScheduleError::NotRunnable { step, thread: t });
        }
        self.pos += 1;
        Ok(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceOrigin {
    Seed(u64),
    Explicit,
}

/// A recorded schedule plus what is needed to check a replay.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScheduleTrace {
    pub choices: Vec<ThreadId>,
    pub origin: TraceOrigin,
    pub bounds: Option<ExploreBounds>,
    pub config_hash: u64,
    pub final_hash: Option<u64>,
    /// Free-form `key = value` header entries (scenario name, variant, ...).
    pub meta: BTreeMap<String, String>,
}

const TRACE_MAGIC: &str = "# lazysub trace v1";

impl ScheduleTrace {
    pub fn new(choices: Vec<ThreadId>, origin: TraceOrigin, config_hash: u64) -> Self {
        Self {
            choices,
            origin,
            bounds: None,
            config_hash,
            final_hash: None,
            meta: BTreeMap::new(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{TRACE_MAGIC}");
        match self.origin {
            TraceOrigin::Seed(s) => {
                let _ = writeln!(out, "# origin = seed {s}");
            }
            TraceOrigin::Explicit => {
                let _ = writeln!(out, "# origin = explicit");
            }
        }
        let _ = writeln!(out, "# config_hash = {:#018x}", self.config_hash);
        if let Some(h) = self.final_hash {
            let _ = writeln!(out, "# final_hash = {h:#018x}");
        }
        if let Some(b) = &self.bounds {
            let _ = writeln!(
                out,
                "# bounds = {} {} {} {}",
                b.max_steps_total, b.preemption_bound, b.max_states, b.dedup
            );
        }
        for (k, v) in &self.meta {
            let _ = writeln!(out, "# meta.{k} = {v}");
        }
        for t in &self.choices {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ScheduleError> {
        let mut trace = ScheduleTrace::new(Vec::new(), TraceOrigin::Explicit, 0);
        let mut saw_config = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ScheduleError::Parse { line, message };
            let l = raw.trim();
            if l.is_empty() || l == TRACE_MAGIC {
                continue;
            }
            if let Some(header) = l.strip_prefix('#') {
                let Some((k, v)) = header.split_once('=') else {
                    continue;
                };
                let (k, v) = (k.trim(), v.trim());
                let num = |s: &str| parse_u64(k, s).map_err(|_| err(format!("bad number `{s}`")));
                match k {
                    "origin" if v == "explicit" => trace.origin = TraceOrigin::Explicit,
                    "origin" => {
                        let s = v
                            .strip_prefix("seed")
                            .ok_or_else(|| err(format!("bad origin `{v}`")))?;
                        trace.origin = TraceOrigin::Seed(num(s.trim())?);
                    }
                    "config_hash" => {
                        trace.config_hash = num(v)?;
                        saw_config = true;
                    }
                    "final_hash" => trace.final_hash = Some(num(v)?),
                    "bounds" => {
                        let parts: Vec<_> = v.split_whitespace().collect();
                        if parts.len() != 4 {
                            return Err(err(format!("bad bounds `{v}`")));
                        }
                        trace.bounds = Some(ExploreBounds {
                            max_steps_total: num(parts[0])?,
                            preemption_bound: num(parts[1])? as u32,
                            max_states: num(parts[2])?,
                            dedup: parts[3]
                                .parse()
                                .map_err(|_| err(format!("bad flag `{}`", parts[3])))?,
                        });
                    }
                    _ => {
                        if let Some(m) = k.strip_prefix("meta.") {
                            trace.meta.insert(m.to_string(), v.to_string());
                        }
                    }
                }
                continue;
            }
            let t: ThreadId = l
                .parse()
                .map_err(|_| err(format!("expected thread id, got `{l}`")))?;
            trace.choices.push(t);
        }
        if !saw_config {
            return Err(ScheduleError::Parse {
                line: 0,
                message: "missing config_hash header".into(),
            });
        }
        Ok(trace)
    }
}

/// Re-executes `trace` on a copy of `initial`. The config fingerprint must
/// match, every choice must be runnable, and the final hash (when recorded)
/// must agree.
pub fn replay(
    initial: &Machine,
    observe: &[Address],
    trace: &ScheduleTrace,
) -> Result<FinalState, ScheduleError> {
    let found = initial.config.fingerprint();
    if found != trace.config_hash {
        return Err(ScheduleError::ConfigMismatch {
            expected: trace.config_hash,
            found,
        });
    }
    let mut m = initial.clone();
    let mut sched = TraceScheduler::new(trace.choices.clone());
    for _ in 0..trace.choices.len() {
        let runnable = m.runnable();
        let t = sched.pick(&runnable)?;
        m.step(t);
    }
    let final_state = FinalState::capture(&m, observe, trace.choices.len() as u64);
    if let Some(expected) = trace.final_hash {
        if expected != final_state.hash {
            return Err(ScheduleError::FinalHashMismatch {
                expected,
                found: final_state.hash,
                steps: trace.choices.len(),
            });
        }
    }
    Ok(final_state)
}

/// Runs `initial` under a seeded random scheduler and records the trace.
pub fn random_run(
    initial: &Machine,
    observe: &[Address],
    seed: u64,
    max_steps: u64,
) -> (Machine, FinalState, ScheduleTrace) {
    let mut m = initial.clone();
    let (fs, choices) = m
        .run_to_quiescence(&mut RandomScheduler::new(seed), observe, max_steps)
        .expect("random scheduler never fails on a non-empty runnable set");
    let mut trace = ScheduleTrace::new(choices, TraceOrigin::Seed(seed), initial.config.fingerprint());
    trace.final_hash = Some(fs.hash);
    (m, fs, trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_robin_cycles() {
        let mut rr = RoundRobin::default();
        let picks: Vec<_> = (0..4).map(|_| rr.pick(&[0, 1, 2]).unwrap()).collect();
        assert_eq!(picks, [0, 1, 2, 0]);
        assert_eq!(rr.pick(&[0, 2]).unwrap(), 2);
        assert_eq!(rr.pick(&[0, 2]).unwrap(), 0);
    }

    #[test]
    fn random_is_seeded() {
        let draw = |seed| {
            let mut r = RandomScheduler::new(seed);
            (0..32).map(|_| r.pick(&[0, 1, 2]).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(draw(42), draw(42));
        assert_ne!(draw(42), draw(43));
    }

    #[test]
    fn trace_follows_choices_then_errors() {
        let mut s = TraceScheduler::new(vec![0, 0, 1]);
        assert_eq!(s.pick(&[0, 1]).unwrap(), 0);
        assert_eq!(s.pick(&[0, 1]).unwrap(), 0);
        assert_eq!(
            s.pick(&[0]),
            Err(ScheduleError::NotRunnable { step: 2, thread: 1 })
        );
        assert_eq!(s.pick(&[0, 1]).unwrap(), 1);
        assert_eq!(s.pick(&[0, 1]), Err(ScheduleError::TraceExhausted { step: 3 }));
    }

    #[test]
    fn trace_text_round_trip() {
        let mut t = ScheduleTrace::new(vec![0, 1, 1, 0], TraceOrigin::Seed(7), 0xabc);
        t.final_hash = Some(0x1234);
        t.bounds = Some(ExploreBounds::default());
        t.meta.insert("scenario".into(), "indirect_branch".into());
        let text = t.to_text();
        assert_eq!(ScheduleTrace::from_text(&text).unwrap(), t);

        let e = ScheduleTrace::from_text("# config_hash = 0x1\n0\nx\n").unwrap_err();
        assert!(matches!(e, ScheduleError::Parse { line: 3, .. }));
    }
}
