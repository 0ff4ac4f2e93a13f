use std::fmt;

use super::{LitmusError, Scenario};
use crate::config::EngineConfig;
use crate::htm::Word;
use crate::sched::{
    explore, replay, ExplorationReport, ExploreBounds, FinalKey, ScheduleTrace, TraceOrigin,
};
use crate::tle::TleVariant;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Safe,
    Unsafe {
        witness: ScheduleTrace,
        bad_state: FinalKey,
    },
    Incomplete {
        reason: String,
    },
}

impl Verdict {
    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Safe => "safe",
            Verdict::Unsafe { .. } => "UNSAFE",
            Verdict::Incomplete { .. } => "INCOMPLETE",
        }
    }

    pub fn is_safe(&self) -> bool {
        matches!(self, Verdict::Safe)
    }

    pub fn is_unsafe(&self) -> bool {
        matches!(self, Verdict::Unsafe { .. })
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Unsafe { witness, bad_state } => write!(
                f,
                "UNSAFE (window {:?} after {} steps)",
                bad_state.window,
                witness.choices.len()
            ),
            Verdict::Incomplete { reason } => write!(f, "INCOMPLETE ({reason})"),
            Verdict::Safe => f.write_str("safe"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SafetyReport {
    pub scenario: String,
    pub variant: TleVariant,
    pub config: EngineConfig,
    pub verdict: Verdict,
    pub oracle: ExplorationReport,
    pub explored: ExplorationReport,
}

/// Explores `s` with every critical section taking the real lock.
pub fn lock_only_oracle(
    s: &Scenario,
    bounds: &ExploreBounds,
    overrides: &[(String, String)],
) -> Result<ExplorationReport, LitmusError> {
    let lo = s.lock_only();
    let built = lo.build(&lo.variant, overrides)?;
    Ok(explore(&built.machine, &built.observe, bounds))
}

/// Explores `s` under `variant` and checks every final state against the
/// lock-only outcome set.
pub fn check_safety(
    s: &Scenario,
    variant: &TleVariant,
    bounds: &ExploreBounds,
    overrides: &[(String, String)],
) -> Result<SafetyReport, LitmusError> {
    let oracle = lock_only_oracle(s, bounds, overrides)?;
    check_against(s, variant, oracle, bounds, overrides)
}

/// As [`check_safety`] with a precomputed oracle.
pub fn check_against(
    s: &Scenario,
    variant: &TleVariant,
    oracle: ExplorationReport,
    bounds: &ExploreBounds,
    overrides: &[(String, String)],
) -> Result<SafetyReport, LitmusError> {
    let built = s.build(variant, overrides)?;
    let explored = explore(&built.machine, &built.observe, bounds);
    let config = built.machine.config.clone();

    let violation = explored
        .finals
        .iter()
        .filter(|(k, _)| !oracle.finals.contains_key(*k))
        .min_by(|(_, a), (_, b)| (a.witness.len(), &a.witness).cmp(&(b.witness.len(), &b.witness)));

    let verdict = if !oracle.complete {
        Verdict::Incomplete {
            reason: format!(
                "oracle: {}",
                oracle.incomplete_reason.as_deref().unwrap_or("bounds hit")
            ),
        }
    } else if let Some((key, out)) = violation {
        let mut trace = ScheduleTrace::new(out.witness.clone(), TraceOrigin::Explicit, config.fingerprint());
        trace.final_hash = Some(out.hash);
        trace.bounds = Some(*bounds);
        trace.meta.insert("scenario".into(), s.name.clone());
        trace.meta.insert("variant".into(), variant.mode.name().into());
        trace.meta.insert("waiting".into(), variant.waiting.to_string());
        trace.meta.insert("attempts".into(), variant.attempts.to_string());
        trace
            .meta
            .insert("approximate_simple".into(), variant.approximate_simple.to_string());
        for (k, v) in overrides {
            trace.meta.insert(format!("set.{k}"), v.clone());
        }
        let fs = replay(&built.machine, &built.observe, &trace)
            .map_err(|e| LitmusError::WitnessReplay(e.to_string()))?;
        if fs.window != key.window || fs.statuses != key.statuses {
            return Err(LitmusError::WitnessReplay(format!(
                "replayed window {:?} differs from explored {:?}",
                fs.window, key.window
            )));
        }
        Verdict::Unsafe {
            witness: trace,
            bad_state: key.clone(),
        }
    } else if !explored.complete {
        Verdict::Incomplete {
            reason: explored
                .incomplete_reason
                .clone()
                .unwrap_or_else(|| "bounds hit".into()),
        }
    } else {
        Verdict::Safe
    };

    Ok(SafetyReport {
        scenario: s.name.clone(),
        variant: *variant,
        config,
        verdict,
        oracle,
        explored,
    })
}

/// Windows of the oracle set, for display.
pub fn oracle_windows(r: &ExplorationReport) -> Vec<Vec<Word>> {
    r.windows().into_iter().collect()
}
