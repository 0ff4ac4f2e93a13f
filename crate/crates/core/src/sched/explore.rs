//! Depth-first exploration of scheduler choices with preemption bounding and
//! state-hash deduplication.

use std::collections::{BTreeMap, HashMap};

use crate::htm::{AbortReason, Address, ThreadId, Word};
use crate::machine::{Machine, ThreadStatus};
use crate::vm::StepOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExploreBounds {
    /// Longest schedule explored along any single path.
    pub max_steps_total: u64,
    /// Switches away from a thread that could have kept running.
    pub preemption_bound: u32,
    /// Cap on the dedup table.
    pub max_states: u64,
    pub dedup: bool,
}

impl Default for ExploreBounds {
    fn default() -> Self {
        Self {
            max_steps_total: 4000,
            preemption_bound: 4,
            max_states: 2_000_000,
            dedup: true,
        }
    }
}

/// What an explored execution ended with: the observable window and how each
/// thread stopped.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FinalKey {
    pub window: Vec<Word>,
    pub statuses: Vec<ThreadStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalOutcome {
    /// Shortest schedule found reaching this key (ties: lexicographically least).
    pub witness: Vec<ThreadId>,
    pub hash: u64,
}

/// Counts over explored transitions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Census {
    pub aborts: BTreeMap<AbortReason, u64>,
    pub commits: u64,
    pub faults: u64,
}

#[derive(Debug, Clone)]
pub struct ExplorationReport {
    pub finals: BTreeMap<FinalKey, FinalOutcome>,
    pub complete: bool,
    /// Why exploration stopped early, when `complete` is false.
    pub incomplete_reason: Option<String>,
    pub states: u64,
    pub transitions: u64,
    pub census: Census,
}

impl ExplorationReport {
    pub fn windows(&self) -> std::collections::BTreeSet<Vec<Word>> {
        self.finals.keys().map(|k| k.window.clone()).collect()
    }
}

const ROOT: u32 = u32::MAX;

struct Node {
    machine: Machine,
    last: Option<ThreadId>,
    preemptions: u32,
    depth: u64,
    /// Index into the trace arena, `ROOT` for the empty schedule.
    at: u32,
}

fn witness(arena: &[(u32, u8)], mut at: u32) -> Vec<ThreadId> {
    let mut out = Vec::new();
    while at != ROOT {
        let (parent, t) = arena[at as usize];
        out.push(t as ThreadId);
        at = parent;
    }
    out.reverse();
    out
}

/// Enumerates schedules of `initial` within `bounds`, recording each distinct
/// final key with a witness schedule.
pub fn explore(initial: &Machine, observe: &[Address], bounds: &ExploreBounds) -> ExplorationReport {
    let mut report = ExplorationReport {
        finals: BTreeMap::new(),
        complete: true,
        incomplete_reason: None,
        states: 0,
        transitions: 0,
        census: Census::default(),
    };
    let mut seen: HashMap<(u64, Option<ThreadId>), u32> = HashMap::new();
    let mut arena: Vec<(u32, u8)> = Vec::new();
    let mut stack = vec![Node {
        machine: initial.clone(),
        last: None,
        preemptions: 0,
        depth: 0,
        at: ROOT,
    }];
    let mut truncated_paths = 0u64;

    while let Some(node) = stack.pop() {
        let runnable = node.machine.runnable();
        if runnable.is_empty() {
            let key = FinalKey {
                window: node.machine.window(observe),
                statuses: node.machine.threads.iter().map(|t| t.status).collect(),
            };
            let w = witness(&arena, node.at);
            let better = match report.finals.get(&key) {
                None => true,
                Some(old) => (w.len(), &w) < (old.witness.len(), &old.witness),
            };
            if better {
                let hash = node.machine.content_hash();
                report.finals.insert(key, FinalOutcome { witness: w, hash });
            }
            continue;
        }
        if node.depth >= bounds.max_steps_total {
            truncated_paths += 1;
            continue;
        }
        if bounds.dedup {
            let key = (node.machine.content_hash(), node.last);
            match seen.get(&key) {
                Some(p) if *p <= node.preemptions => continue,
                _ => {
                    seen.insert(key, node.preemptions);
                }
            }
            if seen.len() as u64 > bounds.max_states {
                report.complete = false;
                report.incomplete_reason =
                    Some(format!("state cap of {} reached", bounds.max_states));
                break;
            }
        }
        report.states += 1;

        let last_runnable = node.last.filter(|l| runnable.contains(l));
        let mut children: Vec<(ThreadId, u32)> = Vec::new();
        for &t in &runnable {
            let cost = match last_runnable {
                Some(l) if l != t => 1,
                _ => 0,
            };
            if node.preemptions + cost <= bounds.preemption_bound {
                children.push((t, cost));
            }
        }
        // run the continuing thread first, then others in id order
        children.sort_by_key(|(t, cost)| (*cost, *t));

        let mut parent = Some(node.machine);
        for (i, &(t, cost)) in children.iter().enumerate().rev() {
            let mut m = if i == 0 {
                parent.take().expect("first child consumes the parent")
            } else {
                parent.as_ref().expect("parent kept for siblings").clone()
            };
            let commits_before = m.stats.commits;
            match m.step(t) {
                StepOutcome::TxAborted(r) => *report.census.aborts.entry(r).or_default() += 1,
                StepOutcome::Faulted(_) => report.census.faults += 1,
                _ => {}
            }
            report.census.commits += m.stats.commits - commits_before;
            report.transitions += 1;
            arena.push((node.at, t as u8));
            stack.push(Node {
                machine: m,
                last: Some(t),
                preemptions: node.preemptions + cost,
                depth: node.depth + 1,
                at: (arena.len() - 1) as u32,
            });
        }
    }
    if truncated_paths > 0 && report.complete {
        report.complete = false;
        report.incomplete_reason = Some(format!(
            "{truncated_paths} path(s) reached the {}-step limit",
            bounds.max_steps_total
        ));
    }
    report
}
