//! Independent checker for engine invariants over an instrumented run.
//!
//! The checker keeps its own shadow of committed memory, built only from the
//! event log, and checks at every publish that
//!
//! * the published writes are exactly the transaction's buffered stores
//! * every transactional read still matches committed memory (no other
//!   commit or direct store slipped in between)
//! * every subscription slot names an available lock
//! * no buffered store targets a registered lock-address word
//!
//! At the end the shadow must equal the machine's memory.

use std::collections::BTreeMap;
use std::fmt;

use crate::htm::{AbortReason, Address, EngineEvent, SubscriptionSlot, ThreadId, Word};
use crate::machine::Machine;
use crate::sched::{random_run, replay};
use crate::tle::LockDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Invariant {
    Atomicity,
    Isolation,
    ExtensionSoundness,
    LarStoreExactness,
    ReplayDeterminism,
}

impl Invariant {
    pub const ALL: [Invariant; 5] = [
        Invariant::Atomicity,
        Invariant::Isolation,
        Invariant::ExtensionSoundness,
        Invariant::LarStoreExactness,
        Invariant::ReplayDeterminism,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Invariant::Atomicity => "atomicity",
            Invariant::Isolation => "isolation",
            Invariant::ExtensionSoundness => "extension_soundness",
            Invariant::LarStoreExactness => "larstore_exactness",
            Invariant::ReplayDeterminism => "replay_determinism",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub invariant: Invariant,
    pub thread: Option<ThreadId>,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.thread {
            Some(t) => write!(f, "{} (thread {t}): {}", self.invariant.name(), self.detail),
            None => write!(f, "{}: {}", self.invariant.name(), self.detail),
        }
    }
}

#[derive(Default, Clone)]
struct TxShadow {
    /// Reads served from committed memory, with the value seen.
    reads: Vec<(Address, Word)>,
    writes: BTreeMap<Address, Word>,
    slots: Vec<SubscriptionSlot>,
}

/// Checks the event log of one run against `initial`'s memory and the final
/// machine `end`. `locks` lets SCAR slots be checked with the lock's own predicate.
pub fn check_events(
    initial: &Machine,
    end: &Machine,
    events: &[EngineEvent],
    locks: &[LockDescriptor],
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut v = |invariant, thread, detail: String| {
        out.push(Violation {
            invariant,
            thread,
            detail,
        })
    };
    let ext = initial.config.extensions_enabled;
    let mut shadow = initial.mem.clone();
    let mut txs: Vec<TxShadow> = vec![TxShadow::default(); initial.threads.len()];

    for e in events {
        match e {
            EngineEvent::TxBegin { thread } => {
                let slots = std::mem::take(&mut txs[*thread].slots);
                txs[*thread] = TxShadow {
                    slots,
                    ..TxShadow::default()
                };
            }
            EngineEvent::SlotPush { thread, slot } => txs[*thread].slots.push(*slot),
            EngineEvent::TxLoad {
                thread,
                addr,
                value,
            } => {
                let tx = &mut txs[*thread];
                match tx.writes.get(addr) {
                    Some(w) if w != value => v(
                        Invariant::Isolation,
                        Some(*thread),
                        format!("read {value} at {addr} but own write holds {w}"),
                    ),
                    Some(_) => {}
                    None => tx.reads.push((*addr, *value)),
                }
            }
            EngineEvent::TxStore {
                thread,
                addr,
                value,
            } => {
                let tx = &mut txs[*thread];
                if ext && tx.slots.iter().any(|s| s.lar == *addr) {
                    v(
                        Invariant::LarStoreExactness,
                        Some(*thread),
                        format!("buffered store to registered LAR word {addr}"),
                    );
                }
                tx.writes.insert(*addr, *value);
            }
            EngineEvent::DirectStore { addr, value, .. } => {
                if let Some(c) = shadow.cells.get_mut(addr.index()) {
                    *c = *value;
                }
            }
            EngineEvent::Abort {
                thread,
                reason,
                addr,
                discarded,
                ..
            } => {
                let tx = std::mem::take(&mut txs[*thread]);
                let buffered: Vec<_> = tx.writes.into_iter().collect();
                if *discarded != buffered {
                    v(
                        Invariant::Atomicity,
                        Some(*thread),
                        format!("abort discarded {discarded:?}, buffer held {buffered:?}"),
                    );
                }
                if *reason == AbortReason::LarStore {
                    let exact = addr.is_some_and(|a| tx.slots.iter().any(|s| s.lar == a));
                    if !exact {
                        v(
                            Invariant::LarStoreExactness,
                            Some(*thread),
                            format!("LarStore abort at {addr:?} matches no slot's LAR word"),
                        );
                    }
                }
            }
            EngineEvent::Publish {
                thread,
                writes,
                slots,
                lar_values,
            } => {
                let t = *thread;
                let tx = std::mem::take(&mut txs[t]);
                let buffered: Vec<_> = tx.writes.iter().map(|(a, w)| (*a, *w)).collect();
                if *writes != buffered {
                    v(
                        Invariant::Atomicity,
                        Some(t),
                        format!("published {writes:?}, buffer held {buffered:?}"),
                    );
                }
                if *slots != tx.slots {
                    v(
                        Invariant::ExtensionSoundness,
                        Some(t),
                        format!("published slots {slots:?}, pushed {:?}", tx.slots),
                    );
                }
                for (a, seen) in &tx.reads {
                    let now = shadow.get(*a).unwrap_or(0);
                    if now != *seen {
                        v(
                            Invariant::Isolation,
                            Some(t),
                            format!("read {seen} at {a}, committed value at publish is {now}"),
                        );
                    }
                }
                for (i, s) in slots.iter().enumerate() {
                    let word = shadow.get(s.lar).unwrap_or(0);
                    if lar_values.get(i) != Some(&word) {
                        v(
                            Invariant::ExtensionSoundness,
                            Some(t),
                            format!("engine reported LAR {} = {:?}, shadow has {word}", s.lar, lar_values.get(i)),
                        );
                    }
                    if !ext {
                        continue;
                    }
                    let available = match s.scar {
                        None => Some(word & s.mask == 0),
                        Some(_) => locks
                            .iter()
                            .find(|l| l.base == s.lar)
                            .map(|l| l.is_available(&shadow).unwrap_or(false)),
                    };
                    if available == Some(false) {
                        v(
                            Invariant::ExtensionSoundness,
                            Some(t),
                            format!("committed while lock at {} was held (word {word:#x})", s.lar),
                        );
                    }
                }
                for (a, w) in writes {
                    if let Some(c) = shadow.cells.get_mut(a.index()) {
                        *c = *w;
                    }
                }
            }
        }
    }
    if shadow.cells != end.mem.cells {
        let first = shadow
            .cells
            .iter()
            .zip(&end.mem.cells)
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        v(
            Invariant::Atomicity,
            None,
            format!(
                "memory differs from event replay at {first}: machine {}, events {}",
                end.mem.cells[first], shadow.cells[first]
            ),
        );
    }
    if end.stats.soundness_violations != 0 {
        v(
            Invariant::ExtensionSoundness,
            None,
            format!("engine counted {} unsound commits", end.stats.soundness_violations),
        );
    }
    out
}

/// One seeded random run of `initial` with instrumentation, its event audit
/// and a replay of the recorded trace.
pub fn audit_seed(
    initial: &Machine,
    observe: &[Address],
    locks: &[LockDescriptor],
    seed: u64,
    max_steps: u64,
) -> Vec<Violation> {
    let start = initial.clone().with_instrumentation();
    let (mut end, fs, trace) = random_run(&start, observe, seed, max_steps);
    let events = end.take_events();
    let mut out = check_events(&start, &end, &events, locks);
    match replay(&start, observe, &trace) {
        Ok(r) if r.hash == fs.hash && r.window == fs.window => {}
        Ok(r) => out.push(Violation {
            invariant: Invariant::ReplayDeterminism,
            thread: None,
            detail: format!("seed {seed}: replay hash {:#x} vs {:#x}", r.hash, fs.hash),
        }),
        Err(e) => out.push(Violation {
            invariant: Invariant::ReplayDeterminism,
            thread: None,
            detail: format!("seed {seed}: {e}"),
        }),
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::htm::AccessKind;

    fn machine() -> Machine {
        let c = EngineConfig {
            memory_size: 256,
            extensions_enabled: true,
            ..EngineConfig::default()
        };
        Machine::new(c, &[], &[Address(0), Address(0)])
            .unwrap()
            .with_instrumentation()
    }

    #[test]
    fn clean_commit_passes() {
        let start = machine();
        let mut m = start.clone();
        m.tx_begin(0, Address(100)).unwrap();
        m.tx_load(0, Address(40), AccessKind::Transactional).unwrap();
        m.tx_store(0, Address(41), 5, AccessKind::Transactional).unwrap();
        m.tx_commit_request(0).unwrap();
        let ev = m.take_events();
        assert!(check_events(&start, &m, &ev, &[]).is_empty());
    }

    #[test]
    fn detects_tampered_log() {
        let start = machine();
        let mut m = start.clone();
        m.tx_begin(0, Address(100)).unwrap();
        m.tx_load(0, Address(40), AccessKind::Transactional).unwrap();
        m.tx_commit_request(0).unwrap();
        let mut ev = m.take_events();
        // a store the engine never saw, between the read and the publish
        ev.insert(
            2,
            EngineEvent::DirectStore {
                thread: 1,
                addr: Address(40),
                value: 9,
            },
        );
        let v = check_events(&start, &m, &ev, &[]);
        let kinds: Vec<_> = v.iter().map(|v| v.invariant).collect();
        assert!(kinds.contains(&Invariant::Isolation), "{v:?}");
        assert!(kinds.contains(&Invariant::Atomicity), "{v:?}");
    }

    #[test]
    fn detects_commit_over_held_lock() {
        let start = machine();
        let mut m = start.clone();
        m.push_slot(0, Address(64), !0, None).unwrap();
        m.tx_begin(0, Address(100)).unwrap();
        m.tx_commit_request(0).unwrap();
        let mut ev = m.take_events();
        ev.insert(
            0,
            EngineEvent::DirectStore {
                thread: 1,
                addr: Address(64),
                value: 1,
            },
        );
        let mut end = m.clone();
        end.mem.cells[64] = 1;
        let v = check_events(&start, &end, &ev, &[]);
        assert!(v.iter().any(|v| v.invariant == Invariant::ExtensionSoundness), "{v:?}");
    }
}
