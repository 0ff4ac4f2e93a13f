//! Machine state: committed memory, register files, transaction contexts.

use std::hash::Hasher;

use crate::config::{ConfigError, EngineConfig};
use crate::htm::{Address, EngineEvent, ThreadId, TxContext, Word};
use crate::vm::Program;

/// Register conventions.
pub const REG_ZERO: u8 = 0;
pub const REG_ABORT: u8 = 13;
pub const REG_LAR: u8 = 14;
pub const REG_SP: u8 = 15;

/// Words reserved per thread stack at the top of memory.
pub const STACK_WORDS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ThreadStatus {
    Running,
    Halted,
    Faulted,
}

impl ThreadStatus {
    pub fn name(self) -> &'static str {
        match self {
            ThreadStatus::Running => "running",
            ThreadStatus::Halted => "halted",
            ThreadStatus::Faulted => "faulted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadState {
    pub regs: [Word; 16],
    pub pc: Address,
    pub status: ThreadStatus,
}

impl ThreadState {
    pub fn new(pc: Address, sp: Word) -> Self {
        let mut regs = [0; 16];
        regs[REG_SP as usize] = sp;
        Self {
            regs,
            pc,
            status: ThreadStatus::Running,
        }
    }

    pub fn reg(&self, r: u8) -> Word {
        if r == REG_ZERO {
            0
        } else {
            self.regs[r as usize]
        }
    }

    /// `r0` is hardwired to zero; writes to it are dropped.
    pub fn set_reg(&mut self, r: u8, v: Word) {
        if r != REG_ZERO {
            self.regs[r as usize] = v;
        }
    }

    pub fn runnable(&self) -> bool {
        self.status == ThreadStatus::Running
    }
}

/// Committed memory image. Transactional writes reach it only on publish.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryImage {
    pub cells: Vec<Word>,
    pub line_words: u64,
}

impl MemoryImage {
    pub fn new(size: u64, line_words: u64) -> Self {
        Self {
            cells: vec![0; size as usize],
            line_words,
        }
    }

    pub fn len(&self) -> u64 {
        self.cells.len() as u64
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn in_range(&self, a: Address) -> bool {
        a.0 < self.len()
    }

    pub fn get(&self, a: Address) -> Option<Word> {
        self.cells.get(a.index()).copied()
    }

    pub fn line(&self, a: Address) -> u64 {
        a.0 / self.line_words
    }
}

/// Engine counters. Not part of the content hash.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub commits: u64,
    pub aborts: std::collections::BTreeMap<crate::htm::AbortReason, u64>,
    /// Commits whose simple slot did not hold `(mem[lar] & mask) == 0` at publish.
    pub soundness_violations: u64,
}

/// The single source of truth for one execution.
#[derive(Debug, Clone)]
pub struct Machine {
    pub config: EngineConfig,
    pub mem: MemoryImage,
    pub threads: Vec<ThreadState>,
    pub txs: Vec<TxContext>,
    pub stats: EngineStats,
    /// When `Some`, every engine-level access is logged for auditing.
    pub events: Option<Vec<EngineEvent>>,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("program word at {0} lies outside memory")]
    OutOfRange(Address),
    #[error("programs overlap at address {0}")]
    Overlap(Address),
    #[error("thread stacks ({threads} x {STACK_WORDS} words) collide with program image ending at {image_end}")]
    StackCollision { threads: usize, image_end: u64 },
}

impl Machine {
    /// Builds a machine with `entries.len()` threads. Stacks grow downward from the
    /// top of memory, `STACK_WORDS` per thread.
    pub fn new(
        config: EngineConfig,
        programs: &[Program],
        entries: &[Address],
    ) -> Result<Self, LoadError> {
        config.validate()?;
        let mut mem = MemoryImage::new(config.memory_size, config.line_words);
        let mut used = vec![false; mem.cells.len()];
        let mut image_end = 0u64;
        for p in programs {
            for (i, w) in p.words.iter().enumerate() {
                let a = Address(p.origin.0 + i as u64);
                if !mem.in_range(a) {
                    return Err(LoadError::OutOfRange(a));
                }
                if used[a.index()] {
                    return Err(LoadError::Overlap(a));
                }
                used[a.index()] = true;
                mem.cells[a.index()] = *w;
            }
            image_end = image_end.max(p.origin.0 + p.words.len() as u64);
        }
        let stack_floor = config
            .memory_size
            .saturating_sub(entries.len() as u64 * STACK_WORDS);
        if stack_floor < image_end || (entries.len() as u64 * STACK_WORDS) > config.memory_size {
            return Err(LoadError::StackCollision {
                threads: entries.len(),
                image_end,
            });
        }
        let threads = entries
            .iter()
            .enumerate()
            .map(|(i, pc)| ThreadState::new(*pc, config.memory_size - i as u64 * STACK_WORDS))
            .collect::<Vec<_>>();
        let txs = vec![TxContext::default(); threads.len()];
        Ok(Self {
            config,
            mem,
            threads,
            txs,
            stats: EngineStats::default(),
            events: None,
        })
    }

    pub fn with_instrumentation(mut self) -> Self {
        self.events = Some(Vec::new());
        self
    }

    pub fn runnable(&self) -> Vec<ThreadId> {
        (0..self.threads.len())
            .filter(|t| self.threads[*t].runnable())
            .collect()
    }

    pub fn quiescent(&self) -> bool {
        self.threads.iter().all(|t| !t.runnable())
    }

    pub fn read_committed(&self, a: Address) -> Option<Word> {
        self.mem.get(a)
    }

    pub fn window(&self, observe: &[Address]) -> Vec<Word> {
        observe
            .iter()
            .map(|a| self.mem.get(*a).unwrap_or(0))
            .collect()
    }

    /// Stable 64-bit FNV-1a content hash: memory cells, then each thread's
    /// register file, PC and status, then its transaction context.
    pub fn content_hash(&self) -> u64 {
        let mut h = fnv::FnvHasher::default();
        for w in &self.mem.cells {
            h.write_u64(*w);
        }
        for (t, tx) in self.threads.iter().zip(&self.txs) {
            for r in &t.regs {
                h.write_u64(*r);
            }
            h.write_u64(t.pc.0);
            h.write_u64(match t.status {
                ThreadStatus::Running => 0,
                ThreadStatus::Halted => 1,
                ThreadStatus::Faulted => 2,
            });
            tx.hash_into(&mut h);
        }
        h.finish()
    }

    pub(crate) fn log(&mut self, ev: EngineEvent) {
        if let Some(events) = &mut self.events {
            events.push(ev);
        }
    }

    pub fn take_events(&mut self) -> Vec<EngineEvent> {
        self.events.as_mut().map(std::mem::take).unwrap_or_default()
    }
}
