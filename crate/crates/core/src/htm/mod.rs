//! Best-effort HTM model: lazy versioning (per-transaction write buffer), eager
//! conflict detection at line granularity, a transaction length bound, and the
//! lock-subscription registers (LAR, availability mask, SCAR) checked at commit.
//!
//! The engine owns every transaction state transition. Operations that abort
//! perform the abort themselves (write buffer dropped, registers restored, PC
//! moved to the handler) and report it as [`TxError::Aborted`].

mod engine;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

pub use engine::EngineEvent;

pub type Word = u64;
pub type ThreadId = usize;

/// Word index into the memory image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Address(pub u64);

impl Address {
    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn offset(self, delta: i64) -> Address {
        Address(self.0.wrapping_add(delta as u64))
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<u64> for Address {
    fn from(v: u64) -> Self {
        Address(v)
    }
}

/// Every way a transaction can die.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AbortReason {
    /// Touched a line buffered by another live transaction.
    Conflict,
    /// Invalidated earlier by a committer or a nontransactional store.
    Doomed,
    /// Ran past `tx_length_bound` instructions.
    LengthExceeded,
    /// `TXABORT` in user code.
    Explicit,
    /// Transactional store to a word named by a subscription slot's LAR.
    LarStore,
    /// More than `max_slots` subscription slots.
    SlotOverflow,
    /// Commit-time availability check saw the lock held.
    SubscriptionFailed,
    /// Subscription code read data in the transaction's own write set.
    ReadOwnWriteInSubscription,
    /// Subscription code attempted a store.
    StoreInSubscription,
    /// Fetched an instruction from the transaction's own write set.
    ExecuteOwnWrite,
    /// Instruction not permitted in the current transactional mode.
    IllegalInTx,
    /// Out-of-range access or undecodable instruction inside a transaction.
    SimFault,
}

impl AbortReason {
    pub const ALL: [AbortReason; 12] = [
        AbortReason::Conflict,
        AbortReason::Doomed,
        AbortReason::LengthExceeded,
        AbortReason::Explicit,
        AbortReason::LarStore,
        AbortReason::SlotOverflow,
        AbortReason::SubscriptionFailed,
        AbortReason::ReadOwnWriteInSubscription,
        AbortReason::StoreInSubscription,
        AbortReason::ExecuteOwnWrite,
        AbortReason::IllegalInTx,
        AbortReason::SimFault,
    ];

    /// Value written into the abort-reason register (low byte).
    pub fn code(self) -> u64 {
        self as u64 + 1
    }

    pub fn from_code(code: u64) -> Option<AbortReason> {
        Self::ALL.get((code & 0xff).checked_sub(1)? as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            AbortReason::Conflict => "Conflict",
            AbortReason::Doomed => "Doomed",
            AbortReason::LengthExceeded => "LengthExceeded",
            AbortReason::Explicit => "Explicit",
            AbortReason::LarStore => "LarStore",
            AbortReason::SlotOverflow => "SlotOverflow",
            AbortReason::SubscriptionFailed => "SubscriptionFailed",
            AbortReason::ReadOwnWriteInSubscription => "ReadOwnWriteInSubscription",
            AbortReason::StoreInSubscription => "StoreInSubscription",
            AbortReason::ExecuteOwnWrite => "ExecuteOwnWrite",
            AbortReason::IllegalInTx => "IllegalInTx",
            AbortReason::SimFault => "SimFault",
        }
    }
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccessKind {
    Transactional,
    Nontransactional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotOrigin {
    BeforeTx,
    InsideTx,
}

/// One lock-subscription register set: LAR, availability mask and optional SCAR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubscriptionSlot {
    pub lar: Address,
    pub mask: Word,
    /// `None` selects the hardware auto-check `(mem[lar] & mask) == 0`.
    pub scar: Option<Address>,
    pub origin: SlotOrigin,
}

pub type SlotId = usize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TxStatus {
    Inactive,
    Active,
    Subscribing,
    Doomed,
    Committed,
    Aborted(AbortReason),
}

impl TxStatus {
    pub fn is_live(self) -> bool {
        matches!(self, TxStatus::Active | TxStatus::Subscribing | TxStatus::Doomed)
    }

    fn tag(self) -> u64 {
        match self {
            TxStatus::Inactive => 0,
            TxStatus::Active => 1,
            TxStatus::Subscribing => 2,
            TxStatus::Doomed => 3,
            TxStatus::Committed => 4,
            TxStatus::Aborted(r) => 16 + r.code(),
        }
    }
}

/// Per-thread transaction state.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TxContext {
    pub status: TxStatus,
    pub depth: u32,
    /// Line ids read transactionally.
    pub read_set: BTreeSet<u64>,
    /// Word-granular shadow of the read set.
    pub read_words: BTreeSet<Address>,
    pub write_buffer: BTreeMap<Address, Word>,
    pub instr_count: u64,
    pub slots: Vec<SubscriptionSlot>,
    pub handler_pc: Address,
    pub saved_commit_pc: Address,
    pub sub_slot_cursor: usize,
    /// Register file captured at the outermost `TXBEGIN`, restored on abort.
    pub checkpoint: [Word; 16],
    /// Address whose write doomed this transaction, if any.
    pub doomed_by: Option<Address>,
}

impl Default for TxContext {
    fn default() -> Self {
        Self {
            status: TxStatus::Inactive,
            depth: 0,
            read_set: BTreeSet::new(),
            read_words: BTreeSet::new(),
            write_buffer: BTreeMap::new(),
            instr_count: 0,
            slots: Vec::new(),
            handler_pc: Address(0),
            saved_commit_pc: Address(0),
            sub_slot_cursor: 0,
            checkpoint: [0; 16],
            doomed_by: None,
        }
    }
}

impl TxContext {
    /// Set of word addresses in the write set; equal to the buffer's keys.
    pub fn write_set_words(&self) -> impl Iterator<Item = Address> + '_ {
        self.write_buffer.keys().copied()
    }

    pub fn in_tx(&self) -> bool {
        self.depth > 0 && self.status.is_live()
    }

    pub(crate) fn hash_into(&self, h: &mut impl std::hash::Hasher) {
        h.write_u64(self.status.tag());
        h.write_u64(self.depth as u64);
        h.write_u64(self.instr_count);
        h.write_u64(self.handler_pc.0);
        h.write_u64(self.saved_commit_pc.0);
        h.write_u64(self.sub_slot_cursor as u64);
        h.write_u64(self.read_set.len() as u64);
        for line in &self.read_set {
            h.write_u64(*line);
        }
        h.write_u64(self.read_words.len() as u64);
        for w in &self.read_words {
            h.write_u64(w.0);
        }
        h.write_u64(self.write_buffer.len() as u64);
        for (a, v) in &self.write_buffer {
            h.write_u64(a.0);
            h.write_u64(*v);
        }
        h.write_u64(self.slots.len() as u64);
        for s in &self.slots {
            h.write_u64(s.lar.0);
            h.write_u64(s.mask);
            h.write_u64(s.scar.map_or(u64::MAX, |a| a.0));
            h.write_u64(matches!(s.origin, SlotOrigin::InsideTx) as u64);
        }
        if self.in_tx() {
            for r in &self.checkpoint {
                h.write_u64(*r);
            }
        }
        h.write_u64(self.doomed_by.map_or(u64::MAX, |a| a.0));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommitOutcome {
    /// Inner commit of a flat-nested transaction: depth decremented.
    Nested,
    Published,
    /// Control moved to a SCAR routine; the VM drives it until `SUBOK` or abort.
    SubscriptionPhaseEntered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    OutOfRange(Address),
    Undecodable(Address),
    SubokOutsideSubscription,
    CommitOutsideTx,
    /// A slot push outside a transaction exceeded `max_slots`.
    SlotOverflow,
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::OutOfRange(a) => write!(f, "address {a} out of range"),
            Fault::Undecodable(a) => write!(f, "undecodable instruction at {a}"),
            Fault::SubokOutsideSubscription => f.write_str("SUBOK outside subscription"),
            Fault::CommitOutsideTx => f.write_str("TXCOMMIT outside a transaction"),
            Fault::SlotOverflow => f.write_str("subscription slot overflow"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TxError {
    /// The engine aborted the transaction; control is already at the handler.
    Aborted(AbortReason),
    /// The thread faulted outside a transaction.
    Fault(Fault),
}

impl fmt::Display for TxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxError::Aborted(r) => write!(f, "transaction aborted: {r}"),
            TxError::Fault(x) => write!(f, "fault: {x}"),
        }
    }
}

impl std::error::Error for TxError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reason_codes_round_trip() {
        for r in AbortReason::ALL {
            assert_eq!(AbortReason::from_code(r.code()), Some(r));
            assert_eq!(AbortReason::from_code(r.code() | (7 << 8)), Some(r));
        }
        assert_eq!(AbortReason::from_code(0), None);
        assert_eq!(AbortReason::from_code(13), None);
    }
}
