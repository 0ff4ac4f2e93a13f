use super::{
    AbortReason, AccessKind, Address, CommitOutcome, Fault, SlotId, SlotOrigin, SubscriptionSlot,
    ThreadId, TxContext, TxError, TxStatus, Word,
};
use crate::machine::{Machine, REG_ABORT, REG_LAR};

/// Audit log entry. Recorded only on instrumented machines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EngineEvent {
    TxBegin {
        thread: ThreadId,
    },
    SlotPush {
        thread: ThreadId,
        slot: SubscriptionSlot,
    },
    TxLoad {
        thread: ThreadId,
        addr: Address,
        value: Word,
    },
    TxStore {
        thread: ThreadId,
        addr: Address,
        value: Word,
    },
    /// A store that reached committed memory without going through a write buffer.
    DirectStore {
        thread: ThreadId,
        addr: Address,
        value: Word,
    },
    Publish {
        thread: ThreadId,
        writes: Vec<(Address, Word)>,
        slots: Vec<SubscriptionSlot>,
        /// Committed value of each slot's LAR word at the publish point.
        lar_values: Vec<Word>,
    },
    Abort {
        thread: ThreadId,
        reason: AbortReason,
        /// Explicit abort code from `TXABORT imm`.
        code: u64,
        /// Store address for `LarStore`.
        addr: Option<Address>,
        doomed_by: Option<Address>,
        discarded: Vec<(Address, Word)>,
    },
}

type TxResult<T> = Result<T, TxError>;

impl Machine {
    fn line_of(&self, a: Address) -> u64 {
        self.mem.line(a)
    }

    fn tx(&self, t: ThreadId) -> &TxContext {
        &self.txs[t]
    }

    /// Out-of-range accesses abort a live transaction, otherwise fault the thread.
    fn fault(&mut self, t: ThreadId, fault: Fault) -> TxError {
        if self.tx(t).in_tx() {
            self.abort_with(t, AbortReason::SimFault, 0, None)
        } else {
            TxError::Fault(fault)
        }
    }

    fn check_range(&mut self, t: ThreadId, a: Address) -> TxResult<()> {
        if self.mem.in_range(a) {
            Ok(())
        } else {
            Err(self.fault(t, Fault::OutOfRange(a)))
        }
    }

    fn running_tx(&self, u: ThreadId) -> bool {
        matches!(self.txs[u].status, TxStatus::Active | TxStatus::Subscribing)
    }

    fn other_writes_line(&self, t: ThreadId, line: u64) -> bool {
        (0..self.txs.len()).any(|u| {
            u != t
                && self.running_tx(u)
                && self.txs[u]
                    .write_buffer
                    .keys()
                    .any(|a| self.line_of(*a) == line)
        })
    }

    /// Marks every other running transaction whose read or write set covers `by`'s line.
    fn doom_line(&mut self, except: Option<ThreadId>, by: Address) {
        let line = self.line_of(by);
        let lw = self.mem.line_words;
        for u in 0..self.txs.len() {
            if Some(u) == except || !self.running_tx(u) {
                continue;
            }
            let tx = &self.txs[u];
            let hit = tx.read_set.contains(&line)
                || tx.write_buffer.keys().any(|a| a.0 / lw == line);
            if hit {
                let tx = &mut self.txs[u];
                tx.status = TxStatus::Doomed;
                tx.doomed_by.get_or_insert(by);
            }
        }
    }

    /// Write-set membership used by subscription-mode checks: per word when
    /// `word_bits` is set, per line otherwise.
    fn hits_own_write(&self, t: ThreadId, a: Address) -> bool {
        let tx = self.tx(t);
        if self.config.word_bits {
            tx.write_buffer.contains_key(&a)
        } else {
            let line = self.line_of(a);
            tx.write_buffer.keys().any(|w| self.line_of(*w) == line)
        }
    }

    pub(crate) fn abort_with(
        &mut self,
        t: ThreadId,
        reason: AbortReason,
        code: u64,
        addr: Option<Address>,
    ) -> TxError {
        let tx = std::mem::take(&mut self.txs[t]);
        let thread = &mut self.threads[t];
        thread.regs = tx.checkpoint;
        thread.regs[REG_ABORT as usize] = reason.code() | (code << 8);
        thread.pc = tx.handler_pc;
        self.txs[t].status = TxStatus::Aborted(reason);
        *self.stats.aborts.entry(reason).or_default() += 1;
        if self.events.is_some() {
            self.log(EngineEvent::Abort {
                thread: t,
                reason,
                code,
                addr,
                doomed_by: tx.doomed_by,
                discarded: tx.write_buffer.into_iter().collect(),
            });
        }
        TxError::Aborted(reason)
    }

    /// Aborts the thread's transaction: the write buffer and any slots are
    /// dropped, registers roll back to the outermost `TXBEGIN`, the reason lands
    /// in `r13`, and control moves to the outermost handler.
    pub fn tx_abort(&mut self, t: ThreadId, reason: AbortReason) {
        if self.tx(t).in_tx() {
            self.abort_with(t, reason, 0, None);
        }
    }

    /// `TXABORT imm`. Inside a subscription routine this is the routine's
    /// "lock held" verdict and reports `SubscriptionFailed`. No-op outside a
    /// transaction.
    pub fn explicit_abort(&mut self, t: ThreadId, code: u64) -> TxResult<()> {
        match self.tx(t).status {
            TxStatus::Subscribing => Err(self.abort_with(t, AbortReason::SubscriptionFailed, code, None)),
            _ if self.tx(t).in_tx() => Err(self.abort_with(t, AbortReason::Explicit, code, None)),
            _ => Ok(()),
        }
    }

    /// Aborts a transaction that was doomed since its last step.
    pub fn check_doomed(&mut self, t: ThreadId) -> TxResult<()> {
        if self.tx(t).status == TxStatus::Doomed {
            Err(self.abort_with(t, AbortReason::Doomed, 0, None))
        } else {
            Ok(())
        }
    }

    pub fn tx_begin(&mut self, t: ThreadId, handler_pc: Address) -> TxResult<()> {
        match self.tx(t).status {
            TxStatus::Subscribing => {
                return Err(self.abort_with(t, AbortReason::IllegalInTx, 0, None))
            }
            TxStatus::Doomed => return Err(self.abort_with(t, AbortReason::Doomed, 0, None)),
            _ => {}
        }
        if self.tx(t).in_tx() {
            self.txs[t].depth += 1;
            return Ok(());
        }
        let slots = std::mem::take(&mut self.txs[t].slots);
        self.txs[t] = TxContext {
            status: TxStatus::Active,
            depth: 1,
            slots,
            handler_pc,
            checkpoint: self.threads[t].regs,
            ..TxContext::default()
        };
        self.log(EngineEvent::TxBegin { thread: t });
        Ok(())
    }

    pub fn tx_load(&mut self, t: ThreadId, addr: Address, kind: AccessKind) -> TxResult<Word> {
        self.check_range(t, addr)?;
        if !self.tx(t).in_tx() || kind == AccessKind::Nontransactional {
            return Ok(self.mem.cells[addr.index()]);
        }
        self.check_doomed(t)?;
        if self.tx(t).status == TxStatus::Subscribing && self.hits_own_write(t, addr) {
            return Err(self.abort_with(t, AbortReason::ReadOwnWriteInSubscription, 0, Some(addr)));
        }
        let line = self.line_of(addr);
        if self.other_writes_line(t, line) {
            return Err(self.abort_with(t, AbortReason::Conflict, 0, Some(addr)));
        }
        let word_bits = self.config.word_bits;
        let tx = &mut self.txs[t];
        tx.read_set.insert(line);
        if word_bits {
            tx.read_words.insert(addr);
        }
        let value = tx
            .write_buffer
            .get(&addr)
            .copied()
            .unwrap_or(self.mem.cells[addr.index()]);
        self.log(EngineEvent::TxLoad {
            thread: t,
            addr,
            value,
        });
        Ok(value)
    }

    fn direct_store(&mut self, t: ThreadId, addr: Address, value: Word) {
        self.mem.cells[addr.index()] = value;
        self.doom_line(Some(t), addr);
        self.log(EngineEvent::DirectStore {
            thread: t,
            addr,
            value,
        });
    }

    pub fn tx_store(
        &mut self,
        t: ThreadId,
        addr: Address,
        value: Word,
        kind: AccessKind,
    ) -> TxResult<()> {
        self.check_range(t, addr)?;
        let in_tx = self.tx(t).in_tx();
        if in_tx {
            self.check_doomed(t)?;
            if self.tx(t).status == TxStatus::Subscribing {
                return Err(self.abort_with(t, AbortReason::StoreInSubscription, 0, Some(addr)));
            }
        }
        let transactional = in_tx
            && (kind == AccessKind::Transactional || self.config.all_stores_transactional);
        if !transactional {
            self.direct_store(t, addr, value);
            return Ok(());
        }
        if self.config.extensions_enabled && self.tx(t).slots.iter().any(|s| s.lar == addr) {
            return Err(self.abort_with(t, AbortReason::LarStore, 0, Some(addr)));
        }
        if self.other_writes_line(t, self.line_of(addr)) {
            return Err(self.abort_with(t, AbortReason::Conflict, 0, Some(addr)));
        }
        self.doom_line(Some(t), addr);
        self.txs[t].write_buffer.insert(addr, value);
        self.log(EngineEvent::TxStore {
            thread: t,
            addr,
            value,
        });
        Ok(())
    }

    /// Atomic compare-and-swap on committed memory outside a transaction; a
    /// transactional load plus conditional store inside one. Returns the old value.
    pub fn compare_and_swap(
        &mut self,
        t: ThreadId,
        addr: Address,
        expected: Word,
        new: Word,
    ) -> TxResult<Word> {
        if self.tx(t).in_tx() {
            let old = self.tx_load(t, addr, AccessKind::Transactional)?;
            if old == expected {
                self.tx_store(t, addr, new, AccessKind::Transactional)?;
            }
            return Ok(old);
        }
        self.check_range(t, addr)?;
        let old = self.mem.cells[addr.index()];
        if old == expected {
            self.direct_store(t, addr, new);
        }
        Ok(old)
    }

    /// Appends a subscription slot. Outside a transaction it configures the next
    /// one; inside it covers a nested critical section. Slots are never rewritten.
    pub fn push_slot(
        &mut self,
        t: ThreadId,
        lar: Address,
        mask: Word,
        scar: Option<Address>,
    ) -> TxResult<SlotId> {
        let in_tx = self.tx(t).in_tx();
        if in_tx {
            self.check_doomed(t)?;
            if self.tx(t).status == TxStatus::Subscribing {
                return Err(self.abort_with(t, AbortReason::IllegalInTx, 0, None));
            }
        }
        if self.tx(t).slots.len() >= self.config.max_slots {
            return Err(if in_tx {
                self.abort_with(t, AbortReason::SlotOverflow, 0, None)
            } else {
                TxError::Fault(Fault::SlotOverflow)
            });
        }
        let slot = SubscriptionSlot {
            lar,
            mask,
            scar,
            origin: if in_tx {
                SlotOrigin::InsideTx
            } else {
                SlotOrigin::BeforeTx
            },
        };
        self.txs[t].slots.push(slot);
        self.log(EngineEvent::SlotPush { thread: t, slot });
        Ok(self.txs[t].slots.len() - 1)
    }

    /// `TXCOMMIT` at the thread's current PC.
    pub fn tx_commit_request(&mut self, t: ThreadId) -> TxResult<CommitOutcome> {
        if !self.tx(t).in_tx() {
            return Err(TxError::Fault(Fault::CommitOutsideTx));
        }
        self.check_doomed(t)?;
        if self.tx(t).status == TxStatus::Subscribing {
            return Err(self.abort_with(t, AbortReason::IllegalInTx, 0, None));
        }
        let pc = self.threads[t].pc;
        if self.tx(t).depth > 1 {
            self.txs[t].depth -= 1;
            self.threads[t].pc = pc.offset(1);
            return Ok(CommitOutcome::Nested);
        }
        let tx = &mut self.txs[t];
        tx.saved_commit_pc = pc;
        if self.config.extensions_enabled && !tx.slots.is_empty() {
            tx.status = TxStatus::Subscribing;
            tx.sub_slot_cursor = tx.slots.len();
            self.continue_subscription(t)
        } else {
            self.publish(t)
        }
    }

    /// `SUBOK`: the current SCAR routine found its lock available.
    pub fn subscription_ok(&mut self, t: ThreadId) -> TxResult<CommitOutcome> {
        if self.tx(t).status != TxStatus::Subscribing {
            return Err(self.fault(t, Fault::SubokOutsideSubscription));
        }
        self.continue_subscription(t)
    }

    /// Checks slots last-registered-first from the cursor. Simple slots are
    /// checked inline; a SCAR slot hands control to its routine with the LAR
    /// value in `r14`.
    fn continue_subscription(&mut self, t: ThreadId) -> TxResult<CommitOutcome> {
        loop {
            let tx = &mut self.txs[t];
            if tx.sub_slot_cursor == 0 {
                return self.publish(t);
            }
            tx.sub_slot_cursor -= 1;
            let slot = tx.slots[tx.sub_slot_cursor];
            match slot.scar {
                None => {
                    let v = self.tx_load(t, slot.lar, AccessKind::Transactional)?;
                    if v & slot.mask != 0 {
                        return Err(self.abort_with(
                            t,
                            AbortReason::SubscriptionFailed,
                            0,
                            Some(slot.lar),
                        ));
                    }
                }
                Some(scar) => {
                    let thread = &mut self.threads[t];
                    thread.set_reg(REG_LAR, slot.lar.0);
                    thread.pc = scar;
                    return Ok(CommitOutcome::SubscriptionPhaseEntered);
                }
            }
        }
    }

    fn publish(&mut self, t: ThreadId) -> TxResult<CommitOutcome> {
        self.check_doomed(t)?;
        let tx = std::mem::take(&mut self.txs[t]);
        let mut lar_values = Vec::with_capacity(tx.slots.len());
        for s in &tx.slots {
            let v = self.mem.get(s.lar).unwrap_or(0);
            lar_values.push(v);
            if self.config.extensions_enabled && s.scar.is_none() && v & s.mask != 0 {
                self.stats.soundness_violations += 1;
            }
        }
        for (a, v) in &tx.write_buffer {
            self.mem.cells[a.index()] = *v;
            self.doom_line(Some(t), *a);
        }
        self.txs[t].status = TxStatus::Committed;
        self.threads[t].pc = tx.saved_commit_pc.offset(1);
        self.stats.commits += 1;
        if self.events.is_some() {
            self.log(EngineEvent::Publish {
                thread: t,
                writes: tx.write_buffer.into_iter().collect(),
                slots: tx.slots,
                lar_values,
            });
        }
        Ok(CommitOutcome::Published)
    }

    /// Counts one executed instruction against the length bound.
    pub fn instruction_tick(&mut self, t: ThreadId) -> TxResult<()> {
        if !self.running_tx(t) {
            return Ok(());
        }
        let tx = &mut self.txs[t];
        tx.instr_count += 1;
        if tx.instr_count > self.config.tx_length_bound {
            return Err(self.abort_with(t, AbortReason::LengthExceeded, 0, None));
        }
        Ok(())
    }

    /// Instruction fetch. Executing a word in the transaction's own write set
    /// aborts when `fetch_own_write_aborts` is set, and always in subscription
    /// mode (line-granular there unless `word_bits`).
    pub fn fetch(&mut self, t: ThreadId, pc: Address) -> TxResult<Word> {
        if !self.mem.in_range(pc) {
            return Err(self.fault(t, Fault::OutOfRange(pc)));
        }
        if self.running_tx(t) {
            let subscribing = self.tx(t).status == TxStatus::Subscribing;
            let own = self.tx(t).write_buffer.get(&pc).copied();
            if subscribing && self.hits_own_write(t, pc) {
                return Err(self.abort_with(t, AbortReason::ExecuteOwnWrite, 0, Some(pc)));
            }
            if let Some(w) = own {
                if self.config.fetch_own_write_aborts {
                    return Err(self.abort_with(t, AbortReason::ExecuteOwnWrite, 0, Some(pc)));
                }
                return Ok(w);
            }
        }
        Ok(self.mem.cells[pc.index()])
    }

    pub(crate) fn undecodable(&mut self, t: ThreadId, pc: Address) -> TxError {
        self.fault(t, Fault::Undecodable(pc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EngineConfig;
    use crate::htm::AbortReason::*;

    fn machine(threads: usize, cfg: impl FnOnce(&mut EngineConfig)) -> Machine {
        let mut c = EngineConfig {
            memory_size: 1024,
            ..EngineConfig::default()
        };
        cfg(&mut c);
        let entries = vec![Address(0); threads];
        Machine::new(c, &[], &entries).unwrap()
    }

    const T: AccessKind = AccessKind::Transactional;
    const NT: AccessKind = AccessKind::Nontransactional;

    #[test]
    fn begin_fresh_and_nested() {
        let mut m = machine(1, |_| {});
        m.tx_begin(0, Address(400)).unwrap();
        let tx = &m.txs[0];
        assert_eq!(tx.status, TxStatus::Active);
        assert_eq!(tx.depth, 1);
        assert!(tx.read_set.is_empty() && tx.write_buffer.is_empty());
        assert_eq!(tx.handler_pc, Address(400));
        m.tx_begin(0, Address(999)).unwrap();
        assert_eq!(m.txs[0].depth, 2);
        assert_eq!(m.txs[0].handler_pc, Address(400));
    }

    #[test]
    fn load_read_through_and_own_write() {
        let mut m = machine(1, |_| {});
        m.mem.cells[100] = 7;
        m.tx_begin(0, Address(400)).unwrap();
        assert_eq!(m.tx_load(0, Address(100), T).unwrap(), 7);
        assert!(m.txs[0].read_set.contains(&(100 / 8)));
        m.tx_store(0, Address(101), 9, T).unwrap();
        assert_eq!(m.tx_load(0, Address(101), T).unwrap(), 9);
        assert_eq!(m.mem.cells[101], 0);
    }

    #[test]
    fn store_is_buffered_until_commit() {
        let mut m = machine(1, |_| {});
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(200), 1, T).unwrap();
        assert_eq!(m.mem.cells[200], 0);
        assert_eq!(m.tx_commit_request(0).unwrap(), CommitOutcome::Published);
        assert_eq!(m.mem.cells[200], 1);
        assert_eq!(m.txs[0].status, TxStatus::Committed);
    }

    #[test]
    fn lar_store_aborts_word_exact() {
        let mut m = machine(1, |c| c.extensions_enabled = true);
        m.push_slot(0, Address(64), !0, None).unwrap();
        m.tx_begin(0, Address(400)).unwrap();
        // same line, different word: fine
        m.tx_store(0, Address(65), 1, T).unwrap();
        assert_eq!(
            m.tx_store(0, Address(64), 0, T),
            Err(TxError::Aborted(LarStore))
        );
        assert_eq!(m.txs[0].status, TxStatus::Aborted(LarStore));
        assert_eq!(m.threads[0].pc, Address(400));
    }

    #[test]
    fn nt_store_in_tx_persists_after_abort() {
        let mut m = machine(1, |_| {});
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(300), 5, NT).unwrap();
        m.tx_store(0, Address(301), 6, T).unwrap();
        m.tx_abort(0, Explicit);
        assert_eq!(m.mem.cells[300], 5);
        assert_eq!(m.mem.cells[301], 0);
    }

    #[test]
    fn all_stores_transactional_buffers_nt_stores() {
        let mut m = machine(1, |c| c.all_stores_transactional = true);
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(300), 5, NT).unwrap();
        m.tx_abort(0, Explicit);
        assert_eq!(m.mem.cells[300], 0);
    }

    #[test]
    fn slot_push_and_overflow() {
        let mut m = machine(1, |_| {});
        assert_eq!(m.push_slot(0, Address(100), !0, None), Ok(0));
        assert_eq!(m.txs[0].slots[0].origin, SlotOrigin::BeforeTx);
        m.tx_begin(0, Address(400)).unwrap();
        assert_eq!(m.push_slot(0, Address(108), !0, None), Ok(1));
        assert_eq!(m.txs[0].slots[1].origin, SlotOrigin::InsideTx);
        m.push_slot(0, Address(116), !0, None).unwrap();
        m.push_slot(0, Address(124), !0, None).unwrap();
        assert_eq!(
            m.push_slot(0, Address(132), !0, None),
            Err(TxError::Aborted(SlotOverflow))
        );
        assert!(m.txs[0].slots.is_empty());

        let mut m = machine(1, |_| {});
        for i in 0..4 {
            m.push_slot(0, Address(100 + i), !0, None).unwrap();
        }
        assert_eq!(
            m.push_slot(0, Address(200), !0, None),
            Err(TxError::Fault(Fault::SlotOverflow))
        );
    }

    #[test]
    fn simple_slot_commit_checks() {
        for (lock, mask, ok) in [(0u64, !0u64, true), (1, !0, false), (0x10, 0x1, true), (0x11, 0x1, false)] {
            let mut m = machine(1, |c| c.extensions_enabled = true);
            m.mem.cells[64] = lock;
            m.push_slot(0, Address(64), mask, None).unwrap();
            m.tx_begin(0, Address(400)).unwrap();
            m.tx_store(0, Address(200), 1, T).unwrap();
            let r = m.tx_commit_request(0);
            if ok {
                assert_eq!(r, Ok(CommitOutcome::Published));
                assert_eq!(m.mem.cells[200], 1);
            } else {
                assert_eq!(r, Err(TxError::Aborted(SubscriptionFailed)));
                assert_eq!(m.mem.cells[200], 0);
            }
        }
    }

    #[test]
    fn slots_ignored_without_extensions() {
        let mut m = machine(1, |_| {});
        m.mem.cells[64] = 1;
        m.push_slot(0, Address(64), !0, None).unwrap();
        m.tx_begin(0, Address(400)).unwrap();
        assert_eq!(m.tx_commit_request(0), Ok(CommitOutcome::Published));
    }

    #[test]
    fn auto_check_applies_read_own_write_rule() {
        for (word_bits, ok) in [(false, false), (true, true)] {
            let mut m = machine(1, |c| {
                c.extensions_enabled = true;
                c.word_bits = word_bits;
            });
            m.push_slot(0, Address(64), !0, None).unwrap();
            m.tx_begin(0, Address(400)).unwrap();
            m.tx_store(0, Address(65), 3, T).unwrap();
            let r = m.tx_commit_request(0);
            assert_eq!(r.is_ok(), ok, "word_bits={word_bits}");
            if !ok {
                assert_eq!(r, Err(TxError::Aborted(ReadOwnWriteInSubscription)));
            }
        }
    }

    #[test]
    fn scar_slot_enters_subscription_mode() {
        let mut m = machine(1, |c| c.extensions_enabled = true);
        m.threads[0].pc = Address(500);
        m.push_slot(0, Address(64), !0, Some(Address(700))).unwrap();
        m.push_slot(0, Address(72), !0, None).unwrap();
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(200), 1, T).unwrap();
        // last-registered-first: the simple slot passes, then the SCAR routine runs
        assert_eq!(m.tx_commit_request(0), Ok(CommitOutcome::SubscriptionPhaseEntered));
        assert_eq!(m.txs[0].status, TxStatus::Subscribing);
        assert_eq!(m.threads[0].pc, Address(700));
        assert_eq!(m.threads[0].regs[14], 64);
        assert_eq!(m.txs[0].sub_slot_cursor, 0);
        assert_eq!(m.mem.cells[200], 0);
        assert_eq!(
            m.tx_store(0, Address(201), 1, T),
            Err(TxError::Aborted(StoreInSubscription))
        );
        assert_eq!(m.mem.cells[200], 0);
    }

    #[test]
    fn subok_publishes_after_last_slot() {
        let mut m = machine(1, |c| c.extensions_enabled = true);
        m.threads[0].pc = Address(500);
        m.push_slot(0, Address(64), !0, Some(Address(700))).unwrap();
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(200), 1, T).unwrap();
        m.tx_commit_request(0).unwrap();
        assert_eq!(m.tx_load(0, Address(64), T), Ok(0));
        assert_eq!(m.subscription_ok(0), Ok(CommitOutcome::Published));
        assert_eq!(m.threads[0].pc, Address(501));
        assert_eq!(m.mem.cells[200], 1);
    }

    #[test]
    fn tx_begin_in_subscription_is_illegal() {
        let mut m = machine(1, |c| c.extensions_enabled = true);
        m.push_slot(0, Address(64), !0, Some(Address(700))).unwrap();
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_commit_request(0).unwrap();
        assert_eq!(
            m.tx_begin(0, Address(800)),
            Err(TxError::Aborted(IllegalInTx))
        );
    }

    #[test]
    fn nested_abort_unwinds_to_outer_handler() {
        let mut m = machine(1, |_| {});
        m.threads[0].regs[5] = 11;
        m.tx_begin(0, Address(400)).unwrap();
        m.threads[0].regs[5] = 99;
        m.tx_begin(0, Address(500)).unwrap();
        m.tx_begin(0, Address(600)).unwrap();
        assert_eq!(m.txs[0].depth, 3);
        assert_eq!(m.explicit_abort(0, 0), Err(TxError::Aborted(Explicit)));
        assert_eq!(m.txs[0].depth, 0);
        assert_eq!(m.threads[0].pc, Address(400));
        assert_eq!(m.threads[0].regs[5], 11);
        assert_eq!(
            AbortReason::from_code(m.threads[0].regs[13]),
            Some(Explicit)
        );
    }

    #[test]
    fn committer_dooms_reader() {
        let mut m = machine(2, |_| {});
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_load(0, Address(100), T).unwrap();
        m.tx_begin(1, Address(400)).unwrap();
        m.tx_store(1, Address(101), 1, T).unwrap();
        assert_eq!(m.txs[0].status, TxStatus::Doomed);
        m.tx_commit_request(1).unwrap();
        assert_eq!(m.check_doomed(0), Err(TxError::Aborted(Doomed)));
        assert_eq!(m.txs[0].status, TxStatus::Aborted(Doomed));
    }

    #[test]
    fn reader_of_buffered_line_aborts_itself() {
        let mut m = machine(2, |_| {});
        m.tx_begin(1, Address(400)).unwrap();
        m.tx_store(1, Address(100), 42, T).unwrap();
        m.tx_begin(0, Address(400)).unwrap();
        assert_eq!(
            m.tx_load(0, Address(103), T),
            Err(TxError::Aborted(Conflict))
        );
        assert_eq!(m.txs[1].status, TxStatus::Active);
    }

    #[test]
    fn plain_store_dooms_and_nt_load_does_not_track() {
        let mut m = machine(2, |_| {});
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_load(0, Address(100), NT).unwrap();
        assert!(m.txs[0].read_set.is_empty());
        m.tx_load(0, Address(200), T).unwrap();
        m.tx_store(1, Address(201), 3, T).unwrap();
        assert_eq!(m.mem.cells[201], 3);
        assert_eq!(m.txs[0].status, TxStatus::Doomed);
        assert_eq!(m.txs[0].doomed_by, Some(Address(201)));
    }

    #[test]
    fn length_bound_boundary() {
        let mut m = machine(1, |c| c.tx_length_bound = 10_000);
        m.tx_begin(0, Address(400)).unwrap();
        m.txs[0].instr_count = 9_999;
        assert_eq!(m.instruction_tick(0), Ok(()));
        assert_eq!(m.txs[0].instr_count, 10_000);
        assert_eq!(
            m.instruction_tick(0),
            Err(TxError::Aborted(LengthExceeded))
        );
    }

    #[test]
    fn out_of_range_in_tx_aborts_outside_faults() {
        let mut m = machine(1, |_| {});
        assert_eq!(
            m.tx_load(0, Address(5000), T),
            Err(TxError::Fault(Fault::OutOfRange(Address(5000))))
        );
        m.tx_begin(0, Address(400)).unwrap();
        assert_eq!(
            m.tx_load(0, Address(5000), T),
            Err(TxError::Aborted(SimFault))
        );
    }

    #[test]
    fn fetch_of_own_write() {
        let mut m = machine(1, |c| c.fetch_own_write_aborts = false);
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(300), 77, T).unwrap();
        assert_eq!(m.fetch(0, Address(300)), Ok(77));
        let mut m = machine(1, |_| {});
        m.tx_begin(0, Address(400)).unwrap();
        m.tx_store(0, Address(300), 77, T).unwrap();
        assert_eq!(
            m.fetch(0, Address(300)),
            Err(TxError::Aborted(ExecuteOwnWrite))
        );
    }
}
