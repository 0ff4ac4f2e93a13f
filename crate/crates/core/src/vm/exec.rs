//! Fetch / decode / execute.

use super::isa::{Instruction, Opcode};
use crate::htm::{AbortReason, AccessKind, Address, Fault, ThreadId, TxError, Word};
use crate::machine::{Machine, ThreadStatus, REG_SP};
use crate::sched::{ScheduleError, Scheduler};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    Continued,
    Halted,
    Faulted(Fault),
    /// The thread's transaction aborted; its PC is now the handler.
    TxAborted(AbortReason),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinalState {
    pub window: Vec<Word>,
    pub statuses: Vec<ThreadStatus>,
    pub hash: u64,
    /// Stopped on the step budget rather than quiescence.
    pub budget_exhausted: bool,
    pub steps: u64,
}

impl FinalState {
    pub fn capture(m: &Machine, observe: &[Address], steps: u64) -> Self {
        Self {
            window: m.window(observe),
            statuses: m.threads.iter().map(|t| t.status).collect(),
            hash: m.content_hash(),
            budget_exhausted: !m.quiescent(),
            steps,
        }
    }
}

fn effective(base: Word, imm: i32) -> Address {
    Address(base.wrapping_add(imm as i64 as u64))
}

impl Machine {
    /// Executes one instruction of thread `t`.
    pub fn step(&mut self, t: ThreadId) -> StepOutcome {
        match self.threads[t].status {
            ThreadStatus::Halted => return StepOutcome::Halted,
            ThreadStatus::Faulted => return StepOutcome::Faulted(Fault::Undecodable(self.threads[t].pc)),
            ThreadStatus::Running => {}
        }
        match self.try_step(t) {
            Ok(()) if self.threads[t].status == ThreadStatus::Halted => StepOutcome::Halted,
            Ok(()) => StepOutcome::Continued,
            Err(TxError::Aborted(r)) => StepOutcome::TxAborted(r),
            Err(TxError::Fault(f)) => {
                self.threads[t].status = ThreadStatus::Faulted;
                StepOutcome::Faulted(f)
            }
        }
    }

    fn try_step(&mut self, t: ThreadId) -> Result<(), TxError> {
        self.check_doomed(t)?;
        let pc = self.threads[t].pc;
        let word = self.fetch(t, pc)?;
        let insn = Instruction::decode(word).map_err(|_| self.undecodable(t, pc))?;
        self.instruction_tick(t)?;
        let th = &self.threads[t];
        let (a, b, c) = (th.reg(insn.ra), th.reg(insn.rb), th.reg(insn.rc));
        let imm = insn.imm;
        let next = pc.offset(1);
        let mut jump = None;
        match insn.op {
            Opcode::HALT => {
                if self.txs[t].in_tx() {
                    return Err(self.abort_with(t, AbortReason::IllegalInTx, 0, None));
                }
                self.threads[t].status = ThreadStatus::Halted;
                return Ok(());
            }
            Opcode::MOVI => self.threads[t].set_reg(insn.ra, imm as i64 as u64),
            Opcode::MOV => self.threads[t].set_reg(insn.ra, b),
            Opcode::ADD => self.threads[t].set_reg(insn.ra, b.wrapping_add(c)),
            Opcode::SUB => self.threads[t].set_reg(insn.ra, b.wrapping_sub(c)),
            Opcode::AND => self.threads[t].set_reg(insn.ra, b & c),
            Opcode::OR => self.threads[t].set_reg(insn.ra, b | c),
            Opcode::ADDI => self.threads[t].set_reg(insn.ra, b.wrapping_add(imm as i64 as u64)),
            Opcode::LOAD | Opcode::NTLOAD => {
                let kind = if insn.op == Opcode::LOAD {
                    AccessKind::Transactional
                } else {
                    AccessKind::Nontransactional
                };
                let v = self.tx_load(t, effective(b, imm), kind)?;
                self.threads[t].set_reg(insn.ra, v);
            }
            Opcode::STORE | Opcode::NTSTORE => {
                let kind = if insn.op == Opcode::STORE {
                    AccessKind::Transactional
                } else {
                    AccessKind::Nontransactional
                };
                self.tx_store(t, effective(b, imm), a, kind)?;
            }
            Opcode::CAS => {
                let old = self.compare_and_swap(t, Address(b), a, c)?;
                self.threads[t].set_reg(insn.ra, old);
            }
            Opcode::JMP => jump = Some(Address(imm as u32 as u64)),
            Opcode::JIND => jump = Some(Address(a)),
            Opcode::BEQ => jump = (a == b).then_some(Address(imm as u32 as u64)),
            Opcode::BNE => jump = (a != b).then_some(Address(imm as u32 as u64)),
            Opcode::BLT => jump = ((a as i64) < (b as i64)).then_some(Address(imm as u32 as u64)),
            Opcode::CALL => {
                let sp = self.threads[t].reg(REG_SP).wrapping_sub(1);
                self.tx_store(t, Address(sp), next.0, AccessKind::Transactional)?;
                self.threads[t].set_reg(REG_SP, sp);
                jump = Some(Address(imm as u32 as u64));
            }
            Opcode::RET => {
                let sp = self.threads[t].reg(REG_SP);
                let ret = self.tx_load(t, Address(sp), AccessKind::Transactional)?;
                self.threads[t].set_reg(REG_SP, sp.wrapping_add(1));
                jump = Some(Address(ret));
            }
            Opcode::TXBEGIN => self.tx_begin(t, Address(imm as u32 as u64))?,
            Opcode::TXCOMMIT => {
                // the engine moves the PC itself
                self.tx_commit_request(t)?;
                return Ok(());
            }
            Opcode::TXABORT => self.explicit_abort(t, imm as u32 as u64)?,
            Opcode::SUBOK => {
                self.subscription_ok(t)?;
                return Ok(());
            }
            Opcode::SLOTPUSH => {
                let scar = (imm != 0).then_some(Address(imm as u32 as u64));
                self.push_slot(t, Address(a), b, scar)?;
            }
        }
        self.threads[t].pc = jump.unwrap_or(next);
        Ok(())
    }

    /// Steps threads chosen by `sched` until every thread has stopped or
    /// `max_steps` is spent. Returns the final state and the chosen thread ids.
    pub fn run_to_quiescence(
        &mut self,
        sched: &mut dyn Scheduler,
        observe: &[Address],
        max_steps: u64,
    ) -> Result<(FinalState, Vec<ThreadId>), ScheduleError> {
        let mut trace = Vec::new();
        let mut steps = 0;
        while steps < max_steps {
            let runnable = self.runnable();
            if runnable.is_empty() {
                break;
            }
            let t = sched.pick(&runnable)?;
            self.step(t);
            trace.push(t);
            steps += 1;
        }
        Ok((FinalState::capture(self, observe, steps), trace))
    }
}
