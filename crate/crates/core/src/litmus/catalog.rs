//! Built-in scenarios. Thread 0 elides with the variant under test, thread 1
//! always takes the real lock and is the one that exposes transient state.

use super::{Scenario, ThreadSpec};
use crate::tle::{LockDescriptor, LockKind, TleMode, TleVariant};

const LOCK_BASE: u64 = 640;
const LOCK2_BASE: u64 = 656;

fn threads(elided: &str, locked: &str) -> Vec<ThreadSpec> {
    vec![
        ThreadSpec {
            template: elided.to_string(),
            elides: true,
        },
        ThreadSpec {
            template: locked.to_string(),
            elides: false,
        },
    ]
}

fn base(name: &str, description: &str, locks: Vec<LockDescriptor>, shared: &str, body: &str) -> Scenario {
    Scenario {
        name: name.to_string(),
        description: description.to_string(),
        locks,
        shared: shared.to_string(),
        threads: threads(body, body),
        variant: TleVariant::new(TleMode::LazyUnsafe),
        config: Vec::new(),
        scoped: Vec::new(),
    }
}

fn simple() -> Vec<LockDescriptor> {
    vec![LockDescriptor::new("L", LockKind::SimpleZero, LOCK_BASE)]
}

fn indirect_branch() -> Scenario {
    base(
        "indirect_branch",
        "A two-entry routine table indexed by a counter that is 2 only between \
         increment and reset. A zombie transaction reads 2, calls the word after \
         the table and runs a routine that commits without subscribing.",
        simple(),
        ".org 16
next_method: .word 1
table: .word m1, m2
rogue_slot: .word rogue
count: .word 0
sentinel: .word 0
.observe next_method, count, sentinel
m1: LOAD r5, r0, count
    ADDI r5, r5, 1
    STORE r5, r0, count
    JIND r9
m2: LOAD r5, r0, count
    ADDI r5, r5, 1
    STORE r5, r0, count
    JIND r9
rogue: MOVI r3, 1
    STORE r3, r0, sentinel
    TXCOMMIT
    HALT
",
        "@main:
    ACQUIRE L
    LOAD r1, r0, next_method
    LOAD r2, r1, table
    MOVI r9, @back
    JIND r2
@back:
    LOAD r1, r0, next_method
    ADDI r1, r1, 1
    STORE r1, r0, next_method
    MOVI r3, 2
    BNE r1, r3, @keep
    STORE r0, r0, next_method
@keep:
    RELEASE L
    HALT
",
    )
}

fn lock_scribble() -> Scenario {
    base(
        "lock_scribble",
        "An index that transiently points from an array onto the ticket lock's \
         owner word. The zombie increments owner, so its own deferred check \
         sees next == owner and commits over a held lock.",
        vec![LockDescriptor::new("L", LockKind::Ticket, LOCK_BASE)],
        ".org 16
idx: .word 0
.align 8
arr: .word 0, 0
count: .word 0
.equ scribble, L+1-arr
.observe arr, count
",
        "@main:
    ACQUIRE L
    LOAD r1, r0, idx
    ADDI r2, r1, arr
    LOAD r3, r2, 0
    ADDI r3, r3, 1
    STORE r3, r2, 0
    LOAD r4, r0, count
    MOVI r5, scribble
    STORE r5, r0, idx
    STORE r0, r0, idx
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
    )
}

fn wrong_lock() -> Scenario {
    let mut s = base(
        "wrong_lock",
        "The lock address lives in a memory cell that briefly names a decoy \
         word. The zombie reloads it, checks the decoy, finds it free and commits \
         a lost update.",
        vec![LockDescriptor::new("L", LockKind::SimpleZero, LOCK_BASE).via_reg(9)],
        ".org 16
lockref: .word L
decoy: .word 0
.align 8
count: .word 0
.observe count
",
        "@main:
    MOVI r9, L
    ACQUIRE L
    LOAD r9, r0, lockref
    LOAD r4, r0, count
    MOVI r5, decoy
    STORE r5, r0, lockref
    MOVI r5, L
    STORE r5, r0, lockref
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
    );
    s.description.push_str(" The slot is loaded from r9 before the transaction starts.");
    s
}

fn self_modify() -> Scenario {
    base(
        "self_modify",
        "A store through a transient pointer/value pair writes `JMP commit` over \
         the elided thread's own subscription code, which it then executes \
         from its write buffer.",
        vec![LockDescriptor::new("L", LockKind::Ticket, LOCK_BASE)],
        ".org 16
idx: .word scratch
val: .word 0
scratch: .word 0
.align 8
count: .word 0
jmpword: JMP t0_cs0_commit
.observe count
",
        "@main:
    ACQUIRE L
    LOAD r1, r0, idx
    LOAD r2, r0, val
    STORE r2, r1, 0
    LOAD r4, r0, count
    LOAD r5, r0, jmpword
    STORE r5, r0, val
    MOVI r5, t0_cs0_subscribe
    STORE r5, r0, idx
    MOVI r5, scratch
    STORE r5, r0, idx
    STORE r0, r0, val
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
    )
}

fn corrupted_return() -> Scenario {
    base(
        "corrupted_return",
        "A helper indexes a two-word stack array; a transient index of 2 lands \
         on the return slot and the transient value sends RET straight to the \
         commit instruction.",
        vec![LockDescriptor::new("L", LockKind::Clh, LOCK_BASE)],
        ".org 16
idx: .word 0
val: .word 0
.align 8
count: .word 0
.observe count
",
        "@main:
    ACQUIRE L
    LOAD r4, r0, count
    CALL @helper
    MOVI r5, t0_cs0_commit
    STORE r5, r0, val
    MOVI r5, 2
    STORE r5, r0, idx
    STORE r0, r0, idx
    STORE r0, r0, val
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
@helper:
    ADDI sp, sp, -2
    LOAD r1, r0, idx
    LOAD r2, r0, val
    ADD r3, sp, r1
    STORE r2, r3, 0
    ADDI sp, sp, 2
    RET
",
    )
}

fn conditional_commit() -> Scenario {
    base(
        "conditional_commit",
        "A flag that is set only inside the critical section sends a zombie down \
         an early-exit path that ends in its own TXCOMMIT. The lock is a \
         sequence lock whose low bit means held.",
        vec![LockDescriptor::new("L", LockKind::MaskedBit, LOCK_BASE).with_mask(1)],
        ".org 16
flag: .word 0
.align 8
count: .word 0
sentinel: .word 0
.observe count, sentinel
early: MOVI r3, 1
    STORE r3, r0, sentinel
    TXCOMMIT
    HALT
",
        "@main:
    ACQUIRE L
    LOAD r1, r0, flag
    BNE r1, r0, early
    LOAD r4, r0, count
    MOVI r5, 1
    STORE r5, r0, flag
    STORE r0, r0, flag
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
    )
}

fn nt_store_hazard() -> Scenario {
    let mut s = base(
        "nt_store_hazard",
        "An in-progress marker written with NTSTORE inside the critical section \
         escapes the transaction, so the lock holder can see it set. Buffering \
         every store closes the hole.",
        simple(),
        ".org 16
inprog: .word 0
.align 8
count: .word 0
saw: .word 0
.observe count, saw
",
        "@main:
    ACQUIRE L
    LOAD r1, r0, inprog
    BEQ r1, r0, @ok
    MOVI r3, 1
    STORE r3, r0, saw
@ok:
    MOVI r3, 1
    NTSTORE r3, r0, inprog
    LOAD r4, r0, count
    ADDI r4, r4, 1
    STORE r4, r0, count
    NTSTORE r0, r0, inprog
    RELEASE L
    HALT
",
    );
    for mode in [TleMode::Eager, TleMode::LazyExt] {
        s.scoped
            .push((mode, "all_stores_transactional".into(), "true".into()));
    }
    s
}

fn nested_wrong_lock() -> Scenario {
    base(
        "nested_wrong_lock",
        "The outer lock is registered correctly; the inner lock's address comes \
         from a cell that transiently names a decoy. The outer slot must still \
         stop the commit while the outer lock is held.",
        vec![
            LockDescriptor::new("L1", LockKind::SimpleZero, LOCK_BASE),
            LockDescriptor::new("L2", LockKind::SimpleZero, LOCK2_BASE).via_reg(9),
        ],
        ".org 16
lockref: .word L2
decoy: .word 0
.align 8
count: .word 0
.observe count
",
        "@main:
    ACQUIRE L1
    LOAD r9, r0, lockref
    ACQUIRE L2
    LOAD r4, r0, count
    MOVI r5, decoy
    STORE r5, r0, lockref
    MOVI r5, L2
    STORE r5, r0, lockref
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L2
    RELEASE L1
    HALT
",
    )
}

fn false_share() -> Scenario {
    let mut s = base(
        "false_share",
        "The critical section updates the word next to the lock. With line-sized \
         granules the commit-time lock read hits the transaction's own write; \
         with per-word bits it does not.",
        simple(),
        ".org 16
.observe L+1
",
        "@main:
    ACQUIRE L
    LOAD r4, r0, L+1
    ADDI r4, r4, 1
    STORE r4, r0, L+1
    RELEASE L
    HALT
",
    );
    s.variant = TleVariant::new(TleMode::LazyExt);
    s
}

fn nt_wait() -> Scenario {
    let mut s = base(
        "nt_wait",
        "A partner thread takes and releases the lock twice while the elided \
         thread commits once. The waiting routine spins nontransactionally \
         before reading the lock.",
        vec![LockDescriptor::new("L", LockKind::Ticket, LOCK_BASE)],
        ".org 16
count: .word 0
.observe count
",
        "",
    );
    s.threads = threads(
        "@main:
    ACQUIRE L
    LOAD r4, r0, count
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
        "@main:
    MOVI r6, 2
@loop:
    ACQUIRE L
    LOAD r4, r0, count
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    ADDI r6, r6, -1
    BNE r6, r0, @loop
    HALT
",
    );
    s.variant = TleVariant {
        waiting: true,
        ..TleVariant::new(TleMode::LazyExt)
    };
    s.config.push(("nt_wait_spins".into(), "2".into()));
    s
}

fn inflation() -> Scenario {
    let mut s = base(
        "inflation",
        "The lock holder inflates a thin lock. Once inflated and released the \
         lock word is nonzero while the lock is free, which a plain zero-word \
         slot treats as held.",
        vec![LockDescriptor::new("L", LockKind::Inflatable, LOCK_BASE)],
        ".org 16
count: .word 0
.observe count
",
        "",
    );
    s.threads = threads(
        "@main:
    ACQUIRE L
    LOAD r4, r0, count
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
        "@main:
    ACQUIRE L
    INFLATE L
    LOAD r4, r0, count
    ADDI r4, r4, 1
    STORE r4, r0, count
    RELEASE L
    HALT
",
    );
    s.variant = TleVariant::new(TleMode::LazyExt);
    s
}

/// The catalog, in numbered order.
pub fn builtin_scenarios() -> Vec<Scenario> {
    vec![
        indirect_branch(),
        lock_scribble(),
        wrong_lock(),
        self_modify(),
        corrupted_return(),
        conditional_commit(),
        nt_store_hazard(),
        nested_wrong_lock(),
        false_share(),
        nt_wait(),
        inflation(),
    ]
}

pub fn scenario(name: &str) -> Option<Scenario> {
    builtin_scenarios().into_iter().find(|s| s.name == name)
}
