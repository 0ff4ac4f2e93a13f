//! Assembler text generators for elided acquire/release, real lock paths and
//! subscription routines.
//!
//! Every acquire/release pair is expanded at a [`Site`] whose prefix `P`
//! (`t{thread}_cs{index}`) namespaces its labels:
//!
//! * `P_acquire`, `P_try`, `P_retry` (the `TXBEGIN` handler), `P_held`, `P_body`
//! * `P_release`, `P_subscribe`, `P_commit` (the `TXCOMMIT`), `P_unlock`, `P_done`
//! * data: `P_using`, plus queue cells for CLH locks
//!
//! Fragments clobber r10-r12; subscription routines clobber r10-r14.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use super::lock::{LockDescriptor, LockKind, THIN_HELD};

/// Explicit abort code used when a lock is observed held.
pub const LOCK_BUSY_CODE: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TleMode {
    /// Subscribe right after `TXBEGIN`.
    Eager,
    /// Software check just before `TXCOMMIT`, no hardware help.
    LazyUnsafe,
    /// Subscription slots checked by the hardware at commit.
    LazyExt,
    /// Always take the lock.
    LockOnly,
}

impl TleMode {
    pub const ALL: [TleMode; 4] = [
        TleMode::Eager,
        TleMode::LazyUnsafe,
        TleMode::LazyExt,
        TleMode::LockOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TleMode::Eager => "eager",
            TleMode::LazyUnsafe => "lazy_unsafe",
            TleMode::LazyExt => "lazy_ext",
            TleMode::LockOnly => "lock_only",
        }
    }
}

impl fmt::Display for TleMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TleMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.replace('-', "_");
        TleMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown variant `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TleVariant {
    pub mode: TleMode,
    /// Spin with nontransactional loads in the subscription routine first.
    pub waiting: bool,
    /// Hardware attempts before falling back to the lock. Zero means lock-only.
    pub attempts: u32,
    /// Register an `Inflatable` lock as a plain zero-word slot instead of
    /// using its subscription routine.
    pub approximate_simple: bool,
}

impl TleVariant {
    pub fn new(mode: TleMode) -> Self {
        Self {
            mode,
            waiting: false,
            attempts: 3,
            approximate_simple: false,
        }
    }

    pub fn lock_only() -> Self {
        Self::new(TleMode::LockOnly)
    }

    pub fn elides(&self) -> bool {
        self.mode != TleMode::LockOnly && self.attempts > 0
    }
}

/// One acquire/release expansion point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Site {
    pub thread: usize,
    pub index: usize,
}

impl Site {
    pub fn new(thread: usize, index: usize) -> Self {
        Self { thread, index }
    }

    pub fn prefix(&self) -> String {
        format!("t{}_cs{}", self.thread, self.index)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CodeFragment {
    pub text: String,
    /// Data words the fragment needs, to be placed outside the code stream.
    pub data: String,
}

#[derive(Default)]
struct Asm(String);

impl Asm {
    fn op(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.0, "    {}", s.as_ref());
    }

    fn label(&mut self, l: impl AsRef<str>) {
        let _ = writeln!(self.0, "{}:", l.as_ref());
    }

    fn comment(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.0, "; {}", s.as_ref());
    }
}

/// Base-plus-offset operand for the lock's words.
struct Loc {
    reg: u8,
    base: Option<String>,
}

impl Loc {
    fn of(lock: &LockDescriptor) -> Self {
        match lock.addr_reg {
            Some(r) => Loc { reg: r, base: None },
            None => Loc {
                reg: 0,
                base: Some(lock.name.clone()),
            },
        }
    }

    fn lar() -> Self {
        Loc { reg: 14, base: None }
    }

    fn at(&self, k: u64) -> String {
        match (&self.base, k) {
            (Some(b), 0) => format!("r{}, {b}", self.reg),
            (Some(b), k) => format!("r{}, {b}+{k}", self.reg),
            (None, k) => format!("r{}, {k}", self.reg),
        }
    }

    /// Register holding the lock address, loading it into `scratch` if needed.
    fn addr_reg(&self, a: &mut Asm, scratch: u8) -> u8 {
        match &self.base {
            Some(b) => {
                a.op(format!("MOVI r{scratch}, {b}"));
                scratch
            }
            None => self.reg,
        }
    }
}

fn imm(v: u64) -> String {
    (v as i64).to_string()
}

/// Availability test on r10-r12. Falls through when available, branches to
/// `fail` when held.
fn predicate(a: &mut Asm, lock: &LockDescriptor, loc: &Loc, ld: &str, fail: &str, tag: &str) {
    match lock.kind {
        LockKind::SimpleZero => {
            a.op(format!("{ld} r10, {}", loc.at(0)));
            a.op(format!("BNE r10, r0, {fail}"));
        }
        LockKind::MaskedBit => {
            a.op(format!("{ld} r10, {}", loc.at(0)));
            a.op(format!("MOVI r11, {}", imm(lock.mask)));
            a.op("AND r10, r10, r11");
            a.op(format!("BNE r10, r0, {fail}"));
        }
        LockKind::Ticket => {
            a.op(format!("{ld} r10, {}", loc.at(0)));
            a.op(format!("{ld} r11, {}", loc.at(1)));
            a.op(format!("BNE r10, r11, {fail}"));
        }
        LockKind::Clh => {
            a.op(format!("{ld} r10, {}", loc.at(0)));
            a.op(format!("BEQ r10, r0, {tag}_free"));
            a.op(format!("{ld} r11, r10, 0"));
            a.op("MOVI r12, 1");
            a.op("AND r11, r11, r12");
            a.op(format!("BNE r11, r0, {fail}"));
            a.label(format!("{tag}_free"));
        }
        LockKind::Inflatable => {
            a.op(format!("{ld} r10, {}", loc.at(0)));
            a.op(format!("BEQ r10, r0, {tag}_free"));
            a.op("MOVI r11, 1");
            a.op("AND r11, r10, r11");
            a.op(format!("BEQ r11, r0, {fail}"));
            a.op("ADDI r10, r10, -1");
            a.op(format!("{ld} r11, r10, 0"));
            a.op(format!("BNE r11, r0, {fail}"));
            a.label(format!("{tag}_free"));
        }
    }
}

/// Whether a `lazy_ext` site hands commit-time checking to a subscription routine.
pub fn uses_routine(lock: &LockDescriptor, v: &TleVariant) -> bool {
    v.mode == TleMode::LazyExt
        && !(v.approximate_simple && lock.kind == LockKind::Inflatable)
        && (lock.kind.needs_routine() || v.waiting)
}

pub fn scar_label(lock: &LockDescriptor) -> String {
    format!("{}_scar", lock.name)
}

fn slow_acquire_into(a: &mut Asm, lock: &LockDescriptor, p: &str) {
    let loc = Loc::of(lock);
    match lock.kind {
        LockKind::SimpleZero => {
            a.label(format!("{p}_spin"));
            a.op(format!("NTLOAD r11, {}", loc.at(0)));
            a.op(format!("BNE r11, r0, {p}_spin"));
            let ar = loc.addr_reg(a, 10);
            a.op("MOVI r11, 1");
            a.op("MOVI r12, 0");
            a.op(format!("CAS r12, r{ar}, r11"));
            a.op(format!("BNE r12, r0, {p}_spin"));
        }
        LockKind::MaskedBit => {
            a.label(format!("{p}_spin"));
            a.op(format!("NTLOAD r11, {}", loc.at(0)));
            a.op(format!("MOVI r12, {}", imm(lock.mask)));
            a.op("AND r12, r11, r12");
            a.op(format!("BNE r12, r0, {p}_spin"));
            a.op(format!("MOVI r12, {}", imm(lock.mask)));
            a.op("OR r12, r11, r12");
            let ar = loc.addr_reg(a, 10);
            a.op(format!("CAS r11, r{ar}, r12"));
            a.op(format!("MOVI r10, {}", imm(lock.mask)));
            a.op("SUB r12, r12, r10");
            a.op(format!("BNE r11, r12, {p}_spin"));
        }
        LockKind::Ticket => {
            a.label(format!("{p}_take"));
            a.op(format!("NTLOAD r11, {}", loc.at(0)));
            a.op("ADDI r12, r11, 1");
            let ar = loc.addr_reg(a, 10);
            a.op(format!("CAS r11, r{ar}, r12"));
            a.op("ADDI r12, r12, -1");
            a.op(format!("BNE r11, r12, {p}_take"));
            a.label(format!("{p}_wait"));
            a.op(format!("NTLOAD r12, {}", loc.at(1)));
            a.op(format!("BNE r12, r11, {p}_wait"));
        }
        LockKind::Clh => {
            a.op(format!("LOAD r10, r0, {p}_my"));
            a.op("MOVI r11, 1");
            a.op("STORE r11, r10, 0");
            a.label(format!("{p}_swap"));
            a.op(format!("NTLOAD r11, {}", loc.at(0)));
            a.op(format!("STORE r11, r0, {p}_pred"));
            let ar = loc.addr_reg(a, 12);
            a.op(format!("CAS r11, r{ar}, r10"));
            a.op(format!("LOAD r12, r0, {p}_pred"));
            a.op(format!("BNE r11, r12, {p}_swap"));
            a.op(format!("BEQ r11, r0, {p}_got"));
            a.label(format!("{p}_wait"));
            a.op("NTLOAD r12, r11, 0");
            a.op("MOVI r10, 1");
            a.op("AND r12, r12, r10");
            a.op(format!("BNE r12, r0, {p}_wait"));
            a.label(format!("{p}_got"));
        }
        LockKind::Inflatable => {
            a.label(format!("{p}_spin"));
            a.op(format!("NTLOAD r11, {}", loc.at(0)));
            a.op(format!("BEQ r11, r0, {p}_thin"));
            a.op("MOVI r12, 1");
            a.op("AND r12, r11, r12");
            a.op(format!("BEQ r12, r0, {p}_spin"));
            a.op("ADDI r10, r11, -1");
            a.op("MOVI r11, 0");
            a.op("MOVI r12, 1");
            a.op("CAS r11, r10, r12");
            a.op(format!("BNE r11, r0, {p}_spin"));
            a.op(format!("JMP {p}_got"));
            a.label(format!("{p}_thin"));
            a.op(format!("MOVI r12, {THIN_HELD}"));
            let ar = loc.addr_reg(a, 10);
            a.op(format!("CAS r11, r{ar}, r12"));
            a.op(format!("BNE r11, r0, {p}_spin"));
            a.label(format!("{p}_got"));
        }
    }
}

fn slow_release_into(a: &mut Asm, lock: &LockDescriptor, p: &str) {
    let loc = Loc::of(lock);
    match lock.kind {
        LockKind::SimpleZero => a.op(format!("STORE r0, {}", loc.at(0))),
        LockKind::MaskedBit => {
            a.op(format!("LOAD r11, {}", loc.at(0)));
            a.op(format!("MOVI r12, {}", imm(lock.mask)));
            a.op("SUB r11, r11, r12");
            a.op(format!("ADDI r11, r11, {}", imm(lock.sequence_increment())));
            a.op(format!("STORE r11, {}", loc.at(0)));
        }
        LockKind::Ticket => {
            a.op(format!("LOAD r10, {}", loc.at(1)));
            a.op("ADDI r10, r10, 1");
            a.op(format!("STORE r10, {}", loc.at(1)));
        }
        LockKind::Clh => {
            a.op(format!("LOAD r10, r0, {p}_my"));
            a.op("STORE r0, r10, 0");
            a.op(format!("LOAD r11, r0, {p}_pred"));
            a.op(format!("BNE r11, r0, {p}_recycle"));
            a.op(format!("MOVI r11, {p}_nodeB"));
            a.label(format!("{p}_recycle"));
            a.op(format!("STORE r11, r0, {p}_my"));
        }
        LockKind::Inflatable => {
            a.op(format!("LOAD r11, {}", loc.at(0)));
            a.op(format!("MOVI r12, {THIN_HELD}"));
            a.op(format!("BNE r11, r12, {p}_fat"));
            a.op(format!("STORE r0, {}", loc.at(0)));
            a.op(format!("JMP {p}_released"));
            a.label(format!("{p}_fat"));
            a.op("ADDI r11, r11, -1");
            a.op("STORE r0, r11, 0");
            a.label(format!("{p}_released"));
        }
    }
}

fn site_data(lock: &LockDescriptor, p: &str) -> String {
    let mut d = format!(".align 8\n{p}_using: .word 0\n");
    if lock.kind == LockKind::Clh {
        let _ = write!(
            d,
            "{p}_my: .word {p}_nodeA\n{p}_pred: .word 0\n.align 8\n{p}_nodeA: .word 0\n{p}_nodeB: .word 0\n"
        );
    }
    d
}

/// Real acquisition loop, for use outside the elision wrapper.
pub fn emit_lock_acquire_slow(lock: &LockDescriptor, site: Site) -> CodeFragment {
    let mut a = Asm::default();
    a.comment(format!("acquire {} ({}) clobbers r10-r12", lock.name, lock.kind));
    slow_acquire_into(&mut a, lock, &site.prefix());
    CodeFragment {
        text: a.0,
        data: site_data(lock, &site.prefix()),
    }
}

pub fn emit_lock_release_slow(lock: &LockDescriptor, site: Site) -> CodeFragment {
    let mut a = Asm::default();
    a.comment(format!("release {} ({}) clobbers r10-r12", lock.name, lock.kind));
    slow_release_into(&mut a, lock, &site.prefix());
    CodeFragment {
        text: a.0,
        data: String::new(),
    }
}

/// Entry `P_acquire`; exits at `P_body` inside a transaction or holding the lock.
pub fn emit_acquire(lock: &LockDescriptor, v: &TleVariant, site: Site) -> CodeFragment {
    let p = site.prefix();
    let mut a = Asm::default();
    a.comment(format!(
        "acquire {} ({}, {}) clobbers r10-r12",
        lock.name, lock.kind, v.mode
    ));
    a.label(format!("{p}_acquire"));
    if v.elides() {
        a.op(format!("MOVI r12, {}", v.attempts));
        a.label(format!("{p}_try"));
        if v.mode == TleMode::LazyExt {
            let loc = Loc::of(lock);
            let lar = loc.addr_reg(&mut a, 10);
            a.op(format!("MOVI r11, {}", imm(lock.slot_mask())));
            let scar = if uses_routine(lock, v) {
                scar_label(lock)
            } else {
                "0".to_string()
            };
            a.op(format!("SLOTPUSH r{lar}, r11, {scar}"));
        }
        a.op(format!("TXBEGIN {p}_retry"));
        if v.mode == TleMode::Eager {
            predicate(&mut a, lock, &Loc::of(lock), "LOAD", &format!("{p}_busy"), &format!("{p}_chk"));
        }
        a.op("MOVI r10, 1");
        a.op(format!("STORE r10, r0, {p}_using"));
        a.op(format!("JMP {p}_body"));
        if v.mode == TleMode::Eager {
            a.label(format!("{p}_busy"));
            a.op(format!("TXABORT {LOCK_BUSY_CODE}"));
        }
        a.label(format!("{p}_retry"));
        a.op("ADDI r12, r12, -1");
        a.op(format!("BNE r12, r0, {p}_try"));
    }
    slow_acquire_into(&mut a, lock, &p);
    a.label(format!("{p}_held"));
    a.op(format!("STORE r0, r0, {p}_using"));
    a.label(format!("{p}_body"));
    CodeFragment {
        text: a.0,
        data: site_data(lock, &p),
    }
}

/// Entry `P_release`; exits at `P_done` with the transaction committed or the
/// lock released.
pub fn emit_release(lock: &LockDescriptor, v: &TleVariant, site: Site) -> CodeFragment {
    let p = site.prefix();
    let mut a = Asm::default();
    a.comment(format!(
        "release {} ({}, {}) clobbers r10-r12",
        lock.name, lock.kind, v.mode
    ));
    a.label(format!("{p}_release"));
    a.op(format!("LOAD r10, r0, {p}_using"));
    a.op(format!("BEQ r10, r0, {p}_unlock"));
    if v.mode == TleMode::LazyUnsafe {
        a.label(format!("{p}_subscribe"));
        predicate(&mut a, lock, &Loc::of(lock), "LOAD", &format!("{p}_rbusy"), &format!("{p}_rchk"));
    } else if uses_routine(lock, v) {
        a.op(format!(".equ {p}_subscribe, {}", scar_label(lock)));
    } else {
        a.label(format!("{p}_subscribe"));
    }
    a.label(format!("{p}_commit"));
    a.op("TXCOMMIT");
    a.op(format!("JMP {p}_done"));
    if v.mode == TleMode::LazyUnsafe {
        a.label(format!("{p}_rbusy"));
        a.op(format!("TXABORT {LOCK_BUSY_CODE}"));
    }
    a.label(format!("{p}_unlock"));
    slow_release_into(&mut a, lock, &p);
    a.label(format!("{p}_done"));
    CodeFragment {
        text: a.0,
        data: String::new(),
    }
}

/// Commit-time check routine for `lock`. Entered with the lock address in
/// r14; ends in `SUBOK` or `TXABORT`. Performs no stores.
pub fn emit_subscription(lock: &LockDescriptor, waiting: bool, spins: u64) -> CodeFragment {
    let l = &lock.name;
    let mut a = Asm::default();
    a.comment(format!(
        "subscription check for {l} ({}{}) clobbers r10-r14",
        lock.kind,
        if waiting { ", waiting" } else { "" }
    ));
    a.label(scar_label(lock));
    let lar = Loc::lar();
    if waiting {
        a.op(format!("MOVI r13, {}", spins.max(1)));
        a.label(format!("{l}_wait"));
        predicate(&mut a, lock, &lar, "NTLOAD", &format!("{l}_spin"), &format!("{l}_w"));
        a.op(format!("JMP {l}_check"));
        a.label(format!("{l}_spin"));
        a.op("ADDI r13, r13, -1");
        a.op(format!("BNE r13, r0, {l}_wait"));
        a.label(format!("{l}_check"));
    }
    predicate(&mut a, lock, &lar, "LOAD", &format!("{l}_taken"), &format!("{l}_c"));
    a.op("SUBOK");
    a.label(format!("{l}_taken"));
    a.op(format!("TXABORT {LOCK_BUSY_CODE}"));
    CodeFragment {
        text: a.0,
        data: String::new(),
    }
}

/// Converts a thin-held inflatable lock into an inflated one still owned by the caller.
pub fn emit_inflate(lock: &LockDescriptor) -> CodeFragment {
    let l = &lock.name;
    let off = super::lock::INFLATED_RECORD_OFFSET;
    let mut a = Asm::default();
    a.comment(format!("inflate {l} (caller holds it thin) clobbers r11"));
    a.op("MOVI r11, 1");
    a.op(format!("STORE r11, r0, {l}+{off}"));
    a.op(format!("MOVI r11, {l}+{}", off + 1));
    a.op(format!("STORE r11, {}", Loc::of(lock).at(0)));
    CodeFragment {
        text: a.0,
        data: String::new(),
    }
}

/// The lock's initial words at its base address.
pub fn lock_data(lock: &LockDescriptor) -> String {
    let zeros = vec!["0"; lock.footprint() as usize].join(", ");
    format!(".org {}\n{}: .word {zeros}\n", lock.base.0, lock.name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vm::{assemble_all, Instruction, Opcode};

    fn locks() -> Vec<LockDescriptor> {
        vec![
            LockDescriptor::new("la", LockKind::SimpleZero, 64),
            LockDescriptor::new("lb", LockKind::MaskedBit, 72).with_mask(1),
            LockDescriptor::new("lc", LockKind::Ticket, 80),
            LockDescriptor::new("ld", LockKind::Clh, 88),
            LockDescriptor::new("le", LockKind::Inflatable, 96),
        ]
    }

    #[test]
    fn every_fragment_assembles() {
        for lock in locks() {
            for mode in TleMode::ALL {
                for waiting in [false, true] {
                    let v = TleVariant {
                        waiting,
                        ..TleVariant::new(mode)
                    };
                    let s = Site::new(0, 0);
                    let acq = emit_acquire(&lock, &v, s);
                    let rel = emit_release(&lock, &v, s);
                    let sub = emit_subscription(&lock, waiting, 3);
                    let code = format!(".org 200\n{}    HALT\n{}    HALT\n{}", acq.text, rel.text, sub.text);
                    let r = assemble_all(&[&lock_data(&lock), &code, &acq.data]);
                    assert!(r.is_ok(), "{lock:?} {mode}: {:?}\n{code}", r.err());
                    // idempotent
                    assert_eq!(acq, emit_acquire(&lock, &v, s));
                }
            }
        }
    }

    #[test]
    fn subscription_routines_are_read_only() {
        for lock in locks() {
            for waiting in [false, true] {
                let sub = emit_subscription(&lock, waiting, 4);
                let p = assemble_all(&[&lock_data(&lock), &sub.text]).unwrap();
                for w in &p[1].words {
                    let op = Instruction::decode(*w).unwrap().op;
                    assert!(
                        !matches!(op, Opcode::STORE | Opcode::NTSTORE | Opcode::CALL | Opcode::TXBEGIN),
                        "{op} in {} routine",
                        lock.kind
                    );
                }
            }
        }
    }

    #[test]
    fn fragment_shapes() {
        let l = LockDescriptor::new("L", LockKind::SimpleZero, 64);
        let s = Site::new(0, 0);
        let eager = emit_acquire(&l, &TleVariant::new(TleMode::Eager), s).text;
        assert!(eager.contains("TXBEGIN t0_cs0_retry\n    LOAD r10, r0, L\n    BNE r10, r0, t0_cs0_busy"));
        let lazy = emit_acquire(&l, &TleVariant::new(TleMode::LazyUnsafe), s).text;
        assert!(lazy.contains("TXBEGIN") && !lazy.contains("LOAD r10, r0, L"));
        let rel = emit_release(&l, &TleVariant::new(TleMode::LazyUnsafe), s).text;
        assert!(rel.contains("LOAD r10, r0, L\n    BNE r10, r0, t0_cs0_rbusy\nt0_cs0_commit:\n    TXCOMMIT"));
        let rel = emit_release(&l, &TleVariant::new(TleMode::LazyExt), s).text;
        assert!(rel.contains("t0_cs0_subscribe:\nt0_cs0_commit:\n    TXCOMMIT"));

        let t = LockDescriptor::new("T", LockKind::Ticket, 64);
        let acq = emit_acquire(&t, &TleVariant::new(TleMode::LazyExt), s).text;
        assert!(acq.contains("SLOTPUSH r10, r11, T_scar"));
        let sub = emit_subscription(&t, false, 0).text;
        assert!(sub.contains("LOAD r10, r14, 0\n    LOAD r11, r14, 1\n    BNE r10, r11, T_taken\n    SUBOK"));
        let sub = emit_subscription(&l, true, 5).text;
        assert!(sub.contains("NTLOAD r10, r14, 0") && sub.contains("LOAD r10, r14, 0\n    BNE r10, r0, L_taken\n    SUBOK"));
        let rel = emit_lock_release_slow(&t, s).text;
        assert!(rel.contains("LOAD r10, r0, T+1\n    ADDI r10, r10, 1\n    STORE r10, r0, T+1"));
    }
}
