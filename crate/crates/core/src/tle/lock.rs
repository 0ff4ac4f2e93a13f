use std::fmt;
use std::str::FromStr;

use crate::htm::{Address, Fault, Word};
use crate::machine::MemoryImage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LockKind {
    /// One word, zero when free.
    SimpleZero,
    /// One word; only the bits in `mask` mean "held", the rest is a sequence count.
    MaskedBit,
    /// `next` at base, `owner` at base+1.
    Ticket,
    /// Tail pointer at base; a queue node's low bit is its locked flag.
    Clh,
    /// Word at base: 0 free, 2 thin-held, `record | 1` inflated.
    /// The inflated record's first word is its held flag.
    Inflatable,
}

impl LockKind {
    pub const ALL: [LockKind; 5] = [
        LockKind::SimpleZero,
        LockKind::MaskedBit,
        LockKind::Ticket,
        LockKind::Clh,
        LockKind::Inflatable,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LockKind::SimpleZero => "simple_zero",
            LockKind::MaskedBit => "masked_bit",
            LockKind::Ticket => "ticket",
            LockKind::Clh => "clh",
            LockKind::Inflatable => "inflatable",
        }
    }

    /// Kinds whose availability test does not fit the `(word & mask) == 0` auto-check.
    pub fn needs_routine(self) -> bool {
        matches!(self, LockKind::Ticket | LockKind::Clh | LockKind::Inflatable)
    }
}

impl fmt::Display for LockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LockKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        LockKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown lock kind `{s}`"))
    }
}

/// Thin-held value of an inflatable lock word.
pub const THIN_HELD: Word = 2;
/// Offset of an inflatable lock's record from its base word.
pub const INFLATED_RECORD_OFFSET: u64 = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LockDescriptor {
    /// Label prefix for this lock's data and routines.
    pub name: String,
    pub kind: LockKind,
    pub base: Address,
    /// Held bits for `MaskedBit`; all ones otherwise.
    pub mask: Word,
    /// When set, generated code takes the lock address from this register
    /// instead of the constant `base`.
    pub addr_reg: Option<u8>,
}

impl LockDescriptor {
    pub fn new(name: &str, kind: LockKind, base: u64) -> Self {
        Self {
            name: name.to_string(),
            kind,
            base: Address(base),
            mask: !0,
            addr_reg: None,
        }
    }

    pub fn with_mask(mut self, mask: Word) -> Self {
        self.mask = mask;
        self
    }

    pub fn via_reg(mut self, r: u8) -> Self {
        self.addr_reg = Some(r);
        self
    }

    /// Slot mask for the hardware auto-check.
    pub fn slot_mask(&self) -> Word {
        match self.kind {
            LockKind::MaskedBit => self.mask,
            _ => !0,
        }
    }

    /// Amount a `MaskedBit` release adds to the sequence bits.
    pub fn sequence_increment(&self) -> Word {
        1u64.checked_shl(64 - self.mask.leading_zeros()).unwrap_or(0)
    }

    pub fn record(&self) -> Address {
        self.base.offset(INFLATED_RECORD_OFFSET as i64)
    }

    /// Number of words the lock's data occupies at `base`.
    pub fn footprint(&self) -> u64 {
        match self.kind {
            LockKind::SimpleZero | LockKind::MaskedBit | LockKind::Clh => 1,
            LockKind::Ticket => 2,
            LockKind::Inflatable => INFLATED_RECORD_OFFSET + 1,
        }
    }

    /// Availability against committed memory.
    pub fn is_available(&self, mem: &MemoryImage) -> Result<bool, Fault> {
        let get = |a: Address| mem.get(a).ok_or(Fault::OutOfRange(a));
        let word = get(self.base)?;
        Ok(match self.kind {
            LockKind::SimpleZero => word == 0,
            LockKind::MaskedBit => word & self.mask == 0,
            LockKind::Ticket => word == get(self.base.offset(1))?,
            LockKind::Clh => word == 0 || get(Address(word))? & 1 == 0,
            LockKind::Inflatable => {
                word == 0 || (word & 1 == 1 && get(Address(word & !1))? == 0)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mem(cells: &[(u64, Word)]) -> MemoryImage {
        let mut m = MemoryImage::new(256, 8);
        for (a, v) in cells {
            m.cells[*a as usize] = *v;
        }
        m
    }

    #[test]
    fn predicates() {
        let l = LockDescriptor::new("l", LockKind::SimpleZero, 64);
        assert!(l.is_available(&mem(&[])).unwrap());
        assert!(!l.is_available(&mem(&[(64, 1)])).unwrap());

        let l = LockDescriptor::new("l", LockKind::MaskedBit, 64).with_mask(1);
        assert!(l.is_available(&mem(&[(64, 0x10)])).unwrap());
        assert!(!l.is_available(&mem(&[(64, 0x11)])).unwrap());

        let l = LockDescriptor::new("l", LockKind::Ticket, 64);
        assert!(!l.is_available(&mem(&[(64, 3), (65, 2)])).unwrap());
        assert!(l.is_available(&mem(&[(64, 3), (65, 3)])).unwrap());

        let l = LockDescriptor::new("l", LockKind::Clh, 64);
        assert!(l.is_available(&mem(&[])).unwrap());
        assert!(!l.is_available(&mem(&[(64, 100), (100, 1)])).unwrap());
        assert!(l.is_available(&mem(&[(64, 100)])).unwrap());
        assert_eq!(
            l.is_available(&mem(&[(64, 999)])),
            Err(Fault::OutOfRange(Address(999)))
        );

        let l = LockDescriptor::new("l", LockKind::Inflatable, 64);
        assert!(l.is_available(&mem(&[])).unwrap());
        assert!(!l.is_available(&mem(&[(64, THIN_HELD)])).unwrap());
        assert!(l.is_available(&mem(&[(64, 69)])).unwrap());
        assert!(!l.is_available(&mem(&[(64, 69), (68, 1)])).unwrap());
    }

    #[test]
    fn masked_sequence_step() {
        let l = LockDescriptor::new("l", LockKind::MaskedBit, 64).with_mask(1);
        assert_eq!(l.sequence_increment(), 2);
        let l = l.with_mask(0b110);
        assert_eq!(l.sequence_increment(), 8);
    }
}
