//! Fixed-width instruction encoding. One instruction per 64-bit word:
//!
//! ```text
//! 63      56 55  52 51  48 47  44 43       32 31            0
//! | opcode  |  ra  |  rb  |  rc  |  reserved |  imm (i32)     |
//! ```
//!
//! Opcode 0 is not assigned, so zeroed memory never decodes.

use std::fmt;

use crate::htm::Word;

macro_rules! opcodes {
    ($($name:ident = $val:literal),* $(,)?) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        #[allow(clippy::upper_case_acronyms)]
        pub enum Opcode { $($name = $val),* }

        impl Opcode {
            pub const ALL: &'static [Opcode] = &[$(Opcode::$name),*];

            pub fn from_byte(b: u8) -> Option<Opcode> {
                match b { $($val => Some(Opcode::$name),)* _ => None }
            }

            pub fn mnemonic(self) -> &'static str {
                match self { $(Opcode::$name => stringify!($name)),* }
            }

            pub fn from_mnemonic(s: &str) -> Option<Opcode> {
                let upper = s.to_ascii_uppercase();
                match upper.as_str() { $(stringify!($name) => Some(Opcode::$name),)* _ => None }
            }
        }
    };
}

opcodes! {
    HALT = 1,
    MOVI = 2,
    MOV = 3,
    ADD = 4,
    SUB = 5,
    AND = 6,
    OR = 7,
    ADDI = 8,
    LOAD = 9,
    STORE = 10,
    NTLOAD = 11,
    NTSTORE = 12,
    CAS = 13,
    JMP = 14,
    JIND = 15,
    BEQ = 16,
    BNE = 17,
    BLT = 18,
    CALL = 19,
    RET = 20,
    TXBEGIN = 21,
    TXCOMMIT = 22,
    TXABORT = 23,
    SUBOK = 24,
    SLOTPUSH = 25,
}

/// Operand slot kinds, in assembly order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Operand {
    Reg,
    Imm,
    /// Immediate that may be omitted (defaults to 0).
    OptImm,
}

impl Opcode {
    /// Assembly operand layout. Registers fill ra, rb, rc in order; at most one immediate.
    pub fn operands(self) -> &'static [Operand] {
        use Opcode::*;
        use Operand::*;
        match self {
            HALT | RET | TXCOMMIT | SUBOK => &[],
            MOVI => &[Reg, Imm],
            MOV => &[Reg, Reg],
            JIND => &[Reg],
            ADD | SUB | AND | OR | CAS => &[Reg, Reg, Reg],
            ADDI | LOAD | STORE | NTLOAD | NTSTORE | BEQ | BNE | BLT | SLOTPUSH => {
                &[Reg, Reg, Imm]
            }
            JMP | CALL | TXBEGIN => &[Imm],
            TXABORT => &[OptImm],
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Instruction {
    pub op: Opcode,
    pub ra: u8,
    pub rb: u8,
    pub rc: u8,
    pub imm: i32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum DecodeError {
    #[error("unknown opcode byte {0:#04x}")]
    UnknownOpcode(u8),
    #[error("reserved bits set in {0:#018x}")]
    Reserved(Word),
}

impl Instruction {
    pub fn new(op: Opcode) -> Self {
        Self {
            op,
            ra: 0,
            rb: 0,
            rc: 0,
            imm: 0,
        }
    }

    pub fn regs(mut self, ra: u8, rb: u8, rc: u8) -> Self {
        self.ra = ra & 0xf;
        self.rb = rb & 0xf;
        self.rc = rc & 0xf;
        self
    }

    pub fn imm(mut self, imm: i32) -> Self {
        self.imm = imm;
        self
    }

    pub fn encode(&self) -> Word {
        ((self.op as u64) << 56)
            | ((self.ra as u64 & 0xf) << 52)
            | ((self.rb as u64 & 0xf) << 48)
            | ((self.rc as u64 & 0xf) << 44)
            | (self.imm as u32 as u64)
    }

    pub fn decode(w: Word) -> Result<Self, DecodeError> {
        let byte = (w >> 56) as u8;
        let op = Opcode::from_byte(byte).ok_or(DecodeError::UnknownOpcode(byte))?;
        if (w >> 32) & 0xfff != 0 {
            return Err(DecodeError::Reserved(w));
        }
        Ok(Self {
            op,
            ra: ((w >> 52) & 0xf) as u8,
            rb: ((w >> 48) & 0xf) as u8,
            rc: ((w >> 44) & 0xf) as u8,
            imm: w as u32 as i32,
        })
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.op)?;
        let mut regs = [self.ra, self.rb, self.rc].into_iter();
        let mut sep = " ";
        for kind in self.op.operands() {
            match kind {
                Operand::Reg => write!(f, "{sep}r{}", regs.next().unwrap_or(0))?,
                Operand::Imm | Operand::OptImm => write!(f, "{sep}{}", self.imm)?,
            }
            sep = ", ";
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn movi_layout() {
        let w = Instruction::new(Opcode::MOVI).regs(1, 0, 0).imm(7).encode();
        assert_eq!(w >> 56, Opcode::MOVI as u64);
        assert_eq!((w >> 52) & 0xf, 1);
        assert_eq!(w & 0xffff_ffff, 7);
        assert_eq!((w >> 32) & 0xfff, 0);
    }

    #[test]
    fn zero_word_is_not_an_instruction() {
        assert_eq!(Instruction::decode(0), Err(DecodeError::UnknownOpcode(0)));
        let bad = Instruction::new(Opcode::HALT).encode() | (1 << 40);
        assert!(matches!(Instruction::decode(bad), Err(DecodeError::Reserved(_))));
    }

    #[test]
    fn twenty_five_opcodes() {
        assert_eq!(Opcode::ALL.len(), 25);
        for op in Opcode::ALL {
            assert_eq!(Opcode::from_mnemonic(op.mnemonic()), Some(*op));
        }
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(
            idx in 0usize..25, ra in 0u8..16, rb in 0u8..16, rc in 0u8..16, imm in any::<i32>()
        ) {
            let i = Instruction::new(Opcode::ALL[idx]).regs(ra, rb, rc).imm(imm);
            prop_assert_eq!(Instruction::decode(i.encode()), Ok(i));
        }
    }
}
