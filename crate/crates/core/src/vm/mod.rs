//! Register-machine ISA, assembler and interpreter.

mod asm;
mod exec;
pub mod isa;

pub use asm::{assemble, assemble_all, AsmError, AsmErrorKind, Program};
pub use exec::{FinalState, StepOutcome};
pub use isa::{DecodeError, Instruction, Opcode};
