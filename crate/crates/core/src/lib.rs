//! Simulator for best-effort hardware transactional memory with lock
//! subscription, transactional lock elision code generation, a systematic
//! interleaving explorer and a catalog of litmus scenarios.

pub mod audit;
pub mod bench;
pub mod config;
pub mod htm;
pub mod litmus;
pub mod machine;
pub mod sched;
pub mod tle;
pub mod vm;

pub use config::{ConfigError, EngineConfig};
pub use htm::{AbortReason, Address, ThreadId, Word};
pub use machine::{Machine, ThreadStatus};
