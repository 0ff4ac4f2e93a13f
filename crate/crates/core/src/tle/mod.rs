//! Lock descriptors and lock-elision code generation.

mod codegen;
mod lock;

pub use codegen::{
    emit_acquire, emit_inflate, emit_lock_acquire_slow, emit_lock_release_slow, emit_release,
    emit_subscription, lock_data, scar_label, uses_routine, CodeFragment, Site, TleMode,
    TleVariant, LOCK_BUSY_CODE,
};
pub use lock::{LockDescriptor, LockKind, INFLATED_RECORD_OFFSET, THIN_HELD};
