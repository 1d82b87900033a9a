//! Instrumentation for the integer-only inference contract.
//!
//! Every accessor that hands out a real-valued scale (tensor α, kernel β,
//! merge provenance, the real value of a fixed-point scalar) bumps a
//! thread-local counter. An inference run that leaves the counter untouched
//! performed no real-valued arithmetic on those fields.

use std::cell::Cell;

thread_local! {
    static REAL_READS: Cell<u64> = const { Cell::new(0) };
}

pub(crate) fn note_real_read() {
    REAL_READS.with(|c| c.set(c.get() + 1));
}

/// Total real-valued field reads recorded on this thread.
pub fn real_reads() -> u64 {
    REAL_READS.with(Cell::get)
}

/// Counts real-valued reads between `begin` and `finish` on the current thread.
#[derive(Debug)]
pub struct Scope {
    start: u64,
}

impl Scope {
    pub fn begin() -> Self {
        Scope { start: real_reads() }
    }

    pub fn finish(self) -> u64 {
        real_reads() - self.start
    }
}
