//! Optional trace of the branch decisions taken by non-smooth ops
//! (`relu` sign tests and `max_reduce` winners). Finite-difference checks
//! compare traces to reject perturbations that cross a kink.

use std::cell::Cell;

thread_local! {
    static TRACE: Cell<Option<u64>> = const { Cell::new(None) };
}

const PRIME: u64 = 0x0000_0100_0000_01b3;

/// Starts recording on this thread, discarding any previous trace.
pub fn start() {
    TRACE.with(|t| t.set(Some(0xcbf2_9ce4_8422_2325)));
}

/// Stops recording and returns the digest of the decisions seen.
pub fn finish() -> Option<u64> {
    TRACE.with(|t| t.take())
}

pub(crate) fn enabled() -> bool {
    TRACE.with(|t| t.get().is_some())
}

pub(crate) fn record(values: impl Iterator<Item = u64>) {
    TRACE.with(|t| {
        if let Some(mut h) = t.get() {
            for v in values {
                h = (h ^ v).wrapping_mul(PRIME);
            }
            t.set(Some(h));
        }
    });
}
