//! Reproducible reductions.
//!
//! Row-wise work is always computed independently per index; only the final
//! sum differs. With the deterministic flag on, sums run in index order so the
//! result does not depend on the thread count.

use rayon::prelude::*;
use std::sync::atomic::{AtomicBool, Ordering};

static DETERMINISTIC: AtomicBool = AtomicBool::new(false);

pub fn set_deterministic(on: bool) {
    DETERMINISTIC.store(on, Ordering::SeqCst);
}

pub fn deterministic() -> bool {
    DETERMINISTIC.load(Ordering::SeqCst)
}

/// Below this many rows the work runs on the calling thread.
pub const PAR_THRESHOLD: usize = 64;

pub fn sum(values: &[f64]) -> f64 {
    if deterministic() || values.len() < 4096 {
        values.iter().sum()
    } else {
        values.par_iter().sum()
    }
}

/// Evaluates `f` on `0..n`, in parallel when `n` is large enough.
pub fn map_rows<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if n < PAR_THRESHOLD {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}

/// Sum of `f(i)` over `0..n` under the reduction policy above.
pub fn sum_rows<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    sum(&map_rows(n, f))
}
