//! Optional data parallelism. Results are always collected in index order
//! and reduced sequentially by callers, so outputs do not depend on the mode.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::OnceLock;

use rayon::prelude::*;

pub const DETERMINISTIC_ENV: &str = "SETRACK_DETERMINISTIC";

static FORCED: AtomicBool = AtomicBool::new(false);
static FROM_ENV: OnceLock<bool> = OnceLock::new();

/// Forces single-threaded reference mode for the rest of the process.
pub fn set_deterministic(on: bool) {
    FORCED.store(on, Ordering::SeqCst);
}

pub fn is_deterministic() -> bool {
    FORCED.load(Ordering::SeqCst)
        || *FROM_ENV.get_or_init(|| {
            std::env::var(DETERMINISTIC_ENV)
                .map(|v| !v.is_empty() && v != "0" && v.to_ascii_lowercase() != "false")
                .unwrap_or(false)
        })
}

pub fn map_indexed<R, F>(n: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    if is_deterministic() || n < 2 {
        (0..n).map(f).collect()
    } else {
        (0..n).into_par_iter().map(f).collect()
    }
}
