//! Thread-count control for the data-parallel kernels.
//!
//! Kernels split work per output plane, so results do not depend on the
//! number of threads; this only trades latency for cores.

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "FVWT_THREADS";

/// Thread cap requested through `FVWT_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Sizes the global pool: an explicit count wins over `FVWT_THREADS`; with
/// neither, rayon's default (one worker per core) is kept.
pub fn init_global_pool(explicit: Option<usize>) -> Result<()> {
    if let Some(n) = explicit.or_else(threads_from_env) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::config(format!("cannot size the global pool to {n} threads: {e}")))?;
    }
    Ok(())
}

/// Runs `f` on a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot start {threads} threads: {e}")))?;
    Ok(pool.install(f))
}

/// Threads the current pool will use.
pub fn current_threads() -> usize {
    rayon::current_num_threads()
}
