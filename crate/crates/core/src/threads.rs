//! Worker-pool setup. `RESIP_THREADS` caps rollout/eval parallelism; all
//! parallel sections collect results in fixed order, so outputs do not
//! depend on the thread count.

use std::sync::OnceLock;

static POOL: OnceLock<rayon::ThreadPool> = OnceLock::new();

/// Number of worker threads: `RESIP_THREADS` if set and valid, otherwise
/// the machine's available parallelism.
pub fn worker_count() -> usize {
    if let Ok(v) = std::env::var("RESIP_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                return n;
            }
        }
        log::warn!("ignoring invalid RESIP_THREADS={v:?}");
    }
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Shared pool for episode-level parallelism (evaluation, harvesting).
pub fn pool() -> &'static rayon::ThreadPool {
    POOL.get_or_init(|| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(worker_count())
            .build()
            .expect("failed to build worker pool")
    })
}

/// Run episode jobs `0..n` in parallel, returning results in index order.
/// Each job owns its rng state, so the outcome is identical for any
/// thread count.
pub fn run_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, f: F) -> Vec<T> {
    use rayon::prelude::*;
    pool().install(|| (0..n).into_par_iter().map(f).collect())
}
