//! Worker-count control. `CURVELIGHT_THREADS=0` (or `1`) runs everything inline on the
//! calling thread; unset uses every available core. Results are always returned in
//! input order and reduced sequentially, so numeric output never depends on the count.

use rayon::prelude::*;

pub const THREADS_ENV: &str = "CURVELIGHT_THREADS";

/// Worker count from the environment; 0 means inline.
pub fn worker_threads() -> usize {
    match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse().unwrap_or(0),
        Err(_) => std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
    }
}

/// `items.map(f)` in order, fanned out over [`worker_threads`] workers.
pub fn map_ordered<I, R, F>(items: &[I], f: F) -> Vec<R>
where
    I: Sync,
    R: Send,
    F: Fn(&I) -> R + Sync + Send,
{
    let threads = worker_threads();
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
        Err(_) => items.iter().map(f).collect(),
    }
}
