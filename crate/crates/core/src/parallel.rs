//! Deterministic chunked fan-out.
//!
//! Work items are grouped into fixed-size chunks; each chunk is folded
//! sequentially and the per-chunk results are returned in chunk order, so
//! the caller's reduction is bit-identical for any worker count.

use rayon::prelude::*;

pub const DEFAULT_CHUNK_SIZE: u64 = 1024;

/// Runs `f(start, end)` for every chunk `[start, end)` of `0..n_items`.
pub fn map_chunks<T, F>(n_items: u64, chunk_size: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, u64) -> T + Sync + Send,
{
    let chunk_size = chunk_size.max(1);
    let n_chunks = n_items.div_ceil(chunk_size);
    let run = |c: u64| {
        let start = c * chunk_size;
        f(start, (start + chunk_size).min(n_items))
    };
    if workers <= 1 || n_chunks <= 1 {
        return (0..n_chunks).map(run).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| (0..n_chunks).into_par_iter().map(run).collect()),
        Err(_) => (0..n_chunks).map(run).collect(),
    }
}

/// Applies `f` to owned items in parallel, returning results in input order.
pub fn map_owned<T, U, F>(items: Vec<T>, workers: usize, f: F) -> Vec<U>
where
    T: Send,
    U: Send,
    F: Fn(T) -> U + Sync + Send,
{
    if workers <= 1 || items.len() <= 1 {
        return items.into_iter().map(f).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| items.into_par_iter().map(&f).collect()),
        Err(_) => items.into_iter().map(f).collect(),
    }
}

/// Worker count from `FKEIT_WORKERS`, falling back to `default`.
pub fn workers_from_env(default: usize) -> usize {
    std::env::var("FKEIT_WORKERS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&w| w > 0)
        .unwrap_or(default)
}
