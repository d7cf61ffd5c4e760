//! Order-preserving parallel map over independent trials.

/// Caps the number of worker threads; unset or `0` means one per core.
pub const THREADS_ENV: &str = "ECMPR_THREADS";

/// Worker count requested through [`THREADS_ENV`], `None` for automatic.
pub fn worker_count() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Applies `f` to every job; results come back in job order regardless of
/// scheduling.
#[cfg(feature = "parallel")]
pub(crate) fn map_jobs<J, T, F>(jobs: &[J], f: F) -> Vec<T>
where
    J: Sync,
    T: Send,
    F: Fn(&J) -> T + Sync + Send,
{
    use rayon::prelude::*;
    let run = || jobs.par_iter().map(&f).collect();
    match worker_count() {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(run),
            Err(_) => jobs.iter().map(&f).collect(),
        },
        None => run(),
    }
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_jobs<J, T, F>(jobs: &[J], f: F) -> Vec<T>
where
    F: Fn(&J) -> T,
{
    jobs.iter().map(f).collect()
}
