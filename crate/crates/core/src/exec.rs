//! Running many independent jobs (seeds, sweep points).
//!
//! Each job owns its state and output path, so results are identical
//! whichever runner executes them. The rayon runner is compiled in with the
//! `parallel` feature; without it every request falls back to sequential.

/// Runs `job` on every item in order.
pub fn run_sequential<T, U, F>(items: &[T], job: F) -> Vec<U>
where
    F: Fn(&T) -> U,
{
    items.iter().map(job).collect()
}

/// Runs `job` on every item on a dedicated pool of `threads` workers.
/// Results keep the order of `items`.
#[cfg(feature = "parallel")]
pub fn run_parallel<T, U, F>(items: &[T], threads: usize, job: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    use rayon::prelude::*;
    match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
        Ok(pool) => pool.install(|| items.par_iter().map(&job).collect()),
        Err(e) => {
            log::warn!("could not build a {threads}-thread pool ({e}); running sequentially");
            run_sequential(items, job)
        }
    }
}

/// `threads <= 1` or a build without `parallel` runs sequentially.
pub fn run<T, U, F>(items: &[T], threads: usize, job: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync,
{
    #[cfg(feature = "parallel")]
    if threads > 1 {
        return run_parallel(items, threads, job);
    }
    if threads > 1 {
        log::warn!("built without the `parallel` feature; running {} jobs sequentially", items.len());
    }
    run_sequential(items, job)
}
