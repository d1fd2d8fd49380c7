//! Data-parallel map over independent work items.
//!
//! With the `parallel` feature the items run on a rayon pool; without it they
//! run in order on the calling thread. Results always come back in index
//! order, so callers that key their randomness by index get identical output
//! either way.

/// Environment variable that caps the worker pool.
pub const THREADS_ENV: &str = "RANKTOPO_THREADS";

/// Worker cap from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&t| t > 0)
}

/// `f(0), ..., f(len - 1)`, possibly in parallel, collected in index order.
/// `threads` caps the pool size; `None` uses the global pool.
pub fn map_indexed<T, F>(len: usize, threads: Option<usize>, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    imp::map_indexed(len, threads, f)
}

/// Whether work may run on more than one thread.
pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

#[cfg(feature = "parallel")]
mod imp {
    use rayon::prelude::*;

    pub fn map_indexed<T, F>(len: usize, threads: Option<usize>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let run = || (0..len).into_par_iter().map(&f).collect();
        match threads {
            Some(1) => (0..len).map(&f).collect(),
            Some(t) => match rayon::ThreadPoolBuilder::new().num_threads(t).build() {
                Ok(pool) => pool.install(run),
                Err(_) => run(),
            },
            None => run(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
mod imp {
    pub fn map_indexed<T, F>(len: usize, _threads: Option<usize>, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..len).map(f).collect()
    }
}
