//! Thread-pool executor for per-utterance work. Results always come back in
//! index order, so parallel and sequential runs reduce identically.

use rayon::prelude::*;
use repfuse_core::trainer::Executor;

use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "REPFUSE_THREADS";

pub enum Exec {
    Sequential,
    Pool(rayon::ThreadPool),
}

impl Exec {
    /// `0` runs everything on the calling thread.
    pub fn with_threads(threads: usize) -> Result<Self> {
        if threads == 0 {
            return Ok(Exec::Sequential);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map(Exec::Pool)
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    /// Reads `REPFUSE_THREADS`; unset means one thread per core.
    pub fn from_env() -> Result<Self> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => {
                let n = v
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a thread count, got {v:?}")))?;
                Self::with_threads(n)
            }
            Err(_) => Self::with_threads(std::thread::available_parallelism().map_or(1, |n| n.get())),
        }
    }

    pub fn threads(&self) -> usize {
        match self {
            Exec::Sequential => 0,
            Exec::Pool(p) => p.current_num_threads(),
        }
    }
}

impl Executor for Exec {
    fn map_indexed<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Exec::Sequential => (0..n).map(f).collect(),
            Exec::Pool(pool) => pool.install(|| (0..n).into_par_iter().map(f).collect()),
        }
    }
}
