use rayon::prelude::*;
use relaxctl_core::Executor;

/// Rayon-backed executor on a dedicated pool of fixed size.
pub struct Pool {
    pool: rayon::ThreadPool,
}

impl Pool {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build()?;
        Ok(Pool { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl Executor for Pool {
    fn fill(&self, out: &mut [f64], chunk_len: usize, task: &(dyn Fn(usize, &mut [f64]) + Sync)) {
        let chunk_len = chunk_len.max(1);
        self.pool.install(|| {
            out.par_chunks_mut(chunk_len)
                .enumerate()
                .for_each(|(k, chunk)| task(k * chunk_len, chunk));
        });
    }
}

/// Worker count when `--workers` is not given.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}
