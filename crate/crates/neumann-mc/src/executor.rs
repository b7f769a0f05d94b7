//! Thread-pool executor.

use neumann_core::PathExecutor;
use rayon::prelude::*;

/// Runs paths on a dedicated rayon pool. Results come back in path order,
/// so the worker count never changes a reduction.
pub struct RayonExecutor {
    pool: rayon::ThreadPool,
}

impl RayonExecutor {
    pub fn new(workers: usize) -> Result<Self, rayon::ThreadPoolBuildError> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build()?;
        Ok(Self { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }
}

impl PathExecutor for RayonExecutor {
    fn map_paths<T, F>(&self, paths: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..paths).into_par_iter().map(job).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keeps_path_order() {
        let ex = RayonExecutor::new(4).unwrap();
        let out = ex.map_paths(1000, |p| p * 2);
        assert!(out.iter().enumerate().all(|(i, v)| *v == 2 * i));
    }
}
