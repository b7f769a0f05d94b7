//! Pluggable path-level parallelism.

use alloc::vec::Vec;

use crate::error::Result;

/// Runs one job per path index and returns the results in path order.
///
/// Implementations may run jobs concurrently but must return them indexed
/// by path, so that reductions done afterwards are independent of the
/// number of workers.
pub trait PathExecutor: Sync {
    fn map_paths<T, F>(&self, paths: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

/// Runs every path on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl PathExecutor for Sequential {
    fn map_paths<T, F>(&self, paths: usize, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..paths).map(job).collect()
    }
}

/// Collects per-path results, surfacing the first error in path order.
pub fn try_map_paths<E, T, F>(executor: &E, paths: usize, job: F) -> Result<Vec<T>>
where
    E: PathExecutor + ?Sized,
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    executor.map_paths(paths, job).into_iter().collect()
}
