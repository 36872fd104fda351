use hfl_core::Executor;
use rayon::prelude::*;

/// Runs client work on the rayon pool. Results keep input order, so runs
/// are bitwise identical to [`hfl_core::Sequential`].
#[derive(Debug, Clone, Copy, Default)]
pub struct Parallel;

impl Executor for Parallel {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.par_iter().map(f).collect()
    }
}
