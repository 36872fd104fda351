//! Fork-join execution of independent client jobs.

use alloc::vec::Vec;

/// Runs `f` over every item and returns results in input order.
///
/// Implementations may run jobs concurrently. Results must come back in
/// the order of `items` so that downstream summation stays canonical.
pub trait Executor {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send;
}

/// Runs jobs one after another on the calling thread.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        items.iter().map(f).collect()
    }
}
