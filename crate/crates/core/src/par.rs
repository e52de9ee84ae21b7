//! Data-parallel helpers.
//!
//! With the `parallel` feature the closures run on the rayon pool; without it,
//! or when a caller asks for sequential execution, they run in a plain loop.
//! Either way results come back in index order, so any reduction done by the
//! caller over the returned vector has a fixed summation order.

/// Evaluate `f(i)` for `i in 0..n` and collect the results in index order.
pub fn map_range<R, F>(n: usize, parallel: bool, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if parallel {
        use rayon::prelude::*;
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = parallel;
    (0..n).map(f).collect()
}

/// Like [`map_range`] but over a slice.
pub fn map_slice<T, R, F>(items: &[T], parallel: bool, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    map_range(items.len(), parallel, |i| f(&items[i]))
}

/// Whether parallel execution is compiled in.
pub const fn available() -> bool {
    cfg!(feature = "parallel")
}
