use rayon::prelude::*;

/// Runs `f` for every replica index and returns the results in index order.
///
/// Work is spread over the current rayon pool; output order (and therefore
/// any sequential fold over it) is independent of the thread count.
pub fn replicas<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    (0..count).into_par_iter().map(f).collect()
}

/// Fallible variant of [`replicas`]; the first error in index order wins.
pub fn try_replicas<T, E, F>(count: u64, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync + Send,
{
    let results: Vec<Result<T, E>> = replicas(count, f);
    results.into_iter().collect()
}
