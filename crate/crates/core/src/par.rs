//! Order-preserving map over a slice on a bounded worker pool.

#[derive(Debug, thiserror::Error)]
#[error("could not start worker pool: {0}")]
pub struct PoolError(pub String);

#[cfg(feature = "parallel")]
pub(crate) fn map_ordered<I, T, F>(items: &[I], parallelism: usize, f: F) -> Result<Vec<T>, PoolError>
where
    I: Sync,
    T: Send,
    F: Fn(&I) -> T + Sync,
{
    use rayon::prelude::*;
    if parallelism <= 1 {
        return Ok(items.iter().map(f).collect());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| PoolError(e.to_string()))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map_ordered<I, T, F>(items: &[I], _parallelism: usize, f: F) -> Result<Vec<T>, PoolError>
where
    F: Fn(&I) -> T,
{
    Ok(items.iter().map(f).collect())
}
