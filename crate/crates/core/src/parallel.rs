//! Order-preserving job execution, multi-threaded when the `parallel`
//! feature is on.

#[cfg(feature = "parallel")]
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    use rayon::prelude::*;
    items.par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.iter().map(f).collect()
}

/// Runs `f` with at most `workers` threads (`None`: available parallelism).
#[cfg(feature = "parallel")]
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> crate::Result<R> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| crate::Error::InvalidArgument(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

#[cfg(not(feature = "parallel"))]
pub fn with_workers<R: Send>(_workers: Option<usize>, f: impl FnOnce() -> R + Send) -> crate::Result<R> {
    Ok(f())
}
