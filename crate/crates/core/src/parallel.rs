use crate::error::{Error, Result};

/// Caps the worker threads used for batched forward and backward passes.
pub const THREADS_ENV: &str = "KNEECAST_THREADS";

/// Sizes the global thread pool from [`THREADS_ENV`] if it is set.
///
/// Has no effect once the pool exists. Returns the pool size in use.
pub fn init_threads_from_env() -> Result<usize> {
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("{THREADS_ENV}={raw:?} is not a positive integer")))?;
        // an existing pool keeps its size
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(rayon::current_num_threads())
}
