//! Thread-pool sizing from the environment.

use anyhow::{Context, Result};

/// Environment variable holding the worker-thread count.
pub const THREADS_ENV: &str = "DCN_THREADS";

/// Sizes the global rayon pool from [`THREADS_ENV`] when set.
///
/// Results do not depend on the thread count; this only affects speed.
pub fn init_from_env() -> Result<Option<usize>> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(None);
    };
    let n: usize = raw.trim().parse().with_context(|| format!("{THREADS_ENV}={raw:?} is not a thread count"))?;
    anyhow::ensure!(n > 0, "{THREADS_ENV} must be positive");
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("thread pool already initialized")?;
    Ok(Some(n))
}
