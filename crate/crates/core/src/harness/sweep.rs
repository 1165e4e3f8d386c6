//! Parallel evaluation of every grid point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::metrics::TradeoffRecord;

use super::experiment::Experiment;

/// One record per grid point, in grid order. Each point draws from its own
/// stream (master seed, grid index), so thread count never changes results.
pub fn sweep(exp: &Experiment) -> Vec<TradeoffRecord> {
    (0..exp.config.grid.len()).into_par_iter().map(|i| exp.evaluate_point(i)).collect()
}

/// [`sweep`] on a dedicated pool of `threads` workers.
pub fn sweep_with_threads(exp: &Experiment, threads: usize) -> Result<Vec<TradeoffRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    Ok(pool.install(|| sweep(exp)))
}
