use rand::Rng;

use super::{CompressorConfig, CoresetSelection, Method};
use crate::data::Dataset;
use crate::error::{CteError, Result};
use crate::rng::substream;

pub(crate) fn iid_indices(n: usize, m: usize, seed: u64) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(CteError::config("i.i.d. sample size must be positive"));
    }
    if n == 0 {
        return Err(CteError::config("cannot sample from an empty dataset"));
    }
    let mut rng = substream(seed, "iid", 0);
    Ok((0..m).map(|_| rng.random_range(0..n)).collect())
}

/// `m` rows drawn uniformly with replacement.
pub fn iid_sample(data: &Dataset, m: usize, seed: u64) -> Result<CoresetSelection> {
    let mut cfg = CompressorConfig::new(Method::Iid, seed);
    cfg.target_size = Some(m);
    if m == 0 {
        return Err(CteError::config("i.i.d. sample size must be positive"));
    }
    let indices = iid_indices(data.n_rows(), m, seed)?;
    Ok(CoresetSelection {
        method: Method::Iid,
        seed,
        sigma: cfg.resolved_kernel(data.n_features()).sigma(),
        g: cfg.oversample_g,
        indices,
        elapsed_seconds: 0.0,
    })
}
