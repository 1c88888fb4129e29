use std::time::Instant;

use ndarray::ArrayView2;
use rand::seq::index::sample;

use super::kt::{split_halve, thin_to};
use super::{CompressorConfig, CoresetSelection, Method, KT_DELTA};
use crate::data::Dataset;
use crate::error::{CteError, Result};
use crate::kernels::GaussianKernel;
use crate::rng::{substream, StreamRng};

/// Largest power of four not exceeding `n` (0 for `n == 0`).
pub fn largest_power_of_four(n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    let mut p = 1usize;
    while p <= n / 4 {
        p *= 4;
    }
    p
}

/// Output size of Compress++ on `n` rows: the square root of the working
/// size.
pub fn natural_size(n: usize) -> Result<usize> {
    if n < 4 {
        return Err(CteError::config(format!("Compress++ needs at least 4 rows, got {n}")));
    }
    let w = largest_power_of_four(n);
    Ok(1usize << (w.trailing_zeros() / 2))
}

fn log4(w: usize) -> u32 {
    w.trailing_zeros() / 2
}

fn compress_rec(
    x: ArrayView2<'_, f64>,
    idx: &[usize],
    g: u32,
    kernel: &GaussianKernel,
    rng: &mut StreamRng,
) -> Vec<usize> {
    if idx.len() <= 1usize << (2 * g) {
        return idx.to_vec();
    }
    let q = idx.len() / 4;
    let mut merged = Vec::with_capacity(4 * q);
    for block in idx.chunks(q) {
        merged.extend(compress_rec(x, block, g, kernel, rng));
    }
    let (a, b) = split_halve(x, &merged, kernel, KT_DELTA, rng);
    if rand::Rng::random::<bool>(rng) {
        a
    } else {
        b
    }
}

/// Compress++ over the rows of `x`. Returns sorted, duplicate-free indices.
///
/// Inputs whose size is not a power of four are first subsampled without
/// replacement to the largest power of four. With `target = None` the output
/// has `sqrt(working size)` points; an explicit target is reached by thinning
/// the compressed set further and, when needed, greedily shrinking it.
pub fn compresspp_indices(
    x: ArrayView2<'_, f64>,
    kernel: &GaussianKernel,
    g: u32,
    target: Option<usize>,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = x.nrows();
    let natural = natural_size(n)?;
    let working = largest_power_of_four(n);
    let target = target.unwrap_or(natural);
    if target == 0 || target > working {
        return Err(CteError::config(format!(
            "coreset size {target} must lie in 1..={working} (working size for {n} rows)"
        )));
    }
    let mut rng = substream(seed, "compresspp", 0);
    let idx: Vec<usize> = if working == n { (0..n).collect() } else { sample(&mut rng, n, working).into_vec() };
    let levels = log4(working);
    let mut g = g.min(levels);
    while g < levels && (natural << g) < target {
        g += 1;
    }
    let compressed = compress_rec(x, &idx, g, kernel, &mut rng);
    let mut out = thin_to(x, &compressed, target, kernel, KT_DELTA, &mut rng);
    out.sort_unstable();
    Ok(out)
}

/// Compress++ with kernel thinning as the halving routine.
pub fn compresspp(data: &Dataset, config: &CompressorConfig) -> Result<CoresetSelection> {
    let kernel = config.resolved_kernel(data.n_features());
    let start = Instant::now();
    let indices = compresspp_indices(data.features(), &kernel, config.oversample_g, config.target_size, config.seed)?;
    Ok(CoresetSelection {
        method: Method::Kt,
        seed: config.seed,
        sigma: kernel.sigma(),
        g: config.oversample_g,
        indices,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
