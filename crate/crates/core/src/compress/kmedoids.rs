use std::time::Instant;

use ndarray::ArrayView2;

use super::{CompressorConfig, CoresetSelection, Method};
use crate::data::Dataset;
use crate::error::{CteError, Result};
use crate::kernels::sq_dist;

const MAX_SWAP_ITER: usize = 100;

struct Dist<'a> {
    x: ArrayView2<'a, f64>,
    cache: Option<Vec<f64>>,
}

impl<'a> Dist<'a> {
    fn new(x: ArrayView2<'a, f64>) -> Self {
        let n = x.nrows();
        // cache the full matrix when it fits in ~512 MiB
        let cache = (n * n <= 1 << 26).then(|| {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..i {
                    let v = sq_dist(x.row(i), x.row(j)).sqrt();
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            m
        });
        Dist { x, cache }
    }

    #[inline]
    fn get(&self, i: usize, j: usize) -> f64 {
        match &self.cache {
            Some(m) => m[i * self.x.nrows() + j],
            None => sq_dist(self.x.row(i), self.x.row(j)).sqrt(),
        }
    }
}

struct Assignment {
    nearest: Vec<usize>,
    d_near: Vec<f64>,
    d_second: Vec<f64>,
}

fn assign(dist: &Dist<'_>, n: usize, medoids: &[usize]) -> Assignment {
    let mut nearest = vec![0; n];
    let mut d_near = vec![f64::INFINITY; n];
    let mut d_second = vec![f64::INFINITY; n];
    for o in 0..n {
        for (slot, &m) in medoids.iter().enumerate() {
            let d = dist.get(o, m);
            if d < d_near[o] {
                d_second[o] = d_near[o];
                d_near[o] = d;
                nearest[o] = slot;
            } else if d < d_second[o] {
                d_second[o] = d;
            }
        }
    }
    Assignment { nearest, d_near, d_second }
}

/// PAM k-medoids under Euclidean distance: greedy BUILD followed by
/// best-improvement SWAP steps until no swap lowers the total deviation or
/// the iteration cap is reached. Returns sorted medoid row indices.
///
/// The procedure is deterministic; `seed` is accepted for interface parity
/// and ignored.
pub fn kmedoids_indices(x: ArrayView2<'_, f64>, k: usize, _seed: u64) -> Result<Vec<usize>> {
    let n = x.nrows();
    if k == 0 {
        return Err(CteError::config("number of medoids must be positive"));
    }
    if k > n {
        return Err(CteError::config(format!("cannot pick {k} medoids from {n} rows")));
    }
    let dist = Dist::new(x);
    let mut is_med = vec![false; n];
    let mut medoids = Vec::with_capacity(k);
    let mut d_near = vec![f64::INFINITY; n];
    // BUILD
    for _ in 0..k {
        let mut best = (usize::MAX, f64::INFINITY);
        for c in (0..n).filter(|&c| !is_med[c]) {
            let total: f64 = (0..n).map(|o| dist.get(o, c).min(d_near[o])).sum();
            if total < best.1 {
                best = (c, total);
            }
        }
        let c = best.0;
        is_med[c] = true;
        medoids.push(c);
        for (o, dn) in d_near.iter_mut().enumerate() {
            *dn = dn.min(dist.get(o, c));
        }
    }
    // SWAP
    for _ in 0..MAX_SWAP_ITER {
        let a = assign(&dist, n, &medoids);
        let mut removal = vec![0.0; k];
        for o in 0..n {
            removal[a.nearest[o]] += a.d_second[o] - a.d_near[o];
        }
        let mut best = (0usize, 0usize, -1e-12);
        for c in (0..n).filter(|&c| !is_med[c]) {
            let mut delta = removal.clone();
            let mut add = 0.0;
            for o in 0..n {
                let d = dist.get(o, c);
                let dn = a.d_near[o];
                if d < dn {
                    add += d - dn;
                    delta[a.nearest[o]] += dn - a.d_second[o];
                } else if d < a.d_second[o] {
                    delta[a.nearest[o]] += d - a.d_second[o];
                }
            }
            for (slot, &dv) in delta.iter().enumerate() {
                if dv + add < best.2 {
                    best = (c, slot, dv + add);
                }
            }
        }
        if best.2 >= -1e-12 {
            break;
        }
        let (c, slot, _) = best;
        is_med[medoids[slot]] = false;
        is_med[c] = true;
        medoids[slot] = c;
    }
    medoids.sort_unstable();
    Ok(medoids)
}

/// k-medoids coreset of `k` rows.
pub fn kmedoids(data: &Dataset, k: usize, seed: u64) -> Result<CoresetSelection> {
    let cfg = CompressorConfig::new(Method::Kmedoids, seed).with_size(k);
    let start = Instant::now();
    let indices = kmedoids_indices(data.features(), k, seed)?;
    Ok(CoresetSelection {
        method: Method::Kmedoids,
        seed,
        sigma: cfg.resolved_kernel(data.n_features()).sigma(),
        g: cfg.oversample_g,
        indices,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
