//! Kernel thinning: randomized self-balancing halving followed by a greedy
//! swap stage that lowers the unbiased MMD to the input.

use ndarray::ArrayView2;
use rand::Rng;

use super::KT_DELTA;
use crate::error::{CteError, Result};
use crate::kernels::GaussianKernel;
use crate::rng::{substream, StreamRng};

/// One self-balancing halving round over `idx` (rows of `x`), consuming the
/// points in consecutive pairs. Returns the two complementary halves; an odd
/// trailing point is dropped.
pub(crate) fn split_halve(
    x: ArrayView2<'_, f64>,
    idx: &[usize],
    kernel: &GaussianKernel,
    delta: f64,
    rng: &mut StreamRng,
) -> (Vec<usize>, Vec<usize>) {
    let pairs = idx.len() / 2;
    let mut first = Vec::with_capacity(pairs);
    let mut second = Vec::with_capacity(pairs);
    let delta_i = delta / pairs.max(1) as f64;
    let log_term = (2.0 * (2.0 / delta_i).ln()).sqrt();
    let mut sigma_sq = 0.0f64;
    for p in 0..pairs {
        let (a, b) = (idx[2 * p], idx[2 * p + 1]);
        let (xa, xb) = (x.row(a), x.row(b));
        let b_sq = (2.0 - 2.0 * kernel.eval_unchecked(xa, xb)).max(0.0);
        let b_norm = b_sq.sqrt();
        let thresh = (b_norm * sigma_sq.sqrt() * log_term).max(b_sq);
        if thresh > 0.0 {
            let grow = 1.0 + (b_sq - 2.0 * thresh) * sigma_sq / (thresh * thresh);
            sigma_sq += b_sq * grow.max(0.0);
        }
        // <psi, k(a,.) - k(b,.)> with psi = sum_first k - sum_second k
        let mut alpha = 0.0;
        for (&u, &v) in first.iter().zip(second.iter()) {
            let (xu, xv) = (x.row(u), x.row(v));
            alpha += kernel.eval_unchecked(xu, xa) - kernel.eval_unchecked(xu, xb) - kernel.eval_unchecked(xv, xa)
                + kernel.eval_unchecked(xv, xb);
        }
        let prob = if thresh > 0.0 { 0.5 * (1.0 - alpha / thresh).clamp(0.0, 2.0) } else { 0.5 };
        if rng.random::<f64>() < prob {
            first.push(a);
            second.push(b);
        } else {
            first.push(b);
            second.push(a);
        }
    }
    (first, second)
}

/// `rounds` levels of recursive halving; returns the `2^rounds` leaves.
pub(crate) fn split_rounds(
    x: ArrayView2<'_, f64>,
    idx: &[usize],
    rounds: u32,
    kernel: &GaussianKernel,
    delta: f64,
    rng: &mut StreamRng,
) -> Vec<Vec<usize>> {
    let mut level = vec![idx.to_vec()];
    for _ in 0..rounds {
        let mut next = Vec::with_capacity(level.len() * 2);
        for set in &level {
            let (a, b) = split_halve(x, set, kernel, delta, rng);
            next.push(a);
            next.push(b);
        }
        level = next;
    }
    level
}

/// Kernel matrix over an input set plus per-point kernel means; the basis
/// of the swap stage.
pub(crate) struct SwapState {
    m: usize,
    k: Vec<f64>,
    mean_k: Vec<f64>,
}

impl SwapState {
    pub(crate) fn new(x: ArrayView2<'_, f64>, input: &[usize], kernel: &GaussianKernel) -> Self {
        let m = input.len();
        let mut k = vec![0.0; m * m];
        for i in 0..m {
            k[i * m + i] = 1.0;
            let xi = x.row(input[i]);
            for j in 0..i {
                let v = kernel.eval_unchecked(xi, x.row(input[j]));
                k[i * m + j] = v;
                k[j * m + i] = v;
            }
        }
        let mean_k = (0..m).map(|i| k[i * m..(i + 1) * m].iter().sum::<f64>() / m as f64).collect();
        SwapState { m, k, mean_k }
    }

    #[inline]
    fn kv(&self, i: usize, j: usize) -> f64 {
        self.k[i * self.m + j]
    }

    fn pair_coef(c: usize) -> f64 {
        if c >= 2 {
            1.0 / (c * (c - 1)) as f64
        } else {
            0.0
        }
    }

    /// Unbiased MMD^2 between the coreset (positions into the input) and the
    /// input, up to the constant within-input term.
    pub(crate) fn objective(&self, core: &[usize]) -> f64 {
        let c = core.len();
        let mut off = 0.0;
        for (a, &i) in core.iter().enumerate() {
            for &j in &core[..a] {
                off += 2.0 * self.kv(i, j);
            }
        }
        let cross: f64 = core.iter().map(|&i| self.mean_k[i]).sum();
        Self::pair_coef(c) * off - 2.0 * cross / c as f64
    }

    fn sums(&self, core: &[usize]) -> Vec<f64> {
        (0..self.m).map(|p| core.iter().map(|&j| self.kv(p, j)).sum()).collect()
    }

    /// Removes points one at a time, each time the one whose removal lowers
    /// the objective most, until `target` remain.
    pub(crate) fn shrink(&self, mut core: Vec<usize>, target: usize) -> Vec<usize> {
        let mut sum_c = self.sums(&core);
        let mut off: f64 = core.iter().map(|&i| sum_c[i] - 1.0).sum();
        let mut cross: f64 = core.iter().map(|&i| self.mean_k[i]).sum();
        while core.len() > target {
            let c1 = core.len() - 1;
            let best = (0..core.len())
                .map(|pos| {
                    let a = core[pos];
                    let off_new = off - 2.0 * (sum_c[a] - 1.0);
                    let val = Self::pair_coef(c1) * off_new - 2.0 * (cross - self.mean_k[a]) / c1 as f64;
                    (pos, val)
                })
                .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
            let a = core.swap_remove(best.0);
            off -= 2.0 * (sum_c[a] - 1.0);
            cross -= self.mean_k[a];
            for (p, s) in sum_c.iter_mut().enumerate() {
                *s -= self.kv(p, a);
            }
        }
        core.sort_unstable();
        core
    }

    /// One pass of greedy best-improvement exchanges: each coreset slot is
    /// replaced by the non-member input point that lowers the objective most.
    pub(crate) fn refine(&self, mut core: Vec<usize>) -> Vec<usize> {
        let c = core.len();
        if c == 0 || c >= self.m {
            return core;
        }
        let coef = 2.0 * Self::pair_coef(c);
        let cross_coef = 2.0 / c as f64;
        let mut member = vec![false; self.m];
        for &i in &core {
            member[i] = true;
        }
        let mut sum_c = self.sums(&core);
        for (pos, &a) in core.clone().iter().enumerate() {
            let base = coef * (sum_c[a] - 1.0) - cross_coef * self.mean_k[a];
            let mut best = (a, 0.0);
            for b in 0..self.m {
                if member[b] {
                    continue;
                }
                let gain = coef * (sum_c[b] - self.kv(b, a)) - cross_coef * self.mean_k[b] - base;
                if gain < best.1 {
                    best = (b, gain);
                }
            }
            if best.0 != a && best.1 < -1e-15 {
                let b = best.0;
                member[a] = false;
                member[b] = true;
                core[pos] = b;
                for (p, s) in sum_c.iter_mut().enumerate() {
                    *s += self.kv(p, b) - self.kv(p, a);
                }
            }
        }
        core
    }
}

/// Kernel thinning of `idx` down to `target` points: `rounds` split levels,
/// selection of the best leaf (or a standard-thinning baseline), greedy
/// shrinking when the leaves are larger than `target`, then one swap pass.
pub(crate) fn thin_to(
    x: ArrayView2<'_, f64>,
    idx: &[usize],
    target: usize,
    kernel: &GaussianKernel,
    delta: f64,
    rng: &mut StreamRng,
) -> Vec<usize> {
    let m = idx.len();
    if target >= m {
        return idx.to_vec();
    }
    let mut rounds = 0u32;
    while (m >> (rounds + 1)) >= target && (m >> (rounds + 1)) > 0 {
        rounds += 1;
    }
    let leaves = split_rounds(x, idx, rounds, kernel, delta, rng);
    let state = SwapState::new(x, idx, kernel);
    let pos_of: std::collections::HashMap<usize, usize> = idx.iter().enumerate().map(|(p, &i)| (i, p)).collect();
    let mut candidates: Vec<Vec<usize>> = leaves.iter().map(|l| l.iter().map(|i| pos_of[i]).collect()).collect();
    let leaf_len = candidates[0].len();
    let stride = m / leaf_len.max(1);
    candidates.push((0..leaf_len).map(|i| i * stride).collect());
    let best = candidates
        .into_iter()
        .map(|c| {
            let v = state.objective(&c);
            (c, v)
        })
        .fold((Vec::new(), f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc })
        .0;
    let shrunk = if best.len() > target { state.shrink(best, target) } else { best };
    let refined = state.refine(shrunk);
    let mut out: Vec<usize> = refined.into_iter().map(|p| idx[p]).collect();
    out.sort_unstable();
    out
}

/// One kernel-thinning halving of `points`: returns `floor(m / 2)`
/// duplicate-free row indices.
pub fn kt_halve(points: ArrayView2<'_, f64>, kernel: &GaussianKernel, seed: u64, delta: f64) -> Result<Vec<usize>> {
    let m = points.nrows();
    if m < 2 {
        return Err(CteError::config(format!("halving needs at least 2 points, got {m}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(CteError::config("failure probability must lie in (0, 1)"));
    }
    let idx: Vec<usize> = (0..m).collect();
    let mut rng = substream(seed, "kt-halve", 0);
    Ok(thin_to(points, &idx, m / 2, kernel, delta, &mut rng))
}

/// Kernel thinning of all rows down to `target` points.
pub fn kt_thin(points: ArrayView2<'_, f64>, target: usize, kernel: &GaussianKernel, seed: u64) -> Result<Vec<usize>> {
    let m = points.nrows();
    if target == 0 || target > m {
        return Err(CteError::config(format!("cannot thin {m} points to {target}")));
    }
    let idx: Vec<usize> = (0..m).collect();
    let mut rng = substream(seed, "kt-thin", 0);
    Ok(thin_to(points, &idx, target, kernel, KT_DELTA, &mut rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::iid::iid_indices;
    use crate::metrics::MmdReference;
    use ndarray::{Array2, Axis};
    use rand::seq::SliceRandom;
    use rand_distr::StandardNormal;

    #[test]
    fn halve_identical_pair() {
        let x = Array2::from_elem((2, 3), 0.7);
        let k = GaussianKernel::for_dim(3);
        let out = kt_halve(x.view(), &k, 0, KT_DELTA).unwrap();
        assert_eq!(out.len(), 1);
        assert!(kt_halve(x.slice(ndarray::s![0..1, ..]), &k, 0, KT_DELTA).is_err());
    }

    #[test]
    fn halve_is_deterministic_and_duplicate_free() {
        let x = crate::data::synthetic::gaussian_mixture(101, 2, 3, 4);
        let k = GaussianKernel::for_dim(2);
        let a = kt_halve(x.view(), &k, 9, KT_DELTA).unwrap();
        assert_eq!(a, kt_halve(x.view(), &k, 9, KT_DELTA).unwrap());
        assert_eq!(a.len(), 50);
        let mut s = a.clone();
        s.dedup();
        assert_eq!(s.len(), 50);
    }

    #[test]
    fn split_halves_are_complementary() {
        let x = crate::data::synthetic::gaussian_mixture(64, 2, 2, 1);
        let k = GaussianKernel::for_dim(2);
        let idx: Vec<usize> = (0..64).collect();
        let (a, b) = split_halve(x.view(), &idx, &k, KT_DELTA, &mut substream(0, "t", 0));
        let mut all: Vec<usize> = a.iter().chain(&b).copied().collect();
        all.sort_unstable();
        assert_eq!(all, idx);
    }

    #[test]
    fn refine_never_increases_objective() {
        let x = crate::data::synthetic::gaussian_mixture(128, 3, 2, 2);
        let k = GaussianKernel::for_dim(3);
        let idx: Vec<usize> = (0..128).collect();
        let st = SwapState::new(x.view(), &idx, &k);
        let start: Vec<usize> = (0..32).collect();
        let before = st.objective(&start);
        let after = st.objective(&st.refine(start));
        assert!(after <= before + 1e-15);
    }

    #[test]
    fn halve_beats_median_iid_half() {
        let mut rng = substream(11, "test-normal", 0);
        let x = Array2::from_shape_fn((1024, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let k = GaussianKernel::for_dim(2);
        let reference = MmdReference::new(x.view(), &k).unwrap();
        let kt = kt_halve(x.view(), &k, 0, KT_DELTA).unwrap();
        let kt_mmd = reference.unbiased_to(x.select(Axis(0), &kt).view()).unwrap();
        let mut iid: Vec<f64> = (0..33)
            .map(|s| {
                // i.i.d. halves without replacement
                let mut perm: Vec<usize> = (0..1024).collect();
                perm.shuffle(&mut substream(s, "perm", 0));
                perm.truncate(512);
                reference.unbiased_to(x.select(Axis(0), &perm).view()).unwrap()
            })
            .collect();
        iid.sort_by(f64::total_cmp);
        assert!(kt_mmd < iid[16], "kt {kt_mmd} vs median iid {}", iid[16]);
        let _ = iid_indices(4, 1, 0);
    }
}
