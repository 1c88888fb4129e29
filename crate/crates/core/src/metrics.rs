//! Distribution discrepancies between a dataset and a coreset, and error
//! measures between two explanations.

use ndarray::{ArrayView, ArrayView1, ArrayView2, Dimension};
use serde::{Deserialize, Serialize};

use crate::error::{CteError, Result};
use crate::kernels::{sq_dist, GaussianKernel};
use crate::parallel::Exec;

pub const DEFAULT_BINS: usize = 32;
pub const KL_EPS: f64 = 1e-10;
pub const SINKHORN_TOL: f64 = 1e-6;
pub const SINKHORN_MAX_ITER: usize = 20000;
/// Iteration cap of each intermediate annealing stage.
const SINKHORN_STAGE_ITER: usize = 20;
/// Factor between successive regularisation levels.
const SINKHORN_SCALING: f64 = 0.5;
/// Entropic regularisation relative to the median pooled pairwise distance.
pub const SINKHORN_EPS_FRACTION: f64 = 0.002;
const MEDIAN_SAMPLE_CAP: usize = 2000;

fn check_dims(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<()> {
    if x.ncols() != y.ncols() {
        return Err(CteError::shape(format!("samples of dimension {} and {}", x.ncols(), y.ncols())));
    }
    Ok(())
}

/// Sum of `f(k(a_i, b_j))` over all pairs, optionally excluding `i == j`.
fn pair_sum(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    skip_diagonal: bool,
    exec: Exec,
    f: impl Fn(f64) -> f64 + Sync + Send,
) -> f64 {
    exec.map(a.nrows(), |i| {
        let ai = a.row(i);
        let mut s = 0.0;
        for (j, bj) in b.rows().into_iter().enumerate() {
            if skip_diagonal && i == j {
                continue;
            }
            s += f(sq_dist(ai, bj));
        }
        s
    })
    .into_iter()
    .sum()
}

/// Unbiased (U-statistic) estimate of squared MMD; may be negative.
pub fn mmd_unbiased(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, kernel: &GaussianKernel) -> Result<f64> {
    MmdReference::new(x, kernel)?.unbiased_to(y)
}

/// A reference sample with its within-sample kernel mean cached, for
/// comparing many candidate samples against the same data.
#[derive(Debug, Clone)]
pub struct MmdReference<'a> {
    x: ArrayView2<'a, f64>,
    kernel: GaussianKernel,
    self_mean: f64,
    exec: Exec,
}

impl<'a> MmdReference<'a> {
    pub fn new(x: ArrayView2<'a, f64>, kernel: &GaussianKernel) -> Result<Self> {
        Self::with_exec(x, kernel, Exec::default())
    }

    pub fn with_exec(x: ArrayView2<'a, f64>, kernel: &GaussianKernel, exec: Exec) -> Result<Self> {
        let m = x.nrows();
        if m < 2 {
            return Err(CteError::config("unbiased MMD needs at least 2 reference points"));
        }
        let k = *kernel;
        let s = pair_sum(x, x, true, exec, |d2| k.from_sq_dist(d2));
        Ok(MmdReference { x, kernel: k, self_mean: s / (m * (m - 1)) as f64, exec })
    }

    pub fn unbiased_to(&self, y: ArrayView2<'_, f64>) -> Result<f64> {
        check_dims(self.x, y)?;
        let l = y.nrows();
        if l < 2 {
            return Err(CteError::config("unbiased MMD needs at least 2 points per sample"));
        }
        let k = self.kernel;
        let yy = pair_sum(y, y, true, self.exec, |d2| k.from_sq_dist(d2)) / (l * (l - 1)) as f64;
        let xy = pair_sum(self.x, y, false, self.exec, |d2| k.from_sq_dist(d2)) / (self.x.nrows() * l) as f64;
        Ok(self.self_mean + yy - 2.0 * xy)
    }
}

/// Squared L2 distance between the Gaussian kernel density estimates of the
/// two samples, in closed form: a V-statistic with the self-convolved kernel
/// `(4 pi sigma^2)^(-d/2) exp(-|x - y|^2 / (4 sigma^2))`.
pub fn mmd_biased_sq(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, kernel: &GaussianKernel) -> Result<f64> {
    check_dims(x, y)?;
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(CteError::config("biased MMD needs non-empty samples"));
    }
    let d = x.ncols() as f64;
    let s2 = kernel.sigma() * kernel.sigma();
    let norm = (4.0 * std::f64::consts::PI * s2).powf(-d / 2.0);
    let conv = move |d2: f64| norm * (-d2 / (4.0 * s2)).exp();
    let exec = Exec::default();
    let (m, l) = (x.nrows() as f64, y.nrows() as f64);
    let xx = pair_sum(x, x, false, exec, conv) / (m * m);
    let yy = pair_sum(y, y, false, exec, conv) / (l * l);
    let xy = pair_sum(x, y, false, exec, conv) / (m * l);
    Ok((xx + yy - 2.0 * xy).max(0.0))
}

fn mean_of_top3(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| b.total_cmp(a));
    let k = v.len().min(3);
    v[..k].iter().sum::<f64>() / k as f64
}

/// Per-feature histogram TV and KL, averaged over the three largest
/// features. Histograms share the range of `x` (the reference); values of
/// `y` outside it clamp to the edge bins.
pub fn tv_kl_top3(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, bins: usize, eps: f64) -> Result<(f64, f64)> {
    check_dims(x, y)?;
    if bins < 2 {
        return Err(CteError::config("need at least 2 histogram bins"));
    }
    if x.nrows() == 0 || y.nrows() == 0 || x.ncols() == 0 {
        return Err(CteError::config("empty sample"));
    }
    let mut tvs = Vec::with_capacity(x.ncols());
    let mut kls = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi <= lo {
            tvs.push(0.0);
            kls.push(0.0);
            continue;
        }
        let hist = |c: ArrayView1<'_, f64>| {
            let mut h = vec![0.0; bins];
            for &v in c {
                let b = ((v - lo) / (hi - lo) * bins as f64).floor();
                h[(b.max(0.0) as usize).min(bins - 1)] += 1.0;
            }
            let n = c.len() as f64;
            h.iter_mut().for_each(|v| *v /= n);
            h
        };
        let (p, q) = (hist(col), hist(y.column(j)));
        tvs.push(0.5 * p.iter().zip(&q).map(|(a, b)| (a - b).abs()).sum::<f64>());
        kls.push(
            p.iter().zip(&q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / (b + eps)).ln()).sum::<f64>().max(0.0),
        );
    }
    Ok((mean_of_top3(tvs), mean_of_top3(kls)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornResult {
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
}

fn log_sum_exp(vals: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = vals.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn cost_matrix(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Vec<Vec<f64>> {
    Exec::default().map(a.nrows(), |i| b.rows().into_iter().map(|r| sq_dist(a.row(i), r).sqrt()).collect())
}

/// Entropic OT cost `<a, f> + <b, g>` from log-domain Sinkhorn iterations,
/// annealing the regularisation from the cost diameter down to `eps` and
/// warm-starting each stage.
fn entropic_ot(c: &[Vec<f64>], eps: f64, symmetric: bool) -> (f64, bool, usize) {
    let (m, l) = (c.len(), c[0].len());
    let (log_a, log_b) = (-(m as f64).ln(), -(l as f64).ln());
    let diameter = c.iter().flatten().copied().fold(0.0, f64::max);
    let mut stages = Vec::new();
    let mut e = diameter.max(eps);
    while e > eps {
        stages.push(e);
        e *= SINKHORN_SCALING;
    }
    stages.push(eps);

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; l];
    let exec = Exec::default();
    let mut total = 0;
    let last = stages.len() - 1;
    for (stage, &eps) in stages.iter().enumerate() {
        let budget = if stage == last { SINKHORN_MAX_ITER } else { SINKHORN_STAGE_ITER };
        for _ in 0..budget {
            total += 1;
            let f_new: Vec<f64> = exec.map(m, |i| -eps * log_sum_exp((0..l).map(|j| log_b + (g[j] - c[i][j]) / eps)));
            let g_new: Vec<f64> = if symmetric {
                // averaged fixed-point update; f and g coincide
                f_new.iter().zip(&f).map(|(a, b)| 0.5 * (a + b)).collect()
            } else {
                exec.map(l, |j| -eps * log_sum_exp((0..m).map(|i| log_a + (f_new[i] - c[i][j]) / eps)))
            };
            let delta = if symmetric {
                g_new.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            } else {
                f_new.iter().zip(&f).chain(g_new.iter().zip(&g)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            if symmetric {
                f = g_new.clone();
                g = g_new;
            } else {
                f = f_new;
                g = g_new;
            }
            if delta < SINKHORN_TOL * eps.max(1.0) {
                if stage == last {
                    let v = f.iter().sum::<f64>() / m as f64 + g.iter().sum::<f64>() / l as f64;
                    return (v, true, total);
                }
                break;
            }
        }
    }
    let v = f.iter().sum::<f64>() / m as f64 + g.iter().sum::<f64>() / l as f64;
    (v, false, total)
}

fn median_pairwise_distance(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
    let pooled: Vec<ArrayView1<'_, f64>> = x.rows().into_iter().chain(y.rows()).collect();
    let stride = pooled.len().div_ceil(MEDIAN_SAMPLE_CAP).max(1);
    let pts: Vec<_> = pooled.into_iter().step_by(stride).collect();
    let mut d = Vec::with_capacity(pts.len() * pts.len() / 2);
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            d.push(sq_dist(pts[i], pts[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 0.0;
    }
    let mid = d.len() / 2;
    let (_, m, _) = d.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Debiased entropic Wasserstein-1 (Sinkhorn divergence) between the
/// uniform empirical measures of `x` and `y`.
pub fn wasserstein(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> Result<SinkhornResult> {
    check_dims(x, y)?;
    if x.nrows() == 0 || y.nrows() == 0 {
        return Err(CteError::config("Wasserstein distance needs non-empty samples"));
    }
    let eps = SINKHORN_EPS_FRACTION * median_pairwise_distance(x, y);
    if eps <= 0.0 {
        // every pooled point coincides
        return Ok(SinkhornResult { value: 0.0, converged: true, iterations: 0 });
    }
    let (xy, c1, i1) = entropic_ot(&cost_matrix(x, y), eps, false);
    let (xx, c2, i2) = entropic_ot(&cost_matrix(x, x), eps, true);
    let (yy, c3, i3) = entropic_ot(&cost_matrix(y, y), eps, true);
    Ok(SinkhornResult {
        value: (xy - 0.5 * xx - 0.5 * yy).max(0.0),
        converged: c1 && c2 && c3,
        iterations: i1.max(i2).max(i3),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscrepancyReport {
    pub mmd_unbiased: f64,
    pub mmd_biased_sq: f64,
    pub tv_top3: f64,
    pub kl_top3: f64,
    pub wasserstein: f64,
    pub wasserstein_converged: bool,
}

/// All discrepancy families between a dataset `x` and a sample `y`.
pub fn discrepancy_report(
    x: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
    kernel: &GaussianKernel,
    bins: usize,
) -> Result<DiscrepancyReport> {
    let (tv, kl) = tv_kl_top3(x, y, bins, KL_EPS)?;
    let w = wasserstein(x, y)?;
    Ok(DiscrepancyReport {
        mmd_unbiased: mmd_unbiased(x, y, kernel)?,
        mmd_biased_sq: mmd_biased_sq(x, y, kernel)?,
        tv_top3: tv,
        kl_top3: kl,
        wasserstein: w.value,
        wasserstein_converged: w.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub mae: f64,
    pub topk_precision: Option<f64>,
    pub k: usize,
}

/// Mean absolute elementwise difference of two equally shaped arrays.
pub fn mae<D: Dimension>(a: ArrayView<'_, f64, D>, b: ArrayView<'_, f64, D>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(CteError::shape(format!("MAE of shapes {:?} and {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(CteError::shape("MAE of empty arrays"));
    }
    Ok(a.iter().zip(b.iter()).map(|(u, v)| (u - v).abs()).sum::<f64>() / a.len() as f64)
}

/// Indices of the `k` largest absolute values, ties to the lower index.
pub fn topk_indices(v: ArrayView1<'_, f64>, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].abs().total_cmp(&v[i].abs()).then(i.cmp(&j)));
    idx.truncate(k);
    idx
}

pub fn topk_precision(estimate: ArrayView1<'_, f64>, truth: ArrayView1<'_, f64>, k: usize) -> Result<f64> {
    if estimate.len() != truth.len() {
        return Err(CteError::shape("top-k vectors differ in length"));
    }
    if k == 0 || k > truth.len() {
        return Err(CteError::config(format!("top-k with k={k} for {} features", truth.len())));
    }
    let a = topk_indices(estimate, k);
    let b = topk_indices(truth, k);
    Ok(a.iter().filter(|i| b.contains(i)).count() as f64 / k as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array1, Array2};

    #[test]
    fn unbiased_mmd_hand_value() {
        let x = array![[0.0], [1.0]];
        let k = GaussianKernel::new(1.0).unwrap();
        let v = mmd_unbiased(x.view(), x.view(), &k).unwrap();
        let e = (-0.5f64).exp();
        assert!((v - (2.0 * e - 0.5 * (2.0 + 2.0 * e))).abs() < 1e-12);
        assert!((v + 0.39347).abs() < 1e-5);
    }

    #[test]
    fn unbiased_mmd_needs_two_points() {
        let k = GaussianKernel::new(1.0).unwrap();
        assert!(mmd_unbiased(array![[0.0]].view(), array![[0.0], [1.0]].view(), &k).is_err());
        assert!(mmd_unbiased(array![[0.0], [1.0]].view(), array![[0.0]].view(), &k).is_err());
    }

    #[test]
    fn far_samples_lose_cross_term() {
        let k = GaussianKernel::new(1.0).unwrap();
        let x = array![[0.0], [0.5], [1.0]];
        let y = &x + 100.0;
        let v = mmd_unbiased(x.view(), y.view(), &k).unwrap();
        let within = (2.0 * (-0.125f64).exp() + 2.0 * (-0.125f64).exp() + 2.0 * (-0.5f64).exp()) / 6.0;
        assert!((v - 2.0 * within).abs() < 1e-12);
    }

    #[test]
    fn biased_mmd_zero_on_identical_and_duplication_invariant() {
        let k = GaussianKernel::new(0.7).unwrap();
        let x = array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]];
        let y = array![[1.0, 1.0], [0.0, 0.0]];
        assert!(mmd_biased_sq(x.view(), x.view(), &k).unwrap() < 1e-15);
        let v = mmd_biased_sq(x.view(), y.view(), &k).unwrap();
        let x2 = ndarray::concatenate![ndarray::Axis(0), x, x];
        let y2 = ndarray::concatenate![ndarray::Axis(0), y, y];
        let v2 = mmd_biased_sq(x2.view(), y2.view(), &k).unwrap();
        assert!((v - v2).abs() < 1e-14);
        assert!((v - mmd_biased_sq(y.view(), x.view(), &k).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn tv_kl_zero_on_identical() {
        let x = array![[0.0, 3.0], [0.1, 2.0], [0.9, 1.0], [1.0, 0.0]];
        assert_eq!(tv_kl_top3(x.view(), x.view(), 32, KL_EPS).unwrap(), (0.0, 0.0));
    }

    #[test]
    fn tv_disjoint_support_is_one() {
        let x = array![[0.0], [0.0], [1.0], [1.0]];
        let y = array![[0.5], [0.5]];
        let (tv, kl) = tv_kl_top3(x.view(), y.view(), 3, KL_EPS).unwrap();
        assert!((tv - 1.0).abs() < 1e-12);
        assert!(kl > 20.0);
    }

    #[test]
    fn constant_reference_column_contributes_zero() {
        let x = array![[2.0], [2.0]];
        let y = array![[0.0], [5.0]];
        assert_eq!(tv_kl_top3(x.view(), y.view(), 4, KL_EPS).unwrap(), (0.0, 0.0));
        assert!(tv_kl_top3(x.view(), y.view(), 1, KL_EPS).is_err());
    }

    #[test]
    fn top3_rule_averages_three_largest() {
        // one perturbed column out of five
        let mut x = Array2::<f64>::zeros((10, 5));
        for i in 0..10 {
            for j in 0..5 {
                x[[i, j]] = i as f64;
            }
        }
        let mut y = x.clone();
        // move 4 of 10 points of column 2 from low bins to the top bin
        for i in 0..4 {
            y[[i, 2]] = 9.0;
        }
        let (tv, _) = tv_kl_top3(x.view(), y.view(), 10, KL_EPS).unwrap();
        assert!((tv - 0.4 / 3.0).abs() < 1e-12, "{tv}");
    }

    #[test]
    fn wasserstein_identical_is_zero() {
        let x = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 3 + j) as f64).sin());
        let w = wasserstein(x.view(), x.view()).unwrap();
        assert!(w.value < 1e-6, "{w:?}");
        assert!(w.converged);
    }

    #[test]
    fn mae_and_topk_basics() {
        assert_eq!(mae(array![1.0, 2.0].view(), array![0.0, 4.0].view()).unwrap(), 1.5);
        assert!(mae(array![1.0].view(), array![1.0, 2.0].view()).is_err());
        let truth = Array1::from(vec![10.0, 9.0, 8.0, 7.0, 6.0, 0.1, 0.1, 0.1, 0.1, 0.2]);
        let est = Array1::from(vec![10.0, 9.0, 8.0, 7.0, 0.0, 0.1, 0.1, 0.1, 0.1, 5.0]);
        assert_eq!(topk_precision(est.view(), truth.view(), 5).unwrap(), 0.8);
        assert_eq!(topk_precision(truth.view(), truth.view(), 5).unwrap(), 1.0);
        assert_eq!(topk_precision(est.view(), truth.view(), 10).unwrap(), 1.0);
        assert!(topk_precision(est.view(), truth.view(), 11).is_err());
    }

    #[test]
    fn topk_ties_prefer_lower_index() {
        assert_eq!(topk_indices(array![1.0, 2.0, 2.0, -2.0].view(), 2), vec![1, 2]);
    }
}
