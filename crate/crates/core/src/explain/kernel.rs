use std::collections::HashMap;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::marginal::{background_mean, MaskedBatch};
use super::{check_inputs, ExplainConfig, Sampling};
use crate::error::{CteError, Result};
use crate::linalg::solve_or_ridge;
use crate::models::ModelFunction;
use crate::rng::{substream, StreamRng};

pub(crate) const RIDGE: f64 = 1e-10;
/// Largest dimension for which exhaustive coalition enumeration is allowed.
const MAX_ENUMERATED_FEATURES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelShapResult {
    pub values: Array1<f64>,
    pub base_value: f64,
    /// The regression system was singular and solved with a ridge term.
    pub regularized: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of one coalition of size `s` out of `d` features.
pub fn shapley_kernel_weight(d: usize, s: usize) -> f64 {
    if s == 0 || s >= d {
        return 0.0;
    }
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

/// Weighted coalitions for the regression.
pub(crate) struct Coalitions {
    pub(crate) masks: Vec<Vec<bool>>,
    pub(crate) weights: Vec<f64>,
}

impl Coalitions {
    fn push(&mut self, mask: Vec<bool>, w: f64) {
        self.masks.push(mask);
        self.weights.push(w);
    }
}

pub(crate) fn all_coalitions(d: usize) -> Coalitions {
    let mut c = Coalitions { masks: Vec::new(), weights: Vec::new() };
    for bits in 1..(1u64 << d) - 1 {
        let mask: Vec<bool> = (0..d).map(|j| (bits >> j) & 1 == 1).collect();
        let s = bits.count_ones() as usize;
        c.push(mask, shapley_kernel_weight(d, s));
    }
    c
}

/// Calls `visit` on every subset of `0..d` of size `k`.
fn for_each_combination(d: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + d - k) else { return };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Paired, size-stratified coalition sampling: sizes whose share of the
/// kernel mass covers all their subsets are enumerated, the remaining sizes
/// are sampled with their complements and duplicate draws add weight.
pub(crate) fn sampled_coalitions(d: usize, budget: usize, rng: &mut StreamRng) -> Coalitions {
    let n_sizes = (d - 1).div_ceil(2);
    let n_paired = (d - 1) / 2;
    let mut weight: Vec<f64> = (1..=n_sizes).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    for w in weight.iter_mut().take(n_paired) {
        *w *= 2.0;
    }
    let total: f64 = weight.iter().sum();
    weight.iter_mut().for_each(|w| *w /= total);

    let mut c = Coalitions { masks: Vec::new(), weights: Vec::new() };
    let mut full_sizes = 0;
    let mut left = budget as f64;
    let mut remaining = weight.clone();
    for s in 1..=n_sizes {
        let paired = s <= n_paired;
        let count = binomial(d, s) * if paired { 2.0 } else { 1.0 };
        if left * remaining[s - 1] / count < 1.0 - 1e-8 {
            break;
        }
        full_sizes += 1;
        left -= count;
        if remaining[s - 1] < 1.0 {
            let r = remaining[s - 1];
            remaining.iter_mut().for_each(|w| *w /= 1.0 - r);
        }
        let mut w = weight[s - 1] / binomial(d, s);
        if paired {
            w /= 2.0;
        }
        for_each_combination(d, s, |idx| {
            let mut mask = vec![false; d];
            idx.iter().for_each(|&j| mask[j] = true);
            if paired {
                let comp = mask.iter().map(|m| !m).collect();
                c.push(mask, w);
                c.push(comp, w);
            } else {
                c.push(mask, w);
            }
        });
    }
    let n_fixed = c.masks.len();
    let mut samples_left = budget.saturating_sub(n_fixed);
    if full_sizes < n_sizes && samples_left > 0 {
        let mut probs: Vec<f64> = weight.clone();
        for p in probs.iter_mut().take(n_paired) {
            *p /= 2.0;
        }
        let probs = &probs[full_sizes..];
        let psum: f64 = probs.iter().sum();
        let mut used: HashMap<Vec<bool>, usize> = HashMap::new();
        let mut order: Vec<usize> = (0..d).collect();
        let mut draws = 0;
        while samples_left > 0 && draws < 4 * budget {
            draws += 1;
            let u = rng.random::<f64>() * psum;
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            let s = pick + full_sizes + 1;
            order.shuffle(rng);
            let mut mask = vec![false; d];
            order[..s].iter().for_each(|&j| mask[j] = true);
            let fresh = match used.get(&mask) {
                Some(&pos) => {
                    c.weights[pos] += 1.0;
                    false
                }
                None => {
                    used.insert(mask.clone(), c.masks.len());
                    c.push(mask.clone(), 1.0);
                    samples_left -= 1;
                    true
                }
            };
            if samples_left > 0 && s <= n_paired {
                let comp: Vec<bool> = mask.iter().map(|m| !m).collect();
                if fresh {
                    used.insert(comp.clone(), c.masks.len());
                    c.push(comp, 1.0);
                    samples_left -= 1;
                } else {
                    let pos = used[&comp];
                    c.weights[pos] += 1.0;
                }
            }
        }
        let left_weight: f64 = weight[full_sizes..].iter().sum();
        let sampled: f64 = c.weights[n_fixed..].iter().sum();
        if sampled > 0.0 {
            c.weights[n_fixed..].iter_mut().for_each(|w| *w *= left_weight / sampled);
        }
    }
    c
}

/// Weighted least squares `min sum w (y - z.phi)^2` subject to
/// `sum(phi) = total`, from accumulated normal equations `a = sum w z z^T`,
/// `b = sum w z y`.
pub(crate) fn constrained_solve(a: &Array2<f64>, b: &Array1<f64>, total: f64) -> (Array1<f64>, bool) {
    let d = b.len();
    let ones = Array1::ones(d);
    let (ainv_b, r1) = solve_or_ridge(a, b, RIDGE);
    let (ainv_1, r2) = solve_or_ridge(a, &ones, RIDGE);
    let denom = ainv_1.sum();
    if denom.abs() < f64::MIN_POSITIVE {
        return (Array1::from_elem(d, total / d as f64), true);
    }
    let lambda = (ainv_b.sum() - total) / denom;
    (ainv_b - &(ainv_1 * lambda), r1 || r2)
}

pub(crate) fn accumulate(a: &mut Array2<f64>, b: &mut Array1<f64>, mask: &[bool], w: f64, y: f64) {
    let on: Vec<usize> = (0..mask.len()).filter(|&j| mask[j]).collect();
    for &i in &on {
        b[i] += w * y;
        for &j in &on {
            a[[i, j]] += w;
        }
    }
}

pub(crate) fn kernel_shap_indexed<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
    index: u64,
) -> Result<KernelShapResult> {
    let d = x.len();
    let v_empty = background_mean(f, background);
    let v_full = f.eval_unchecked(x.insert_axis(Axis(0)))[0];
    let total = v_full - v_empty;
    if d == 1 {
        return Ok(KernelShapResult { values: Array1::from_elem(1, total), base_value: v_empty, regularized: false });
    }
    let enumerate = match config.sampling {
        Sampling::Exhaustive => true,
        Sampling::Random => d < 63 && (1u64 << d) - 2 <= config.shap_nsamples as u64,
    };
    let coalitions = if enumerate {
        if d > MAX_ENUMERATED_FEATURES {
            return Err(CteError::config(format!("refusing to enumerate 2^{d} coalitions")));
        }
        all_coalitions(d)
    } else {
        let mut rng = substream(config.seed, "kernel-shap", index);
        sampled_coalitions(d, config.shap_nsamples, &mut rng)
    };
    let mut a = Array2::zeros((d, d));
    let mut b = Array1::zeros(d);
    let mut batch = MaskedBatch::new(background);
    for (mask, &w) in coalitions.masks.iter().zip(&coalitions.weights) {
        batch.apply(x, mask);
        let y = batch.mean_output(f) - v_empty;
        accumulate(&mut a, &mut b, mask, w, y);
    }
    let (values, regularized) = constrained_solve(&a, &b, total);
    Ok(KernelShapResult { values, base_value: v_empty, regularized })
}

/// Kernel SHAP: Shapley-kernel weighted regression of coalition values,
/// constrained so attributions sum to `f(x) - E[f]`.
pub fn kernel_shap<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<KernelShapResult> {
    check_inputs(f, x.insert_axis(Axis(0)), background)?;
    config.validate()?;
    if config.sampling == Sampling::Random && config.shap_nsamples < x.len() + 2 {
        let full = x.len() < 63 && (1u64 << x.len()) - 2 <= config.shap_nsamples as u64;
        if !full {
            return Err(CteError::config(format!("shap_nsamples must be at least d + 2 = {}", x.len() + 2)));
        }
    }
    kernel_shap_indexed(f, x, background, config, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::exact_shap;
    use crate::models::FnModel;
    use ndarray::array;

    #[test]
    fn full_enumeration_matches_exact() {
        let f = FnModel::new(5, |r| (r[0] * r[1] - r[4]).tanh() + r[2].max(0.0) * r[3]);
        let bg = Array2::from_shape_fn((6, 5), |(i, j)| ((2 * i + 3 * j) % 5) as f64 / 2.0 - 1.0);
        let x = array![0.5, -1.2, 0.8, 1.5, 0.1];
        let exact = exact_shap(&f, x.view(), bg.view()).unwrap();
        let got = kernel_shap(&f, x.view(), bg.view(), &ExplainConfig::default()).unwrap();
        assert!(!got.regularized);
        assert!((&exact - &got.values).iter().all(|v| v.abs() < 1e-10), "{exact} vs {}", got.values);
    }

    #[test]
    fn symmetric_features_get_equal_values() {
        let f = FnModel::new(3, |r| r[0] + r[1]);
        let bg = array![[0.0, 0.0, 5.0], [1.0, 1.0, 2.0], [3.0, 3.0, -1.0]];
        let phi = kernel_shap(&f, array![2.0, 2.0, 0.0].view(), bg.view(), &ExplainConfig::default()).unwrap();
        assert!((phi.values[0] - phi.values[1]).abs() < 1e-8);
        assert!(phi.values[2].abs() < 1e-8);
        let c = FnModel::new(3, |_| 7.0);
        let z = kernel_shap(&c, array![2.0, 2.0, 0.0].view(), bg.view(), &ExplainConfig::default()).unwrap();
        assert!(z.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn sampled_coalitions_respect_budget_and_mass() {
        let mut rng = substream(0, "t", 0);
        let c = sampled_coalitions(14, 500, &mut rng);
        assert!(c.masks.len() <= 500);
        let total: f64 = c.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-9, "{total}");
        assert!(c.masks.iter().all(|m| m.iter().any(|&v| v) && m.iter().any(|&v| !v)));
    }

    #[test]
    fn sampled_estimate_keeps_efficiency() {
        let d = 14;
        let f = FnModel::new(d, |r| r.iter().enumerate().map(|(j, v)| (j as f64 + 1.0) * v.sin()).sum());
        let bg = Array2::from_shape_fn((4, d), |(i, j)| ((i + j) % 3) as f64 - 1.0);
        let x = Array1::from_shape_fn(d, |j| j as f64 / 7.0);
        let r = kernel_shap(&f, x.view(), bg.view(), &ExplainConfig::default()).unwrap();
        let fx = f.eval(x.view().insert_axis(Axis(0))).unwrap()[0];
        assert!((r.values.sum() - (fx - r.base_value)).abs() < 1e-9);
        // additive model: every coalition fits exactly, so sampling is exact
        let exact_like: Vec<f64> =
            (0..d).map(|j| (j as f64 + 1.0) * (x[j].sin() - bg.column(j).mapv(f64::sin).mean().unwrap())).collect();
        for (v, e) in r.values.iter().zip(&exact_like) {
            assert!((v - e).abs() < 1e-8);
        }
    }
}
