use ndarray::{Array1, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use super::marginal::{background_mean, MaskedBatch};
use super::{check_inputs, ExplainConfig, Sampling};
use crate::error::{CteError, Result};
use crate::models::ModelFunction;
use crate::rng::substream;

/// Largest dimension for which every permutation is enumerated.
pub(crate) const MAX_EXHAUSTIVE_PERMUTATION_FEATURES: usize = 9;

/// Calls `visit` on every permutation of `0..d` in lexicographic order.
pub(crate) fn for_each_permutation(d: usize, mut visit: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..d).collect();
    loop {
        visit(&p);
        // next lexicographic permutation
        let Some(i) = (1..d).rev().find(|&i| p[i - 1] < p[i]) else { return };
        let j = (i..d).rev().find(|&j| p[j] > p[i - 1]).expect("successor exists");
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Adds the marginal contributions along `order` (features added one at a
/// time, starting from the empty coalition) into `phi`.
fn forward_sweep<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    batch: &mut MaskedBatch<'_>,
    order: &[usize],
    v_empty: f64,
    v_full: f64,
    phi: &mut Array1<f64>,
) {
    let d = order.len();
    let mut prev = v_empty;
    for (k, &j) in order.iter().enumerate() {
        batch.set(j, x[j]);
        let val = if k + 1 == d { v_full } else { batch.mean_output(f) };
        phi[j] += val - prev;
        prev = val;
    }
}

/// Removes features in `order` starting from the full coalition; the
/// contribution of each is the drop its removal causes.
fn backward_sweep<M: ModelFunction + ?Sized>(
    f: &M,
    batch: &mut MaskedBatch<'_>,
    order: &[usize],
    v_empty: f64,
    v_full: f64,
    phi: &mut Array1<f64>,
) {
    let d = order.len();
    let mut prev = v_full;
    for (k, &j) in order.iter().enumerate() {
        batch.unset(j);
        let val = if k + 1 == d { v_empty } else { batch.mean_output(f) };
        phi[j] += prev - val;
        prev = val;
    }
}

pub(crate) fn permutation_shap_indexed<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
    index: u64,
) -> Result<Array1<f64>> {
    let d = x.len();
    let v_empty = background_mean(f, background);
    let v_full = f.eval_unchecked(x.insert_axis(Axis(0)))[0];
    let mut phi = Array1::zeros(d);
    let mut batch = MaskedBatch::new(background);
    match config.sampling {
        Sampling::Exhaustive => {
            if d > MAX_EXHAUSTIVE_PERMUTATION_FEATURES {
                return Err(CteError::config(format!(
                    "enumerating all {d}! permutations is refused above d = {MAX_EXHAUSTIVE_PERMUTATION_FEATURES}"
                )));
            }
            let mut count = 0usize;
            for_each_permutation(d, |order| {
                forward_sweep(f, x, &mut batch, order, v_empty, v_full, &mut phi);
                for &j in order {
                    batch.unset(j);
                }
                count += 1;
            });
            phi /= count as f64;
        }
        Sampling::Random => {
            let mut rng = substream(config.seed, "permutation-shap", index);
            let mut order: Vec<usize> = (0..d).collect();
            for _ in 0..config.npermutations {
                order.shuffle(&mut rng);
                forward_sweep(f, x, &mut batch, &order, v_empty, v_full, &mut phi);
                backward_sweep(f, &mut batch, &order, v_empty, v_full, &mut phi);
            }
            phi /= (2 * config.npermutations) as f64;
        }
    }
    Ok(phi)
}

/// Monte Carlo Shapley values from antithetic permutation sweeps: each
/// sampled order is walked forwards (adding features) and backwards
/// (removing them in the same order).
pub fn permutation_shap<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<Array1<f64>> {
    check_inputs(f, x.insert_axis(Axis(0)), background)?;
    config.validate()?;
    permutation_shap_indexed(f, x, background, config, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::exact_shap;
    use crate::models::{FnModel, LinearModel};
    use ndarray::{array, Array2};

    #[test]
    fn permutations_are_enumerated() {
        let mut seen = Vec::new();
        for_each_permutation(3, |p| seen.push(p.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[5], vec![2, 1, 0]);
        let mut n = 0;
        for_each_permutation(1, |_| n += 1);
        assert_eq!(n, 1);
    }

    #[test]
    fn exhaustive_matches_exact() {
        let f = FnModel::new(4, |r| (r[0] * r[1]).tanh() + r[2].max(0.0) * r[3] - 0.3 * r[1] * r[2] * r[3]);
        let bg = Array2::from_shape_fn((7, 4), |(i, j)| ((3 * i + j * j) % 7) as f64 / 3.0 - 1.0);
        let x = array![0.5, -1.2, 0.8, 1.5];
        let exact = exact_shap(&f, x.view(), bg.view()).unwrap();
        let cfg = ExplainConfig::default().exhaustive();
        let perm = permutation_shap(&f, x.view(), bg.view(), &cfg).unwrap();
        assert!((&exact - &perm).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn linear_is_exact_with_one_permutation() {
        let w = array![2.0, -1.0, 0.5];
        let f = LinearModel { weights: w.clone(), bias: 0.0 };
        let bg = Array2::from_shape_fn((4, 3), |(i, j)| (i + j) as f64);
        let x = array![1.0, 1.0, 1.0];
        let cfg = ExplainConfig { npermutations: 1, seed: 9, ..Default::default() };
        let phi = permutation_shap(&f, x.view(), bg.view(), &cfg).unwrap();
        let mu = bg.mean_axis(Axis(0)).unwrap();
        for j in 0..3 {
            assert!((phi[j] - w[j] * (x[j] - mu[j])).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_model_is_zero_and_efficiency_holds() {
        let c = FnModel::new(3, |_| 1.0);
        let bg = Array2::from_shape_fn((3, 3), |(i, j)| (i * j) as f64);
        let phi = permutation_shap(&c, array![1.0, 2.0, 3.0].view(), bg.view(), &ExplainConfig::default()).unwrap();
        assert!(phi.iter().all(|v| v.abs() < 1e-15));
        let f = FnModel::new(3, |r| r[0] * r[1] + r[2].sin());
        let x = array![1.0, 2.0, 3.0];
        let phi = permutation_shap(&f, x.view(), bg.view(), &ExplainConfig::default()).unwrap();
        let fx = f.eval(x.view().insert_axis(Axis(0))).unwrap()[0];
        assert!((phi.sum() - (fx - background_mean(&f, bg.view()))).abs() < 1e-12);
    }
}
