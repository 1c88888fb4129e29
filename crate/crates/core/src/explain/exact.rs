use ndarray::{Array1, ArrayView1, ArrayView2};

use super::marginal::MaskedBatch;
use crate::error::{CteError, Result};
use crate::models::ModelFunction;

/// Largest dimension for which coalitions are enumerated.
pub const MAX_EXACT_FEATURES: usize = 12;

/// Shapley values of a game given by its value on every coalition, where
/// `values[bits]` is the value of the coalition encoded by `bits`.
pub fn shapley_from_game(d: usize, values: &[f64]) -> Result<Array1<f64>> {
    if d > MAX_EXACT_FEATURES + 8 || values.len() != 1usize << d {
        return Err(CteError::shape(format!("expected 2^{d} coalition values, got {}", values.len())));
    }
    let mut fact = vec![1.0f64; d + 1];
    for i in 1..=d {
        fact[i] = fact[i - 1] * i as f64;
    }
    let weight: Vec<f64> = (0..d).map(|s| fact[s] * fact[d - s - 1] / fact[d]).collect();
    let mut phi = Array1::zeros(d);
    for bits in 0..values.len() {
        let size = (bits as u64).count_ones() as usize;
        for j in 0..d {
            if (bits >> j) & 1 == 0 {
                phi[j] += weight[size] * (values[bits | 1 << j] - values[bits]);
            }
        }
    }
    Ok(phi)
}

/// Value of every coalition, indexed by bit pattern.
pub(crate) fn coalition_values<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
) -> Vec<f64> {
    let d = x.len();
    let mut values = vec![0.0; 1 << d];
    let mut batch = MaskedBatch::new(background);
    // Gray-code order changes one column per step
    for i in 0..1usize << d {
        let g = i ^ (i >> 1);
        let mask: Vec<bool> = (0..d).map(|j| (g >> j) & 1 == 1).collect();
        batch.apply(x, &mask);
        values[g] = batch.mean_output(f);
    }
    values
}

pub(crate) fn exact_shap_unchecked<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    let d = x.len();
    if d > MAX_EXACT_FEATURES {
        return Err(CteError::config(format!(
            "exact Shapley values enumerate 2^d coalitions; refusing d = {d} > {MAX_EXACT_FEATURES}"
        )));
    }
    shapley_from_game(d, &coalition_values(f, x, background))
}

/// Brute-force Shapley values of the marginalization game at `x`.
pub fn exact_shap<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    background: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    super::check_inputs(f, x.insert_axis(ndarray::Axis(0)), background)?;
    exact_shap_unchecked(f, x, background)
}
