use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CteError, Result};
use crate::models::{ModelFunction, Predictor};

/// A set of observed feature indices; the complement is marginalized.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureSubset {
    mask: Vec<bool>,
}

impl FeatureSubset {
    pub fn empty(d: usize) -> Self {
        FeatureSubset { mask: vec![false; d] }
    }

    pub fn full(d: usize) -> Self {
        FeatureSubset { mask: vec![true; d] }
    }

    pub fn from_indices(d: usize, indices: &[usize]) -> Result<Self> {
        let mut mask = vec![false; d];
        for &j in indices {
            if j >= d {
                return Err(CteError::Bounds { index: j, len: d });
            }
            mask[j] = true;
        }
        Ok(FeatureSubset { mask })
    }

    pub fn from_mask(mask: Vec<bool>) -> Self {
        FeatureSubset { mask }
    }

    /// Subset encoded by the low `d` bits of `bits`.
    pub fn from_bits(d: usize, bits: u64) -> Self {
        FeatureSubset { mask: (0..d).map(|j| (bits >> j) & 1 == 1).collect() }
    }

    pub fn dim(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.mask.get(j).copied().unwrap_or(false)
    }

    pub fn len(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn indices(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&j| self.mask[j]).collect()
    }

    pub fn complement(&self) -> Self {
        FeatureSubset { mask: self.mask.iter().map(|m| !m).collect() }
    }
}

/// Background rows with a subset of columns overwritten by an instance.
/// Columns are swapped in and out incrementally, so a sweep that adds one
/// feature at a time touches one column per step.
pub(crate) struct MaskedBatch<'a> {
    background: ArrayView2<'a, f64>,
    buf: Array2<f64>,
    present: Vec<bool>,
}

impl<'a> MaskedBatch<'a> {
    pub(crate) fn new(background: ArrayView2<'a, f64>) -> Self {
        MaskedBatch { background, buf: background.to_owned(), present: vec![false; background.ncols()] }
    }

    pub(crate) fn set(&mut self, j: usize, value: f64) {
        self.buf.column_mut(j).fill(value);
        self.present[j] = true;
    }

    pub(crate) fn unset(&mut self, j: usize) {
        if self.present[j] {
            self.buf.column_mut(j).assign(&self.background.column(j));
            self.present[j] = false;
        }
    }

    pub(crate) fn apply(&mut self, x: ArrayView1<'_, f64>, mask: &[bool]) {
        for (j, &m) in mask.iter().enumerate() {
            if m {
                if !self.present[j] || self.buf[[0, j]] != x[j] {
                    self.set(j, x[j]);
                }
            } else {
                self.unset(j);
            }
        }
    }

    /// Mean explained output over the batch.
    pub(crate) fn mean_output<M: ModelFunction + ?Sized>(&self, f: &M) -> f64 {
        mean(&f.eval_unchecked(self.buf.view()))
    }

    /// Mean output vector over the batch.
    pub(crate) fn mean_prediction<P: Predictor + ?Sized>(&self, p: &P) -> Array1<f64> {
        let out = p.predict_unchecked(self.buf.view());
        mean_rows(&out)
    }
}

pub(crate) fn mean(v: &Array1<f64>) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub(crate) fn mean_rows(m: &Array2<f64>) -> Array1<f64> {
    let mut acc = Array1::zeros(m.ncols());
    for row in m.rows() {
        acc += &row;
    }
    acc / m.nrows() as f64
}

pub(crate) fn background_mean<M: ModelFunction + ?Sized>(f: &M, background: ArrayView2<'_, f64>) -> f64 {
    mean(&f.eval_unchecked(background))
}

/// Explained output at `x` with the features outside `s` averaged over the
/// background rows.
pub fn marginalize<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView1<'_, f64>,
    s: &FeatureSubset,
    background: ArrayView2<'_, f64>,
) -> Result<f64> {
    if background.nrows() == 0 {
        return Err(CteError::config("background must contain at least one row"));
    }
    let d = f.n_inputs();
    if x.len() != d || background.ncols() != d || s.dim() != d {
        return Err(CteError::shape(format!("model takes {d} features")));
    }
    let mut batch = MaskedBatch::new(background);
    batch.apply(x, s.mask());
    Ok(batch.mean_output(f))
}
