use ndarray::{s, Array1, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CteError, Result};
use crate::explain::{marginalize, FeatureSubset};
use crate::kernels::GaussianKernel;
use crate::metrics::mmd_biased_sq;
use crate::models::{Head, MlpModel, ModelFunction};
use crate::rng::substream;

pub const BOUND_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    Marginalization,
    Global,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRecord {
    pub kind: BoundKind,
    pub draw: usize,
    /// Marginalized feature, for local draws.
    pub feature: Option<usize>,
    pub lhs: f64,
    pub rhs: f64,
    /// `C_f` or `C_g`.
    pub constant: f64,
    pub satisfied: bool,
}

impl BoundRecord {
    fn new(kind: BoundKind, draw: usize, feature: Option<usize>, lhs: f64, rhs: f64, constant: f64) -> Self {
        BoundRecord { kind, draw, feature, lhs, rhs, constant, satisfied: lhs <= rhs + BOUND_SLACK }
    }
}

fn check_pair(full: ArrayView2<'_, f64>, coreset: ArrayView2<'_, f64>) -> Result<()> {
    if full.nrows() == 0 || coreset.nrows() == 0 {
        return Err(CteError::config("bound checks need nonempty data and coreset"));
    }
    if full.ncols() != coreset.ncols() {
        return Err(CteError::shape("data and coreset differ in width"));
    }
    Ok(())
}

/// Marginalization gap against the one-column MMD, for `n_draws` random
/// (row, feature) pairs. The model must be a probability classifier, so
/// `C_f = 1`.
pub fn bound_check(
    model: &MlpModel,
    full: ArrayView2<'_, f64>,
    coreset: ArrayView2<'_, f64>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<BoundRecord>> {
    if model.head() != Head::Softmax {
        return Err(CteError::config("bound checks need a classifier with bounded outputs"));
    }
    bound_check_with(model, 1.0, full, coreset, n_draws, seed)
}

/// [`bound_check`] for any model with `|f| <= c_f`.
pub fn bound_check_with<M: ModelFunction + ?Sized>(
    f: &M,
    c_f: f64,
    full: ArrayView2<'_, f64>,
    coreset: ArrayView2<'_, f64>,
    n_draws: usize,
    seed: u64,
) -> Result<Vec<BoundRecord>> {
    check_pair(full, coreset)?;
    let d = full.ncols();
    if f.n_inputs() != d {
        return Err(CteError::shape(format!("model takes {} features, data has {d}", f.n_inputs())));
    }
    let kernel = GaussianKernel::for_dim(1);
    let mut rng = substream(seed, "bound-check", 0);
    let mut mmd_cache: Vec<Option<f64>> = vec![None; d];
    let mut out = Vec::with_capacity(n_draws);
    for draw in 0..n_draws {
        let row = rng.random_range(0..full.nrows());
        let j = rng.random_range(0..d);
        let kept: Vec<usize> = (0..d).filter(|&c| c != j).collect();
        let s = FeatureSubset::from_indices(d, &kept)?;
        let x = full.row(row);
        let lhs = (marginalize(f, x, &s, full)? - marginalize(f, x, &s, coreset)?).abs();
        let mmd = match mmd_cache[j] {
            Some(v) => v,
            None => {
                let v = mmd_biased_sq(full.slice(s![.., j..j + 1]), coreset.slice(s![.., j..j + 1]), &kernel)?.max(0.0);
                mmd_cache[j] = Some(v);
                v
            }
        };
        out.push(BoundRecord::new(BoundKind::Marginalization, draw, Some(j), lhs, c_f * mmd.sqrt(), c_f));
    }
    Ok(out)
}

/// Global explanation `G = mean g(x)` on the data against on the coreset,
/// with `C_g = max ||g(x)||` over both.
pub fn global_bound_check(
    g: &dyn Fn(ArrayView1<'_, f64>) -> Array1<f64>,
    full: ArrayView2<'_, f64>,
    coreset: ArrayView2<'_, f64>,
) -> Result<BoundRecord> {
    check_pair(full, coreset)?;
    let eval = |x: ArrayView2<'_, f64>| -> Result<(Array1<f64>, f64)> {
        let rows: Vec<Array1<f64>> = x.axis_iter(Axis(0)).map(g).collect();
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(CteError::shape("local explanations differ in length"));
        }
        let mut mean = Array1::zeros(width);
        let mut c: f64 = 0.0;
        for r in &rows {
            mean += r;
            c = c.max(r.dot(r).sqrt());
        }
        Ok((mean / rows.len() as f64, c))
    };
    let (gf, cf) = eval(full)?;
    let (gc, cc) = eval(coreset)?;
    if gf.len() != gc.len() {
        return Err(CteError::shape("local explanations differ in length"));
    }
    let diff = &gf - &gc;
    let lhs = diff.dot(&diff).sqrt();
    let c_g = cf.max(cc);
    let kernel = GaussianKernel::for_dim(full.ncols());
    let mmd = mmd_biased_sq(full, coreset, &kernel)?.max(0.0);
    Ok(BoundRecord::new(BoundKind::Global, 0, None, lhs, c_g * mmd.sqrt(), c_g))
}
