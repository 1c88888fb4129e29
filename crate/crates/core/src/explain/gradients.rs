use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::quadrature::gauss_legendre_unit;
use super::{Attribution, ExplainConfig};
use crate::error::{CteError, Result};
use crate::models::Differentiable;

/// Path points evaluated per gradient batch.
const GRAD_CHUNK: usize = 8192;

fn check<M: Differentiable + ?Sized>(model: &M, x: ArrayView2<'_, f64>, baselines: ArrayView2<'_, f64>) -> Result<()> {
    if baselines.nrows() == 0 {
        return Err(CteError::config("expected gradients need at least one baseline"));
    }
    let d = model.n_inputs();
    if x.ncols() != d || baselines.ncols() != d {
        return Err(CteError::shape(format!("model takes {d} features")));
    }
    Ok(())
}

/// Integrated gradients from every baseline to `x`: row `b` holds
/// `(x - b) * integral_0^1 grad f(b + t (x - b)) dt` under the quadrature.
pub fn integrated_gradients<M: Differentiable + ?Sized>(
    model: &M,
    x: ArrayView1<'_, f64>,
    baselines: ArrayView2<'_, f64>,
    n_steps: usize,
) -> Result<Array2<f64>> {
    check(model, x.insert_axis(Axis(0)), baselines)?;
    let (t, w) = gauss_legendre_unit(n_steps)?;
    let d = x.len();
    let nb = baselines.nrows();
    let mut out = Array2::zeros((nb, d));
    let per_chunk = (GRAD_CHUNK / n_steps).max(1);
    for start in (0..nb).step_by(per_chunk) {
        let end = (start + per_chunk).min(nb);
        let mut pts = Array2::zeros(((end - start) * n_steps, d));
        for b in start..end {
            let base = baselines.row(b);
            for (k, &tk) in t.iter().enumerate() {
                let mut r = pts.row_mut((b - start) * n_steps + k);
                r.assign(&(&base + &((&x - &base) * tk)));
            }
        }
        let grads = model.grad_batch_unchecked(pts.view());
        for b in start..end {
            let mut avg = Array1::zeros(d);
            for (k, &wk) in w.iter().enumerate() {
                avg.scaled_add(wk, &grads.row((b - start) * n_steps + k));
            }
            let diff = &x - &baselines.row(b);
            out.row_mut(b).assign(&(avg * diff));
        }
    }
    Ok(out)
}

/// Expected gradients: integrated gradients averaged over all baselines.
pub fn expected_gradients<M: Differentiable + ?Sized>(
    model: &M,
    x: ArrayView1<'_, f64>,
    baselines: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<Array1<f64>> {
    config.validate()?;
    let per = integrated_gradients(model, x, baselines, config.n_steps)?;
    Ok(per.mean_axis(Axis(0)).expect("non-empty baselines"))
}

/// Expected gradients for every row of `x`.
pub fn explain_expected_gradients<M: Differentiable + ?Sized>(
    model: &M,
    x: ArrayView2<'_, f64>,
    baselines: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<Attribution> {
    config.validate()?;
    check(model, x, baselines)?;
    let rows: Vec<Result<Array1<f64>>> =
        config.exec.map(x.nrows(), |i| expected_gradients(model, x.row(i), baselines, config));
    let mut values = Array2::zeros((x.nrows(), x.ncols()));
    for (i, r) in rows.into_iter().enumerate() {
        values.row_mut(i).assign(&r?);
    }
    let base = model.eval_unchecked(baselines).mean().unwrap_or(0.0);
    Ok(Attribution { values, base_value: Array1::from_elem(x.nrows(), base), regularized: Vec::new() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Activation, Head, LinearModel, Loss, MlpModel, ModelFunction};
    use ndarray::array;

    #[test]
    fn linear_model_is_exact() {
        let w = array![1.5, -2.0, 0.25];
        let m = LinearModel { weights: w.clone(), bias: 3.0 };
        let bg = array![[0.0, 1.0, 2.0], [1.0, -1.0, 4.0]];
        let x = array![2.0, 2.0, 2.0];
        let a = expected_gradients(&m, x.view(), bg.view(), &ExplainConfig::default()).unwrap();
        let mu = bg.mean_axis(Axis(0)).unwrap();
        let expected = &w * &(&x - &mu);
        assert!((&a - &expected).iter().all(|v| v.abs() < 1e-12), "{a} vs {expected}");
    }

    #[test]
    fn zero_path_gives_zero() {
        let m = MlpModel::init(&[3, 4, 2], Activation::Tanh, Head::Softmax, Loss::CrossEntropy, 1).unwrap();
        let x = array![0.3, -0.2, 1.0];
        let bg = x.clone().insert_axis(Axis(0));
        let a = expected_gradients(&m, x.view(), bg.view(), &ExplainConfig::default()).unwrap();
        assert!(a.iter().all(|&v| v == 0.0));
        let none = Array2::<f64>::zeros((0, 3));
        assert!(expected_gradients(&m, x.view(), none.view(), &ExplainConfig::default()).is_err());
        let bad = ExplainConfig { n_steps: 0, ..Default::default() };
        assert!(expected_gradients(&m, x.view(), bg.view(), &bad).is_err());
    }

    #[test]
    fn completeness_on_smooth_model() {
        let m = MlpModel::init(&[4, 8, 2], Activation::Tanh, Head::Softmax, Loss::CrossEntropy, 7).unwrap();
        let x = array![1.0, -0.5, 0.3, 2.0];
        let bg = array![[0.0, 0.0, 0.0, 0.0], [-1.0, 1.0, 0.5, -2.0]];
        let per = integrated_gradients(&m, x.view(), bg.view(), 50).unwrap();
        let fx = m.eval(x.view().insert_axis(Axis(0))).unwrap()[0];
        let fb = m.eval(bg.view()).unwrap();
        for b in 0..2 {
            let gap = fx - fb[b];
            assert!((per.row(b).sum() - gap).abs() < 1e-3 * gap.abs() + 1e-6);
        }
    }
}
