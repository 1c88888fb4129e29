use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::exact::{shapley_from_game, MAX_EXACT_FEATURES};
use super::kernel::{accumulate, all_coalitions, constrained_solve};
use super::marginal::{mean_rows, MaskedBatch};
use super::permutation::{for_each_permutation, MAX_EXHAUSTIVE_PERMUTATION_FEATURES};
use super::{ExplainConfig, GlobalImportance, Sampling};
use crate::data::Dataset;
use crate::error::{CteError, Result};
use crate::models::Predictor;
use crate::rng::substream;

/// Probability floor inside the cross-entropy.
pub const CE_EPS: f64 = 1e-12;
/// Number of row groups whose separate solutions give the kernel estimator's
/// standard errors.
const KERNEL_STDERR_GROUPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SageLoss {
    CrossEntropy,
    Mse,
}

impl SageLoss {
    fn eval(self, pred: ArrayView1<'_, f64>, y: f64) -> f64 {
        match self {
            SageLoss::CrossEntropy => -pred[y as usize].max(CE_EPS).ln(),
            SageLoss::Mse => (pred[0] - y).powi(2),
        }
    }
}

struct Setup<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    loss: SageLoss,
    /// Mean prediction over the background: the fully marginalized model.
    empty_pred: Array1<f64>,
}

fn setup<'a, P: Predictor + ?Sized>(
    p: &P,
    foreground: &'a Dataset,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<Setup<'a>> {
    config.validate()?;
    let y = foreground.labels().ok_or_else(|| CteError::config("SAGE needs a labeled foreground"))?;
    if foreground.n_rows() == 0 || background.nrows() == 0 {
        return Err(CteError::config("SAGE needs non-empty foreground and background"));
    }
    let d = p.n_inputs();
    if foreground.n_features() != d || background.ncols() != d {
        return Err(CteError::shape(format!("model takes {d} features")));
    }
    let loss = match config.loss {
        Some(l) => l,
        None if foreground.task().is_classification() => SageLoss::CrossEntropy,
        None => SageLoss::Mse,
    };
    match loss {
        SageLoss::CrossEntropy => {
            if let Some(&bad) = y.iter().find(|&&v| v < 0.0 || v as usize >= p.n_outputs() || v.fract() != 0.0) {
                return Err(CteError::config(format!("label {bad} is not a class of the model")));
            }
        }
        SageLoss::Mse => {
            if p.n_outputs() != 1 {
                return Err(CteError::config("squared-error SAGE needs a single-output model"));
            }
        }
    }
    let empty_pred = mean_rows(&p.predict_unchecked(background));
    Ok(Setup { x: foreground.features(), y, loss, empty_pred })
}

impl Setup<'_> {
    fn empty_loss(&self, i: usize) -> f64 {
        self.loss.eval(self.empty_pred.view(), self.y[i])
    }

    fn full_loss<P: Predictor + ?Sized>(&self, p: &P, i: usize) -> f64 {
        let out = p.predict_unchecked(self.x.row(i).insert_axis(Axis(0)));
        self.loss.eval(out.row(0), self.y[i])
    }
}

/// Loss reductions along `order` for foreground row `i`, added into `acc`.
fn sweep<P: Predictor + ?Sized>(
    p: &P,
    s: &Setup<'_>,
    i: usize,
    batch: &mut MaskedBatch<'_>,
    order: &[usize],
    full: f64,
    acc: &mut Array1<f64>,
) {
    let xi = s.x.row(i);
    let d = order.len();
    let mut prev = s.empty_loss(i);
    for (k, &j) in order.iter().enumerate() {
        batch.set(j, xi[j]);
        let cur = if k + 1 == d { full } else { s.loss.eval(batch.mean_prediction(p).view(), s.y[i]) };
        acc[j] += prev - cur;
        prev = cur;
    }
    for &j in order {
        batch.unset(j);
    }
}

fn finish(sum: Array1<f64>, sumsq: Array1<f64>, count: usize) -> GlobalImportance {
    let n = count as f64;
    let values = &sum / n;
    let stderr = if count > 1 {
        let var = (&sumsq / n - values.mapv(|v| v * v)).mapv(|v| v.max(0.0)) * (n / (n - 1.0));
        var.mapv(|v| (v / n).sqrt())
    } else {
        Array1::zeros(values.len())
    };
    GlobalImportance { values, stderr, regularized: false }
}

/// SAGE by permutation sampling: every foreground row is swept along
/// `npermutations` random feature orders, crediting each feature with the
/// loss reduction it causes when added.
pub fn permutation_sage<P: Predictor + ?Sized>(
    p: &P,
    foreground: &Dataset,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<GlobalImportance> {
    let s = setup(p, foreground, background, config)?;
    let d = p.n_inputs();
    if config.sampling == Sampling::Exhaustive && d > MAX_EXHAUSTIVE_PERMUTATION_FEATURES {
        return Err(CteError::config(format!("refusing to enumerate {d}! permutations")));
    }
    let per_row: Vec<(Array1<f64>, Array1<f64>, usize)> = config.exec.map(foreground.n_rows(), |i| {
        let mut batch = MaskedBatch::new(background);
        let full = s.full_loss(p, i);
        let mut sum = Array1::zeros(d);
        let mut sumsq = Array1::zeros(d);
        let mut count = 0;
        let mut visit = |order: &[usize]| {
            let mut c = Array1::zeros(d);
            sweep(p, &s, i, &mut batch, order, full, &mut c);
            sumsq += &c.mapv(|v| v * v);
            sum += &c;
            count += 1;
        };
        match config.sampling {
            Sampling::Exhaustive => for_each_permutation(d, &mut visit),
            Sampling::Random => {
                let mut rng = substream(config.seed, "permutation-sage", i as u64);
                let mut order: Vec<usize> = (0..d).collect();
                for _ in 0..config.npermutations {
                    order.shuffle(&mut rng);
                    visit(&order);
                }
            }
        }
        (sum, sumsq, count)
    });
    let mut sum = Array1::zeros(d);
    let mut sumsq = Array1::zeros(d);
    let mut count = 0;
    for (a, b, c) in per_row {
        sum += &a;
        sumsq += &b;
        count += c;
    }
    Ok(finish(sum, sumsq, count))
}

/// SAGE by kernel regression: each foreground row contributes
/// `npermutations` coalitions drawn from the Shapley kernel together with
/// their complements (or every coalition, exhaustively), and one constrained
/// regression is solved over the pooled normal equations.
pub fn kernel_sage<P: Predictor + ?Sized>(
    p: &P,
    foreground: &Dataset,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<GlobalImportance> {
    let s = setup(p, foreground, background, config)?;
    let d = p.n_inputs();
    let n = foreground.n_rows();
    if d < 2 {
        let total = (0..n).map(|i| s.empty_loss(i) - s.full_loss(p, i)).sum::<f64>() / n as f64;
        return Ok(GlobalImportance {
            values: Array1::from_elem(d, total),
            stderr: Array1::zeros(d),
            regularized: false,
        });
    }
    let enumerated = (config.sampling == Sampling::Exhaustive).then(|| all_coalitions(d));
    if enumerated.is_some() && d > MAX_EXACT_FEATURES {
        return Err(CteError::config(format!("refusing to enumerate 2^{d} coalitions")));
    }
    let size_weights: Vec<f64> = (1..d).map(|k| (d - 1) as f64 / (k * (d - k)) as f64).collect();
    let weight_sum: f64 = size_weights.iter().sum();
    let per_row: Vec<(Array2<f64>, Array1<f64>, f64)> = config.exec.map(n, |i| {
        let xi = s.x.row(i);
        let mut batch = MaskedBatch::new(background);
        let empty = s.empty_loss(i);
        let mut a = Array2::zeros((d, d));
        let mut b = Array1::zeros(d);
        let mut eval = |mask: &[bool], w: f64, a: &mut Array2<f64>, b: &mut Array1<f64>| {
            batch.apply(xi, mask);
            let y = empty - s.loss.eval(batch.mean_prediction(p).view(), s.y[i]);
            accumulate(a, b, mask, w, y);
        };
        match &enumerated {
            Some(c) => {
                for (mask, &w) in c.masks.iter().zip(&c.weights) {
                    eval(mask, w, &mut a, &mut b);
                }
            }
            None => {
                let mut rng = substream(config.seed, "kernel-sage", i as u64);
                let mut order: Vec<usize> = (0..d).collect();
                for _ in 0..config.npermutations {
                    let u = rng.random::<f64>() * weight_sum;
                    let mut acc = 0.0;
                    let mut size = d - 1;
                    for (k, w) in size_weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            size = k + 1;
                            break;
                        }
                    }
                    order.shuffle(&mut rng);
                    let mut mask = vec![false; d];
                    order[..size].iter().for_each(|&j| mask[j] = true);
                    eval(&mask, 1.0, &mut a, &mut b);
                    let comp: Vec<bool> = mask.iter().map(|m| !m).collect();
                    eval(&comp, 1.0, &mut a, &mut b);
                }
            }
        }
        (a, b, empty - s.full_loss(p, i))
    });
    let solve_rows = |rows: &[(Array2<f64>, Array1<f64>, f64)]| {
        let mut a = Array2::zeros((d, d));
        let mut b = Array1::zeros(d);
        let mut total = 0.0;
        for (ra, rb, rt) in rows {
            a += ra;
            b += rb;
            total += rt;
        }
        let m = rows.len() as f64;
        constrained_solve(&(a / m), &(b / m), total / m)
    };
    let (values, regularized) = solve_rows(&per_row);
    let groups = KERNEL_STDERR_GROUPS.min(n);
    let stderr = if groups > 1 {
        let size = n.div_ceil(groups);
        let sols: Vec<Array1<f64>> = per_row.chunks(size).map(|c| solve_rows(c).0).collect();
        let g = sols.len() as f64;
        let mean: Array1<f64> = sols.iter().fold(Array1::zeros(d), |acc, v| acc + v) / g;
        let var: Array1<f64> =
            sols.iter().fold(Array1::zeros(d), |acc, v| acc + (v - &mean).mapv(|e| e * e)) / (g - 1.0);
        var.mapv(|v| (v / g).sqrt())
    } else {
        Array1::zeros(d)
    };
    Ok(GlobalImportance { values, stderr, regularized })
}

/// Exact SAGE values by enumerating the loss-reduction game over all
/// coalitions.
pub fn sage_exact<P: Predictor + ?Sized>(
    p: &P,
    foreground: &Dataset,
    background: ArrayView2<'_, f64>,
    config: &ExplainConfig,
) -> Result<Array1<f64>> {
    let s = setup(p, foreground, background, config)?;
    let d = p.n_inputs();
    if d > MAX_EXACT_FEATURES {
        return Err(CteError::config(format!("refusing to enumerate 2^{d} coalitions")));
    }
    let mut game = vec![0.0; 1 << d];
    let n = foreground.n_rows();
    for i in 0..n {
        let mut batch = MaskedBatch::new(background);
        let empty = s.empty_loss(i);
        for (bits, v) in game.iter_mut().enumerate() {
            let mask: Vec<bool> = (0..d).map(|j| (bits >> j) & 1 == 1).collect();
            batch.apply(s.x.row(i), &mask);
            *v += (empty - s.loss.eval(batch.mean_prediction(p).view(), s.y[i])) / n as f64;
        }
    }
    shapley_from_game(d, &game)
}
