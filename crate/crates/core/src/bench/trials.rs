use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{default_topk, Estimator, TrialSpec};
use crate::compress::{compress, CompressorConfig, Method};
use crate::data::Dataset;
use crate::error::{CteError, Result};
use crate::explain::{
    explain_expected_gradients, explain_shap, feature_effects, kernel_sage, permutation_sage, EffectGrid,
    ExplainConfig, ShapEstimator,
};
use crate::metrics::{mae, topk_precision};
use crate::models::MlpModel;
use crate::parallel::Exec;
use crate::rng::derive_seed;

/// Reference explanation on the (truncated) validation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub dataset: String,
    pub estimator: Estimator,
    /// Validation rows used (explained instances and background).
    pub rows: usize,
    /// Mean over `runs`: `n x d` for local explanations, `1 x d` for SAGE,
    /// `1 x 100 (d + d^2)` for feature effects.
    pub values: Array2<f64>,
    pub runs: Vec<Array2<f64>>,
    /// Grid shared by every feature-effects estimate.
    pub grid: Option<EffectGrid>,
    pub elapsed_seconds: f64,
}

/// One repeat of one compression method. Carries no timings, so a rerun
/// with the same seeds serializes byte for byte the same.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dataset: String,
    pub estimator: Estimator,
    pub method: Method,
    pub repeat: usize,
    pub seed: u64,
    pub size: usize,
    pub mae: Option<f64>,
    pub topk_precision: Option<f64>,
    pub k: Option<usize>,
    pub failed: Option<String>,
}

impl TrialRecord {
    pub fn ok(&self) -> bool {
        self.failed.is_none() && self.mae.is_some()
    }

    /// Canonical output order.
    pub fn sort_key(&self) -> (String, Estimator, Method, usize) {
        (self.dataset.clone(), self.estimator, self.method, self.repeat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRecord {
    pub dataset: String,
    pub estimator: Estimator,
    pub method: Method,
    pub repeat: usize,
    /// Zero for i.i.d. sampling by convention.
    pub compress_seconds: f64,
    pub explain_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub record: TrialRecord,
    pub timing: TimingRecord,
}

/// Computes the explanation of `estimator` with `explained` as instances /
/// foreground and `background` as the marginalizing sample (the averaged
/// sample for feature effects).
fn explain_tensor(
    estimator: Estimator,
    model: &MlpModel,
    explained: &Dataset,
    background: &Dataset,
    grid: Option<&EffectGrid>,
    config: &ExplainConfig,
) -> Result<Array2<f64>> {
    let row = |v: ndarray::Array1<f64>| v.insert_axis(ndarray::Axis(0));
    Ok(match estimator {
        Estimator::KernelShap => {
            explain_shap(model, explained.features(), background.features(), ShapEstimator::Kernel, config)?.values
        }
        Estimator::PermutationShap => {
            explain_shap(model, explained.features(), background.features(), ShapEstimator::Permutation, config)?.values
        }
        Estimator::ExpectedGradients => {
            explain_expected_gradients(model, explained.features(), background.features(), config)?.values
        }
        Estimator::KernelSage | Estimator::KernelSageFg => {
            row(kernel_sage(model, explained, background.features(), config)?.values)
        }
        Estimator::PermutationSage | Estimator::PermutationSageFg => {
            row(permutation_sage(model, explained, background.features(), config)?.values)
        }
        Estimator::FeatureEffects => row(feature_effects(model, background.features(), grid, config)?.flatten()),
    })
}

fn check_model(model: &MlpModel, valid: &Dataset) -> Result<()> {
    model.expect_inputs(valid.n_features())?;
    if valid.labels().is_none() {
        return Err(CteError::config("benchmark data must be labeled"));
    }
    Ok(())
}

/// Explanation on the first `truncate_factor x coreset size` validation rows,
/// used as both instances and background, averaged over
/// `ground_truth_repeats` seeded runs (one run for deterministic estimators).
pub fn compute_ground_truth(spec: &TrialSpec, valid: &Dataset, model: &MlpModel, exec: Exec) -> Result<GroundTruth> {
    spec.validate()?;
    check_model(model, valid)?;
    let rows = spec.truncated_rows(valid.n_rows())?;
    let t = valid.truncate(rows)?;
    let grid =
        (spec.estimator == Estimator::FeatureEffects).then(|| EffectGrid::from_data(t.features())).transpose()?;
    let n_runs = if spec.estimator.is_stochastic(&spec.explain) { spec.ground_truth_repeats } else { 1 };
    let start = Instant::now();
    let mut runs = Vec::with_capacity(n_runs);
    for g in 0..n_runs {
        let config =
            ExplainConfig { seed: derive_seed(spec.seed, "ground-truth", g as u64), exec, ..spec.explain.clone() };
        runs.push(explain_tensor(spec.estimator, model, &t, &t, grid.as_ref(), &config)?);
    }
    let mut values = runs[0].clone();
    for r in &runs[1..] {
        values += r;
    }
    values /= n_runs as f64;
    Ok(GroundTruth {
        dataset: spec.dataset.clone(),
        estimator: spec.estimator,
        rows,
        values,
        runs,
        grid,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}

fn topk_score(estimate: ArrayView2<'_, f64>, truth: ArrayView2<'_, f64>, k: usize) -> Result<f64> {
    let mut acc = 0.0;
    for (e, t) in estimate.rows().into_iter().zip(truth.rows()) {
        acc += topk_precision(e, t, k)?;
    }
    Ok(acc / truth.nrows() as f64)
}

struct Trial {
    record: TrialRecord,
    compress_seconds: f64,
    explain_seconds: f64,
}

#[allow(clippy::too_many_arguments)]
fn run_one(
    spec: &TrialSpec,
    valid: &Dataset,
    explained: &Dataset,
    model: &MlpModel,
    truth: &GroundTruth,
    method: Method,
    repeat: usize,
    size: usize,
    k: usize,
) -> Trial {
    let seed = derive_seed(spec.seed, "compress", repeat as u64);
    let mut record = TrialRecord {
        dataset: spec.dataset.clone(),
        estimator: spec.estimator,
        method,
        repeat,
        seed,
        size,
        mae: None,
        topk_precision: None,
        k: spec.estimator.has_topk().then_some(k),
        failed: None,
    };
    let mut cfg = CompressorConfig::new(method, seed).with_size(size);
    cfg.oversample_g = spec.oversample_g;
    let (mut compress_seconds, mut explain_seconds) = (0.0, 0.0);
    let result = (|| -> Result<(f64, Option<f64>)> {
        let sel = compress(valid, &cfg)?;
        if method != Method::Iid {
            compress_seconds = sel.elapsed_seconds;
        }
        let coreset = valid.subset(&sel.indices)?;
        let config = ExplainConfig {
            seed: derive_seed(spec.seed, "explain", repeat as u64),
            exec: Exec::Sequential,
            ..spec.explain.clone()
        };
        let start = Instant::now();
        let fg = match spec.estimator {
            Estimator::KernelSageFg | Estimator::PermutationSageFg => &coreset,
            _ => explained,
        };
        let est = explain_tensor(spec.estimator, model, fg, &coreset, truth.grid.as_ref(), &config)?;
        explain_seconds = start.elapsed().as_secs_f64();
        let err = mae(est.view(), truth.values.view())?;
        let topk = if spec.estimator.has_topk() { Some(topk_score(est.view(), truth.values.view(), k)?) } else { None };
        Ok((err, topk))
    })();
    match result {
        Ok((m, t)) => {
            record.mae = Some(m);
            record.topk_precision = t;
        }
        Err(e) => record.failed = Some(e.to_string()),
    }
    Trial { record, compress_seconds, explain_seconds }
}

/// Every (method, repeat) pair not rejected by `skip`: compress the full
/// validation set with seed `r`, explain on the coreset, score against the
/// ground truth. Outcomes come back in canonical order; failures are
/// recorded, not raised.
pub fn run_trials(
    spec: &TrialSpec,
    valid: &Dataset,
    model: &MlpModel,
    truth: &GroundTruth,
    exec: Exec,
    skip: &(dyn Fn(Method, usize) -> bool + Sync),
) -> Result<Vec<TrialOutcome>> {
    spec.validate()?;
    check_model(model, valid)?;
    let size = spec.resolved_size(valid.n_rows())?;
    let explained = valid.truncate(truth.rows)?;
    let k = spec.topk.unwrap_or_else(|| default_topk(valid.n_features())).min(valid.n_features());
    let mut methods = spec.methods.clone();
    methods.sort();
    methods.dedup();
    let tasks: Vec<(Method, usize)> =
        methods.iter().flat_map(|&m| (0..spec.repeats).map(move |r| (m, r))).filter(|&(m, r)| !skip(m, r)).collect();
    let trials = exec
        .map_slice(&tasks, |&(method, repeat)| run_one(spec, valid, &explained, model, truth, method, repeat, size, k));
    Ok(trials
        .into_iter()
        .map(|t| TrialOutcome {
            timing: TimingRecord {
                dataset: t.record.dataset.clone(),
                estimator: t.record.estimator,
                method: t.record.method,
                repeat: t.record.repeat,
                compress_seconds: t.compress_seconds,
                explain_seconds: t.explain_seconds,
            },
            record: t.record,
        })
        .collect())
}
