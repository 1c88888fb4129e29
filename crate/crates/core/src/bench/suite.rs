use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bounds::{bound_check, BoundRecord};
use super::io::{write_jsonl, write_plot_csv};
use super::stats::{aggregate, summarize, CellAggregate, Summary};
use super::trials::{compute_ground_truth, run_trials, GroundTruth, TimingRecord, TrialRecord};
use super::{Estimator, TrialSpec, DEFAULT_GROUND_TRUTH_REPEATS, DEFAULT_REPEATS, DEFAULT_TRUNCATE_FACTOR};
use crate::compress::{compress, CompressorConfig, Method, DEFAULT_OVERSAMPLE_G};
use crate::data::synthetic::{gaussian_classification, nonlinear_regression};
use crate::data::{fit_apply_preprocess, load_csv, split_75_25, Dataset, PreprocessSpec};
use crate::error::{CteError, Result};
use crate::explain::ExplainConfig;
use crate::models::{train, Head, MlpModel, TrainConfig, TrainReport};
use crate::parallel::Exec;
use crate::rng::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    GaussianClassification { n: usize, d: usize, clusters_per_class: usize },
    NonlinearRegression { n: usize, d: usize },
    Csv { path: PathBuf, label: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSource {
    Train(TrainConfig),
    File { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub id: String,
    pub source: DataSource,
    pub model: ModelSource,
    /// Overrides the suite-wide coreset size.
    #[serde(default)]
    pub coreset_size: Option<usize>,
    #[serde(default)]
    pub preprocess: PreprocessSpec,
}

fn default_repeats() -> usize {
    DEFAULT_REPEATS
}
fn default_gt_repeats() -> usize {
    DEFAULT_GROUND_TRUTH_REPEATS
}
fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}
fn default_g() -> u32 {
    DEFAULT_OVERSAMPLE_G
}
fn default_truncate() -> usize {
    DEFAULT_TRUNCATE_FACTOR
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteSpec {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub datasets: Vec<DatasetSpec>,
    pub estimators: Vec<Estimator>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default = "default_gt_repeats")]
    pub ground_truth_repeats: usize,
    #[serde(default)]
    pub coreset_size: Option<usize>,
    #[serde(default = "default_g")]
    pub oversample_g: u32,
    #[serde(default)]
    pub topk: Option<usize>,
    #[serde(default = "default_truncate")]
    pub truncate_factor: usize,
    #[serde(default)]
    pub explain: ExplainConfig,
    /// Random draws per dataset and method for the marginalization bound;
    /// 0 disables the check.
    #[serde(default)]
    pub bound_draws: usize,
}

impl SuiteSpec {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.estimators.is_empty() {
            return Err(CteError::config("suite needs at least one dataset and one estimator"));
        }
        let mut ids = HashSet::new();
        for d in &self.datasets {
            if !ids.insert(d.id.as_str()) {
                return Err(CteError::config(format!("duplicate dataset id {:?}", d.id)));
            }
        }
        for d in &self.datasets {
            for &e in &self.estimators {
                self.trial_spec(d, e).validate()?;
            }
        }
        Ok(())
    }

    pub fn trial_spec(&self, dataset: &DatasetSpec, estimator: Estimator) -> TrialSpec {
        TrialSpec {
            dataset: dataset.id.clone(),
            estimator,
            methods: self.methods.clone(),
            repeats: self.repeats,
            topk: self.topk,
            ground_truth_repeats: self.ground_truth_repeats,
            coreset_size: dataset.coreset_size.or(self.coreset_size),
            oversample_g: self.oversample_g,
            truncate_factor: self.truncate_factor,
            explain: self.explain.clone(),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub id: String,
    pub train: Dataset,
    pub valid: Dataset,
    pub model: MlpModel,
    pub preprocess: PreprocessSpec,
    pub train_report: Option<TrainReport>,
}

/// Generates or loads the data, splits 75:25, preprocesses with training
/// statistics and trains or loads the model.
pub fn prepare_dataset(spec: &DatasetSpec, seed: u64) -> Result<PreparedDataset> {
    let data_seed = derive_seed(seed, &format!("data/{}", spec.id), 0);
    let raw = match &spec.source {
        DataSource::GaussianClassification { n, d, clusters_per_class } => {
            gaussian_classification(*n, *d, *clusters_per_class, data_seed)?
        }
        DataSource::NonlinearRegression { n, d } => {
            if *d < 5 {
                return Err(CteError::config("nonlinear regression needs at least 5 features"));
            }
            nonlinear_regression(*n, *d, data_seed)?
        }
        DataSource::Csv { path, label } => load_csv(path, label.as_deref())?,
    };
    let split = split_75_25(&raw, derive_seed(seed, &format!("split/{}", spec.id), 0))?;
    let (train_raw, valid_raw) = (raw.subset(&split.train_indices)?, raw.subset(&split.valid_indices)?);
    let (train_set, mut rest, preprocess) = fit_apply_preprocess(&train_raw, &[valid_raw], &spec.preprocess)?;
    let valid = rest.remove(0);
    let (model, train_report) = match &spec.model {
        ModelSource::Train(cfg) => {
            let (m, r) = train(&train_set, cfg)?;
            (m, Some(r))
        }
        ModelSource::File { path } => {
            let m = MlpModel::load_weights(path)?;
            m.expect_inputs(valid.n_features())?;
            (m, None)
        }
    };
    Ok(PreparedDataset { id: spec.id.clone(), train: train_set, valid, model, preprocess, train_report })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteBound {
    pub dataset: String,
    pub method: Method,
    #[serde(flatten)]
    pub record: BoundRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub dataset: String,
    pub n_train: usize,
    pub n_valid: usize,
    pub n_features: usize,
    pub report: Option<TrainReport>,
}

/// Previously finished records; matching trials are not rerun.
#[derive(Debug, Clone, Default)]
pub struct ResumeState {
    pub records: Vec<TrialRecord>,
    pub timings: Vec<TimingRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOutput {
    pub records: Vec<TrialRecord>,
    pub timings: Vec<TimingRecord>,
    pub ground_truths: Vec<GroundTruth>,
    pub aggregates: Vec<CellAggregate>,
    pub summary: Summary,
    pub bounds: Vec<SuiteBound>,
    pub datasets: Vec<TrainSummary>,
}

impl SuiteOutput {
    /// `records.jsonl`, `timings.jsonl`, `bounds.jsonl`, `aggregates.json`,
    /// `summary.json`, `summary.txt` and `plot.csv` under `dir`.
    pub fn write_to(&self, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let path = |n: &str| dir.join(n);
        write_jsonl(path("records.jsonl"), &self.records)?;
        write_jsonl(path("timings.jsonl"), &self.timings)?;
        write_jsonl(path("bounds.jsonl"), &self.bounds)?;
        std::fs::write(path("aggregates.json"), serde_json::to_string_pretty(&self.aggregates)?)?;
        std::fs::write(path("summary.json"), serde_json::to_string_pretty(&self.summary)?)?;
        std::fs::write(path("datasets.json"), serde_json::to_string_pretty(&self.datasets)?)?;
        std::fs::write(path("summary.txt"), self.summary.to_text())?;
        write_plot_csv(path("plot.csv"), &self.aggregates)?;
        Ok([
            "records.jsonl",
            "timings.jsonl",
            "bounds.jsonl",
            "aggregates.json",
            "summary.json",
            "datasets.json",
            "summary.txt",
            "plot.csv",
        ]
        .iter()
        .map(|n| path(n))
        .collect())
    }
}

pub type CheckpointFn<'a> = dyn Fn(&[TrialRecord], &[TimingRecord]) -> Result<()> + 'a;

/// Callbacks invoked while a suite runs.
pub struct SuiteHooks<'a> {
    pub progress: &'a dyn Fn(&str),
    /// Called with all records so far after each finished cell.
    pub checkpoint: &'a CheckpointFn<'a>,
}

impl Default for SuiteHooks<'_> {
    fn default() -> Self {
        SuiteHooks { progress: &|_| {}, checkpoint: &|_, _| Ok(()) }
    }
}

/// Runs every (dataset, estimator) cell: ground truth, then all
/// (method, repeat) trials not already present in `resume`.
pub fn run_suite(spec: &SuiteSpec, exec: Exec, resume: &ResumeState, hooks: &SuiteHooks<'_>) -> Result<SuiteOutput> {
    let progress = hooks.progress;
    spec.validate()?;
    let done: HashSet<(String, Estimator, Method, usize)> =
        resume.records.iter().filter(|r| r.ok()).map(|r| r.sort_key()).collect();
    let mut records: Vec<TrialRecord> = resume.records.iter().filter(|r| r.ok()).cloned().collect();
    let mut timings: Vec<TimingRecord> = resume
        .timings
        .iter()
        .filter(|t| done.contains(&(t.dataset.clone(), t.estimator, t.method, t.repeat)))
        .cloned()
        .collect();
    let mut ground_truths = Vec::new();
    let mut bounds = Vec::new();
    let mut datasets = Vec::new();
    for ds in &spec.datasets {
        progress(&format!("preparing {}", ds.id));
        let prepared = prepare_dataset(ds, spec.seed)?;
        datasets.push(TrainSummary {
            dataset: ds.id.clone(),
            n_train: prepared.train.n_rows(),
            n_valid: prepared.valid.n_rows(),
            n_features: prepared.valid.n_features(),
            report: prepared.train_report.clone(),
        });
        for &est in &spec.estimators {
            let ts = spec.trial_spec(ds, est);
            let pending = ts
                .methods
                .iter()
                .flat_map(|&m| (0..ts.repeats).map(move |r| (m, r)))
                .filter(|&(m, r)| !done.contains(&(ds.id.clone(), est, m, r)))
                .count();
            progress(&format!("{} / {est}: ground truth", ds.id));
            let truth = compute_ground_truth(&ts, &prepared.valid, &prepared.model, exec)?;
            progress(&format!("{} / {est}: {pending} trials", ds.id));
            let skip = |m: Method, r: usize| done.contains(&(ds.id.clone(), est, m, r));
            for o in run_trials(&ts, &prepared.valid, &prepared.model, &truth, exec, &skip)? {
                records.push(o.record);
                timings.push(o.timing);
            }
            ground_truths.push(truth);
            (hooks.checkpoint)(&records, &timings)?;
        }
        if spec.bound_draws > 0 && prepared.model.head() == Head::Softmax {
            let size = spec.trial_spec(ds, spec.estimators[0]).resolved_size(prepared.valid.n_rows())?;
            let mut methods = spec.methods.clone();
            methods.sort();
            methods.dedup();
            for m in methods {
                let mut cfg = CompressorConfig::new(m, derive_seed(spec.seed, "compress", 0)).with_size(size);
                cfg.oversample_g = spec.oversample_g;
                let sel = compress(&prepared.valid, &cfg)?;
                let core = prepared.valid.subset(&sel.indices)?;
                let recs = bound_check(
                    &prepared.model,
                    prepared.valid.features(),
                    core.features(),
                    spec.bound_draws,
                    derive_seed(spec.seed, "bound-check", 0),
                )?;
                bounds.extend(recs.into_iter().map(|record| SuiteBound { dataset: ds.id.clone(), method: m, record }));
            }
        }
    }
    records.sort_by_key(|r| r.sort_key());
    timings.sort_by_key(|t| (t.dataset.clone(), t.estimator, t.method, t.repeat));
    let aggregates = aggregate(&records, &timings);
    let summary = summarize(&aggregates, &records)?;
    Ok(SuiteOutput { records, timings, ground_truths, aggregates, summary, bounds, datasets })
}
