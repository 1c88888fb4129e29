//! Evaluation protocol: ground truth on validation data, repeated
//! compression trials, error aggregation, bound checks and summaries.

mod bounds;
mod io;
mod stats;
mod suite;
mod trials;

pub use bounds::{bound_check, bound_check_with, global_bound_check, BoundKind, BoundRecord, BOUND_SLACK};
pub use io::{read_jsonl, write_jsonl, write_plot_csv};
pub use stats::{
    aggregate, average_ranks, summarize, welch_one_sided, CellAggregate, CellSummary, MethodStat, Summary, WelchResult,
};
pub use suite::{
    prepare_dataset, run_suite, DataSource, DatasetSpec, ModelSource, PreparedDataset, ResumeState, SuiteBound,
    SuiteHooks, SuiteOutput, SuiteSpec, TrainSummary,
};
pub use trials::{compute_ground_truth, run_trials, GroundTruth, TimingRecord, TrialOutcome, TrialRecord};

use serde::{Deserialize, Serialize};

use crate::compress::Method;
use crate::error::{CteError, Result};
use crate::explain::ExplainConfig;

pub const DEFAULT_REPEATS: usize = 33;
pub const DEFAULT_GROUND_TRUTH_REPEATS: usize = 3;
/// Validation rows kept for ground truth, as a multiple of the coreset size.
pub const DEFAULT_TRUNCATE_FACTOR: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    KernelShap,
    PermutationShap,
    KernelSage,
    PermutationSage,
    /// Kernel SAGE with the coreset as both background and foreground.
    KernelSageFg,
    PermutationSageFg,
    ExpectedGradients,
    FeatureEffects,
}

impl Estimator {
    pub const ALL: [Estimator; 8] = [
        Estimator::KernelShap,
        Estimator::PermutationShap,
        Estimator::KernelSage,
        Estimator::PermutationSage,
        Estimator::KernelSageFg,
        Estimator::PermutationSageFg,
        Estimator::ExpectedGradients,
        Estimator::FeatureEffects,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Estimator::KernelShap => "kernel_shap",
            Estimator::PermutationShap => "permutation_shap",
            Estimator::KernelSage => "kernel_sage",
            Estimator::PermutationSage => "permutation_sage",
            Estimator::KernelSageFg => "kernel_sage_fg",
            Estimator::PermutationSageFg => "permutation_sage_fg",
            Estimator::ExpectedGradients => "expected_gradients",
            Estimator::FeatureEffects => "feature_effects",
        }
    }

    /// Whether repeated runs with different seeds can differ.
    pub fn is_stochastic(self, config: &ExplainConfig) -> bool {
        match self {
            Estimator::ExpectedGradients | Estimator::FeatureEffects => false,
            _ => config.sampling == crate::explain::Sampling::Random,
        }
    }

    /// Importance-style outputs get a Top-k score.
    pub fn has_topk(self) -> bool {
        self != Estimator::FeatureEffects
    }

    pub fn is_sage(self) -> bool {
        matches!(
            self,
            Estimator::KernelSage | Estimator::PermutationSage | Estimator::KernelSageFg | Estimator::PermutationSageFg
        )
    }
}

impl std::fmt::Display for Estimator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Estimator {
    type Err = CteError;
    fn from_str(s: &str) -> Result<Self> {
        Estimator::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| CteError::config(format!("unknown estimator {s:?}")))
    }
}

/// Top-k default: 5, or 3 for at most 8 features.
pub fn default_topk(d: usize) -> usize {
    if d <= 8 {
        3
    } else {
        5
    }
}

/// One (dataset, estimator) cell of the benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSpec {
    pub dataset: String,
    pub estimator: Estimator,
    pub methods: Vec<Method>,
    pub repeats: usize,
    /// `None` picks [`default_topk`].
    pub topk: Option<usize>,
    pub ground_truth_repeats: usize,
    /// `None` uses the Compress++ output size for the validation set.
    pub coreset_size: Option<usize>,
    pub oversample_g: u32,
    pub truncate_factor: usize,
    pub explain: ExplainConfig,
    pub seed: u64,
}

impl TrialSpec {
    pub fn new(dataset: impl Into<String>, estimator: Estimator) -> Self {
        TrialSpec {
            dataset: dataset.into(),
            estimator,
            methods: Method::ALL.to_vec(),
            repeats: DEFAULT_REPEATS,
            topk: None,
            ground_truth_repeats: DEFAULT_GROUND_TRUTH_REPEATS,
            coreset_size: None,
            oversample_g: crate::compress::DEFAULT_OVERSAMPLE_G,
            truncate_factor: DEFAULT_TRUNCATE_FACTOR,
            explain: ExplainConfig::default(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.ground_truth_repeats == 0 {
            return Err(CteError::config("repeats must be at least 1"));
        }
        if self.methods.is_empty() {
            return Err(CteError::config("at least one compression method is required"));
        }
        if self.truncate_factor == 0 {
            return Err(CteError::config("truncate_factor must be positive"));
        }
        self.explain.validate()
    }

    pub fn resolved_size(&self, n_valid: usize) -> Result<usize> {
        match self.coreset_size {
            Some(0) => Err(CteError::config("coreset size must be positive")),
            Some(s) if s > n_valid => Err(CteError::config(format!("coreset size {s} exceeds {n_valid} rows"))),
            Some(s) => Ok(s),
            None => crate::compress::natural_size(n_valid),
        }
    }

    /// Rows of the validation set used for ground truth and as explained
    /// instances.
    pub fn truncated_rows(&self, n_valid: usize) -> Result<usize> {
        Ok((self.truncate_factor * self.resolved_size(n_valid)?).min(n_valid))
    }
}
