//! Removal-based, gradient-based and effect-based explanations over a
//! background sample.

mod effects;
mod exact;
mod gradients;
mod kernel;
mod marginal;
mod permutation;
pub mod quadrature;
mod sage;

pub use effects::{feature_effects, EffectGrid, FeatureEffects, GRID_1D, GRID_2D};
pub use exact::{exact_shap, shapley_from_game, MAX_EXACT_FEATURES};
pub use gradients::{expected_gradients, explain_expected_gradients, integrated_gradients};
pub use kernel::{kernel_shap, shapley_kernel_weight, KernelShapResult};
pub use marginal::{marginalize, FeatureSubset};
pub use permutation::permutation_shap;
pub use sage::{kernel_sage, permutation_sage, sage_exact, SageLoss};

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CteError, Result};
use crate::models::ModelFunction;
use crate::parallel::Exec;

/// Default coalition budget of kernel SHAP.
pub const DEFAULT_SHAP_NSAMPLES: usize = 2048;
pub const DEFAULT_NPERMUTATIONS: usize = 10;
pub const DEFAULT_N_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    #[default]
    GaussLegendre,
}

/// How coalitions or permutations are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Seeded random permutations / coalitions within the budget.
    #[default]
    Random,
    /// Every permutation (permutation estimators) or every coalition (kernel
    /// estimators).
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplainConfig {
    pub npermutations: usize,
    pub shap_nsamples: usize,
    pub n_steps: usize,
    pub quadrature: Quadrature,
    /// `None` follows the task: cross-entropy for classification, MSE
    /// otherwise.
    pub loss: Option<SageLoss>,
    pub seed: u64,
    pub sampling: Sampling,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            npermutations: DEFAULT_NPERMUTATIONS,
            shap_nsamples: DEFAULT_SHAP_NSAMPLES,
            n_steps: DEFAULT_N_STEPS,
            quadrature: Quadrature::GaussLegendre,
            loss: None,
            seed: 0,
            sampling: Sampling::Random,
            exec: Exec::default(),
        }
    }
}

impl ExplainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.npermutations == 0 || self.shap_nsamples == 0 || self.n_steps == 0 {
            return Err(CteError::config("npermutations, shap_nsamples and n_steps must be positive"));
        }
        Ok(())
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn exhaustive(mut self) -> Self {
        self.sampling = Sampling::Exhaustive;
        self
    }
}

/// Local attributions: one row per explained instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub values: Array2<f64>,
    /// Expected output over the background, per instance.
    pub base_value: Array1<f64>,
    /// Instances whose kernel SHAP system needed ridge regularisation.
    #[serde(default)]
    pub regularized: Vec<usize>,
}

/// Global importances with Monte Carlo standard errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalImportance {
    pub values: Array1<f64>,
    pub stderr: Array1<f64>,
    #[serde(default)]
    pub regularized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapEstimator {
    Exact,
    Permutation,
    Kernel,
}

pub(crate) fn check_inputs<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView2<'_, f64>,
    background: ArrayView2<'_, f64>,
) -> Result<()> {
    if background.nrows() == 0 {
        return Err(CteError::config("background must contain at least one row"));
    }
    let d = f.n_inputs();
    if x.ncols() != d || background.ncols() != d {
        return Err(CteError::shape(format!(
            "model takes {d} features; instances have {}, background {}",
            x.ncols(),
            background.ncols()
        )));
    }
    Ok(())
}

/// SHAP values for every row of `x` with the chosen estimator. Instance `i`
/// draws from its own random substream, so the result does not depend on the
/// execution policy.
pub fn explain_shap<M: ModelFunction + ?Sized>(
    f: &M,
    x: ArrayView2<'_, f64>,
    background: ArrayView2<'_, f64>,
    estimator: ShapEstimator,
    config: &ExplainConfig,
) -> Result<Attribution> {
    check_inputs(f, x, background)?;
    config.validate()?;
    let d = x.ncols();
    let n = x.nrows();
    let base = marginal::background_mean(f, background);
    let rows: Vec<Result<(Array1<f64>, bool)>> = config.exec.map(n, |i| {
        let xi = x.row(i);
        match estimator {
            ShapEstimator::Exact => exact::exact_shap_unchecked(f, xi, background).map(|v| (v, false)),
            ShapEstimator::Permutation => {
                permutation::permutation_shap_indexed(f, xi, background, config, i as u64).map(|v| (v, false))
            }
            ShapEstimator::Kernel => {
                kernel::kernel_shap_indexed(f, xi, background, config, i as u64).map(|r| (r.values, r.regularized))
            }
        }
    });
    let mut values = Array2::zeros((n, d));
    let mut regularized = Vec::new();
    for (i, r) in rows.into_iter().enumerate() {
        let (v, reg) = r?;
        values.row_mut(i).assign(&v);
        if reg {
            regularized.push(i);
        }
    }
    Ok(Attribution { values, base_value: Array1::from_elem(n, base), regularized })
}

impl Attribution {
    /// Long-format CSV: `instance,feature,value`.
    pub fn write_csv<W: Write>(&self, names: &[String], mut w: W) -> Result<()> {
        writeln!(w, "instance,feature,value")?;
        for (i, row) in self.values.rows().into_iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                let name = names.get(j).map(String::as_str).unwrap_or("");
                writeln!(w, "{i},{name},{v:?}")?;
            }
        }
        Ok(())
    }
}

impl GlobalImportance {
    /// CSV: `feature,value,stderr`.
    pub fn write_csv<W: Write>(&self, names: &[String], mut w: W) -> Result<()> {
        writeln!(w, "feature,value,stderr")?;
        for (j, (v, s)) in self.values.iter().zip(self.stderr.iter()).enumerate() {
            let name = names.get(j).map(String::as_str).unwrap_or("");
            writeln!(w, "{name},{v:?},{s:?}")?;
        }
        Ok(())
    }
}
