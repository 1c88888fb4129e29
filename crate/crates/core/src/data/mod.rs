//! Tabular datasets: representation, CSV ingestion, preprocessing,
//! train/validation splitting and row subsetting.

mod csv_io;
mod preprocess;
pub mod synthetic;

pub use csv_io::{load_csv, read_csv, write_csv};
pub use preprocess::{
    fit_apply_preprocess, CategoricalEncoding, FittedStats, Impute, PreprocessSpec, TargetEncoding, TARGET_SMOOTHING,
};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{CteError, Result};
use crate::rng::substream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskKind {
    Classification { n_classes: usize },
    Regression,
    Unlabeled,
}

impl TaskKind {
    pub fn is_classification(&self) -> bool {
        matches!(self, TaskKind::Classification { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    Numeric,
    /// Cells hold the index into `levels` as a float.
    Categorical {
        levels: Vec<String>,
    },
}

/// An `n x d` feature matrix with optional labels.
///
/// Missing cells are stored as NaN until preprocessing imputes them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Array2<f64>,
    labels: Option<Array1<f64>>,
    feature_names: Vec<String>,
    feature_kinds: Vec<FeatureKind>,
    task: TaskKind,
    label_name: Option<String>,
    preprocessed: bool,
}

impl Dataset {
    /// Numeric dataset. Labels, if given, must match `task`.
    pub fn new(
        features: Array2<f64>,
        labels: Option<Array1<f64>>,
        feature_names: Option<Vec<String>>,
        task: TaskKind,
    ) -> Result<Self> {
        let d = features.ncols();
        let names = feature_names.unwrap_or_else(|| (0..d).map(|j| format!("x{j}")).collect());
        let ds = Dataset {
            features,
            labels,
            feature_names: names,
            feature_kinds: vec![FeatureKind::Numeric; d],
            task,
            label_name: None,
            preprocessed: false,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Unlabeled numeric dataset.
    pub fn from_features(features: Array2<f64>) -> Result<Self> {
        Self::new(features, None, None, TaskKind::Unlabeled)
    }

    pub(crate) fn from_parts(
        features: Array2<f64>,
        labels: Option<Array1<f64>>,
        feature_names: Vec<String>,
        feature_kinds: Vec<FeatureKind>,
        task: TaskKind,
        label_name: Option<String>,
        preprocessed: bool,
    ) -> Result<Self> {
        let ds = Dataset { features, labels, feature_names, feature_kinds, task, label_name, preprocessed };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let (n, d) = self.features.dim();
        if n == 0 || d == 0 {
            return Err(CteError::shape(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if self.feature_names.len() != d || self.feature_kinds.len() != d {
            return Err(CteError::shape(format!(
                "{} feature names / {} kinds for {d} columns",
                self.feature_names.len(),
                self.feature_kinds.len()
            )));
        }
        match (&self.labels, &self.task) {
            (Some(_), TaskKind::Unlabeled) => return Err(CteError::config("labels given for an unlabeled task")),
            (None, TaskKind::Classification { .. } | TaskKind::Regression) => {
                return Err(CteError::config("labeled task without labels"))
            }
            _ => {}
        }
        if let Some(y) = &self.labels {
            if y.len() != n {
                return Err(CteError::shape(format!("{} labels for {n} rows", y.len())));
            }
            if let TaskKind::Classification { n_classes } = self.task {
                if let Some(bad) = y.iter().find(|v| v.fract() != 0.0 || **v < 0.0 || **v >= n_classes as f64) {
                    return Err(CteError::config(format!("class label {bad} outside 0..{n_classes}")));
                }
            }
        }
        if self.preprocessed && self.features.iter().any(|v| !v.is_finite()) {
            return Err(CteError::config("non-finite value in preprocessed dataset"));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<ArrayView1<'_, f64>> {
        self.labels.as_ref().map(|y| y.view())
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_kinds(&self) -> &[FeatureKind] {
        &self.feature_kinds
    }

    pub fn task(&self) -> &TaskKind {
        &self.task
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn is_preprocessed(&self) -> bool {
        self.preprocessed
    }

    /// Marks a dataset built from already-clean numbers as preprocessed.
    pub fn into_preprocessed(mut self) -> Result<Self> {
        self.preprocessed = true;
        self.validate()?;
        Ok(self)
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = Some(name.into());
        self
    }

    /// Number of missing (NaN) cells.
    pub fn n_missing(&self) -> usize {
        self.features.iter().filter(|v| v.is_nan()).count()
    }

    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.features[[row, col]].is_nan()
    }

    /// Gathers rows in index order; duplicates allowed.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        if indices.is_empty() {
            return Err(CteError::config("empty row subset"));
        }
        let n = self.n_rows();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(CteError::Bounds { index: bad, len: n });
        }
        Ok(Dataset {
            features: self.features.select(Axis(0), indices),
            labels: self.labels.as_ref().map(|y| y.select(Axis(0), indices)),
            feature_names: self.feature_names.clone(),
            feature_kinds: self.feature_kinds.clone(),
            task: self.task.clone(),
            label_name: self.label_name.clone(),
            preprocessed: self.preprocessed,
        })
    }

    /// First `m` rows (or all rows when `m >= n`).
    pub fn truncate(&self, m: usize) -> Result<Dataset> {
        let m = m.min(self.n_rows());
        self.subset(&(0..m).collect::<Vec<_>>())
    }
}

/// Disjoint train/validation row indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train_indices: Vec<usize>,
    pub valid_indices: Vec<usize>,
}

pub const TRAIN_FRACTION: f64 = 0.75;

/// Seeded shuffle followed by a 75:25 cut with `|train| = floor(0.75 n)`.
pub fn split_75_25(data: &Dataset, seed: u64) -> Result<DataSplit> {
    split_rows(data.n_rows(), seed)
}

pub fn split_rows(n: usize, seed: u64) -> Result<DataSplit> {
    if n < 4 {
        return Err(CteError::config(format!("need at least 4 rows to split, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, "split", 0));
    let n_train = (TRAIN_FRACTION * n as f64).floor() as usize;
    let valid_indices = perm.split_off(n_train);
    Ok(DataSplit { train_indices: perm, valid_indices })
}

/// Free-function form of [`Dataset::subset`].
pub fn subset(data: &Dataset, indices: &[usize]) -> Result<Dataset> {
    data.subset(indices)
}
