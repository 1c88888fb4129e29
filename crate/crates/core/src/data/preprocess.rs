//! Preprocessing fitted on the training split and replayed on the others:
//! drop degenerate columns, target-encode categoricals, impute means,
//! standardize.

use std::collections::{BTreeMap, HashSet};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, FeatureKind};
use crate::error::{CteError, Result};

/// Pseudo-count pulling rare categorical levels toward the global mean.
pub const TARGET_SMOOTHING: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Impute {
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoricalEncoding {
    TargetEncode,
    /// Keep the level index as the numeric value.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSpec {
    pub drop_degenerate: bool,
    pub impute: Impute,
    pub standardize: bool,
    pub categorical_encoding: CategoricalEncoding,
    pub fitted_stats: Option<FittedStats>,
}

impl Default for PreprocessSpec {
    fn default() -> Self {
        PreprocessSpec {
            drop_degenerate: true,
            impute: Impute::Mean,
            standardize: true,
            categorical_encoding: CategoricalEncoding::TargetEncode,
            fitted_stats: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetEncoding {
    pub levels: BTreeMap<String, f64>,
    /// Used for levels never seen in training.
    pub global_mean: f64,
    pub smoothing: f64,
}

/// Statistics learned on the training split.
///
/// JSON schema: `{input_names, feature_names, dropped, encodings, means,
/// centers, scales}`; `encodings`, `means`, `centers` and `scales` are
/// aligned with `feature_names` (the kept columns).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedStats {
    pub input_names: Vec<String>,
    pub feature_names: Vec<String>,
    pub dropped: Vec<String>,
    pub encodings: Vec<Option<TargetEncoding>>,
    /// Imputation means (after encoding).
    pub means: Vec<f64>,
    pub centers: Vec<f64>,
    pub scales: Vec<f64>,
}

fn unique_count(col: impl Iterator<Item = f64>) -> usize {
    col.filter(|v| !v.is_nan()).map(|v| v.to_bits()).collect::<HashSet<_>>().len()
}

fn nan_mean(col: impl Iterator<Item = f64>) -> f64 {
    let (s, c) = col.filter(|v| !v.is_nan()).fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        0.0
    } else {
        s / c as f64
    }
}

impl PreprocessSpec {
    /// Learns the statistics on `train`.
    pub fn fit(&self, train: &Dataset) -> Result<FittedStats> {
        if train.is_preprocessed() {
            return Err(CteError::config("dataset is already preprocessed"));
        }
        let n = train.n_rows();
        let x = train.features();
        let mut kept = Vec::new();
        let mut dropped = Vec::new();
        for j in 0..train.n_features() {
            let uniq = unique_count(x.column(j).iter().copied());
            let categorical = matches!(train.feature_kinds()[j], FeatureKind::Categorical { .. });
            let degenerate = uniq <= 1 || (categorical && uniq == n);
            if self.drop_degenerate && degenerate {
                dropped.push(train.feature_names()[j].clone());
            } else {
                kept.push(j);
            }
        }
        if kept.is_empty() {
            return Err(CteError::config("every feature was dropped as degenerate"));
        }

        let has_categorical = kept.iter().any(|&j| matches!(train.feature_kinds()[j], FeatureKind::Categorical { .. }));
        let target_encode = has_categorical && self.categorical_encoding == CategoricalEncoding::TargetEncode;
        let y = match (target_encode, train.labels()) {
            (true, None) => return Err(CteError::config("target encoding requires a labeled training split")),
            (_, y) => y,
        };

        let mut encodings = Vec::with_capacity(kept.len());
        let mut means = Vec::with_capacity(kept.len());
        let mut centers = Vec::with_capacity(kept.len());
        let mut scales = Vec::with_capacity(kept.len());
        for &j in &kept {
            let enc = match (&train.feature_kinds()[j], target_encode) {
                (FeatureKind::Categorical { levels }, true) => {
                    let y = y.expect("checked above");
                    let global = y.mean().unwrap_or(0.0);
                    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
                    for (v, t) in x.column(j).iter().zip(y.iter()) {
                        if !v.is_nan() {
                            let e = acc.entry(*v as usize).or_insert((0.0, 0));
                            e.0 += t;
                            e.1 += 1;
                        }
                    }
                    let map = acc
                        .into_iter()
                        .map(|(code, (sum, cnt))| {
                            let enc = (sum + TARGET_SMOOTHING * global) / (cnt as f64 + TARGET_SMOOTHING);
                            (levels[code].clone(), enc)
                        })
                        .collect();
                    Some(TargetEncoding { levels: map, global_mean: global, smoothing: TARGET_SMOOTHING })
                }
                _ => None,
            };
            let encoded: Vec<f64> =
                x.column(j).iter().map(|&v| encode_cell(v, &train.feature_kinds()[j], enc.as_ref())).collect();
            let mean = nan_mean(encoded.iter().copied());
            let imputed: Vec<f64> = encoded.iter().map(|&v| if v.is_nan() { mean } else { v }).collect();
            let (center, scale) = if self.standardize {
                let c = imputed.iter().sum::<f64>() / n as f64;
                let var = imputed.iter().map(|v| (v - c) * (v - c)).sum::<f64>() / n as f64;
                let s = var.sqrt();
                (c, if s > 0.0 { s } else { 1.0 })
            } else {
                (0.0, 1.0)
            };
            encodings.push(enc);
            means.push(mean);
            centers.push(center);
            scales.push(scale);
        }
        Ok(FittedStats {
            input_names: train.feature_names().to_vec(),
            feature_names: kept.iter().map(|&j| train.feature_names()[j].clone()).collect(),
            dropped,
            encodings,
            means,
            centers,
            scales,
        })
    }
}

fn encode_cell(v: f64, kind: &FeatureKind, enc: Option<&TargetEncoding>) -> f64 {
    if v.is_nan() {
        return v;
    }
    match (kind, enc) {
        (FeatureKind::Categorical { levels }, Some(enc)) => {
            *enc.levels.get(&levels[v as usize]).unwrap_or(&enc.global_mean)
        }
        _ => v,
    }
}

impl FittedStats {
    /// Applies the fitted transformation. Refuses already-preprocessed input.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        if data.is_preprocessed() {
            return Err(CteError::config("dataset is already preprocessed"));
        }
        if data.feature_names() != self.input_names.as_slice() {
            return Err(CteError::shape(format!(
                "feature names {:?} do not match fitted {:?}",
                data.feature_names(),
                self.input_names
            )));
        }
        let x = data.features();
        let n = data.n_rows();
        let mut out = Array2::<f64>::zeros((n, self.feature_names.len()));
        for (k, name) in self.feature_names.iter().enumerate() {
            let j = data.feature_names().iter().position(|h| h == name).expect("names checked");
            let kind = &data.feature_kinds()[j];
            for i in 0..n {
                let mut v = encode_cell(x[[i, j]], kind, self.encodings[k].as_ref());
                if v.is_nan() {
                    v = self.means[k];
                }
                out[[i, k]] = (v - self.centers[k]) / self.scales[k];
            }
        }
        Dataset::from_parts(
            out,
            data.labels().map(|y| y.to_owned()),
            self.feature_names.clone(),
            vec![FeatureKind::Numeric; self.feature_names.len()],
            data.task().clone(),
            data.label_name().map(String::from),
            true,
        )
    }
}

/// Fits on `train` and applies the same statistics to `train` and `others`.
pub fn fit_apply_preprocess(
    train: &Dataset,
    others: &[Dataset],
    spec: &PreprocessSpec,
) -> Result<(Dataset, Vec<Dataset>, PreprocessSpec)> {
    for o in others {
        if o.feature_names() != train.feature_names() {
            return Err(CteError::shape("all datasets must share feature names"));
        }
    }
    let stats = match &spec.fitted_stats {
        Some(s) => s.clone(),
        None => spec.fit(train)?,
    };
    let tr = stats.apply(train)?;
    let rest = others.iter().map(|o| stats.apply(o)).collect::<Result<Vec<_>>>()?;
    let mut fitted = spec.clone();
    fitted.fitted_stats = Some(stats);
    Ok((tr, rest, fitted))
}
