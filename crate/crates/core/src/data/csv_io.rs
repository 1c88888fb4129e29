use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{Dataset, FeatureKind, TaskKind};
use crate::error::{CteError, Result};

/// Integer-valued label columns with at most this many distinct values are
/// read as class labels; anything else numeric is a regression target.
pub const MAX_CLASSES: usize = 20;

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, label_column)
}

/// Parses a header-first CSV. Cells that are empty or `NA` are missing.
/// A column is categorical when any present cell is not a real number.
pub fn read_csv<R: Read>(reader: R, label_column: Option<&str>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| CteError::Parse { row: 1, msg: e.to_string() })?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header.is_empty() || header.iter().all(|h| h.is_empty()) {
        return Err(CteError::Parse { row: 1, msg: "missing header row".into() });
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| CteError::config(format!("label column {name:?} not in header {header:?}")))?,
        ),
        None => None,
    };

    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // header is line 1
        let line = i + 2;
        let rec = rec.map_err(|e| CteError::Parse { row: line, msg: e.to_string() })?;
        if rec.len() != header.len() {
            return Err(CteError::Parse {
                row: line,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        rows.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if rows.is_empty() {
        return Err(CteError::Parse { row: 2, msg: "no data rows".into() });
    }
    let n = rows.len();

    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| Some(c) != label_idx).collect();
    if feature_cols.is_empty() {
        return Err(CteError::config("no feature columns"));
    }
    let d = feature_cols.len();
    let mut features = Array2::<f64>::from_elem((n, d), f64::NAN);
    let mut kinds = Vec::with_capacity(d);
    for (j, &c) in feature_cols.iter().enumerate() {
        let numeric = rows.iter().all(|r| is_missing(&r[c]) || r[c].parse::<f64>().is_ok_and(|v| v.is_finite()));
        if numeric {
            for (i, r) in rows.iter().enumerate() {
                if !is_missing(&r[c]) {
                    features[[i, j]] = r[c].parse().unwrap();
                }
            }
            kinds.push(FeatureKind::Numeric);
        } else {
            let levels: BTreeSet<&str> = rows.iter().filter(|r| !is_missing(&r[c])).map(|r| r[c].as_str()).collect();
            let levels: Vec<String> = levels.into_iter().map(String::from).collect();
            let code: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
            for (i, r) in rows.iter().enumerate() {
                if !is_missing(&r[c]) {
                    features[[i, j]] = code[r[c].as_str()] as f64;
                }
            }
            kinds.push(FeatureKind::Categorical { levels });
        }
    }
    let names: Vec<String> = feature_cols.iter().map(|&c| header[c].clone()).collect();

    let (labels, task) = match label_idx {
        None => (None, TaskKind::Unlabeled),
        Some(c) => {
            let (y, task) = parse_labels(&rows, c)?;
            (Some(y), task)
        }
    };
    let label_name = label_idx.map(|c| header[c].clone());
    Dataset::from_parts(features, labels, names, kinds, task, label_name, false)
}

fn parse_labels(rows: &[Vec<String>], c: usize) -> Result<(Array1<f64>, TaskKind)> {
    if let Some(i) = rows.iter().position(|r| is_missing(&r[c])) {
        return Err(CteError::Parse { row: i + 2, msg: "missing label".into() });
    }
    let numeric: Option<Vec<f64>> = rows.iter().map(|r| r[c].parse::<f64>().ok()).collect();
    match numeric {
        Some(vals) => {
            let integral = vals.iter().all(|v| v.is_finite() && v.fract() == 0.0);
            let distinct: BTreeSet<i64> = vals.iter().map(|v| *v as i64).collect();
            if integral && distinct.len() <= MAX_CLASSES {
                let index: BTreeMap<i64, usize> = distinct.iter().enumerate().map(|(k, v)| (*v, k)).collect();
                let y = vals.iter().map(|v| index[&(*v as i64)] as f64).collect();
                Ok((y, TaskKind::Classification { n_classes: distinct.len() }))
            } else if vals.iter().all(|v| v.is_finite()) {
                Ok((Array1::from(vals), TaskKind::Regression))
            } else {
                Err(CteError::Parse { row: 0, msg: "non-finite label".into() })
            }
        }
        None => {
            let levels: BTreeSet<&str> = rows.iter().map(|r| r[c].as_str()).collect();
            let index: BTreeMap<&str, usize> = levels.iter().enumerate().map(|(k, s)| (*s, k)).collect();
            let y = rows.iter().map(|r| index[r[c].as_str()] as f64).collect();
            Ok((y, TaskKind::Classification { n_classes: levels.len() }))
        }
    }
}

/// Writes features (and labels, as the last column) with a header row.
/// Categorical cells are written as their level strings, missing as empty.
pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = data.feature_names().to_vec();
    if data.labels().is_some() {
        header.push(data.label_name().unwrap_or("label").to_string());
    }
    w.write_record(&header).map_err(csv_err)?;
    let x = data.features();
    for i in 0..data.n_rows() {
        let mut rec: Vec<String> = Vec::with_capacity(header.len());
        for (j, kind) in data.feature_kinds().iter().enumerate() {
            let v = x[[i, j]];
            rec.push(if v.is_nan() {
                String::new()
            } else {
                match kind {
                    FeatureKind::Numeric => format!("{v:?}"),
                    FeatureKind::Categorical { levels } => levels[v as usize].clone(),
                }
            });
        }
        if let Some(y) = data.labels() {
            rec.push(format!("{:?}", y[i]));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> CteError {
    CteError::Format(e.to_string())
}
