use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::stats::CellAggregate;
use crate::error::{CteError, Result};

/// One JSON document per line.
pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| CteError::Format(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| CteError::Format(format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

/// Flat table for plotting error against method.
pub fn write_plot_csv(path: impl AsRef<Path>, aggregates: &[CellAggregate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CteError::Format(e.to_string()))?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record([
        "dataset",
        "estimator",
        "method",
        "size",
        "n",
        "mae_mean",
        "mae_sd",
        "mae_se",
        "topk_mean",
        "compress_seconds",
        "explain_seconds",
    ])
    .map_err(|e| CteError::Format(e.to_string()))?;
    for a in aggregates {
        w.write_record([
            a.dataset.clone(),
            a.estimator.to_string(),
            a.method.to_string(),
            a.size.to_string(),
            a.n.to_string(),
            a.mae_mean.to_string(),
            a.mae_sd.to_string(),
            a.mae_se.to_string(),
            fmt(a.topk_mean),
            a.compress_seconds_mean.to_string(),
            a.explain_seconds_mean.to_string(),
        ])
        .map_err(|e| CteError::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        let items = vec![vec![1.0, 2.5], vec![], vec![-3.0]];
        write_jsonl(&p, &items).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 3);
        let back: Vec<Vec<f64>> = read_jsonl(&p).unwrap();
        assert_eq!(back, items);
        std::fs::write(&p, "[1]\nnot json\n").unwrap();
        assert!(read_jsonl::<Vec<f64>>(&p).is_err());
    }
}
