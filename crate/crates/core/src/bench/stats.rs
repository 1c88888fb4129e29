use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::trials::{TimingRecord, TrialRecord};
use super::Estimator;
use crate::compress::Method;
use crate::error::{CteError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for `mean(a) < mean(b)`.
    pub p_value: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Welch's unequal-variance t-test of `mean(a) < mean(b)`.
pub fn welch_one_sided(a: &[f64], b: &[f64]) -> Result<WelchResult> {
    if a.len() < 2 || b.len() < 2 {
        return Err(CteError::config("Welch's test needs at least two observations per group"));
    }
    let (ma, sa) = mean_sd(a);
    let (mb, sb) = mean_sd(b);
    let (va, vb) = (sa * sa / a.len() as f64, sb * sb / b.len() as f64);
    let se2 = va + vb;
    if se2 == 0.0 {
        let p = if ma < mb { 0.0 } else { 1.0 };
        let t = if ma < mb {
            f64::NEG_INFINITY
        } else if ma > mb {
            f64::INFINITY
        } else {
            0.0
        };
        return Ok(WelchResult { t, df: (a.len() + b.len() - 2) as f64, p_value: p });
    }
    let t = (ma - mb) / se2.sqrt();
    let df = se2 * se2 / (va * va / (a.len() as f64 - 1.0) + vb * vb / (b.len() as f64 - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| CteError::config(e.to_string()))?;
    Ok(WelchResult { t, df, p_value: dist.cdf(t) })
}

/// Per (dataset, estimator, method) statistics over successful repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellAggregate {
    pub dataset: String,
    pub estimator: Estimator,
    pub method: Method,
    pub size: usize,
    pub n: usize,
    pub n_failed: usize,
    pub mae_mean: f64,
    pub mae_sd: f64,
    pub mae_se: f64,
    pub topk_mean: Option<f64>,
    pub topk_sd: Option<f64>,
    pub compress_seconds_mean: f64,
    pub explain_seconds_mean: f64,
}

type CellKey = (String, Estimator, Method);

pub fn aggregate(records: &[TrialRecord], timings: &[TimingRecord]) -> Vec<CellAggregate> {
    let mut groups: BTreeMap<CellKey, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        groups.entry((r.dataset.clone(), r.estimator, r.method)).or_default().push(r);
    }
    let mut time_groups: BTreeMap<CellKey, Vec<&TimingRecord>> = BTreeMap::new();
    for t in timings {
        time_groups.entry((t.dataset.clone(), t.estimator, t.method)).or_default().push(t);
    }
    groups
        .into_iter()
        .map(|(key, rs)| {
            let ok: Vec<&TrialRecord> = rs.iter().copied().filter(|r| r.ok()).collect();
            let maes: Vec<f64> = ok.iter().filter_map(|r| r.mae).collect();
            let (mae_mean, mae_sd) = if maes.is_empty() { (f64::NAN, f64::NAN) } else { mean_sd(&maes) };
            let topks: Vec<f64> = ok.iter().filter_map(|r| r.topk_precision).collect();
            let (topk_mean, topk_sd) = if topks.is_empty() {
                (None, None)
            } else {
                let (m, s) = mean_sd(&topks);
                (Some(m), Some(s))
            };
            let ts = time_groups.get(&key).cloned().unwrap_or_default();
            let tmean = |f: &dyn Fn(&TimingRecord) -> f64| {
                if ts.is_empty() {
                    0.0
                } else {
                    ts.iter().map(|t| f(t)).sum::<f64>() / ts.len() as f64
                }
            };
            CellAggregate {
                size: rs.first().map(|r| r.size).unwrap_or(0),
                n: maes.len(),
                n_failed: rs.len() - ok.len(),
                mae_mean,
                mae_sd,
                mae_se: if maes.is_empty() { f64::NAN } else { mae_sd / (maes.len() as f64).sqrt() },
                topk_mean,
                topk_sd,
                compress_seconds_mean: tmean(&|t| t.compress_seconds),
                explain_seconds_mean: tmean(&|t| t.explain_seconds),
                dataset: key.0,
                estimator: key.1,
                method: key.2,
            }
        })
        .collect()
}

/// Ranks of `values` (lower is better), ties sharing their average rank.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = avg;
        }
        i = j + 1;
    }
    out
}

/// Mean rank of each method over cells, where each cell lists
/// `(method, score)` pairs.
pub fn average_ranks(cells: &[Vec<(Method, f64)>]) -> Vec<(Method, f64)> {
    let mut acc: BTreeMap<Method, (f64, usize)> = BTreeMap::new();
    for cell in cells {
        let scores: Vec<f64> = cell.iter().map(|c| c.1).collect();
        for ((m, _), r) in cell.iter().zip(ranks(&scores)) {
            let e = acc.entry(*m).or_insert((0.0, 0));
            e.0 += r;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStat {
    pub method: Method,
    pub mae_mean: f64,
    pub mae_sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub estimator: Estimator,
    pub methods: Vec<MethodStat>,
    /// `100 (iid - kt) / iid` on mean MAE.
    pub improvement_pct: Option<f64>,
    /// Welch one-sided p-value of `MAE(kt) < MAE(iid)`.
    pub welch_p: Option<f64>,
    pub ranks: Vec<(Method, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub cells: Vec<CellSummary>,
    pub average_ranks: Vec<(Method, f64)>,
}

impl Summary {
    /// Plain-text table.
    pub fn to_text(&self) -> String {
        let mut s = String::from("dataset\testimator\tmethod\tmae_mean\tmae_sd\trank\timprovement_pct\twelch_p\n");
        for c in &self.cells {
            for m in &c.methods {
                let rank = c.ranks.iter().find(|r| r.0 == m.method).map(|r| r.1).unwrap_or(f64::NAN);
                let (imp, p) = if m.method == Method::Kt {
                    (
                        c.improvement_pct.map(|v| format!("{v:.1}")).unwrap_or_default(),
                        c.welch_p.map(|v| format!("{v:.3e}")).unwrap_or_default(),
                    )
                } else {
                    (String::new(), String::new())
                };
                s.push_str(&format!(
                    "{}\t{}\t{}\t{:.6e}\t{:.6e}\t{rank:.2}\t{imp}\t{p}\n",
                    c.dataset, c.estimator, m.method, m.mae_mean, m.mae_sd
                ));
            }
        }
        s.push_str("\naverage ranks:");
        for (m, r) in &self.average_ranks {
            s.push_str(&format!(" {m}={r:.2}"));
        }
        s.push('\n');
        s
    }
}

/// Per-cell comparison table and average ranks across cells.
pub fn summarize(aggregates: &[CellAggregate], records: &[TrialRecord]) -> Result<Summary> {
    if aggregates.is_empty() {
        return Err(CteError::config("nothing to summarize"));
    }
    let mut cells: BTreeMap<(String, Estimator), Vec<&CellAggregate>> = BTreeMap::new();
    for a in aggregates {
        cells.entry((a.dataset.clone(), a.estimator)).or_default().push(a);
    }
    let maes = |ds: &str, est: Estimator, m: Method| -> Vec<f64> {
        records
            .iter()
            .filter(|r| r.dataset == ds && r.estimator == est && r.method == m && r.ok())
            .filter_map(|r| r.mae)
            .collect()
    };
    let mut out = Vec::new();
    let mut rank_cells = Vec::new();
    for ((ds, est), aggs) in cells {
        let methods: Vec<MethodStat> = aggs
            .iter()
            .filter(|a| a.n > 0)
            .map(|a| MethodStat { method: a.method, mae_mean: a.mae_mean, mae_sd: a.mae_sd, n: a.n })
            .collect();
        let find = |m: Method| methods.iter().find(|s| s.method == m);
        let improvement_pct = match (find(Method::Iid), find(Method::Kt)) {
            (Some(i), Some(k)) if i.mae_mean != 0.0 => Some(100.0 * (i.mae_mean - k.mae_mean) / i.mae_mean),
            _ => None,
        };
        let welch_p =
            welch_one_sided(&maes(&ds, est, Method::Kt), &maes(&ds, est, Method::Iid)).ok().map(|w| w.p_value);
        let scores: Vec<(Method, f64)> = methods.iter().map(|m| (m.method, m.mae_mean)).collect();
        let cell_ranks = average_ranks(std::slice::from_ref(&scores));
        rank_cells.push(scores);
        out.push(CellSummary { dataset: ds, estimator: est, methods, improvement_pct, welch_p, ranks: cell_ranks });
    }
    Ok(Summary { cells: out, average_ranks: average_ranks(&rank_cells) })
}
