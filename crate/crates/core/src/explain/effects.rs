use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::marginal::mean;
use super::ExplainConfig;
use crate::error::{CteError, Result};
use crate::models::ModelFunction;

pub const GRID_1D: usize = 100;
pub const GRID_2D: usize = 10;

/// Per-feature grid ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectGrid {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl EffectGrid {
    /// Column-wise `[min, max]` of `x`.
    pub fn from_data(x: ArrayView2<'_, f64>) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(CteError::config("grid needs at least one row"));
        }
        let lo = x.columns().into_iter().map(|c| c.fold(f64::INFINITY, |a, &b| a.min(b))).collect();
        let hi = x.columns().into_iter().map(|c| c.fold(f64::NEG_INFINITY, |a, &b| a.max(b))).collect();
        Ok(EffectGrid { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// `m` evenly spaced points over feature `j`'s range, endpoints included.
    /// A constant feature yields `m` copies of its value.
    pub fn points(&self, j: usize, m: usize) -> Vec<f64> {
        let (lo, hi) = (self.lo[j], self.hi[j]);
        if m == 1 {
            return vec![lo];
        }
        (0..m).map(|k| lo + (hi - lo) * k as f64 / (m - 1) as f64).collect()
    }
}

/// Partial dependence on every feature (100-point grids) and every unordered
/// feature pair (10x10 grids).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEffects {
    pub grid: EffectGrid,
    /// `d x 100`.
    pub effects_1d: Array2<f64>,
    /// Unordered pairs `(i, j)` with `i < j`, row-major.
    pub pairs: Vec<(usize, usize)>,
    /// One `10 x 10` block per pair; entry `[a, b]` has feature `i` at its
    /// `a`-th grid point and feature `j` at its `b`-th.
    pub effects_2d: Vec<Array2<f64>>,
}

impl FeatureEffects {
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    /// Length of [`FeatureEffects::flatten`]: `100 (d + d^2)`.
    pub fn flat_len(d: usize) -> usize {
        GRID_1D * d + GRID_2D * GRID_2D * d * d
    }

    /// All effects as one vector: the 1-D grids, then every ordered pair
    /// `(i, j)` with `i != j` (the block of `(j, i)` transposed when
    /// `i > j`), then `d` zero blocks standing in for the diagonal.
    pub fn flatten(&self) -> Array1<f64> {
        let d = self.dim();
        let mut out = Vec::with_capacity(Self::flat_len(d));
        out.extend(self.effects_1d.iter());
        let block = |i: usize, j: usize| -> Array2<f64> {
            let (a, b, t) = if i < j { (i, j, false) } else { (j, i, true) };
            let pos = self.pairs.iter().position(|&p| p == (a, b)).expect("pair present");
            if t {
                self.effects_2d[pos].t().to_owned()
            } else {
                self.effects_2d[pos].clone()
            }
        };
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    out.extend(block(i, j).iter());
                }
            }
        }
        out.resize(Self::flat_len(d), 0.0);
        Array1::from(out)
    }

    /// Long CSV: `kind,feature_a,feature_b,value_a,value_b,effect`.
    pub fn write_csv<W: Write>(&self, names: &[String], mut w: W) -> Result<()> {
        let name = |j: usize| names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        writeln!(w, "kind,feature_a,feature_b,value_a,value_b,effect")?;
        for j in 0..self.dim() {
            for (k, g) in self.grid.points(j, GRID_1D).iter().enumerate() {
                writeln!(w, "1d,{},,{g:?},,{:?}", name(j), self.effects_1d[[j, k]])?;
            }
        }
        for (&(i, j), block) in self.pairs.iter().zip(&self.effects_2d) {
            let (gi, gj) = (self.grid.points(i, GRID_2D), self.grid.points(j, GRID_2D));
            for a in 0..GRID_2D {
                for b in 0..GRID_2D {
                    writeln!(w, "2d,{},{},{:?},{:?},{:?}", name(i), name(j), gi[a], gj[b], block[[a, b]])?;
                }
            }
        }
        Ok(())
    }
}

enum Task {
    One(usize),
    Two(usize, usize),
}

/// Partial dependence of `f` over the foreground rows. With `grid = None`
/// the grid spans the foreground's per-feature range.
pub fn feature_effects<M: ModelFunction + ?Sized>(
    f: &M,
    foreground: ArrayView2<'_, f64>,
    grid: Option<&EffectGrid>,
    config: &ExplainConfig,
) -> Result<FeatureEffects> {
    let d = f.n_inputs();
    if foreground.ncols() != d {
        return Err(CteError::shape(format!("model takes {d} features, foreground has {}", foreground.ncols())));
    }
    let grid = match grid {
        Some(g) if g.dim() != d => return Err(CteError::shape("grid dimension does not match the model")),
        Some(g) => g.clone(),
        None => EffectGrid::from_data(foreground)?,
    };
    if foreground.nrows() == 0 {
        return Err(CteError::config("foreground must contain at least one row"));
    }
    let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i + 1..d).map(move |j| (i, j))).collect();
    let tasks: Vec<Task> = (0..d).map(Task::One).chain(pairs.iter().map(|&(i, j)| Task::Two(i, j))).collect();
    let results: Vec<Vec<f64>> = config.exec.map_slice(&tasks, |task| {
        let mut buf = foreground.to_owned();
        match *task {
            Task::One(j) => grid
                .points(j, GRID_1D)
                .into_iter()
                .map(|g| {
                    buf.column_mut(j).fill(g);
                    mean(&f.eval_unchecked(buf.view()))
                })
                .collect(),
            Task::Two(i, j) => {
                let (gi, gj) = (grid.points(i, GRID_2D), grid.points(j, GRID_2D));
                let mut out = Vec::with_capacity(GRID_2D * GRID_2D);
                for &a in &gi {
                    buf.column_mut(i).fill(a);
                    for &b in &gj {
                        buf.column_mut(j).fill(b);
                        out.push(mean(&f.eval_unchecked(buf.view())));
                    }
                }
                out
            }
        }
    });
    let mut effects_1d = Array2::zeros((d, GRID_1D));
    let mut effects_2d = Vec::with_capacity(pairs.len());
    for (t, r) in tasks.iter().zip(results) {
        match *t {
            Task::One(j) => effects_1d.row_mut(j).assign(&Array1::from(r)),
            Task::Two(..) => {
                effects_2d.push(Array2::from_shape_vec((GRID_2D, GRID_2D), r).expect("10x10 block"));
            }
        }
    }
    Ok(FeatureEffects { grid, effects_1d, pairs, effects_2d })
}
