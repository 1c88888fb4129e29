//! Gaussian kernel `k(x, y) = exp(-|x - y|^2 / (2 sigma^2))` and Gram matrices.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{CteError, Result};
use crate::parallel::Exec;

/// Above this dimension squared distances use Kahan summation.
const COMPENSATED_DIM: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianKernel {
    sigma: f64,
}

/// The pipeline-wide bandwidth `sqrt(2 d)`.
pub fn default_bandwidth(d: usize) -> f64 {
    (2.0 * d as f64).sqrt()
}

/// Squared Euclidean distance; equal lengths are the caller's contract.
#[inline]
pub fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.len() > COMPENSATED_DIM {
        let (mut sum, mut c) = (0.0f64, 0.0f64);
        for (x, y) in a.iter().zip(b.iter()) {
            let t = (x - y) * (x - y) - c;
            let s = sum + t;
            c = (s - sum) - t;
            sum = s;
        }
        sum
    } else {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
    }
}

impl GaussianKernel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(CteError::config(format!("bandwidth must be positive, got {sigma}")));
        }
        Ok(GaussianKernel { sigma })
    }

    /// Kernel with the default bandwidth for `d` features.
    pub fn for_dim(d: usize) -> Self {
        GaussianKernel { sigma: default_bandwidth(d.max(1)) }
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    #[inline]
    pub fn from_sq_dist(&self, d2: f64) -> f64 {
        (-d2 / (2.0 * self.sigma * self.sigma)).exp()
    }

    pub fn eval(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != y.len() {
            return Err(CteError::shape(format!("kernel inputs of length {} and {}", x.len(), y.len())));
        }
        Ok(self.eval_unchecked(x, y))
    }

    #[inline]
    pub fn eval_unchecked(&self, x: ArrayView1<'_, f64>, y: ArrayView1<'_, f64>) -> f64 {
        self.from_sq_dist(sq_dist(x, y))
    }
}

/// Matrix of kernel evaluations between two point sets.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    pub values: Array2<f64>,
}

impl KernelMatrix {
    pub fn dim(&self) -> (usize, usize) {
        self.values.dim()
    }

    pub fn sum(&self) -> f64 {
        self.values.rows().into_iter().map(|r| r.sum()).sum()
    }
}

pub fn gram(kernel: &GaussianKernel, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<KernelMatrix> {
    gram_with(kernel, a, b, Exec::default())
}

/// Row-parallel Gram matrix. Each entry is computed independently, so the
/// result does not depend on the execution policy.
pub fn gram_with(
    kernel: &GaussianKernel,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    exec: Exec,
) -> Result<KernelMatrix> {
    if a.ncols() != b.ncols() {
        return Err(CteError::shape(format!("gram of {}-d and {}-d points", a.ncols(), b.ncols())));
    }
    let rows = exec.map(a.nrows(), |i| {
        let ai = a.row(i);
        b.rows().into_iter().map(|bj| kernel.eval_unchecked(ai, bj)).collect::<Vec<f64>>()
    });
    let values = Array2::from_shape_vec((a.nrows(), b.nrows()), rows.concat()).expect("row lengths match");
    Ok(KernelMatrix { values })
}
