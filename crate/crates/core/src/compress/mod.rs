//! Coreset selection: i.i.d. sampling, k-medoids, kernel halving and
//! Compress++.

mod compresspp;
mod iid;
mod kmedoids;
mod kt;

pub use compresspp::{compresspp, compresspp_indices, largest_power_of_four, natural_size};
pub use iid::iid_sample;
pub use kmedoids::{kmedoids, kmedoids_indices};
pub use kt::{kt_halve, kt_thin};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{CteError, Result};
use crate::kernels::GaussianKernel;

/// Failure probability of the kernel-thinning split thresholds.
pub const KT_DELTA: f64 = 0.5;
pub const DEFAULT_OVERSAMPLE_G: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Iid,
    Kt,
    Kmedoids,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Iid, Method::Kt, Method::Kmedoids];

    pub fn name(self) -> &'static str {
        match self {
            Method::Iid => "iid",
            Method::Kt => "kt",
            Method::Kmedoids => "kmedoids",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = CteError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Method::Iid),
            "kt" => Ok(Method::Kt),
            "kmedoids" => Ok(Method::Kmedoids),
            _ => Err(CteError::config(format!("unknown compression method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub method: Method,
    pub seed: u64,
    /// Compress++ oversampling parameter `g`.
    pub oversample_g: u32,
    /// Output size; `None` resolves to the size Compress++ returns.
    pub target_size: Option<usize>,
    /// `None` resolves to the Gaussian kernel with bandwidth `sqrt(2 d)`.
    pub kernel: Option<GaussianKernel>,
}

impl CompressorConfig {
    pub fn new(method: Method, seed: u64) -> Self {
        CompressorConfig { method, seed, oversample_g: DEFAULT_OVERSAMPLE_G, target_size: None, kernel: None }
    }

    pub fn with_size(mut self, size: usize) -> Self {
        self.target_size = Some(size);
        self
    }

    pub fn resolved_kernel(&self, d: usize) -> GaussianKernel {
        self.kernel.unwrap_or_else(|| GaussianKernel::for_dim(d))
    }

    pub fn resolved_size(&self, n: usize) -> Result<usize> {
        let size = match self.target_size {
            Some(s) => s,
            None => natural_size(n)?,
        };
        if size == 0 {
            return Err(CteError::config("coreset size must be positive"));
        }
        if size > n {
            return Err(CteError::config(format!("coreset size {size} exceeds {n} rows")));
        }
        Ok(size)
    }
}

/// Row indices of a coreset with their provenance.
///
/// JSON: `{method, seed, sigma, g, indices}`. The wall-clock time is kept
/// in memory only so that files are reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoresetSelection {
    pub method: Method,
    pub seed: u64,
    pub sigma: f64,
    pub g: u32,
    pub indices: Vec<usize>,
    #[serde(default, skip_serializing)]
    pub elapsed_seconds: f64,
}

impl CoresetSelection {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Checks indices against a dataset of `n` rows.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        if self.indices.is_empty() {
            return Err(CteError::config("empty coreset"));
        }
        match self.indices.iter().find(|&&i| i >= n) {
            Some(&bad) => Err(CteError::Bounds { index: bad, len: n }),
            None => Ok(()),
        }
    }
}

/// Runs the configured compressor on the feature matrix of `data`.
pub fn compress(data: &Dataset, config: &CompressorConfig) -> Result<CoresetSelection> {
    let n = data.n_rows();
    let size = config.resolved_size(n)?;
    let kernel = config.resolved_kernel(data.n_features());
    let start = Instant::now();
    let indices = match config.method {
        Method::Iid => iid::iid_indices(n, size, config.seed)?,
        Method::Kmedoids => kmedoids_indices(data.features(), size, config.seed)?,
        Method::Kt => {
            compresspp_indices(data.features(), &kernel, config.oversample_g, config.target_size, config.seed)?
        }
    };
    Ok(CoresetSelection {
        method: config.method,
        seed: config.seed,
        sigma: kernel.sigma(),
        g: config.oversample_g,
        indices,
        elapsed_seconds: start.elapsed().as_secs_f64(),
    })
}
