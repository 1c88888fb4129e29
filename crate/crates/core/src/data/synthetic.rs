//! Seeded synthetic tasks used by tests, benches and the acceptance suite.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{Dataset, TaskKind};
use crate::error::Result;
use crate::rng::substream;

/// `n` points from a `components`-way equal-weight Gaussian mixture in `d`
/// dimensions with N(0, 2^2) component means and unit within-component spread.
pub fn gaussian_mixture(n: usize, d: usize, components: usize, seed: u64) -> Array2<f64> {
    let mut rng = substream(seed, "mixture", 0);
    let means = Array2::from_shape_fn((components.max(1), d), |_| 2.0 * rng.sample::<f64, _>(StandardNormal));
    let mut x = Array2::zeros((n, d));
    for i in 0..n {
        let c = rng.random_range(0..means.nrows());
        for j in 0..d {
            x[[i, j]] = means[[c, j]] + rng.sample::<f64, _>(StandardNormal);
        }
    }
    x
}

/// Two-class Gaussian-cluster task: each class is a mixture of
/// `clusters_per_class` anisotropic Gaussians, and 5% of labels are flipped.
pub fn gaussian_classification(n: usize, d: usize, clusters_per_class: usize, seed: u64) -> Result<Dataset> {
    let mut rng = substream(seed, "gaussian-task", 0);
    let k = 2 * clusters_per_class.max(1);
    let centers = Array2::from_shape_fn((k, d), |_| 0.9 * rng.sample::<f64, _>(StandardNormal));
    let scales = Array2::from_shape_fn((k, d), |_| rng.random_range(0.6..1.4));
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let c = rng.random_range(0..k);
        for j in 0..d {
            x[[i, j]] = centers[[c, j]] + scales[[c, j]] * rng.sample::<f64, _>(StandardNormal);
        }
        let mut label = (c % 2) as f64;
        if rng.random::<f64>() < 0.05 {
            label = 1.0 - label;
        }
        y[i] = label;
    }
    Dataset::new(x, Some(y), None, TaskKind::Classification { n_classes: 2 }).map(|ds| ds.with_label_name("y"))
}

/// Regression task with smooth main effects and two pairwise interactions
/// on correlated Gaussian inputs (`d >= 5`).
pub fn nonlinear_regression(n: usize, d: usize, seed: u64) -> Result<Dataset> {
    assert!(d >= 5, "nonlinear_regression needs d >= 5");
    let mut rng = substream(seed, "regression-task", 0);
    let noise = Normal::new(0.0, 0.1).expect("valid sd");
    let mut x = Array2::zeros((n, d));
    let mut y = Array1::zeros(n);
    for i in 0..n {
        let shared: f64 = rng.sample(StandardNormal);
        for j in 0..d {
            let own: f64 = rng.sample(StandardNormal);
            // neighbouring features share a latent factor
            x[[i, j]] = if j % 2 == 0 { 0.8 * own + 0.6 * shared } else { own };
        }
        let r = x.row(i);
        y[i] = (1.5 * r[0]).sin() + 0.5 * r[1] * r[1] + r[2] * r[3] - 0.8 * r[4]
            + 0.3 * (r[d - 1]).tanh()
            + noise.sample(&mut rng);
    }
    Dataset::new(x, Some(y), None, TaskKind::Regression).map(|ds| ds.with_label_name("y"))
}
