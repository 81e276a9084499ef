//! Synthetic classification data.
//!
//! Gaussian mixture: each class mean is a random unit direction scaled to
//! norm `separation`, samples add unit-covariance noise. Smaller separation
//! puts more examples near the decision boundaries.
//!
//! Spirals: `K` interleaved arms in the first two coordinates with Gaussian
//! jitter of standard deviation `1 / separation`; any extra coordinates are
//! standard normal noise.
//!
//! Labels cycle through the classes, so every split is balanced to within
//! one example per class. Train and test splits share the class geometry and
//! draw samples from separate streams.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sft_core::rng::{self, Rng};
use sft_core::{Dataset, Matrix};

use crate::config::{DataKind, DataSpec};
use crate::error::{ExperimentError, Result};

/// Class means of the Gaussian mixture, one row per class.
pub fn mixture_means(classes: usize, dim: usize, separation: f64, seed: u64) -> Matrix {
    let mut rng = rng::stream(seed, rng::STREAM_DATA);
    let mut means = Matrix::zeros(classes, dim);
    for c in 0..classes {
        let row = means.row_mut(c);
        for v in row.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in row.iter_mut() {
            *v *= separation / norm;
        }
    }
    means
}

fn sample_mixture(means: &Matrix, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let (k, d) = (means.rows(), means.cols());
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % k;
        for &m in means.row(y) {
            let z: f64 = StandardNormal.sample(rng);
            data.push(m + z);
        }
        labels.push(y);
    }
    Ok(Dataset::new(Matrix::from_vec(n, d, data)?, labels, k)?)
}

fn sample_spirals(classes: usize, dim: usize, separation: f64, n: usize, rng: &mut Rng) -> Result<Dataset> {
    let jitter = 1.0 / separation;
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % classes;
        let t: f64 = rng.gen_range(0.05..1.0);
        let radius = 4.0 * t;
        let angle = y as f64 * std::f64::consts::TAU / classes as f64 + 1.5 * std::f64::consts::PI * t;
        let zx: f64 = StandardNormal.sample(rng);
        let zy: f64 = StandardNormal.sample(rng);
        data.push(radius * angle.cos() + jitter * zx);
        data.push(radius * angle.sin() + jitter * zy);
        for _ in 2..dim {
            data.push(StandardNormal.sample(rng));
        }
        labels.push(y);
    }
    Ok(Dataset::new(Matrix::from_vec(n, dim, data)?, labels, classes)?)
}

/// Clean train and test splits for a synthetic generator.
pub fn generate(spec: &DataSpec) -> Result<(Dataset, Dataset)> {
    let mut train_rng = rng::stream(spec.seed, rng::STREAM_DATA_TRAIN);
    let mut test_rng = rng::stream(spec.seed, rng::STREAM_DATA_TEST);
    match spec.kind {
        DataKind::GaussianMixture => {
            let means = mixture_means(spec.classes, spec.dim, spec.separation, spec.seed);
            Ok((
                sample_mixture(&means, spec.n_train, &mut train_rng)?,
                sample_mixture(&means, spec.n_test, &mut test_rng)?,
            ))
        }
        DataKind::TwoSpirals => Ok((
            sample_spirals(spec.classes, spec.dim, spec.separation, spec.n_train, &mut train_rng)?,
            sample_spirals(spec.classes, spec.dim, spec.separation, spec.n_test, &mut test_rng)?,
        )),
        DataKind::Idx => Err(ExperimentError::Config(
            "data.kind: idx-file data is loaded, not generated".into(),
        )),
    }
}
