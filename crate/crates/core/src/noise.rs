//! Synthetic label corruption.
//!
//! Class-conditional noise goes through a row-stochastic [`TransitionMatrix`]
//! with `T[i][j] = P(given = j | true = i)`. Pair noise sends mass `tau` from
//! class `i` to its cyclic successor `(i + 1) mod K`.
//!
//! Instance-dependent noise follows the truncated-normal and feature-projection
//! recipe common in the noisy-label literature (Xia et al., 2020):
//!
//! 1. Each example draws a flip rate `q_i` from a normal centred at `tau` with
//!    standard deviation [`INSTANCE_FLIP_STD`], truncated to `[0, 1]` by
//!    rejection. With `tau = 0` the rate is exactly zero.
//! 2. `K` seeded Gaussian direction vectors project the features to one logit
//!    per class. The true class is masked out and a softmax over the wrong
//!    classes, scaled by `q_i`, gives the flip distribution; the true class
//!    keeps `1 - q_i`.
//! 3. The given label is sampled from that distribution.
//!
//! Noise is applied once and never resampled. Features and indices pass
//! through unchanged.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NoisyDataset};
use crate::error::{Result, SftError};
use crate::rng;
use crate::tensor::Matrix;

/// Standard deviation of the per-example flip-rate distribution.
pub const INSTANCE_FLIP_STD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Symmetric,
    Pair,
    Instance,
}

impl NoiseKind {
    pub fn code(self) -> u8 {
        match self {
            NoiseKind::None => 0,
            NoiseKind::Symmetric => 1,
            NoiseKind::Pair => 2,
            NoiseKind::Instance => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => NoiseKind::None,
            1 => NoiseKind::Symmetric,
            2 => NoiseKind::Pair,
            3 => NoiseKind::Instance,
            _ => return None,
        })
    }
}

impl FromStr for NoiseKind {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" | "clean" => Ok(NoiseKind::None),
            "symmetric" | "sym" => Ok(NoiseKind::Symmetric),
            "pair" | "pairflip" => Ok(NoiseKind::Pair),
            "instance" | "inst" => Ok(NoiseKind::Instance),
            other => Err(SftError::Config(format!("unknown noise kind `{other}`"))),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::None => "none",
            NoiseKind::Symmetric => "symmetric",
            NoiseKind::Pair => "pair",
            NoiseKind::Instance => "instance",
        })
    }
}

fn check_ratio(tau: f64) -> Result<()> {
    if (0.0..1.0).contains(&tau) {
        Ok(())
    } else {
        Err(SftError::Parameter(format!("noise ratio must lie in [0, 1), got {tau}")))
    }
}

fn check_classes(k: usize) -> Result<()> {
    if k >= 2 {
        Ok(())
    } else {
        Err(SftError::Parameter(format!("need at least 2 classes, got {k}")))
    }
}

/// Row-stochastic `K x K` label transition matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    kind: NoiseKind,
    noise_ratio: f64,
    entries: Matrix,
}

impl TransitionMatrix {
    pub fn identity(k: usize) -> Result<Self> {
        Self::symmetric(k, 0.0).map(|t| TransitionMatrix {
            kind: NoiseKind::None,
            ..t
        })
    }

    /// Diagonal `1 - tau`, off-diagonal `tau / (K - 1)`.
    pub fn symmetric(k: usize, tau: f64) -> Result<Self> {
        check_classes(k)?;
        check_ratio(tau)?;
        let off = tau / (k - 1) as f64;
        let mut entries = Matrix::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                entries.set(i, j, if i == j { 1.0 - tau } else { off });
            }
        }
        Ok(TransitionMatrix {
            kind: NoiseKind::Symmetric,
            noise_ratio: tau,
            entries,
        })
    }

    /// Diagonal `1 - tau`, `tau` on the cyclic successor.
    pub fn pair(k: usize, tau: f64) -> Result<Self> {
        check_classes(k)?;
        check_ratio(tau)?;
        let mut entries = Matrix::zeros(k, k);
        for i in 0..k {
            entries.set(i, i, 1.0 - tau);
            let j = (i + 1) % k;
            entries.set(i, j, entries.get(i, j) + tau);
        }
        Ok(TransitionMatrix {
            kind: NoiseKind::Pair,
            noise_ratio: tau,
            entries,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.entries.rows()
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn noise_ratio(&self) -> f64 {
        self.noise_ratio
    }

    pub fn get(&self, from: usize, to: usize) -> f64 {
        self.entries.get(from, to)
    }

    pub fn row(&self, from: usize) -> &[f64] {
        self.entries.row(from)
    }

    /// Largest deviation of a row sum from 1.
    pub fn max_row_error(&self) -> f64 {
        self.entries
            .iter_rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Draws an index from a discrete distribution given as weights summing to 1.
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (j, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return j;
        }
    }
    // Rounding left `u` above the final cumulative sum; take the last
    // class with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Corrupts every label independently by its row of `matrix`.
pub fn apply_matrix_noise(clean: &Dataset, matrix: &TransitionMatrix, seed: u64) -> Result<NoisyDataset> {
    if matrix.num_classes() != clean.num_classes() {
        return Err(SftError::Data(format!(
            "transition matrix is {}x{} but the dataset has {} classes",
            matrix.num_classes(),
            matrix.num_classes(),
            clean.num_classes()
        )));
    }
    let mut rng = rng::stream(seed, rng::STREAM_NOISE);
    let given = clean
        .labels()
        .iter()
        .map(|&y| sample_categorical(matrix.row(y), rng.gen::<f64>()))
        .collect();
    NoisyDataset::from_parts(clean.clone(), given, matrix.kind(), matrix.noise_ratio())
}

/// Random projection used to make flips depend on the features.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceNoiseModel {
    /// `d x K`; column `k` is the direction scoring class `k`.
    directions: Matrix,
}

impl InstanceNoiseModel {
    pub fn new(dim: usize, num_classes: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, rng::STREAM_NOISE_DIRECTIONS);
        let data = (0..dim * num_classes)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        InstanceNoiseModel {
            directions: Matrix::from_vec(dim, num_classes, data).expect("sized above"),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.directions.cols()
    }

    /// Label distribution for one example given its flip rate. A pure
    /// function of the features, true label and `flip_rate`.
    pub fn flip_distribution(&self, features: &[f64], true_label: usize, flip_rate: f64) -> Vec<f64> {
        let k = self.num_classes();
        let mut logits = vec![0.0; k];
        for (x, dir) in features.iter().zip(self.directions.iter_rows()) {
            for (l, w) in logits.iter_mut().zip(dir) {
                *l += x * w;
            }
        }
        let max = logits
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != true_label)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut dist = vec![0.0; k];
        let mut sum = 0.0;
        for (j, (&l, d)) in logits.iter().zip(dist.iter_mut()).enumerate() {
            if j != true_label {
                *d = (l - max).exp();
                sum += *d;
            }
        }
        for (j, d) in dist.iter_mut().enumerate() {
            *d = if j == true_label {
                1.0 - flip_rate
            } else {
                flip_rate * *d / sum
            };
        }
        dist
    }
}

/// Normal(`mean`, [`INSTANCE_FLIP_STD`]) truncated to `[0, 1]`.
fn truncated_flip_rate(rng: &mut rng::Rng, mean: f64) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        let q = mean + INSTANCE_FLIP_STD * z;
        if (0.0..=1.0).contains(&q) {
            return q;
        }
    }
}

/// Feature-dependent corruption with mean flip rate close to `tau`.
pub fn apply_instance_noise(clean: &Dataset, tau: f64, seed: u64) -> Result<NoisyDataset> {
    check_ratio(tau)?;
    if !clean.features().is_finite() {
        return Err(SftError::Input("non-finite feature in instance-noise input".into()));
    }
    let model = InstanceNoiseModel::new(clean.dim(), clean.num_classes(), seed);
    let mut rng = rng::stream(seed, rng::STREAM_NOISE);
    let mut given = Vec::with_capacity(clean.len());
    for (x, &y) in clean.features().iter_rows().zip(clean.labels()) {
        let q = if tau == 0.0 {
            0.0
        } else {
            truncated_flip_rate(&mut rng, tau)
        };
        let dist = model.flip_distribution(x, y, q);
        given.push(sample_categorical(&dist, rng.gen::<f64>()));
    }
    NoisyDataset::from_parts(clean.clone(), given, NoiseKind::Instance, tau)
}

/// Applies the requested corruption kind.
pub fn corrupt(clean: &Dataset, kind: NoiseKind, tau: f64, seed: u64) -> Result<NoisyDataset> {
    let k = clean.num_classes();
    match kind {
        NoiseKind::None => apply_matrix_noise(clean, &TransitionMatrix::identity(k)?, seed),
        NoiseKind::Symmetric => apply_matrix_noise(clean, &TransitionMatrix::symmetric(k, tau)?, seed),
        NoiseKind::Pair => apply_matrix_noise(clean, &TransitionMatrix::pair(k, tau)?, seed),
        NoiseKind::Instance => apply_instance_noise(clean, tau, seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_labels(n: usize, k: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng::stream(seed, 77);
        let data: Vec<f64> = (0..n * d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let labels = (0..n).map(|i| i % k).collect();
        Dataset::new(Matrix::from_vec(n, d, data).unwrap(), labels, k).unwrap()
    }

    #[test]
    fn symmetric_entries() {
        let t = TransitionMatrix::symmetric(10, 0.4).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let expected = if i == j { 0.6 } else { 0.4 / 9.0 };
                assert_eq!(t.get(i, j), expected);
            }
        }
        assert!((t.get(0, 1) - 0.04444).abs() < 1e-5);
        assert!(t.max_row_error() <= 1e-12);

        let t = TransitionMatrix::symmetric(2, 0.3).unwrap();
        assert_eq!(t.row(0), &[0.7, 0.3]);
        assert_eq!(t.row(1), &[0.3, 0.7]);

        let t = TransitionMatrix::symmetric(4, 0.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(t.get(i, j), f64::from(u8::from(i == j)));
            }
        }
    }

    #[test]
    fn pair_entries() {
        let t = TransitionMatrix::pair(3, 0.4).unwrap();
        assert_eq!(t.row(0), &[0.6, 0.4, 0.0]);
        assert_eq!(t.row(1), &[0.0, 0.6, 0.4]);
        assert_eq!(t.row(2), &[0.4, 0.0, 0.6]);

        let t = TransitionMatrix::pair(10, 0.4).unwrap();
        for i in 0..10 {
            let mut nz: Vec<f64> = t.row(i).iter().copied().filter(|&v| v != 0.0).collect();
            nz.sort_by(f64::total_cmp);
            assert_eq!(nz, vec![0.4, 0.6]);
        }
        assert!(t.max_row_error() <= 1e-12);

        let t = TransitionMatrix::pair(5, 0.0).unwrap();
        assert!((0..5).all(|i| t.get(i, i) == 1.0));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(TransitionMatrix::symmetric(10, 1.0), Err(SftError::Parameter(_))));
        assert!(TransitionMatrix::symmetric(10, -0.1).is_err());
        assert!(TransitionMatrix::pair(1, 0.2).is_err());
        let clean = uniform_labels(10, 2, 2, 0);
        assert!(apply_instance_noise(&clean, 1.5, 0).is_err());
    }

    #[test]
    fn identity_never_flips() {
        let clean = uniform_labels(1000, 5, 3, 1);
        let noisy = apply_matrix_noise(&clean, &TransitionMatrix::identity(5).unwrap(), 4).unwrap();
        assert!(noisy.noise_mask().iter().all(|&m| !m));
        assert_eq!(noisy.given_labels(), clean.labels());
    }

    #[test]
    fn matrix_size_must_match() {
        let clean = uniform_labels(10, 3, 2, 1);
        let t = TransitionMatrix::symmetric(4, 0.2).unwrap();
        assert!(matches!(apply_matrix_noise(&clean, &t, 0), Err(SftError::Data(_))));
    }

    #[test]
    fn noise_keeps_features_and_is_deterministic() {
        let clean = uniform_labels(2000, 10, 4, 2);
        let t = TransitionMatrix::symmetric(10, 0.4).unwrap();
        let a = apply_matrix_noise(&clean, &t, 11).unwrap();
        let b = apply_matrix_noise(&clean, &t, 11).unwrap();
        let c = apply_matrix_noise(&clean, &t, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.given_labels(), c.given_labels());
        assert_eq!(a.features(), clean.features());
        assert_eq!(a.true_labels(), clean.labels());

        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_binary(&mut ba).unwrap();
        b.write_binary(&mut bb).unwrap();
        assert_eq!(ba, bb);
    }

    #[test]
    fn per_class_frequencies_match_rows() {
        // chi-square per true class against the matrix row, loose threshold
        let k = 5;
        let n = 100_000;
        let clean = uniform_labels(n, k, 1, 3);
        for t in [TransitionMatrix::symmetric(k, 0.4).unwrap(), TransitionMatrix::pair(k, 0.3).unwrap()] {
            let noisy = apply_matrix_noise(&clean, &t, 5).unwrap();
            let mut counts = vec![vec![0usize; k]; k];
            for ex in noisy.examples() {
                counts[ex.true_label][ex.given_label] += 1;
            }
            for i in 0..k {
                let total: usize = counts[i].iter().sum();
                let mut chi2 = 0.0;
                for j in 0..k {
                    let expected = t.get(i, j) * total as f64;
                    if expected > 0.0 {
                        let diff = counts[i][j] as f64 - expected;
                        chi2 += diff * diff / expected;
                    } else {
                        assert_eq!(counts[i][j], 0);
                    }
                }
                // 4 degrees of freedom; 30 is far beyond the 0.999 quantile (18.5)
                assert!(chi2 < 30.0, "class {i}: chi2 = {chi2}");
            }
        }
    }

    #[test]
    fn instance_noise_zero_rate_is_clean() {
        let clean = uniform_labels(500, 4, 6, 9);
        let noisy = apply_instance_noise(&clean, 0.0, 1).unwrap();
        assert!(noisy.noise_mask().iter().all(|&m| !m));
    }

    #[test]
    fn instance_distribution_is_a_function_of_features() {
        let model = InstanceNoiseModel::new(3, 4, 8);
        let x = [0.3, -1.2, 0.7];
        let a = model.flip_distribution(&x, 2, 0.35);
        let b = model.flip_distribution(&x, 2, 0.35);
        assert_eq!(a, b);
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((a[2] - 0.65).abs() < 1e-15);
        let other = model.flip_distribution(&[2.0, 0.1, -0.4], 2, 0.35);
        assert_ne!(a, other);
    }

    #[test]
    fn instance_noise_rate_tracks_tau() {
        let clean = uniform_labels(20_000, 10, 32, 4);
        let noisy = apply_instance_noise(&clean, 0.4, 21).unwrap();
        let frac = noisy.noise_fraction();
        assert!((0.38..=0.42).contains(&frac), "{frac}");
        assert_eq!(noisy.kind(), NoiseKind::Instance);
    }

    #[test]
    fn categorical_sampling_edges() {
        assert_eq!(sample_categorical(&[0.0, 1.0, 0.0], 0.0), 1);
        assert_eq!(sample_categorical(&[0.5, 0.5, 0.0], 0.999_999_999_999), 1);
        // cumulative sum falls just short of u
        assert_eq!(sample_categorical(&[0.3, 0.3, 0.3999999], 0.99999999), 2);
    }
}
