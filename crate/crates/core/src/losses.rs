//! Objective functions.
//!
//! Every loss here is a function of a probability row `p` and a given label
//! `y`. Logarithms are taken of `max(p, PROB_FLOOR)`; a floored probability
//! contributes no gradient through its logarithm.
//!
//! Gradients are returned with respect to the logits. Internally each term
//! produces the probability-weighted sensitivity `u_k = p_k * dL/dp_k`, which
//! stays finite even when `p_k` underflows, and the softmax Jacobian turns it
//! into `dL/dz_i = u_i - p_i * sum_k u_k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::tensor::Matrix;

pub const PROB_FLOOR: f64 = 1e-12;

/// Component names used in metrics output.
pub const COMPONENT_CE: &str = "ce";
pub const COMPONENT_WARMUP_R: &str = "warmup_r";
pub const COMPONENT_CR: &str = "cr";
pub const COMPONENT_TOTAL: &str = "total";

#[inline]
fn floored_ln(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Warmup,
    Main,
}

impl FromStr for Stage {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" | "warm-up" | "warm_up" => Ok(Stage::Warmup),
            "main" => Ok(Stage::Main),
            other => Err(SftError::Config(format!("unknown stage `{other}`"))),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Warmup => "warmup",
            Stage::Main => "main",
        })
    }
}

/// Which objective to optimise for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Plain cross-entropy.
    CrossEntropy,
    /// Cross-entropy plus the second-largest-class penalty `R`.
    Warmup { gamma: f64 },
    /// Cross-entropy plus `lambda` times the all-class penalty `L_CR`.
    Main { gamma: f64, lambda: f64 },
    /// Label smoothing: `-ln p_y - epsilon * sum_k ln p_k`.
    LabelSmoothing { epsilon: f64 },
}

impl Objective {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Objective::CrossEntropy => Ok(()),
            Objective::Warmup { gamma } => check_gamma(gamma),
            Objective::Main { gamma, lambda } => {
                check_gamma(gamma)?;
                if !(lambda >= 0.0 && lambda.is_finite()) {
                    return Err(SftError::Config(format!("lambda must be >= 0, got {lambda}")));
                }
                Ok(())
            }
            Objective::LabelSmoothing { epsilon } => {
                if !(0.0..1.0).contains(&epsilon) {
                    return Err(SftError::Config(format!(
                        "epsilon must lie in [0, 1), got {epsilon}"
                    )));
                }
                Ok(())
            }
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma <= 1.0 {
        Ok(())
    } else {
        Err(SftError::Config(format!("gamma must lie in (0, 1], got {gamma}")))
    }
}

/// An objective plus the gradient treatment of the adaptive weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub objective: Objective,
    /// Treat the adaptive weight as a constant when differentiating.
    pub detach_alpha: bool,
}

impl LossSpec {
    pub fn new(objective: Objective) -> Self {
        LossSpec {
            objective,
            detach_alpha: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Confidence threshold.
    pub gamma: f64,
    /// Weight of the main-stage penalty.
    pub lambda: f64,
    /// Smoothing coefficient for the label-smoothing comparison.
    pub epsilon: f64,
    pub stage: Stage,
    pub detach_alpha: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 0.2,
            lambda: 1.0,
            epsilon: 0.1,
            stage: Stage::Warmup,
            detach_alpha: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        check_gamma(self.gamma)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(SftError::Config(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(SftError::Config(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }

    pub fn with_stage(self, stage: Stage) -> Self {
        LossConfig { stage, ..self }
    }

    /// The objective for the configured stage.
    pub fn objective(&self) -> Objective {
        match self.stage {
            Stage::Warmup => Objective::Warmup { gamma: self.gamma },
            Stage::Main => Objective::Main {
                gamma: self.gamma,
                lambda: self.lambda,
            },
        }
    }

    pub fn spec(&self) -> LossSpec {
        LossSpec {
            objective: self.objective(),
            detach_alpha: self.detach_alpha,
        }
    }
}

/// Adaptive weight `max(0, gamma - p_k / p_y)`.
///
/// `p_y` is floored at [`PROB_FLOOR`] before dividing.
pub fn alpha(p_k: f64, p_y: f64, gamma: f64) -> f64 {
    (gamma - p_k / p_y.max(PROB_FLOOR)).max(0.0)
}

/// Index of the second-largest probability. Ties rank the lower class index
/// first, so for `(0.98, 0.01, 0.01)` this is 1.
pub fn second_largest(p: &[f64]) -> usize {
    debug_assert!(p.len() >= 2);
    let mut first = 0;
    let mut second = usize::MAX;
    for (i, &v) in p.iter().enumerate().skip(1) {
        if v > p[first] {
            second = first;
            first = i;
        } else if second == usize::MAX || v > p[second] {
            second = i;
        }
    }
    second
}

pub fn cross_entropy(p: &[f64], y: usize) -> f64 {
    -floored_ln(p[y])
}

/// Warm-up penalty `R = -alpha(p_j) ln p_j` with `j` the second most
/// confident class. When `j == y` the ratio is 1 and the penalty vanishes.
pub fn warmup_penalty(p: &[f64], y: usize, gamma: f64) -> f64 {
    let j = second_largest(p);
    if j == y {
        return 0.0;
    }
    -alpha(p[j], p[y], gamma) * floored_ln(p[j])
}

/// `-(1/K) sum_k w_k ln p_k` for arbitrary per-class weights.
pub fn weighted_log_penalty(p: &[f64], weights: &[f64]) -> f64 {
    let k = p.len() as f64;
    -p.iter()
        .zip(weights)
        .map(|(&pk, &w)| w * floored_ln(pk))
        .sum::<f64>()
        / k
}

/// All-class confidence penalty `L_CR = -(1/K) sum_k alpha(p_k) ln p_k`.
pub fn cr_penalty(p: &[f64], y: usize, gamma: f64) -> f64 {
    let weights: Vec<f64> = p
        .iter()
        .enumerate()
        .map(|(k, &pk)| if k == y { 0.0 } else { alpha(pk, p[y], gamma) })
        .collect();
    weighted_log_penalty(p, &weights)
}

/// The smoothing term alone: `-epsilon * sum_k ln p_k`.
pub fn label_smoothing_penalty(p: &[f64], epsilon: f64) -> f64 {
    -epsilon * p.iter().map(|&pk| floored_ln(pk)).sum::<f64>()
}

pub fn label_smoothing_loss(p: &[f64], y: usize, epsilon: f64) -> f64 {
    cross_entropy(p, y) + label_smoothing_penalty(p, epsilon)
}

/// Per-example loss breakdown. `total` is what gets optimised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub ce: f64,
    pub warmup_r: f64,
    /// Unweighted `L_CR`; `total` includes the lambda factor.
    pub cr: f64,
    /// Label-smoothing penalty, when that objective is active.
    pub ls: f64,
    pub total: f64,
}

impl LossComponents {
    /// Weighted regularizer contribution, i.e. `total - ce`.
    pub fn regularizer(&self) -> f64 {
        self.total - self.ce
    }

    fn add(&mut self, other: &LossComponents) {
        self.ce += other.ce;
        self.warmup_r += other.warmup_r;
        self.cr += other.cr;
        self.ls += other.ls;
        self.total += other.total;
    }

    fn scale(&mut self, s: f64) {
        self.ce *= s;
        self.warmup_r *= s;
        self.cr *= s;
        self.ls *= s;
        self.total *= s;
    }
}

pub fn example_loss(p: &[f64], y: usize, objective: &Objective) -> LossComponents {
    let ce = cross_entropy(p, y);
    let mut c = LossComponents {
        ce,
        total: ce,
        ..Default::default()
    };
    match *objective {
        Objective::CrossEntropy => {}
        Objective::Warmup { gamma } => {
            c.warmup_r = warmup_penalty(p, y, gamma);
            c.total += c.warmup_r;
        }
        Objective::Main { gamma, lambda } => {
            c.cr = cr_penalty(p, y, gamma);
            c.total += lambda * c.cr;
        }
        Objective::LabelSmoothing { epsilon } => {
            c.ls = label_smoothing_penalty(p, epsilon);
            c.total += c.ls;
        }
    }
    c
}

/// Accumulates the sensitivity of `scale * (-alpha(p_k, p_y) ln p_k)`.
fn add_alpha_term(p: &[f64], y: usize, k: usize, gamma: f64, scale: f64, detach: bool, u: &mut [f64]) {
    let py = p[y].max(PROB_FLOOR);
    let ratio = p[k] / py;
    let a = gamma - ratio;
    // Clipped region: zero value, zero gradient.
    if a <= 0.0 {
        return;
    }
    let ln_pk = floored_ln(p[k]);
    if p[k] > PROB_FLOOR {
        u[k] -= scale * a;
    }
    if !detach {
        // d(alpha)/dp_k = -1/p_y and d(alpha)/dp_y = p_k/p_y^2.
        u[k] += scale * ratio * ln_pk;
        if p[y] > PROB_FLOOR {
            u[y] -= scale * ratio * ln_pk;
        }
    }
}

/// Gradient of one example's loss with respect to its logits.
pub fn logit_gradient(p: &[f64], y: usize, spec: &LossSpec) -> Vec<f64> {
    let k_classes = p.len();
    let mut u = vec![0.0; k_classes];
    if p[y] > PROB_FLOOR {
        u[y] -= 1.0;
    }
    match spec.objective {
        Objective::CrossEntropy => {}
        Objective::Warmup { gamma } => {
            let j = second_largest(p);
            if j != y {
                add_alpha_term(p, y, j, gamma, 1.0, spec.detach_alpha, &mut u);
            }
        }
        Objective::Main { gamma, lambda } => {
            let scale = lambda / k_classes as f64;
            if scale != 0.0 {
                for k in (0..k_classes).filter(|&k| k != y) {
                    add_alpha_term(p, y, k, gamma, scale, spec.detach_alpha, &mut u);
                }
            }
        }
        Objective::LabelSmoothing { epsilon } => {
            for (k, uk) in u.iter_mut().enumerate() {
                if p[k] > PROB_FLOOR {
                    *uk -= epsilon;
                }
            }
        }
    }
    let total: f64 = u.iter().sum();
    u.iter().zip(p).map(|(&ui, &pi)| ui - pi * total).collect()
}

/// Batch objective value.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveValue {
    /// Mean over the batch.
    pub mean: LossComponents,
    pub per_example: Vec<LossComponents>,
}

fn check_batch(probs: &Matrix, labels: &[usize]) -> Result<()> {
    if probs.rows() != labels.len() {
        return Err(SftError::shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    if probs.cols() < 2 {
        return Err(SftError::shape("at least two classes are required"));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= probs.cols()) {
        return Err(SftError::Data(format!(
            "label {bad} out of range for {} classes",
            probs.cols()
        )));
    }
    Ok(())
}

/// Mean objective over a batch of probability rows, with the per-example
/// breakdown.
pub fn objective(probs: &Matrix, labels: &[usize], objective: &Objective) -> Result<ObjectiveValue> {
    check_batch(probs, labels)?;
    objective.validate()?;
    let per_example: Vec<LossComponents> = probs
        .iter_rows()
        .zip(labels)
        .map(|(p, &y)| example_loss(p, y, objective))
        .collect();
    let mut mean = LossComponents::default();
    for c in &per_example {
        mean.add(c);
    }
    if !per_example.is_empty() {
        mean.scale(1.0 / per_example.len() as f64);
    }
    Ok(ObjectiveValue { mean, per_example })
}

/// Objective value together with the gradient of the batch mean with respect
/// to the logits.
pub fn objective_with_grad(
    probs: &Matrix,
    labels: &[usize],
    spec: &LossSpec,
) -> Result<(ObjectiveValue, Matrix)> {
    let value = objective(probs, labels, &spec.objective)?;
    let batch = probs.rows();
    let mut grad = Matrix::zeros(batch, probs.cols());
    let inv = 1.0 / batch.max(1) as f64;
    for (i, &y) in labels.iter().enumerate() {
        let g = logit_gradient(probs.row(i), y, spec);
        for (dst, v) in grad.row_mut(i).iter_mut().zip(g) {
            *dst = v * inv;
        }
    }
    Ok((value, grad))
}
