//! Feed-forward ReLU classifier with softmax output and momentum SGD.
//!
//! Layer weights are stored row-major with shape `(out, in)`. Hidden layers
//! use ReLU; the last layer produces logits that go through a max-subtracted
//! softmax.
//!
//! The optimizer is heavy-ball SGD with coupled weight decay:
//!
//! ```text
//! g' = g + weight_decay * w
//! v  = momentum * v + g'
//! w  = w - lr_eff * v
//! ```
//!
//! where `lr_eff = learning_rate / lr_decay_factor` once `epoch >= lr_decay_epoch`
//! (epochs are zero-based) and `learning_rate` before. Decay applies to
//! biases as well as weights.

use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::losses::{self, LossSpec, ObjectiveValue};
use crate::rng;
use crate::tensor::{softmax_in_place, Matrix};

const CHECKPOINT_MAGIC: &[u8; 8] = b"SFTCKPT1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Zero-based epoch from which the decayed rate applies.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub batch_size: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_decay_epoch: 45,
            lr_decay_factor: 10.0,
            batch_size: 32,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(SftError::Config(format!("optim.{field}: {why}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be > 0");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum", "must lie in [0, 1)");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay", "must be >= 0");
        }
        if self.lr_decay_epoch == 0 {
            return bad("lr_decay_epoch", "must be positive");
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor.is_finite()) {
            return bad("lr_decay_factor", "must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        Ok(())
    }

    pub fn effective_lr(&self, epoch: usize) -> f64 {
        let passed = i32::from(epoch >= self.lr_decay_epoch);
        self.learning_rate / self.lr_decay_factor.powi(passed)
    }
}

/// Weights and bias of one dense layer, or a tensor of the same shape
/// (gradient, momentum buffer).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTensor {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerTensor {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        LayerTensor {
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gradients {
    pub layers: Vec<LayerTensor>,
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.values().all(|v| v.is_finite()))
    }
}

/// Classifier parameters plus momentum buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    /// `[input, hidden..., classes]`.
    widths: Vec<usize>,
    params: Vec<LayerTensor>,
    velocity: Vec<LayerTensor>,
}

/// Activations kept for backpropagation.
struct Trace {
    /// `activations[l]` is the input to layer `l`.
    activations: Vec<Matrix>,
    probs: Matrix,
}

impl ModelState {
    /// He-uniform initialisation from a seeded stream; biases start at zero.
    pub fn new(input: usize, hidden: &[usize], classes: usize, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(input, hidden, classes)?;
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        for (l, layer) in model.params.iter_mut().enumerate() {
            let bound = (6.0 / model.widths[l] as f64).sqrt();
            for w in layer.weights.iter_mut() {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn zeros(input: usize, hidden: &[usize], classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(SftError::shape(format!("need at least 2 classes, got {classes}")));
        }
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(classes);
        if widths.contains(&0) {
            return Err(SftError::shape(format!("layer widths must be positive: {widths:?}")));
        }
        let params: Vec<LayerTensor> = widths
            .windows(2)
            .map(|w| LayerTensor::zeros(w[0], w[1]))
            .collect();
        let velocity = params.clone();
        Ok(ModelState {
            widths,
            params,
            velocity,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("widths always has input and output")
    }

    pub fn layers(&self) -> &[LayerTensor] {
        &self.params
    }

    pub fn layers_mut(&mut self) -> &mut [LayerTensor] {
        &mut self.params
    }

    pub fn velocity(&self) -> &[LayerTensor] {
        &self.velocity
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights before bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.params.iter().flat_map(|l| l.values().copied()).collect()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(SftError::shape(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                values.len()
            )));
        }
        for (dst, &v) in self.params.iter_mut().flat_map(|l| l.values_mut()).zip(values) {
            *dst = v;
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params
            .iter()
            .chain(&self.velocity)
            .all(|l| l.values().all(|v| v.is_finite()))
    }

    fn check_batch(&self, batch: &Matrix) -> Result<()> {
        if batch.cols() != self.input_width() {
            return Err(SftError::shape(format!(
                "batch has {} columns, model expects {}",
                batch.cols(),
                self.input_width()
            )));
        }
        if !batch.is_finite() {
            return Err(SftError::Input("non-finite input feature".into()));
        }
        Ok(())
    }

    fn trace(&self, batch: &Matrix) -> Trace {
        let last = self.params.len() - 1;
        let mut activations = Vec::with_capacity(self.params.len());
        let mut current = batch.clone();
        for (l, layer) in self.params.iter().enumerate() {
            let (inputs, outputs) = (self.widths[l], self.widths[l + 1]);
            let mut out = Matrix::zeros(current.rows(), outputs);
            for b in 0..current.rows() {
                let x = current.row(b);
                let z = out.row_mut(b);
                for (o, zo) in z.iter_mut().enumerate() {
                    let w = &layer.weights[o * inputs..(o + 1) * inputs];
                    let mut acc = layer.bias[o];
                    for (wi, xi) in w.iter().zip(x) {
                        acc += wi * xi;
                    }
                    *zo = if l < last { acc.max(0.0) } else { acc };
                }
            }
            activations.push(current);
            current = out;
        }
        for b in 0..current.rows() {
            softmax_in_place(current.row_mut(b));
        }
        Trace {
            activations,
            probs: current,
        }
    }

    /// Class probabilities for every row of `batch`.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        self.check_batch(batch)?;
        Ok(self.trace(batch).probs)
    }

    /// Argmax class per row, lowest index on ties.
    pub fn predict(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let probs = self.forward(batch)?;
        Ok(probs.iter_rows().map(crate::tensor::argmax).collect())
    }

    fn backprop(&self, trace: &Trace, mut delta: Matrix) -> Gradients {
        let mut layers: Vec<LayerTensor> = self
            .widths
            .windows(2)
            .map(|w| LayerTensor::zeros(w[0], w[1]))
            .collect();
        for l in (0..self.params.len()).rev() {
            let (inputs, outputs) = (self.widths[l], self.widths[l + 1]);
            let a = &trace.activations[l];
            let grad = &mut layers[l];
            for b in 0..a.rows() {
                let x = a.row(b);
                for (o, &d) in delta.row(b).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    grad.bias[o] += d;
                    let gw = &mut grad.weights[o * inputs..(o + 1) * inputs];
                    for (g, xi) in gw.iter_mut().zip(x) {
                        *g += d * xi;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[l].weights;
            let mut prev = Matrix::zeros(a.rows(), inputs);
            for b in 0..a.rows() {
                let dst = prev.row_mut(b);
                for o in 0..outputs {
                    let d = delta.get(b, o);
                    if d == 0.0 {
                        continue;
                    }
                    for (p, wi) in dst.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                        *p += d * wi;
                    }
                }
                // ReLU: the stored activation is positive exactly where the unit was active.
                for (p, &act) in dst.iter_mut().zip(a.row(b)) {
                    if act <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Gradients { layers }
    }

    /// Mean loss over the batch and its gradient with respect to every
    /// parameter.
    pub fn backward(
        &self,
        batch: &Matrix,
        labels: &[usize],
        spec: &LossSpec,
    ) -> Result<(Gradients, ObjectiveValue)> {
        self.check_batch(batch)?;
        let trace = self.trace(batch);
        let (value, dlogits) = losses::objective_with_grad(&trace.probs, labels, spec)?;
        Ok((self.backprop(&trace, dlogits), value))
    }

    /// Mean loss only, no gradient.
    pub fn loss(&self, batch: &Matrix, labels: &[usize], spec: &LossSpec) -> Result<ObjectiveValue> {
        let probs = self.forward(batch)?;
        losses::objective(&probs, labels, &spec.objective)
    }

    pub fn sgd_step(&mut self, grads: &Gradients, cfg: &OptimizerConfig, epoch: usize) -> Result<()> {
        if grads.layers.len() != self.params.len()
            || grads.layers.iter().zip(&self.params).any(|(g, p)| {
                g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len()
            })
        {
            return Err(SftError::shape("gradient shapes do not match the model"));
        }
        let lr = cfg.effective_lr(epoch);
        for ((param, vel), grad) in self.params.iter_mut().zip(&mut self.velocity).zip(&grads.layers) {
            for ((w, v), g) in param.values_mut().zip(vel.values_mut()).zip(grad.values()) {
                let g = g + cfg.weight_decay * *w;
                *v = cfg.momentum * *v + g;
                *w -= lr * *v;
            }
        }
        if !self.is_finite() {
            return Err(SftError::Parameter("non-finite parameter after update".into()));
        }
        Ok(())
    }

    /// Binary checkpoint: magic `SFTCKPT1`, `u32` layer count, `u32` widths,
    /// then per layer the weights (row-major) and bias as little-endian
    /// `f64`, first for the parameters and then for the momentum buffers.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        for &width in &self.widths {
            w.write_all(&(width as u32).to_le_bytes())?;
        }
        for tensor in self.params.iter().chain(&self.velocity) {
            for v in tensor.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut offset = 0u64;
        let mut magic = [0u8; 8];
        read_exact_at(&mut r, &mut magic, &mut offset)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(SftError::Format {
                offset: 0,
                message: "bad checkpoint magic".into(),
            });
        }
        let mut buf4 = [0u8; 4];
        read_exact_at(&mut r, &mut buf4, &mut offset)?;
        let layers = u32::from_le_bytes(buf4) as usize;
        if layers == 0 {
            return Err(SftError::Format {
                offset: 8,
                message: "checkpoint has no layers".into(),
            });
        }
        let mut widths = Vec::with_capacity(layers + 1);
        for _ in 0..=layers {
            read_exact_at(&mut r, &mut buf4, &mut offset)?;
            widths.push(u32::from_le_bytes(buf4) as usize);
        }
        let hidden = &widths[1..layers];
        let mut model = ModelState::zeros(widths[0], hidden, widths[layers])?;
        let mut buf8 = [0u8; 8];
        for tensor in model.params.iter_mut().chain(model.velocity.iter_mut()) {
            for v in tensor.values_mut() {
                read_exact_at(&mut r, &mut buf8, &mut offset)?;
                *v = f64::from_le_bytes(buf8);
            }
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: ModelState = serde_json::from_str(s)?;
        let shapes_ok = model.widths.len() >= 2
            && model.params.len() == model.widths.len() - 1
            && model.velocity.len() == model.params.len()
            && model.widths.windows(2).zip(&model.params).zip(&model.velocity).all(
                |((w, p), v)| {
                    p.weights.len() == w[0] * w[1]
                        && p.bias.len() == w[1]
                        && v.weights.len() == p.weights.len()
                        && v.bias.len() == p.bias.len()
                },
            );
        if !shapes_ok {
            return Err(SftError::shape("checkpoint tensors do not match declared widths"));
        }
        Ok(model)
    }
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: &mut u64) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => SftError::Format {
            offset: *offset,
            message: "truncated checkpoint".into(),
        },
        _ => SftError::Io(e),
    })?;
    *offset += buf.len() as u64;
    Ok(())
}
