//! Noisy-label learning with fluctuation-based sample selection.
//!
//! The crate is organised around the training loop in [`trainer`]:
//!
//! - [`model`]: a ReLU multilayer perceptron with softmax output, exact
//!   backpropagation and momentum SGD.
//! - [`losses`]: cross-entropy plus the confidence-penalizing regularizers used
//!   in the warm-up and main stages, and label smoothing for comparison.
//! - [`noise`]: symmetric, pair-flip and instance-dependent label corruption.
//! - [`selection`]: the prediction memory bank and the fluctuation, small-loss
//!   and majority-voting selectors.
//! - [`trainer`]: warm-up, per-epoch selection and memory-bank refresh.
//!
//! All arithmetic is `f64` and every random choice comes from an explicitly
//! seeded generator, so a run is bitwise reproducible.

pub mod data;
pub mod error;
pub mod losses;
pub mod model;
pub mod noise;
pub mod rng;
pub mod selection;
pub mod tensor;
pub mod trainer;

pub use data::{Dataset, LabeledExample, NoisyDataset};
pub use error::{Result, SftError};
pub use losses::{LossConfig, Objective, Stage};
pub use model::{Gradients, ModelState, OptimizerConfig};
pub use noise::{NoiseKind, TransitionMatrix};
pub use selection::{MemoryBank, SelectionReport, SelectionScore};
pub use tensor::Matrix;
pub use trainer::{EpochMetrics, RunLog, SelectorKind, TrainConfig};
