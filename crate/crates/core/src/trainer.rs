//! Two-stage training loop.
//!
//! Warm-up trains on the full noisy set with cross-entropy plus the warm-up
//! penalty. The main stage trains each epoch on the subset picked by the
//! configured selector, under cross-entropy plus `lambda * L_CR`.
//!
//! Every epoch ends the same way: a full-set inference pass with the updated
//! parameters is written to the memory bank (once per epoch), and the
//! selector is re-run on that state. The resulting selection is what the
//! epoch's metrics report, and it is the training subset of the next epoch.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, NoisyDataset};
use crate::error::{Result, SftError};
use crate::losses::{self, LossComponents, LossConfig, LossSpec, Objective, Stage};
use crate::model::{ModelState, OptimizerConfig};
use crate::rng;
use crate::selection::{self, MemoryBank, SelectionReport};
use crate::tensor::{argmax, Matrix};

/// Rows per inference chunk.
const INFERENCE_CHUNK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectorKind {
    Fluctuation,
    /// Fluctuation plus agreement of the latest prediction with the label.
    FluctuationStrict,
    SmallLoss,
    Voting,
    None,
}

impl FromStr for SelectorKind {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fluctuation" => Ok(SelectorKind::Fluctuation),
            "fluctuation_strict" | "fluctuation-strict" => Ok(SelectorKind::FluctuationStrict),
            "small_loss" | "small-loss" => Ok(SelectorKind::SmallLoss),
            "voting" => Ok(SelectorKind::Voting),
            "none" => Ok(SelectorKind::None),
            other => Err(SftError::Config(format!("unknown selector `{other}`"))),
        }
    }
}

impl fmt::Display for SelectorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SelectorKind::Fluctuation => "fluctuation",
            SelectorKind::FluctuationStrict => "fluctuation_strict",
            SelectorKind::SmallLoss => "small_loss",
            SelectorKind::Voting => "voting",
            SelectorKind::None => "none",
        })
    }
}

/// Regularizer used in the main stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MainLoss {
    ConfidencePenalty,
    LabelSmoothing,
}

impl FromStr for MainLoss {
    type Err = SftError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cr" | "confidence_penalty" => Ok(MainLoss::ConfidencePenalty),
            "ls" | "label_smoothing" => Ok(MainLoss::LabelSmoothing),
            other => Err(SftError::Config(format!("unknown main loss `{other}`"))),
        }
    }
}

impl fmt::Display for MainLoss {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MainLoss::ConfidencePenalty => "cr",
            MainLoss::LabelSmoothing => "ls",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub selector: SelectorKind,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// Memory-bank capacity `T`.
    pub memory_size: usize,
    pub seed: u64,
    /// Test accuracy is computed every this many epochs and at the end.
    pub eval_every: usize,
    /// Noise ratio assumed by the small-loss selector.
    pub assumed_noise: f64,
    pub hidden: Vec<usize>,
    /// Add the warm-up penalty to cross-entropy during warm-up.
    pub warmup_penalty: bool,
    pub main_loss: MainLoss,
    /// Keep every epoch's predictions, not just the last `T`.
    pub keep_prediction_log: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 5,
            total_epochs: 60,
            selector: SelectorKind::Fluctuation,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            memory_size: selection::DEFAULT_CAPACITY,
            seed: 0,
            eval_every: 1,
            assumed_noise: 0.2,
            hidden: vec![64, 64],
            warmup_penalty: true,
            main_loss: MainLoss::ConfidencePenalty,
            keep_prediction_log: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_epochs == 0 {
            return Err(SftError::Config("train.total_epochs: must be positive".into()));
        }
        if self.warmup_epochs >= self.total_epochs {
            return Err(SftError::Config(format!(
                "train.warmup_epochs: {} must be below train.total_epochs ({})",
                self.warmup_epochs, self.total_epochs
            )));
        }
        if self.memory_size == 0 {
            return Err(SftError::Config("train.memory_size: must be positive".into()));
        }
        let needs_two = matches!(self.selector, SelectorKind::Fluctuation | SelectorKind::FluctuationStrict);
        if needs_two && self.memory_size < 2 {
            return Err(SftError::Config(
                "train.memory_size: fluctuation selection needs at least 2".into(),
            ));
        }
        if self.eval_every == 0 {
            return Err(SftError::Config("train.eval_every: must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.assumed_noise) {
            return Err(SftError::Config(format!(
                "train.assumed_noise: must lie in [0, 1), got {}",
                self.assumed_noise
            )));
        }
        if self.hidden.contains(&0) {
            return Err(SftError::Config("train.hidden: widths must be positive".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()
    }

    pub fn warmup_spec(&self) -> LossSpec {
        let objective = if self.warmup_penalty {
            Objective::Warmup {
                gamma: self.loss.gamma,
            }
        } else {
            Objective::CrossEntropy
        };
        LossSpec {
            objective,
            detach_alpha: self.loss.detach_alpha,
        }
    }

    pub fn main_spec(&self) -> LossSpec {
        let objective = match self.main_loss {
            MainLoss::ConfidencePenalty => self.loss.with_stage(Stage::Main).objective(),
            MainLoss::LabelSmoothing => Objective::LabelSmoothing {
                epsilon: self.loss.epsilon,
            },
        };
        LossSpec {
            objective,
            detach_alpha: self.loss.detach_alpha,
        }
    }
}

/// One row of the per-epoch metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Zero-based.
    pub epoch: usize,
    pub stage: Stage,
    pub loss_ce: f64,
    /// Weighted regularizer, so that `loss_total = loss_ce + loss_reg`.
    pub loss_reg: f64,
    pub loss_total: f64,
    pub test_acc: Option<f64>,
    pub sel_precision: f64,
    pub sel_recall: f64,
    pub sel_f1: f64,
    pub n_selected: usize,
    pub n_selected_clean: usize,
    pub lr: f64,
    /// Examples actually trained on this epoch.
    pub n_trained: usize,
    /// The selection for this epoch was empty and the full set was used.
    pub empty_selection_fallback: bool,
}

impl EpochMetrics {
    pub fn n_selected_noisy(&self) -> usize {
        self.n_selected - self.n_selected_clean
    }
}

/// Every epoch's argmax predictions for every example.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictionLog {
    epochs: Vec<Vec<u32>>,
}

impl PredictionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, predictions: &[usize]) {
        self.epochs.push(predictions.iter().map(|&p| p as u32).collect());
    }

    pub fn num_epochs(&self) -> usize {
        self.epochs.len()
    }

    pub fn num_examples(&self) -> usize {
        self.epochs.first().map_or(0, Vec::len)
    }

    pub fn example(&self, index: usize) -> Vec<usize> {
        self.epochs.iter().map(|e| e[index] as usize).collect()
    }

    /// Fluctuation count of every example over the whole log.
    pub fn fluctuation_counts(&self, given_labels: &[usize]) -> Vec<usize> {
        given_labels
            .iter()
            .enumerate()
            .map(|(i, &y)| selection::count_fluctuations(&self.example(i), y))
            .collect()
    }

    /// CSV with header `index,e0,...,e{E-1}`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "index")?;
        for e in 0..self.num_epochs() {
            write!(w, ",e{e}")?;
        }
        writeln!(w)?;
        for i in 0..self.num_examples() {
            write!(w, "{i}")?;
            for epoch in &self.epochs {
                write!(w, ",{}", epoch[i])?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Probabilities for every row, computed in chunks.
pub fn predict_probabilities(model: &ModelState, features: &Matrix) -> Result<Matrix> {
    let n = features.rows();
    let k = model.num_classes();
    let mut out = Matrix::zeros(n, k);
    let mut start = 0;
    while start < n {
        let end = (start + INFERENCE_CHUNK).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let probs = model.forward(&features.gather_rows(&idx))?;
        for (r, row) in probs.iter_rows().enumerate() {
            out.row_mut(start + r).copy_from_slice(row);
        }
        start = end;
    }
    Ok(out)
}

/// Fraction of test examples whose argmax equals the label.
pub fn evaluate(model: &ModelState, test: &Dataset) -> Result<f64> {
    if test.is_empty() {
        return Err(SftError::Data("test set is empty".into()));
    }
    let probs = predict_probabilities(model, test.features())?;
    let correct = probs
        .iter_rows()
        .zip(test.labels())
        .filter(|(row, &y)| argmax(row) == y)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

/// Mutable state of one training run.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    train: &'a NoisyDataset,
    test: Option<&'a Dataset>,
    clean_mask: Vec<bool>,
    model: ModelState,
    bank: MemoryBank,
    shuffle_rng: rng::Rng,
    prediction_log: Option<PredictionLog>,
    /// Selection computed at the end of the previous epoch.
    next_selection: Option<SelectionReport>,
    epoch: usize,
    metrics: Vec<EpochMetrics>,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: TrainConfig, train: &'a NoisyDataset, test: Option<&'a Dataset>) -> Result<Self> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(SftError::Data("training set is empty".into()));
        }
        if let Some(test) = test {
            if test.dim() != train.dim() || test.num_classes() != train.num_classes() {
                return Err(SftError::shape("test set does not match the training set"));
            }
        }
        let model = ModelState::new(train.dim(), &cfg.hidden, train.num_classes(), cfg.seed)?;
        Self::with_model(cfg, train, test, model)
    }

    /// Starts from existing parameters, e.g. a loaded checkpoint.
    pub fn with_model(
        cfg: TrainConfig,
        train: &'a NoisyDataset,
        test: Option<&'a Dataset>,
        model: ModelState,
    ) -> Result<Self> {
        cfg.validate()?;
        if model.input_width() != train.dim() || model.num_classes() != train.num_classes() {
            return Err(SftError::shape("model does not match the training set"));
        }
        let bank = MemoryBank::new(train.len(), train.num_classes(), cfg.memory_size)?;
        Ok(Trainer {
            shuffle_rng: rng::stream(cfg.seed, rng::STREAM_SHUFFLE),
            prediction_log: cfg.keep_prediction_log.then(PredictionLog::new),
            clean_mask: train.clean_mask(),
            cfg,
            train,
            test,
            model,
            bank,
            next_selection: None,
            epoch: 0,
            metrics: Vec::new(),
        })
    }

    pub fn model(&self) -> &ModelState {
        &self.model
    }

    pub fn bank(&self) -> &MemoryBank {
        &self.bank
    }

    pub fn metrics(&self) -> &[EpochMetrics] {
        &self.metrics
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Runs the configured warm-up epochs on the full set. With zero warm-up
    /// epochs this is a no-op and the bank stays empty.
    pub fn warmup(&mut self) -> Result<()> {
        if self.epoch != 0 || self.bank.fill() != 0 {
            return Err(SftError::Config("warm-up must start from an empty bank".into()));
        }
        let all: Vec<usize> = (0..self.train.len()).collect();
        let spec = self.cfg.warmup_spec();
        for _ in 0..self.cfg.warmup_epochs {
            self.run_epoch(Stage::Warmup, &all, &spec, false)?;
        }
        Ok(())
    }

    /// One main-stage epoch: select, train on the selection, refresh the bank.
    pub fn main_epoch(&mut self) -> Result<&EpochMetrics> {
        let selection = match self.next_selection.take() {
            Some(s) => s,
            None => self.select()?,
        };
        let (indices, fallback) = if selection.selected.is_empty() {
            ((0..self.train.len()).collect(), true)
        } else {
            (selection.selected, false)
        };
        let spec = self.cfg.main_spec();
        self.run_epoch(Stage::Main, &indices, &spec, fallback)?;
        Ok(self.metrics.last().expect("run_epoch pushes metrics"))
    }

    /// Selection the configured criterion makes from the current state.
    pub fn select(&self) -> Result<SelectionReport> {
        let n = self.train.len();
        let given = self.train.given_labels();
        let report = match self.cfg.selector {
            SelectorKind::None => SelectionReport::all(n),
            SelectorKind::Fluctuation if self.bank.fill() < 2 => SelectionReport::all(n),
            SelectorKind::Fluctuation => selection::select_fluctuation(&self.bank, given)?,
            SelectorKind::FluctuationStrict if self.bank.fill() < 2 => SelectionReport::all(n),
            SelectorKind::FluctuationStrict => selection::select_fluctuation_strict(&self.bank, given)?,
            SelectorKind::Voting if self.bank.fill() < 1 => SelectionReport::all(n),
            SelectorKind::Voting => selection::select_voting(&self.bank, given)?,
            SelectorKind::SmallLoss => {
                let probs = predict_probabilities(&self.model, self.train.features())?;
                let losses: Vec<f64> = probs
                    .iter_rows()
                    .zip(given)
                    .map(|(p, &y)| losses::cross_entropy(p, y))
                    .collect();
                selection::select_small_loss(&losses, self.cfg.assumed_noise)?
            }
        };
        report.with_score(&self.clean_mask)
    }

    fn run_epoch(&mut self, stage: Stage, indices: &[usize], spec: &LossSpec, fallback: bool) -> Result<()> {
        let epoch = self.epoch;
        let losses = self.train_pass(indices, spec, epoch)?;

        // Bank refresh from the post-update model.
        let probs = predict_probabilities(&self.model, self.train.features())?;
        let predictions: Vec<usize> = probs.iter_rows().map(argmax).collect();
        self.bank.record_epoch(&predictions)?;
        if let Some(log) = self.prediction_log.as_mut() {
            log.push(&predictions);
        }

        let selection = self.select()?;
        let score = selection.score.expect("select attaches a score");
        let last_epoch = epoch + 1 == self.cfg.total_epochs;
        let test_acc = match self.test {
            Some(test) if last_epoch || (epoch + 1).is_multiple_of(self.cfg.eval_every) => {
                Some(evaluate(&self.model, test)?)
            }
            _ => None,
        };
        self.metrics.push(EpochMetrics {
            epoch,
            stage,
            loss_ce: losses.ce,
            loss_reg: losses.regularizer(),
            loss_total: losses.total,
            test_acc,
            sel_precision: score.precision,
            sel_recall: score.recall,
            sel_f1: score.f1,
            n_selected: score.n_selected,
            n_selected_clean: score.n_selected_clean,
            lr: self.cfg.optimizer.effective_lr(epoch),
            n_trained: indices.len(),
            empty_selection_fallback: fallback,
        });
        self.next_selection = Some(selection);
        self.epoch += 1;
        Ok(())
    }

    /// Shuffled mini-batch SGD over `indices`; returns the example-weighted
    /// mean of the batch losses.
    fn train_pass(&mut self, indices: &[usize], spec: &LossSpec, epoch: usize) -> Result<LossComponents> {
        let mut order = indices.to_vec();
        order.shuffle(&mut self.shuffle_rng);
        let given = self.train.given_labels();
        let mut sum = LossComponents::default();
        for chunk in order.chunks(self.cfg.optimizer.batch_size) {
            let batch = self.train.features().gather_rows(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| given[i]).collect();
            let (grads, value) = self.model.backward(&batch, &labels, spec)?;
            self.model.sgd_step(&grads, &self.cfg.optimizer, epoch)?;
            let w = chunk.len() as f64;
            sum.ce += value.mean.ce * w;
            sum.warmup_r += value.mean.warmup_r * w;
            sum.cr += value.mean.cr * w;
            sum.ls += value.mean.ls * w;
            sum.total += value.mean.total * w;
        }
        let inv = 1.0 / order.len().max(1) as f64;
        Ok(LossComponents {
            ce: sum.ce * inv,
            warmup_r: sum.warmup_r * inv,
            cr: sum.cr * inv,
            ls: sum.ls * inv,
            total: sum.total * inv,
        })
    }

    pub fn finish(self) -> RunLog {
        RunLog {
            metrics: self.metrics,
            model: self.model,
            bank: self.bank,
            prediction_log: self.prediction_log,
        }
    }
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunLog {
    pub metrics: Vec<EpochMetrics>,
    pub model: ModelState,
    pub bank: MemoryBank,
    pub prediction_log: Option<PredictionLog>,
}

impl RunLog {
    pub fn final_metrics(&self) -> &EpochMetrics {
        self.metrics.last().expect("a run has at least one epoch")
    }

    pub fn main_epochs(&self) -> impl Iterator<Item = &EpochMetrics> {
        self.metrics.iter().filter(|m| m.stage == Stage::Main)
    }
}

/// Warm-up followed by `total_epochs - warmup_epochs` main epochs.
pub fn run(cfg: &TrainConfig, train: &NoisyDataset, test: Option<&Dataset>) -> Result<RunLog> {
    let mut trainer = Trainer::new(cfg.clone(), train, test)?;
    trainer.warmup()?;
    for _ in cfg.warmup_epochs..cfg.total_epochs {
        trainer.main_epoch()?;
    }
    Ok(trainer.finish())
}
