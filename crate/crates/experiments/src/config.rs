//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Later assignments win, so command-line `--set` overrides are simply
//! applied after the file.

use std::fmt::{self, Write as _};
use std::path::PathBuf;
use std::str::FromStr;

use sft_core::noise::NoiseKind;
use sft_core::trainer::{MainLoss, SelectorKind, TrainConfig};

use crate::error::{ExperimentError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DataKind {
    GaussianMixture,
    TwoSpirals,
    Idx,
}

impl FromStr for DataKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian-mixture" | "gaussian_mixture" => Ok(DataKind::GaussianMixture),
            "two-spirals" | "two_spirals" | "spirals" => Ok(DataKind::TwoSpirals),
            "idx-file" | "idx" => Ok(DataKind::Idx),
            other => Err(ExperimentError::Config(format!("data.kind: unknown generator `{other}`"))),
        }
    }
}

impl fmt::Display for DataKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DataKind::GaussianMixture => "gaussian-mixture",
            DataKind::TwoSpirals => "two-spirals",
            DataKind::Idx => "idx-file",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataSpec {
    pub kind: DataKind,
    pub n_train: usize,
    pub n_test: usize,
    pub dim: usize,
    pub classes: usize,
    /// Norm of the class means (mixture) or inverse jitter (spirals).
    pub separation: f64,
    pub seed: u64,
    pub idx_train_images: Option<PathBuf>,
    pub idx_train_labels: Option<PathBuf>,
    pub idx_test_images: Option<PathBuf>,
    pub idx_test_labels: Option<PathBuf>,
    /// Directory holding `train.bin` / `test.bin` from `generate`; when set
    /// the data is loaded instead of generated.
    pub dir: Option<PathBuf>,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            kind: DataKind::GaussianMixture,
            n_train: 5000,
            n_test: 2000,
            dim: 32,
            classes: 10,
            separation: 5.0,
            seed: 0,
            idx_train_images: None,
            idx_train_labels: None,
            idx_test_images: None,
            idx_test_labels: None,
            dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    pub seed: u64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate: 0.4,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub data: DataSpec,
    pub noise: NoiseSpec,
    pub train: TrainConfig,
    pub out: PathBuf,
    pub repeats: usize,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        ExperimentSpec {
            data: DataSpec::default(),
            noise: NoiseSpec::default(),
            train: TrainConfig::default(),
            out: PathBuf::from("runs/default"),
            repeats: 1,
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| ExperimentError::Config(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(ExperimentError::Config(format!("{key}: expected a boolean, got `{value}`"))),
    }
}

fn parse_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn parse_widths(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|w| parse_value(key, w.trim())).collect()
}

fn core_err(key: &str, e: sft_core::SftError) -> ExperimentError {
    ExperimentError::Config(format!("{key}: {e}"))
}

fn path_str(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

impl ExperimentSpec {
    /// Every accepted key, in serialization order.
    pub const KEYS: &'static [&'static str] = &[
        "data.kind",
        "data.n_train",
        "data.n_test",
        "data.dim",
        "data.classes",
        "data.separation",
        "data.seed",
        "data.idx_train_images",
        "data.idx_train_labels",
        "data.idx_test_images",
        "data.idx_test_labels",
        "data.dir",
        "noise.kind",
        "noise.rate",
        "noise.seed",
        "train.warmup_epochs",
        "train.total_epochs",
        "train.selector",
        "train.memory_size",
        "train.seed",
        "train.eval_every",
        "train.assumed_noise",
        "train.hidden",
        "train.warmup_penalty",
        "train.main_loss",
        "train.keep_prediction_log",
        "loss.gamma",
        "loss.lambda",
        "loss.epsilon",
        "loss.detach_alpha",
        "optim.learning_rate",
        "optim.momentum",
        "optim.weight_decay",
        "optim.lr_decay_epoch",
        "optim.lr_decay_factor",
        "optim.batch_size",
        "experiment.out",
        "experiment.repeats",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let d = &mut self.data;
        let t = &mut self.train;
        match key {
            "data.kind" => d.kind = v.parse()?,
            "data.n_train" => d.n_train = parse_value(key, v)?,
            "data.n_test" => d.n_test = parse_value(key, v)?,
            "data.dim" => d.dim = parse_value(key, v)?,
            "data.classes" => d.classes = parse_value(key, v)?,
            "data.separation" => d.separation = parse_value(key, v)?,
            "data.seed" => d.seed = parse_value(key, v)?,
            "data.idx_train_images" => d.idx_train_images = parse_path(v),
            "data.idx_train_labels" => d.idx_train_labels = parse_path(v),
            "data.idx_test_images" => d.idx_test_images = parse_path(v),
            "data.idx_test_labels" => d.idx_test_labels = parse_path(v),
            "data.dir" => d.dir = parse_path(v),
            "noise.kind" => self.noise.kind = v.parse().map_err(|e| core_err(key, e))?,
            "noise.rate" => self.noise.rate = parse_value(key, v)?,
            "noise.seed" => self.noise.seed = parse_value(key, v)?,
            "train.warmup_epochs" => t.warmup_epochs = parse_value(key, v)?,
            "train.total_epochs" => t.total_epochs = parse_value(key, v)?,
            "train.selector" => {
                t.selector = v.parse::<SelectorKind>().map_err(|e| core_err(key, e))?
            }
            "train.memory_size" => t.memory_size = parse_value(key, v)?,
            "train.seed" => t.seed = parse_value(key, v)?,
            "train.eval_every" => t.eval_every = parse_value(key, v)?,
            "train.assumed_noise" => t.assumed_noise = parse_value(key, v)?,
            "train.hidden" => t.hidden = parse_widths(key, v)?,
            "train.warmup_penalty" => t.warmup_penalty = parse_bool(key, v)?,
            "train.main_loss" => t.main_loss = v.parse::<MainLoss>().map_err(|e| core_err(key, e))?,
            "train.keep_prediction_log" => t.keep_prediction_log = parse_bool(key, v)?,
            "loss.gamma" => t.loss.gamma = parse_value(key, v)?,
            "loss.lambda" => t.loss.lambda = parse_value(key, v)?,
            "loss.epsilon" => t.loss.epsilon = parse_value(key, v)?,
            "loss.detach_alpha" => t.loss.detach_alpha = parse_bool(key, v)?,
            "optim.learning_rate" => t.optimizer.learning_rate = parse_value(key, v)?,
            "optim.momentum" => t.optimizer.momentum = parse_value(key, v)?,
            "optim.weight_decay" => t.optimizer.weight_decay = parse_value(key, v)?,
            "optim.lr_decay_epoch" => t.optimizer.lr_decay_epoch = parse_value(key, v)?,
            "optim.lr_decay_factor" => t.optimizer.lr_decay_factor = parse_value(key, v)?,
            "optim.batch_size" => t.optimizer.batch_size = parse_value(key, v)?,
            "experiment.out" => self.out = PathBuf::from(v),
            "experiment.repeats" => self.repeats = parse_value(key, v)?,
            other => return Err(ExperimentError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Current value of `key`, formatted as the config file would hold it.
    pub fn get(&self, key: &str) -> Result<String> {
        let d = &self.data;
        let t = &self.train;
        Ok(match key {
            "data.kind" => d.kind.to_string(),
            "data.n_train" => d.n_train.to_string(),
            "data.n_test" => d.n_test.to_string(),
            "data.dim" => d.dim.to_string(),
            "data.classes" => d.classes.to_string(),
            "data.separation" => d.separation.to_string(),
            "data.seed" => d.seed.to_string(),
            "data.idx_train_images" => path_str(&d.idx_train_images),
            "data.idx_train_labels" => path_str(&d.idx_train_labels),
            "data.idx_test_images" => path_str(&d.idx_test_images),
            "data.idx_test_labels" => path_str(&d.idx_test_labels),
            "data.dir" => path_str(&d.dir),
            "noise.kind" => self.noise.kind.to_string(),
            "noise.rate" => self.noise.rate.to_string(),
            "noise.seed" => self.noise.seed.to_string(),
            "train.warmup_epochs" => t.warmup_epochs.to_string(),
            "train.total_epochs" => t.total_epochs.to_string(),
            "train.selector" => t.selector.to_string(),
            "train.memory_size" => t.memory_size.to_string(),
            "train.seed" => t.seed.to_string(),
            "train.eval_every" => t.eval_every.to_string(),
            "train.assumed_noise" => t.assumed_noise.to_string(),
            "train.hidden" => t
                .hidden
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
            "train.warmup_penalty" => t.warmup_penalty.to_string(),
            "train.main_loss" => t.main_loss.to_string(),
            "train.keep_prediction_log" => t.keep_prediction_log.to_string(),
            "loss.gamma" => t.loss.gamma.to_string(),
            "loss.lambda" => t.loss.lambda.to_string(),
            "loss.epsilon" => t.loss.epsilon.to_string(),
            "loss.detach_alpha" => t.loss.detach_alpha.to_string(),
            "optim.learning_rate" => t.optimizer.learning_rate.to_string(),
            "optim.momentum" => t.optimizer.momentum.to_string(),
            "optim.weight_decay" => t.optimizer.weight_decay.to_string(),
            "optim.lr_decay_epoch" => t.optimizer.lr_decay_epoch.to_string(),
            "optim.lr_decay_factor" => t.optimizer.lr_decay_factor.to_string(),
            "optim.batch_size" => t.optimizer.batch_size.to_string(),
            "experiment.out" => self.out.display().to_string(),
            "experiment.repeats" => self.repeats.to_string(),
            other => return Err(ExperimentError::Config(format!("unknown key `{other}`"))),
        })
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                ExperimentError::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment
            .split_once('=')
            .ok_or_else(|| ExperimentError::Config(format!("override `{assignment}` is not key=value")))?;
        self.set(key.trim(), value)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = ExperimentSpec::default();
        spec.apply_text(text)?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let value = self.get(key).expect("KEYS only lists known keys");
            writeln!(out, "{key} = {value}").expect("writing to a String cannot fail");
        }
        out
    }

    /// Sets the data, noise and training seeds together.
    pub fn set_seed(&mut self, seed: u64) {
        self.data.seed = seed;
        self.noise.seed = seed;
        self.train.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: String| Err(ExperimentError::Config(format!("{key}: {why}")));
        let d = &self.data;
        if self.repeats == 0 {
            return bad("experiment.repeats", "must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.noise.rate) {
            return bad("noise.rate", format!("must lie in [0, 1), got {}", self.noise.rate));
        }
        if d.dir.is_none() {
            match d.kind {
                DataKind::GaussianMixture | DataKind::TwoSpirals => {
                    if d.n_train == 0 {
                        return bad("data.n_train", "must be positive".into());
                    }
                    if d.n_test == 0 {
                        return bad("data.n_test", "must be positive".into());
                    }
                    if d.classes < 2 {
                        return bad("data.classes", "need at least 2 classes".into());
                    }
                    if d.dim == 0 || (d.kind == DataKind::TwoSpirals && d.dim < 2) {
                        return bad("data.dim", "too small for this generator".into());
                    }
                    if !(d.separation > 0.0 && d.separation.is_finite()) {
                        return bad("data.separation", "must be > 0".into());
                    }
                }
                DataKind::Idx => {
                    for (key, p) in [
                        ("data.idx_train_images", &d.idx_train_images),
                        ("data.idx_train_labels", &d.idx_train_labels),
                        ("data.idx_test_images", &d.idx_test_images),
                        ("data.idx_test_labels", &d.idx_test_labels),
                    ] {
                        if p.is_none() {
                            return bad(key, "required for idx-file data".into());
                        }
                    }
                }
            }
        }
        self.train.validate().map_err(|e| ExperimentError::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn later_assignment_wins() {
        let mut spec = ExperimentSpec::parse("# comment\nloss.gamma = 0.4\n\nloss.gamma=0.6\n").unwrap();
        assert_eq!(spec.train.loss.gamma, 0.6);
        spec.apply_override("loss.gamma=0.8").unwrap();
        assert_eq!(spec.train.loss.gamma, 0.8);
    }

    #[test]
    fn errors_name_the_key() {
        let err = ExperimentSpec::parse("train.total_epochs = ten").unwrap_err();
        assert!(err.to_string().contains("train.total_epochs"), "{err}");
        let err = ExperimentSpec::parse("train.bogus = 1").unwrap_err();
        assert!(err.to_string().contains("train.bogus"));
        assert!(ExperimentSpec::parse("just words").is_err());

        let spec = ExperimentSpec::parse("experiment.repeats = 0").unwrap();
        assert!(spec.validate().unwrap_err().to_string().contains("experiment.repeats"));
        let spec = ExperimentSpec::parse("train.warmup_epochs = 70").unwrap();
        assert!(spec.validate().unwrap_err().to_string().contains("train.warmup_epochs"));
        let spec = ExperimentSpec::parse("data.kind = idx-file").unwrap();
        assert!(spec.validate().unwrap_err().to_string().contains("data.idx_train_images"));
    }

    #[test]
    fn every_key_round_trips() {
        let mut spec = ExperimentSpec::default();
        spec.apply_text(
            "data.kind = two-spirals\ndata.separation = 2.75\ndata.idx_test_labels = /tmp/x\n\
             noise.kind = instance\nnoise.rate = 0.35\ntrain.selector = voting\n\
             train.hidden = 32,16,8\ntrain.main_loss = ls\nloss.detach_alpha = true\n\
             optim.weight_decay = 0.0001\nexperiment.repeats = 5\n",
        )
        .unwrap();
        let text = spec.to_text();
        assert_eq!(text.lines().count(), ExperimentSpec::KEYS.len());
        assert_eq!(ExperimentSpec::parse(&text).unwrap(), spec);
        let empty_hidden = ExperimentSpec::parse("train.hidden =").unwrap();
        assert!(empty_hidden.train.hidden.is_empty());
        assert_eq!(ExperimentSpec::parse(&empty_hidden.to_text()).unwrap(), empty_hidden);
    }

    proptest::proptest! {
        #[test]
        fn numeric_fields_round_trip(
            gamma in 0.001f64..1.0,
            lr in 1e-6f64..1.0,
            sep in 0.1f64..20.0,
            seed in proptest::num::u64::ANY,
            hidden in proptest::collection::vec(1usize..512, 0..4),
        ) {
            let mut spec = ExperimentSpec::default();
            spec.train.loss.gamma = gamma;
            spec.train.optimizer.learning_rate = lr;
            spec.data.separation = sep;
            spec.set_seed(seed);
            spec.train.hidden = hidden;
            let back = ExperimentSpec::parse(&spec.to_text()).unwrap();
            proptest::prop_assert_eq!(back, spec);
        }
    }
}
