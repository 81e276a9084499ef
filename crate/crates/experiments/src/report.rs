//! Output files: per-epoch metrics (CSV and JSON lines), run summaries and
//! fluctuation histograms.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sft_core::EpochMetrics;

use crate::error::{ExperimentError, Result};

/// One line of `metrics.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub loss_ce: f64,
    pub loss_reg: f64,
    pub loss_total: f64,
    pub test_acc: Option<f64>,
    pub sel_precision: f64,
    pub sel_recall: f64,
    pub sel_f1: f64,
    pub n_selected: usize,
    pub n_selected_clean: usize,
    pub lr: f64,
}

impl From<&EpochMetrics> for MetricsRow {
    fn from(m: &EpochMetrics) -> Self {
        MetricsRow {
            epoch: m.epoch,
            loss_ce: m.loss_ce,
            loss_reg: m.loss_reg,
            loss_total: m.loss_total,
            test_acc: m.test_acc,
            sel_precision: m.sel_precision,
            sel_recall: m.sel_recall,
            sel_f1: m.sel_f1,
            n_selected: m.n_selected,
            n_selected_clean: m.n_selected_clean,
            lr: m.lr,
        }
    }
}

pub(crate) fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| ExperimentError::io(path, e))
}

pub(crate) fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for m in metrics {
        w.serialize(MetricsRow::from(m))?;
    }
    w.flush().map_err(|e| ExperimentError::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Every field of every epoch, one JSON object per line.
pub fn write_metrics_jsonl(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut w = create(path)?;
    for m in metrics {
        serde_json::to_writer(&mut w, m)?;
        writeln!(w).map_err(|e| ExperimentError::io(path, e))?;
    }
    finish(w, path)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub repeat: usize,
    pub train_seed: u64,
    pub noise_seed: u64,
    pub final_test_acc: f64,
    pub final_sel_precision: f64,
    pub final_sel_recall: f64,
    pub final_sel_f1: f64,
    pub final_n_selected: usize,
}

impl RepeatSummary {
    pub fn from_row(repeat: usize, train_seed: u64, noise_seed: u64, last: &MetricsRow) -> Result<Self> {
        let final_test_acc = last.test_acc.ok_or_else(|| {
            ExperimentError::Data(format!("epoch {} has no test accuracy", last.epoch))
        })?;
        Ok(RepeatSummary {
            repeat,
            train_seed,
            noise_seed,
            final_test_acc,
            final_sel_precision: last.sel_precision,
            final_sel_recall: last.sel_recall,
            final_sel_f1: last.sel_f1,
            final_n_selected: last.n_selected,
        })
    }
}

/// Mean and sample standard deviation (`n - 1` denominator; zero for a
/// single value).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub repeats: usize,
    pub test_acc: MeanStd,
    pub sel_f1: MeanStd,
    pub sel_precision: MeanStd,
    pub sel_recall: MeanStd,
    pub runs: Vec<RepeatSummary>,
}

impl Summary {
    pub fn new(runs: Vec<RepeatSummary>) -> Result<Self> {
        if runs.is_empty() {
            return Err(ExperimentError::Data("summary needs at least one run".into()));
        }
        let stat = |f: fn(&RepeatSummary) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
        Ok(Summary {
            repeats: runs.len(),
            test_acc: stat(|r| r.final_test_acc),
            sel_f1: stat(|r| r.final_sel_f1),
            sel_precision: stat(|r| r.final_sel_precision),
            sel_recall: stat(|r| r.final_sel_recall),
            runs,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = create(path)?;
        serde_json::to_writer_pretty(&mut w, self)?;
        writeln!(w).map_err(|e| ExperimentError::io(path, e))?;
        finish(w, path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Per-group counts of examples by fluctuation count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Histogram {
    /// `clean[c]` examples with a clean label fluctuated exactly `c` times.
    pub clean: Vec<usize>,
    pub noisy: Vec<usize>,
}

impl Histogram {
    pub fn from_counts(counts: &[usize], noisy_mask: &[bool]) -> Self {
        let width = counts.iter().copied().max().map_or(0, |m| m + 1);
        let mut h = Histogram {
            clean: vec![0; width],
            noisy: vec![0; width],
        };
        for (&c, &noisy) in counts.iter().zip(noisy_mask) {
            if noisy {
                h.noisy[c] += 1;
            } else {
                h.clean[c] += 1;
            }
        }
        h
    }

    fn mean(bins: &[usize]) -> Option<f64> {
        let total: usize = bins.iter().sum();
        (total > 0).then(|| {
            bins.iter().enumerate().map(|(c, &n)| (c * n) as f64).sum::<f64>() / total as f64
        })
    }

    pub fn clean_mean(&self) -> Option<f64> {
        Self::mean(&self.clean)
    }

    pub fn noisy_mean(&self) -> Option<f64> {
        Self::mean(&self.noisy)
    }

    /// CSV with header `fluctuations,clean,noisy`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "fluctuations,clean,noisy")?;
        for c in 0..self.clean.len() {
            writeln!(w, "{c},{},{}", self.clean[c], self.noisy[c])?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let mut h = Histogram::default();
        for (i, rec) in r.deserialize::<(usize, usize, usize)>().enumerate() {
            let (c, clean, noisy) = rec?;
            if c != i {
                return Err(ExperimentError::Data(format!(
                    "{}: row {i} has fluctuation count {c}",
                    path.display()
                )));
            }
            h.clean.push(clean);
            h.noisy.push(noisy);
        }
        Ok(h)
    }
}
