//! The four subcommands, as library functions.
//!
//! Layout written by [`train`] under the experiment output directory:
//!
//! ```text
//! config.txt              resolved config
//! summary.json            mean/std of final accuracy and F-score
//! run_<r>/metrics.csv     one row per epoch
//! run_<r>/metrics.jsonl   same rows with every field
//! run_<r>/selection.json  final selection and its score
//! run_<r>/bank.csv        memory-bank contents at the end
//! run_<r>/audit.csv       true/given labels and noise mask
//! run_<r>/model.bin       checkpoint
//! run_<r>/prediction_log.csv   only with train.keep_prediction_log
//! ```
//!
//! Repeat `r` uses `train.seed + r` and `noise.seed + r`; the clean data
//! (`data.seed`) is shared by all repeats.

use std::fs;
use std::path::{Path, PathBuf};

use sft_core::noise;
use sft_core::trainer::{RunLog, Trainer};
use sft_core::{Dataset, NoisyDataset, SelectionReport};

use crate::config::{DataKind, ExperimentSpec};
use crate::datagen;
use crate::error::{ExperimentError, Result};
use crate::idx;
use crate::report::{self, Histogram, MeanStd, MetricsRow, RepeatSummary, Summary};

pub const TRAIN_FILE: &str = "train.bin";
pub const TEST_FILE: &str = "test.bin";
pub const AUDIT_FILE: &str = "audit.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const SUMMARY_FILE: &str = "summary.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const PREDICTION_LOG_FILE: &str = "prediction_log.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| ExperimentError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| ExperimentError::io(path, e))
}

fn read_dataset(path: &Path) -> Result<NoisyDataset> {
    let file = fs::File::open(path).map_err(|e| ExperimentError::io(path, e))?;
    NoisyDataset::read_binary(std::io::BufReader::new(file)).map_err(|e| match e {
        sft_core::SftError::Format { offset, message } => ExperimentError::Format {
            path: path.to_path_buf(),
            offset,
            message,
        },
        other => other.into(),
    })
}

fn write_dataset(path: &Path, ds: &NoisyDataset) -> Result<()> {
    let mut w = report::create(path)?;
    ds.write_binary(&mut w)?;
    report::finish(w, path)
}

fn required(p: &Option<PathBuf>, key: &str) -> Result<PathBuf> {
    p.clone()
        .ok_or_else(|| ExperimentError::Config(format!("{key}: required for idx-file data")))
}

/// Clean train and test splits, generated or loaded from IDX files.
pub fn clean_splits(spec: &ExperimentSpec) -> Result<(Dataset, Dataset)> {
    let d = &spec.data;
    match d.kind {
        DataKind::Idx => Ok((
            idx::load_idx(
                &required(&d.idx_train_images, "data.idx_train_images")?,
                &required(&d.idx_train_labels, "data.idx_train_labels")?,
                d.classes,
            )?,
            idx::load_idx(
                &required(&d.idx_test_images, "data.idx_test_images")?,
                &required(&d.idx_test_labels, "data.idx_test_labels")?,
                d.classes,
            )?,
        )),
        _ => datagen::generate(d),
    }
}

/// Noisy training set and clean test set for `spec`. With `data.dir` set the
/// files written by [`generate`] are used as they are.
pub fn datasets(spec: &ExperimentSpec) -> Result<(NoisyDataset, Dataset)> {
    if let Some(dir) = &spec.data.dir {
        let train = read_dataset(&dir.join(TRAIN_FILE))?;
        let test = read_dataset(&dir.join(TEST_FILE))?.clean();
        return Ok((train, test));
    }
    let (train, test) = clean_splits(spec)?;
    let noisy = noise::corrupt(&train, spec.noise.kind, spec.noise.rate, spec.noise.seed)?;
    Ok((noisy, test))
}

/// Settings for repeat `r`.
pub fn repeat_spec(spec: &ExperimentSpec, r: usize) -> ExperimentSpec {
    let mut s = spec.clone();
    s.train.seed = spec.train.seed.wrapping_add(r as u64);
    s.noise.seed = spec.noise.seed.wrapping_add(r as u64);
    s.repeats = 1;
    s
}

pub struct GenerateOutput {
    pub train: NoisyDataset,
    pub test: Dataset,
}

/// Writes `train.bin`, `test.bin`, `audit.csv` and `config.txt` to `out`.
pub fn generate(spec: &ExperimentSpec, out: &Path) -> Result<GenerateOutput> {
    spec.validate()?;
    if spec.data.dir.is_some() {
        return Err(ExperimentError::Config("data.dir: generate writes data, it does not read it".into()));
    }
    let (train, test) = datasets(spec)?;
    mkdir(out)?;
    write_dataset(&out.join(TRAIN_FILE), &train)?;
    write_dataset(&out.join(TEST_FILE), &test.clone().into_noiseless())?;
    let audit = out.join(AUDIT_FILE);
    let mut w = report::create(&audit)?;
    train.write_audit_csv(&mut w)?;
    report::finish(w, &audit)?;
    write_text(&out.join(CONFIG_FILE), &spec.to_text())?;
    Ok(GenerateOutput { train, test })
}

/// Result of one repeat, kept in memory for callers that inspect it.
pub struct RepeatRun {
    pub spec: ExperimentSpec,
    pub train: NoisyDataset,
    pub log: RunLog,
    pub final_selection: SelectionReport,
}

/// Runs one training repeat without touching the filesystem.
pub fn run_repeat(spec: &ExperimentSpec, r: usize) -> Result<(RepeatRun, Dataset)> {
    let spec = repeat_spec(spec, r);
    let (train, test) = datasets(&spec)?;
    let cfg = spec.train.clone();
    let mut trainer = Trainer::new(cfg.clone(), &train, Some(&test))?;
    trainer.warmup()?;
    for _ in cfg.warmup_epochs..cfg.total_epochs {
        trainer.main_epoch()?;
    }
    let final_selection = trainer.select()?;
    let log = trainer.finish();
    Ok((
        RepeatRun {
            spec,
            train,
            log,
            final_selection,
        },
        test,
    ))
}

fn write_run(dir: &Path, run: &RepeatRun) -> Result<()> {
    mkdir(dir)?;
    report::write_metrics_csv(&dir.join(METRICS_FILE), &run.log.metrics)?;
    report::write_metrics_jsonl(&dir.join("metrics.jsonl"), &run.log.metrics)?;
    write_text(&dir.join("selection.json"), &run.final_selection.to_json()?)?;

    let bank = dir.join("bank.csv");
    let mut w = report::create(&bank)?;
    run.log.bank.write_csv(&mut w)?;
    report::finish(w, &bank)?;

    let audit = dir.join(AUDIT_FILE);
    let mut w = report::create(&audit)?;
    run.train.write_audit_csv(&mut w)?;
    report::finish(w, &audit)?;

    let model = dir.join("model.bin");
    let mut w = report::create(&model)?;
    run.log.model.write_checkpoint(&mut w)?;
    report::finish(w, &model)?;

    if let Some(log) = &run.log.prediction_log {
        let path = dir.join(PREDICTION_LOG_FILE);
        let mut w = report::create(&path)?;
        log.write_csv(&mut w)?;
        report::finish(w, &path)?;
    }
    Ok(())
}

pub fn run_dir(out: &Path, r: usize) -> PathBuf {
    out.join(format!("run_{r}"))
}

/// Runs every repeat, writes all outputs under `spec.out` and returns the
/// summary.
pub fn train(spec: &ExperimentSpec) -> Result<Summary> {
    spec.validate()?;
    mkdir(&spec.out)?;
    write_text(&spec.out.join(CONFIG_FILE), &spec.to_text())?;
    let mut runs = Vec::with_capacity(spec.repeats);
    for r in 0..spec.repeats {
        let (run, _) = run_repeat(spec, r)?;
        write_run(&run_dir(&spec.out, r), &run)?;
        let last = MetricsRow::from(run.log.final_metrics());
        runs.push(RepeatSummary::from_row(r, run.spec.train.seed, run.spec.noise.seed, &last)?);
    }
    let summary = Summary::new(runs)?;
    summary.write(&spec.out.join(SUMMARY_FILE))?;
    Ok(summary)
}

/// Recomputes the summary from the per-epoch CSVs under `out`.
pub fn summary_from_csv(out: &Path, spec: &ExperimentSpec) -> Result<Summary> {
    let mut runs = Vec::with_capacity(spec.repeats);
    for r in 0..spec.repeats {
        let rows = report::read_metrics_csv(&run_dir(out, r).join(METRICS_FILE))?;
        let last = rows
            .last()
            .ok_or_else(|| ExperimentError::Data(format!("run {r}: metrics file is empty")))?;
        let rs = repeat_spec(spec, r);
        runs.push(RepeatSummary::from_row(r, rs.train.seed, rs.noise.seed, last)?);
    }
    Summary::new(runs)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| ExperimentError::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn read_prediction_log(path: &Path) -> Result<Vec<Vec<usize>>> {
    let mut r = csv_reader(path)?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<usize>, _> = rec.iter().map(str::parse).collect();
        let mut fields = parsed.map_err(|_| {
            ExperimentError::Data(format!("{}: row {i} is not a list of integers", path.display()))
        })?;
        if fields.first() != Some(&i) {
            return Err(ExperimentError::Data(format!(
                "{}: row {i} has the wrong index",
                path.display()
            )));
        }
        fields.remove(0);
        rows.push(fields);
    }
    Ok(rows)
}

/// Given labels and noise mask from an audit CSV.
fn read_audit(path: &Path) -> Result<(Vec<usize>, Vec<bool>)> {
    let mut r = csv_reader(path)?;
    let mut labels = Vec::new();
    let mut noisy = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |j: usize| -> Result<usize> {
            rec.get(j).and_then(|s| s.parse().ok()).ok_or_else(|| {
                ExperimentError::Data(format!("{}: row {i}, column {j} is malformed", path.display()))
            })
        };
        labels.push(field(2)?);
        noisy.push(field(3)? != 0);
    }
    Ok((labels, noisy))
}

/// Fluctuation-count histogram of a full prediction log, split by the audit
/// mask. Writes `fluctuations,clean,noisy` to `out`.
pub fn histogram(prediction_log: &Path, audit: &Path, out: &Path) -> Result<Histogram> {
    let log = read_prediction_log(prediction_log)?;
    let (labels, noisy) = read_audit(audit)?;
    if labels.is_empty() {
        return Err(ExperimentError::Data(format!("{}: no examples in mask file", audit.display())));
    }
    if log.len() != labels.len() {
        return Err(ExperimentError::Data(format!(
            "prediction log has {} examples, audit has {}",
            log.len(),
            labels.len()
        )));
    }
    let counts: Vec<usize> = log
        .iter()
        .zip(&labels)
        .map(|(h, &y)| sft_core::selection::count_fluctuations(h, y))
        .collect();
    let hist = Histogram::from_counts(&counts, &noisy);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        mkdir(parent)?;
    }
    let mut w = report::create(out)?;
    hist.write_csv(&mut w).map_err(|e| ExperimentError::io(out, e))?;
    report::finish(w, out)?;
    Ok(hist)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub value: String,
    pub test_acc: MeanStd,
    pub sel_f1: MeanStd,
}

/// Runs [`train`] once per value of `key`, each under `spec.out/<key>=<value>`,
/// and writes `sweep.csv`.
pub fn sweep(spec: &ExperimentSpec, key: &str, values: &[String]) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(ExperimentError::Config("sweep needs at least one value".into()));
    }
    // fail before any training if a value does not parse
    for v in values {
        spec.clone().set(key, v)?;
    }
    mkdir(&spec.out)?;
    let mut points = Vec::with_capacity(values.len());
    for v in values {
        let mut s = spec.clone();
        s.set(key, v)?;
        s.out = spec.out.join(format!("{key}={v}"));
        let summary = train(&s)?;
        points.push(SweepPoint {
            value: v.clone(),
            test_acc: summary.test_acc,
            sel_f1: summary.sel_f1,
        });
    }
    let path = spec.out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_writer(report::create(&path)?);
    w.write_record([key, "test_acc_mean", "test_acc_std", "sel_f1_mean", "sel_f1_std"])?;
    for p in &points {
        w.write_record([
            p.value.clone(),
            p.test_acc.mean.to_string(),
            p.test_acc.std.to_string(),
            p.sel_f1.mean.to_string(),
            p.sel_f1.std.to_string(),
        ])?;
    }
    w.flush().map_err(|e| ExperimentError::io(&path, e))?;
    Ok(points)
}
