//! Prediction memory bank and sample-selection criteria.
//!
//! The bank keeps, for every training example, the argmax predictions of the
//! last `T` epochs in FIFO order. A sample *fluctuates* when some epoch in
//! that window predicted its given label and a later epoch did not; the
//! fluctuation criterion keeps every sample that does not fluctuate.
//!
//! A history that never contains the given label does not fluctuate, so such
//! samples are kept. [`SelectionScore`] makes the effect visible through the
//! precision against the true clean mask.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::tensor::{argmax, Matrix};

/// Default memory-bank capacity.
pub const DEFAULT_CAPACITY: usize = 3;

/// Fixed-capacity FIFO of per-example predicted labels.
#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    n: usize,
    num_classes: usize,
    /// Example-major ring storage, `n x capacity`.
    slots: Vec<u32>,
    /// Slot receiving the next record.
    head: usize,
    fill: usize,
    /// Full probability rows, `n x capacity x K`, when enabled.
    probs: Option<Vec<f64>>,
}

impl MemoryBank {
    pub fn new(n: usize, num_classes: usize, capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(SftError::Config("memory bank capacity must be positive".into()));
        }
        Ok(MemoryBank {
            capacity,
            n,
            num_classes,
            slots: vec![0; n * capacity],
            head: 0,
            fill: 0,
            probs: None,
        })
    }

    /// Also keep the full probability vectors; debugging aid.
    pub fn with_probabilities(mut self) -> Self {
        self.probs = Some(vec![0.0; self.n * self.capacity * self.num_classes]);
        self
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn fill(&self) -> usize {
        self.fill
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn slot_order(&self) -> impl Iterator<Item = usize> + '_ {
        let start = (self.head + self.capacity - self.fill) % self.capacity;
        (0..self.fill).map(move |t| (start + t) % self.capacity)
    }

    /// Stored predictions for one example, oldest first.
    pub fn history(&self, index: usize) -> Vec<usize> {
        let row = &self.slots[index * self.capacity..(index + 1) * self.capacity];
        self.slot_order().map(|s| row[s] as usize).collect()
    }

    /// Stored probability rows for one example, oldest first.
    pub fn probability_history(&self, index: usize) -> Option<Vec<&[f64]>> {
        let probs = self.probs.as_ref()?;
        let k = self.num_classes;
        let base = index * self.capacity * k;
        Some(
            self.slot_order()
                .map(|s| &probs[base + s * k..base + (s + 1) * k])
                .collect(),
        )
    }

    /// Appends one epoch of argmax predictions, evicting the oldest entry once
    /// the bank is full.
    pub fn record_epoch(&mut self, predictions: &[usize]) -> Result<()> {
        if predictions.len() != self.n {
            return Err(SftError::shape(format!(
                "{} predictions for a bank of {} examples",
                predictions.len(),
                self.n
            )));
        }
        if let Some(&bad) = predictions.iter().find(|&&p| p >= self.num_classes) {
            return Err(SftError::Data(format!(
                "predicted class {bad} out of range for {} classes",
                self.num_classes
            )));
        }
        for (i, &p) in predictions.iter().enumerate() {
            self.slots[i * self.capacity + self.head] = p as u32;
        }
        self.advance();
        Ok(())
    }

    /// Records argmax labels of `probs` and, when enabled, the rows themselves.
    pub fn record_probabilities(&mut self, probs: &Matrix) -> Result<()> {
        if probs.rows() != self.n || probs.cols() != self.num_classes {
            return Err(SftError::shape(format!(
                "probability matrix is {}x{}, bank expects {}x{}",
                probs.rows(),
                probs.cols(),
                self.n,
                self.num_classes
            )));
        }
        let k = self.num_classes;
        if let Some(store) = self.probs.as_mut() {
            for (i, row) in probs.iter_rows().enumerate() {
                let base = (i * self.capacity + self.head) * k;
                store[base..base + k].copy_from_slice(row);
            }
        }
        let labels: Vec<usize> = probs.iter_rows().map(argmax).collect();
        self.record_epoch(&labels)
    }

    fn advance(&mut self) {
        self.head = (self.head + 1) % self.capacity;
        self.fill = (self.fill + 1).min(self.capacity);
    }

    /// CSV dump, one row per example: `index,h0,...,h{T-1}` oldest first.
    /// Unfilled slots are left empty.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "index")?;
        for t in 0..self.capacity {
            write!(w, ",h{t}")?;
        }
        writeln!(w)?;
        for i in 0..self.n {
            write!(w, "{i}")?;
            let h = self.history(i);
            for t in 0..self.capacity {
                match h.get(t) {
                    Some(p) => write!(w, ",{p}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// True when some epoch predicted `label` and a later epoch in the window did
/// not. Needs at least two entries.
pub fn fluctuation_flag(history: &[usize], label: usize) -> Result<bool> {
    if history.len() < 2 {
        return Err(SftError::NotReady(format!(
            "fluctuation needs two predictions, history has {}",
            history.len()
        )));
    }
    let mut seen_correct = false;
    for &p in history {
        if p == label {
            seen_correct = true;
        } else if seen_correct {
            return Ok(true);
        }
    }
    Ok(false)
}

/// Number of adjacent correct-then-wrong transitions in a full prediction
/// log.
pub fn count_fluctuations(log: &[usize], label: usize) -> usize {
    log.windows(2)
        .filter(|w| w[0] == label && w[1] != label)
        .count()
}

/// Precision, recall and F-score of a selection against the clean mask.
/// With no clean examples at all, recall is 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub n_selected: usize,
    pub n_selected_clean: usize,
    pub n_clean: usize,
    /// Set when nothing was selected; precision is reported as 1.
    pub precision_undefined: bool,
}

impl SelectionScore {
    pub fn compute(selected: &[usize], clean_mask: &[bool]) -> Self {
        let n_selected = selected.len();
        let n_selected_clean = selected.iter().filter(|&&i| clean_mask[i]).count();
        let n_clean = clean_mask.iter().filter(|&&c| c).count();
        let precision_undefined = n_selected == 0;
        let precision = if precision_undefined {
            1.0
        } else {
            n_selected_clean as f64 / n_selected as f64
        };
        let recall = if n_clean == 0 {
            1.0
        } else {
            n_selected_clean as f64 / n_clean as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SelectionScore {
            precision,
            recall,
            f1,
            n_selected,
            n_selected_clean,
            n_clean,
            precision_undefined,
        }
    }

    pub fn n_selected_noisy(&self) -> usize {
        self.n_selected - self.n_selected_clean
    }
}

/// Outcome of one selection pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub criterion: String,
    /// Selected example indices, ascending.
    pub selected: Vec<usize>,
    /// Per-example rejection flag; for the fluctuation criterion this is the
    /// fluctuation indicator.
    pub flags: Vec<bool>,
    pub score: Option<SelectionScore>,
}

impl SelectionReport {
    fn from_flags(criterion: &str, flags: Vec<bool>) -> Self {
        let selected = flags
            .iter()
            .enumerate()
            .filter(|&(_, &f)| !f)
            .map(|(i, _)| i)
            .collect();
        SelectionReport {
            criterion: criterion.to_string(),
            selected,
            flags,
            score: None,
        }
    }

    /// Selects everything.
    pub fn all(n: usize) -> Self {
        Self::from_flags("all", vec![false; n])
    }

    /// Attaches precision/recall/F-score against the clean mask.
    pub fn with_score(mut self, clean_mask: &[bool]) -> Result<Self> {
        if clean_mask.len() != self.flags.len() {
            return Err(SftError::shape(format!(
                "clean mask has {} entries, selection covers {}",
                clean_mask.len(),
                self.flags.len()
            )));
        }
        self.score = Some(SelectionScore::compute(&self.selected, clean_mask));
        Ok(self)
    }

    pub fn is_selected(&self, index: usize) -> bool {
        !self.flags[index]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

fn check_labels(bank: &MemoryBank, given_labels: &[usize]) -> Result<()> {
    if given_labels.len() != bank.len() {
        return Err(SftError::shape(format!(
            "{} labels for a bank of {} examples",
            given_labels.len(),
            bank.len()
        )));
    }
    Ok(())
}

/// Keeps every example whose stored history shows no fluctuation.
pub fn select_fluctuation(bank: &MemoryBank, given_labels: &[usize]) -> Result<SelectionReport> {
    check_labels(bank, given_labels)?;
    if bank.fill() < 2 {
        return Err(SftError::NotReady(format!(
            "bank holds {} epoch(s), fluctuation needs 2",
            bank.fill()
        )));
    }
    let flags = given_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| fluctuation_flag(&bank.history(i), y))
        .collect::<Result<Vec<bool>>>()?;
    Ok(SelectionReport::from_flags("fluctuation", flags))
}

/// Stricter variant: an example is kept only when it does not fluctuate and
/// its most recent prediction equals the given label. Unlike
/// [`select_fluctuation`] this rejects histories that never agree with the
/// label.
pub fn select_fluctuation_strict(bank: &MemoryBank, given_labels: &[usize]) -> Result<SelectionReport> {
    let mut report = select_fluctuation(bank, given_labels)?;
    for (i, &y) in given_labels.iter().enumerate() {
        if bank.history(i).last() != Some(&y) {
            report.flags[i] = true;
        }
    }
    Ok(SelectionReport::from_flags("fluctuation_strict", report.flags))
}

/// Keeps examples whose given label wins a strict majority of the stored
/// predictions. Exactly half is a rejection.
pub fn select_voting(bank: &MemoryBank, given_labels: &[usize]) -> Result<SelectionReport> {
    check_labels(bank, given_labels)?;
    if bank.fill() < 1 {
        return Err(SftError::NotReady("voting needs at least one epoch".into()));
    }
    let flags = given_labels
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let h = bank.history(i);
            let votes = h.iter().filter(|&&p| p == y).count();
            2 * votes <= h.len()
        })
        .collect();
    Ok(SelectionReport::from_flags("voting", flags))
}

/// Number of examples kept by the small-loss rule, `floor((1 - tau) n)`.
/// A tolerance of 1e-9 absorbs representation error, so `tau = 0.4`,
/// `n = 1000` keeps 600.
pub fn small_loss_keep_count(n: usize, assumed_noise: f64) -> usize {
    (((1.0 - assumed_noise) * n as f64) + 1e-9).floor().min(n as f64) as usize
}

/// Keeps the `floor((1 - tau) n)` smallest losses; ties go to the lower
/// index.
pub fn select_small_loss(losses: &[f64], assumed_noise: f64) -> Result<SelectionReport> {
    if !(0.0..1.0).contains(&assumed_noise) {
        return Err(SftError::Parameter(format!(
            "assumed noise ratio must lie in [0, 1), got {assumed_noise}"
        )));
    }
    let keep = small_loss_keep_count(losses.len(), assumed_noise);
    let mut order: Vec<usize> = (0..losses.len()).collect();
    order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]).then(a.cmp(&b)));
    let mut flags = vec![true; losses.len()];
    for &i in &order[..keep] {
        flags[i] = false;
    }
    Ok(SelectionReport::from_flags("small_loss", flags))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_keeps_last_three() {
        let mut bank = MemoryBank::new(2, 10, 3).unwrap();
        assert_eq!(bank.fill(), 0);
        bank.record_epoch(&[1, 5]).unwrap();
        assert_eq!(bank.fill(), 1);
        assert_eq!(bank.history(0), vec![1]);
        for e in 2..=5 {
            bank.record_epoch(&[e, e + 4]).unwrap();
        }
        assert_eq!(bank.fill(), 3);
        assert_eq!(bank.history(0), vec![3, 4, 5]);
        assert_eq!(bank.history(1), vec![7, 8, 9]);
    }

    #[test]
    fn record_rejects_bad_input() {
        let mut bank = MemoryBank::new(3, 4, 3).unwrap();
        assert!(matches!(bank.record_epoch(&[0, 1]), Err(SftError::Shape(_))));
        assert!(matches!(bank.record_epoch(&[0, 1, 4]), Err(SftError::Data(_))));
        assert_eq!(bank.fill(), 0);
        assert!(MemoryBank::new(3, 4, 0).is_err());
    }

    #[test]
    fn probability_storage() {
        let mut bank = MemoryBank::new(1, 2, 2).unwrap().with_probabilities();
        for p in [0.9, 0.2, 0.6] {
            bank.record_probabilities(&Matrix::from_rows(&[vec![p, 1.0 - p]]).unwrap())
                .unwrap();
        }
        assert_eq!(bank.history(0), vec![1, 0]);
        let rows = bank.probability_history(0).unwrap();
        assert_eq!(rows, vec![&[0.2, 0.8][..], &[0.6, 0.4][..]]);
        assert!(MemoryBank::new(1, 2, 2).unwrap().probability_history(0).is_none());
    }

    #[test]
    fn fluctuation_examples() {
        assert!(fluctuation_flag(&[2, 5, 1], 2).unwrap());
        assert!(!fluctuation_flag(&[5, 1, 2], 2).unwrap());
        assert!(!fluctuation_flag(&[2, 2, 2], 2).unwrap());
        assert!(!fluctuation_flag(&[7, 7, 7], 2).unwrap());
        assert!(matches!(fluctuation_flag(&[2], 2), Err(SftError::NotReady(_))));
    }

    #[test]
    fn count_examples() {
        assert_eq!(count_fluctuations(&[3, 1, 3, 1], 3), 2);
        assert_eq!(count_fluctuations(&[3, 3, 3, 3], 3), 0);
        assert_eq!(count_fluctuations(&[3], 3), 0);
    }

    fn bank_from(histories: &[Vec<usize>], k: usize) -> MemoryBank {
        let t = histories[0].len();
        let mut bank = MemoryBank::new(histories.len(), k, t).unwrap();
        for e in 0..t {
            let preds: Vec<usize> = histories.iter().map(|h| h[e]).collect();
            bank.record_epoch(&preds).unwrap();
        }
        bank
    }

    #[test]
    fn fluctuation_selection_examples() {
        let labels = vec![0, 1, 2, 3, 4, 5];
        let constant: Vec<Vec<usize>> = labels.iter().map(|&y| vec![y; 3]).collect();
        let report = select_fluctuation(&bank_from(&constant, 6), &labels).unwrap();
        assert_eq!(report.selected, labels);

        let mut crafted = constant.clone();
        crafted[1] = vec![1, 0, 0];
        crafted[4] = vec![3, 4, 2];
        let report = select_fluctuation(&bank_from(&crafted, 6), &labels).unwrap();
        assert_eq!(report.selected, vec![0, 2, 3, 5]);
        assert_eq!(report.flags, vec![false, true, false, false, true, false]);
    }

    #[test]
    fn selection_requires_ready_bank() {
        let mut bank = MemoryBank::new(2, 3, 3).unwrap();
        assert!(matches!(select_voting(&bank, &[0, 1]), Err(SftError::NotReady(_))));
        bank.record_epoch(&[0, 1]).unwrap();
        assert!(matches!(select_fluctuation(&bank, &[0, 1]), Err(SftError::NotReady(_))));
        assert!(select_voting(&bank, &[0, 1]).is_ok());
        assert!(matches!(select_voting(&bank, &[0]), Err(SftError::Shape(_))));
    }

    #[test]
    fn voting_examples() {
        let y = 1;
        let bank = bank_from(&[vec![1, 1, 0], vec![1, 0, 0], vec![2, 2, 2]], 3);
        let r = select_voting(&bank, &[y, y, 2]).unwrap();
        assert_eq!(r.selected, vec![0, 2]);
        let even = bank_from(&[vec![1, 0, 1, 0], vec![1, 1, 1, 0]], 3);
        let r = select_voting(&even, &[1, 1]).unwrap();
        assert_eq!(r.selected, vec![1]);
    }

    #[test]
    fn constant_wrong_history_splits_fluctuation_and_voting() {
        let bank = bank_from(&[vec![0, 0, 0], vec![2, 2, 2]], 3);
        let labels = [0, 1];
        let fluct = select_fluctuation(&bank, &labels).unwrap();
        let vote = select_voting(&bank, &labels).unwrap();
        assert_eq!(fluct.selected, vec![0, 1]);
        assert_eq!(vote.selected, vec![0]);
    }

    #[test]
    fn small_loss_examples() {
        let r = select_small_loss(&[0.1, 0.9, 0.5, 0.2], 0.5).unwrap();
        assert_eq!(r.selected, vec![0, 3]);
        let r = select_small_loss(&[0.1, 0.9, 0.5, 0.2], 0.0).unwrap();
        assert_eq!(r.selected, vec![0, 1, 2, 3]);
        let r = select_small_loss(&[0.3, 0.1, 0.3, 0.3], 0.5).unwrap();
        assert_eq!(r.selected, vec![0, 1]);
        assert!(select_small_loss(&[0.1], 1.0).is_err());
        assert_eq!(small_loss_keep_count(1000, 0.4), 600);
        assert_eq!(small_loss_keep_count(10, 0.3), 7);
    }

    #[test]
    fn score_conventions() {
        let clean = [true, true, false, false];
        let s = SelectionScore::compute(&[], &clean);
        assert!(s.precision_undefined);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 0.0, 0.0));
        let s = SelectionScore::compute(&[2, 3], &clean);
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        let s = SelectionScore::compute(&[0, 2], &clean);
        assert_eq!((s.precision, s.recall), (0.5, 0.5));
        assert!((s.f1 - 0.5).abs() < 1e-15);
        assert_eq!(s.n_selected_noisy(), 1);
    }

    #[test]
    fn report_json_and_mask_check() {
        let r = SelectionReport::all(3);
        assert!(r.clone().with_score(&[true]).is_err());
        let r = r.with_score(&[true, false, true]).unwrap();
        let json = r.to_json().unwrap();
        let back: SelectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn bank_csv_dump() {
        let mut bank = MemoryBank::new(2, 5, 3).unwrap();
        bank.record_epoch(&[4, 0]).unwrap();
        bank.record_epoch(&[3, 1]).unwrap();
        let mut out = Vec::new();
        bank.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "index,h0,h1,h2\n0,4,3,\n1,0,1,\n");
    }
}
