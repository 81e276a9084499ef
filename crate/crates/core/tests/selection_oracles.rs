use rand::Rng;
use sft_core::rng;
use sft_core::selection::{
    self, count_fluctuations, fluctuation_flag, select_fluctuation, select_fluctuation_strict,
    select_small_loss, select_voting, SelectionScore,
};
use sft_core::MemoryBank;

/// Every ordered pair `(t1, t2)` with `t1 < t2`.
fn brute_force_flag(history: &[usize], y: usize) -> bool {
    (0..history.len()).any(|t1| (t1 + 1..history.len()).any(|t2| history[t1] == y && history[t2] != y))
}

/// All `base^len` sequences over `0..base`.
fn all_patterns(len: usize, base: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..base).map(move |v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect();
    }
    out
}

#[test]
fn flag_matches_pair_scan_exhaustively() {
    // Three symbols cover "the label" plus two distinct wrong classes.
    let mut checked = 0;
    for t in 2..=5 {
        for pattern in all_patterns(t, 3) {
            for y in 0..3 {
                assert_eq!(
                    fluctuation_flag(&pattern, y).unwrap(),
                    brute_force_flag(&pattern, y),
                    "{pattern:?} y={y}"
                );
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 3 * (9 + 27 + 81 + 243));
    assert!(fluctuation_flag(&[1], 1).is_err());
    assert!(fluctuation_flag(&[], 1).is_err());
}

#[test]
fn bank_equals_tail_of_full_log() {
    let mut rng = rng::stream(11, 200);
    for _ in 0..1000 {
        let n = rng.gen_range(1..6);
        let k = rng.gen_range(2..5);
        let cap = rng.gen_range(1..6);
        let epochs = rng.gen_range(0..12);
        let mut bank = MemoryBank::new(n, k, cap).unwrap();
        let mut log: Vec<Vec<usize>> = vec![Vec::new(); n];
        for _ in 0..epochs {
            let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
            bank.record_epoch(&preds).unwrap();
            for (h, &p) in log.iter_mut().zip(&preds) {
                h.push(p);
            }
        }
        assert_eq!(bank.fill(), epochs.min(cap));
        for (i, full) in log.iter().enumerate() {
            let start = full.len().saturating_sub(cap);
            assert_eq!(bank.history(i), full[start..].to_vec());
        }
    }
}

#[test]
fn count_matches_reference_scan() {
    let mut rng = rng::stream(12, 200);
    for _ in 0..200 {
        let log: Vec<usize> = (0..100).map(|_| rng.gen_range(0..3)).collect();
        let y = rng.gen_range(0..3);
        let mut expected = 0;
        for t in 0..log.len() - 1 {
            if log[t] == y && log[t + 1] != y {
                expected += 1;
            }
        }
        assert_eq!(count_fluctuations(&log, y), expected);
    }
    assert_eq!(count_fluctuations(&[1, 0, 1, 0], 1), 2);
    assert_eq!(count_fluctuations(&[4; 30], 4), 0);
}

#[test]
fn small_loss_matches_sort_prefix() {
    let mut rng = rng::stream(13, 200);
    for _ in 0..20 {
        // coarse values force ties
        let losses: Vec<f64> = (0..1000).map(|_| f64::from(rng.gen_range(0..50u8)) / 10.0).collect();
        let tau = rng.gen_range(0.0..0.9);
        let report = select_small_loss(&losses, tau).unwrap();
        let mut pairs: Vec<(f64, usize)> = losses.iter().copied().zip(0..).collect();
        pairs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let keep = ((1.0 - tau) * 1000.0 + 1e-9).floor() as usize;
        let mut expected: Vec<usize> = pairs[..keep].iter().map(|p| p.1).collect();
        expected.sort_unstable();
        assert_eq!(report.selected, expected);
    }
}

#[test]
fn f_score_matches_definition() {
    let mut rng = rng::stream(14, 200);
    for _ in 0..1000 {
        let n = rng.gen_range(1..60);
        let clean: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        let selected: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        let s = SelectionScore::compute(&selected, &clean);
        let tp = selected.iter().filter(|&&i| clean[i]).count() as f64;
        let n_clean = clean.iter().filter(|&&c| c).count() as f64;
        let p = if selected.is_empty() { 1.0 } else { tp / selected.len() as f64 };
        let r = if n_clean == 0.0 { 1.0 } else { tp / n_clean };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        assert!((s.precision - p).abs() < 1e-12);
        assert!((s.recall - r).abs() < 1e-12);
        assert!((s.f1 - f).abs() < 1e-12);
    }
}

fn random_bank(seed: u64, n: usize, k: usize, epochs: usize) -> (MemoryBank, Vec<usize>) {
    let mut rng = rng::stream(seed, 201);
    let mut bank = MemoryBank::new(n, k, 3).unwrap();
    for _ in 0..epochs {
        let preds: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        bank.record_epoch(&preds).unwrap();
    }
    let labels = (0..n).map(|_| rng.gen_range(0..k)).collect();
    (bank, labels)
}

#[test]
fn selection_is_pure() {
    let (bank, labels) = random_bank(15, 200, 3, 5);
    let before = bank.clone();
    let a = select_fluctuation(&bank, &labels).unwrap();
    let b = select_fluctuation(&bank, &labels).unwrap();
    select_voting(&bank, &labels).unwrap();
    select_fluctuation_strict(&bank, &labels).unwrap();
    assert_eq!(a, b);
    assert_eq!(bank, before);
}

#[test]
fn strict_selection_is_literal_minus_disagreeing_latest() {
    let (bank, labels) = random_bank(16, 500, 3, 4);
    let literal = select_fluctuation(&bank, &labels).unwrap();
    let strict = select_fluctuation_strict(&bank, &labels).unwrap();
    let expected: Vec<usize> = literal
        .selected
        .iter()
        .copied()
        .filter(|&i| bank.history(i).last() == Some(&labels[i]))
        .collect();
    assert_eq!(strict.selected, expected);
    assert!(strict.selected.len() < literal.selected.len());
}

#[test]
fn constant_histories_pass_fluctuation_superset_of_voting() {
    let n = 30;
    let mut bank = MemoryBank::new(n, 3, 3).unwrap();
    let preds: Vec<usize> = (0..n).map(|i| i % 3).collect();
    for _ in 0..3 {
        bank.record_epoch(&preds).unwrap();
    }
    let labels: Vec<usize> = (0..n).map(|i| (i / 3) % 3).collect();
    let fl = select_fluctuation(&bank, &labels).unwrap();
    let vote = select_voting(&bank, &labels).unwrap();
    assert_eq!(fl.selected.len(), n);
    assert!(vote.selected.iter().all(|&i| fl.is_selected(i)));
    assert!(vote.selected.len() < n);
    assert_eq!(selection::DEFAULT_CAPACITY, 3);
}
