//! Binary classification metrics: accuracy, AUC, per-class F1, macro-F1.
//!
//! AUC uses the rank statistic with half credit per tie; a single-class
//! label set reports AUC as undefined rather than a number. F1 follows the
//! zero-division-is-zero convention. Scores at the threshold classify as
//! fake, matching the model's decision rule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub acc: f64,
    /// `None` when the labels contain a single class.
    pub auc: Option<f64>,
    pub mac_f1: f64,
    pub f1_real: f64,
    pub f1_fake: f64,
    pub n: usize,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl EvalReport {
    /// Aligned text table in macF1 / Acc / AUC / F1-real / F1-fake order.
    pub fn table(&self) -> String {
        let auc = match self.auc {
            Some(a) => format!("{a:.4}"),
            None => "undef".to_string(),
        };
        format!(
            "{:<8}{:<8}{:<8}{:<8}{:<8}\n{:<8.4}{:<8.4}{:<8}{:<8.4}{:<8.4}",
            "macF1", "Acc", "AUC", "F1-real", "F1-fake",
            self.mac_f1, self.acc, auc, self.f1_real, self.f1_fake,
        )
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let tp = tp as f64;
    let precision_den = tp + fp as f64;
    let recall_den = tp + fn_ as f64;
    let precision = if precision_den > 0.0 { tp / precision_den } else { 0.0 };
    let recall = if recall_den > 0.0 { tp / recall_den } else { 0.0 };
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Rank-statistic AUC with average ranks for ties. `None` if the labels
/// are single-class.
fn auc_rank(probs: &[f64], labels: &[u8]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].partial_cmp(&probs[b]).expect("finite probs"));

    // Sum of positive ranks, using the average rank within tie runs. All
    // quantities are integers or exact halves, so the result is exact.
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && probs[order[j + 1]] == probs[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share the average rank.
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let n_pos_f = n_pos as f64;
    Some((rank_sum_pos - n_pos_f * (n_pos_f + 1.0) / 2.0) / (n_pos_f * n_neg as f64))
}

/// Score a set of fake-probabilities against 0/1 labels.
pub fn evaluate(probs: &[f64], labels: &[u8], threshold: f64) -> Result<EvalReport> {
    if probs.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty prediction set".into()));
    }
    if probs.len() != labels.len() {
        return Err(Error::Shape {
            expected: probs.len(),
            actual: labels.len(),
            context: "labels vs probs".into(),
        });
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(Error::Validation(format!("label {bad} outside {{0,1}}")));
    }

    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&p, &y) in probs.iter().zip(labels) {
        let pred_fake = p >= threshold;
        match (pred_fake, y) {
            (true, 1) => tp += 1,
            (true, 0) => fp += 1,
            (false, 0) => tn += 1,
            (false, 1) => fn_ += 1,
            _ => unreachable!(),
        }
    }
    let n = probs.len();
    let f1_fake = f1(tp, fp, fn_);
    // For the real class, true positives are correctly predicted reals.
    let f1_real = f1(tn, fn_, fp);
    Ok(EvalReport {
        acc: (tp + tn) as f64 / n as f64,
        auc: auc_rank(probs, labels),
        mac_f1: (f1_real + f1_fake) / 2.0,
        f1_real,
        f1_fake,
        n,
        tp,
        fp,
        tn,
        fn_,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// O(n^2) pair-counting AUC: 1 per win, 0.5 per tie.
    fn auc_pairs(probs: &[f64], labels: &[u8]) -> Option<f64> {
        let pos: Vec<f64> = probs
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 1)
            .map(|(&p, _)| p)
            .collect();
        let neg: Vec<f64> = probs
            .iter()
            .zip(labels)
            .filter(|(_, &y)| y == 0)
            .map(|(&p, _)| p)
            .collect();
        if pos.is_empty() || neg.is_empty() {
            return None;
        }
        let mut score = 0.0;
        for &p in &pos {
            for &q in &neg {
                if p > q {
                    score += 1.0;
                } else if p == q {
                    score += 0.5;
                }
            }
        }
        Some(score / (pos.len() * neg.len()) as f64)
    }

    /// Direct-formula F1 for one class.
    fn f1_direct(preds: &[u8], labels: &[u8], class: u8) -> f64 {
        let tp = preds
            .iter()
            .zip(labels)
            .filter(|(&p, &y)| p == class && y == class)
            .count() as f64;
        let pred_pos = preds.iter().filter(|&&p| p == class).count() as f64;
        let actual_pos = labels.iter().filter(|&&y| y == class).count() as f64;
        let precision = if pred_pos > 0.0 { tp / pred_pos } else { 0.0 };
        let recall = if actual_pos > 0.0 { tp / actual_pos } else { 0.0 };
        if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        }
    }

    #[test]
    fn perfect_predictions() {
        let report = evaluate(&[0.9, 0.8, 0.1, 0.2], &[1, 1, 0, 0], 0.5).unwrap();
        assert_eq!(report.acc, 1.0);
        assert_eq!(report.mac_f1, 1.0);
        assert_eq!(report.auc, Some(1.0));
        assert_eq!((report.tp, report.tn, report.fp, report.fn_), (2, 2, 0, 0));
    }

    #[test]
    fn spec_pair_counting_case() {
        // Frozen from the pair-counting oracle: both real/fake pairs favor
        // the fake item, so AUC = 2/2 = 1.
        let probs = [0.9, 0.8, 0.3];
        let labels = [1, 0, 0];
        assert_eq!(auc_pairs(&probs, &labels), Some(1.0));
        let report = evaluate(&probs, &labels, 0.5).unwrap();
        assert_eq!(report.auc, Some(1.0));
    }

    #[test]
    fn single_class_degenerate() {
        let report = evaluate(&[0.9, 0.7], &[1, 1], 0.5).unwrap();
        assert_eq!(report.auc, None);
        assert_eq!(report.f1_real, 0.0);
        assert!(report.table().contains("undef"));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(evaluate(&[], &[], 0.5).is_err());
    }

    #[test]
    fn threshold_ties_classify_as_fake() {
        let report = evaluate(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(report.tp, 1);
    }

    #[test]
    fn matches_oracles_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..60 {
            let n = rng.gen_range(1..=1000);
            let quantize = trial % 3 == 0; // force ties on some trials
            let probs: Vec<f64> = (0..n)
                .map(|_| {
                    let p: f64 = rng.gen();
                    if quantize { (p * 8.0).round() / 8.0 } else { p }
                })
                .collect();
            let labels: Vec<u8> = (0..n)
                .map(|_| {
                    if trial % 7 == 0 {
                        1 // single-class trial
                    } else {
                        u8::from(rng.gen_bool(0.4))
                    }
                })
                .collect();
            let report = evaluate(&probs, &labels, 0.5).unwrap();
            assert_eq!(report.auc, auc_pairs(&probs, &labels), "trial {trial}");
            let preds: Vec<u8> = probs.iter().map(|&p| u8::from(p >= 0.5)).collect();
            assert_eq!(report.f1_fake, f1_direct(&preds, &labels, 1), "trial {trial}");
            assert_eq!(report.f1_real, f1_direct(&preds, &labels, 0), "trial {trial}");
            assert_eq!(report.mac_f1, (report.f1_real + report.f1_fake) / 2.0);
            assert_eq!(report.tp + report.fp + report.tn + report.fn_, n);
        }
    }

    #[test]
    fn auc_invariant_under_monotone_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 200;
        let probs: Vec<f64> = (0..n).map(|_| rng.gen()).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let transformed: Vec<f64> = probs.iter().map(|&p| (3.0 * p + 1.0).tanh()).collect();
        let a = evaluate(&probs, &labels, 0.5).unwrap().auc;
        let b = evaluate(&transformed, &labels, 0.5).unwrap().auc;
        assert_eq!(a, b);
    }

    #[test]
    fn class_swap_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 300;
        let probs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.001..0.999)).collect();
        let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.gen_bool(0.5))).collect();
        let swapped_probs: Vec<f64> = probs.iter().map(|p| 1.0 - p).collect();
        let swapped_labels: Vec<u8> = labels.iter().map(|y| 1 - y).collect();
        let a = evaluate(&probs, &labels, 0.5).unwrap();
        let b = evaluate(&swapped_probs, &swapped_labels, 0.5).unwrap();
        assert!((a.f1_real - b.f1_fake).abs() < 1e-12);
        assert!((a.f1_fake - b.f1_real).abs() < 1e-12);
        assert!((a.auc.unwrap() - b.auc.unwrap()).abs() < 1e-12);
    }
}
