//! Accuracy, macro-F1 and rank-based ROC AUC for binary real/fake scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
    pub precision: [f64; 2],
    pub recall: [f64; 2],
    pub n_samples: usize,
}

impl MetricReport {
    /// AUC as printed in CSV output; undefined AUC prints as `NA`.
    pub fn auc_field(&self) -> String {
        self.auc.map_or_else(|| "NA".to_string(), |a| a.to_string())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `scores` are positive-class (fake) probabilities. A score above 0.5
/// predicts class 1; exactly 0.5 predicts class 0.
pub fn compute_metrics(scores: &[f64], labels: &[usize]) -> Result<MetricReport> {
    if scores.is_empty() || scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "need equal, nonzero numbers of scores and labels (got {} and {})",
            scores.len(),
            labels.len()
        )));
    }
    if labels.iter().any(|&l| l > 1) {
        return Err(Error::InvalidArgument("labels must be 0 or 1".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { stage: "scores" });
    }
    // confusion[truth][pred]
    let mut confusion = [[0usize; 2]; 2];
    for (&s, &l) in scores.iter().zip(labels) {
        let pred = usize::from(s > 0.5);
        confusion[l][pred] += 1;
    }
    let mut precision = [0.0; 2];
    let mut recall = [0.0; 2];
    let mut f1 = [0.0; 2];
    for c in 0..2 {
        let tp = confusion[c][c];
        precision[c] = ratio(tp, confusion[0][c] + confusion[1][c]);
        recall[c] = ratio(tp, confusion[c][0] + confusion[c][1]);
        let sum = precision[c] + recall[c];
        f1[c] = if sum == 0.0 {
            0.0
        } else {
            2.0 * precision[c] * recall[c] / sum
        };
    }
    Ok(MetricReport {
        accuracy: ratio(confusion[0][0] + confusion[1][1], scores.len()),
        macro_f1: 0.5 * (f1[0] + f1[1]),
        auc: rank_auc(scores, labels),
        precision,
        recall,
        n_samples: scores.len(),
    })
}

/// Mann–Whitney AUC from mid-ranks; tied positive/negative pairs count 1/2.
///
/// Works in doubled integer units (twice the rank sum) so the numerator is
/// exact and the result equals the pairwise count bit for bit.
pub fn rank_auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
    let n_pos = labels.iter().filter(|&&l| l == 1).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice_rank_sum = 0u64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && scores[order[end + 1]] == scores[order[start]] {
            end += 1;
        }
        // 1-based ranks start+1 ..= end+1 share the mid-rank; doubled: start+end+2
        let doubled_mid = (start + end + 2) as u64;
        let positives = order[start..=end].iter().filter(|&&i| labels[i] == 1).count() as u64;
        twice_rank_sum += positives * doubled_mid;
        start = end + 1;
    }
    let twice_u = twice_rank_sum - n_pos * (n_pos + 1);
    Some(twice_u as f64 / (2 * n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Rng;

    /// Brute force over every positive/negative pair.
    fn pairwise_auc(scores: &[f64], labels: &[usize]) -> Option<f64> {
        let mut twice = 0u64;
        let (mut np, mut nn) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li == 1 {
                np += 1;
            } else {
                nn += 1;
            }
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj == 0 {
                    if scores[i] > scores[j] {
                        twice += 2;
                    } else if scores[i] == scores[j] {
                        twice += 1;
                    }
                }
            }
        }
        (np > 0 && nn > 0).then(|| twice as f64 / (2 * np * nn) as f64)
    }

    #[test]
    fn hand_case() {
        let s = [0.9, 0.8, 0.4, 0.3];
        let l = [1, 0, 1, 0];
        assert_eq!(rank_auc(&s, &l), Some(0.75));
        assert_eq!(pairwise_auc(&s, &l), Some(0.75));
    }

    #[test]
    fn perfect_and_inverted() {
        let l = [0, 0, 1, 1];
        let m = compute_metrics(&[0.1, 0.2, 0.8, 0.9], &l).unwrap();
        assert_eq!(m.auc, Some(1.0));
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
        let m = compute_metrics(&[0.9, 0.8, 0.2, 0.1], &l).unwrap();
        assert_eq!(m.auc, Some(0.0));
        assert_eq!(m.accuracy, 0.0);
    }

    #[test]
    fn single_class_auc_undefined() {
        let m = compute_metrics(&[0.2, 0.7], &[1, 1]).unwrap();
        assert_eq!(m.auc, None);
        assert_eq!(m.auc_field(), "NA");
        assert_eq!(m.accuracy, 0.5);
    }

    #[test]
    fn half_score_predicts_real() {
        let m = compute_metrics(&[0.5, 0.5], &[0, 1]).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.recall, [1.0, 0.0]);
        // class 1 never predicted: precision 0/0 -> 0, F1 0
        assert_eq!(m.precision[1], 0.0);
        let f1_real = 2.0 * 0.5 * 1.0 / 1.5;
        assert!((m.macro_f1 - f1_real / 2.0).abs() < 1e-15);
        assert_eq!(m.auc, Some(0.5));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[0.1], &[2]).is_err());
        assert!(compute_metrics(&[0.1, 0.2], &[1]).is_err());
    }

    #[test]
    fn rank_equals_pairwise_exactly() {
        let mut rng = Rng::new(123);
        for _ in 0..500 {
            let n = 1 + rng.below(200);
            // coarse grid so ties are common
            let levels = 1 + rng.below(12);
            let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
            assert_eq!(rank_auc(&scores, &labels), pairwise_auc(&scores, &labels));
        }
    }
}
