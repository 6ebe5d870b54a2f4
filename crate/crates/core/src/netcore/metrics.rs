//! Prior-calibrated F1 scoring.

use super::{FeatureExtractor, Head, Mode, NetError};
use crate::datakit::{Fold, PartDataset};

/// Per-class F1 after reweighting every confusion row to equal total mass.
///
/// Scaling any row by a positive constant leaves the scores unchanged, so
/// the metric is invariant to the class prior and comparable across heads
/// trained on different numbers of parts.
pub fn calibrated_f1(confusion: &[Vec<u64>]) -> Result<Vec<f64>, NetError> {
    let c = confusion.len();
    if c < 2 || confusion.iter().any(|row| row.len() != c) {
        return Err(NetError::BadConfusionShape {
            rows: c,
            cols: confusion.first().map_or(0, Vec::len),
        });
    }
    let mut weighted = vec![vec![0.0f64; c]; c];
    for (i, row) in confusion.iter().enumerate() {
        let total: u64 = row.iter().sum();
        if total == 0 {
            return Err(NetError::EmptyConfusionRow(i));
        }
        for (j, &count) in row.iter().enumerate() {
            weighted[i][j] = count as f64 / total as f64;
        }
    }
    let mut scores = Vec::with_capacity(c);
    for k in 0..c {
        let tp = weighted[k][k];
        let fn_ = weighted[k].iter().sum::<f64>() - tp;
        let fp = (0..c).filter(|&i| i != k).map(|i| weighted[i][k]).sum::<f64>();
        let denom = 2.0 * tp + fp + fn_;
        scores.push(if denom == 0.0 { 0.0 } else { 2.0 * tp / denom });
    }
    Ok(scores)
}

/// Confusion matrix of a head over one dataset fold (rows = true class).
pub fn confusion_on_fold(
    extractor: &FeatureExtractor,
    head: &Head,
    ds: &PartDataset,
    fold: Fold,
) -> Result<Vec<Vec<u64>>, NetError> {
    let c = head.classes().len();
    let mut m = vec![vec![0u64; c]; c];
    let mut seen = 0usize;
    for sample in ds.in_fold(fold) {
        let truth = head
            .classes()
            .iter()
            .position(|p| p == &sample.label)
            .ok_or_else(|| NetError::ClassMismatch {
                head: head.classes().to_vec(),
                dataset: ds.parts.clone(),
            })?;
        let f = extractor.features_for_sample(sample)?;
        let (logits, _) = head.forward(&f, Mode::Eval)?;
        let pred = logits
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .expect("at least one class");
        m[truth][pred] += 1;
        seen += 1;
    }
    if seen == 0 {
        return Err(NetError::EmptyFold(format!("{fold:?}")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_diagonal_scores_one_regardless_of_sizes() {
        let confusion = vec![vec![3, 0, 0], vec![0, 900, 0], vec![0, 0, 17]];
        let scores = calibrated_f1(&confusion).unwrap();
        for s in scores {
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_class_case_matches_hand_oracle() {
        // Rows already uniform mass (10 each):
        //   reweighted = [[0.8, 0.2], [0.1, 0.9]]
        //   class 0: tp=0.8 fn=0.2 fp=0.1 -> 1.6/1.9
        //   class 1: tp=0.9 fn=0.1 fp=0.2 -> 1.8/2.1
        let scores = calibrated_f1(&[vec![8, 2], vec![1, 9]]).unwrap();
        assert!((scores[0] - 1.6 / 1.9).abs() < 1e-12);
        assert!((scores[1] - 1.8 / 2.1).abs() < 1e-12);
    }

    #[test]
    fn row_scaling_is_invisible() {
        let base = vec![vec![8, 2, 1], vec![1, 9, 3], vec![2, 2, 14]];
        let scaled: Vec<Vec<u64>> = base
            .iter()
            .enumerate()
            .map(|(i, row)| row.iter().map(|v| v * (10u64.pow(i as u32 + 1))).collect())
            .collect();
        let a = calibrated_f1(&base).unwrap();
        let b = calibrated_f1(&scaled).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_row_is_an_error() {
        let err = calibrated_f1(&[vec![0, 0], vec![1, 5]]).unwrap_err();
        assert!(matches!(err, NetError::EmptyConfusionRow(0)));
    }

    #[test]
    fn shape_checked() {
        assert!(calibrated_f1(&[vec![1u64]]).is_err());
        assert!(calibrated_f1(&[vec![1, 2], vec![3]]).is_err());
    }
}
