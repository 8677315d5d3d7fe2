//! Multi-label evaluation metrics.

use crate::error::{Error, Result};
use crate::net::Model;
use crate::training::{Dataset, Label};

/// Per-class F1 averaged over classes, from thresholded predictions.
///
/// Unknown label entries are skipped. A class with no true positive, no false
/// positive and no false negative scores 0.
pub fn macro_f1_from_predictions(predictions: &[Vec<bool>], labels: &[Vec<Label>]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::EmptySet);
    }
    if predictions.len() != labels.len() {
        return Err(Error::Misaligned(format!(
            "{} predictions for {} label rows",
            predictions.len(),
            labels.len()
        )));
    }
    let c = labels[0].len();
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fneg = vec![0usize; c];
    for (pred, y) in predictions.iter().zip(labels) {
        if pred.len() != c || y.len() != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                actual: pred.len().max(y.len()),
            });
        }
        for k in 0..c {
            match (pred[k], y[k].as_bool()) {
                (true, Some(true)) => tp[k] += 1,
                (true, Some(false)) => fp[k] += 1,
                (false, Some(true)) => fneg[k] += 1,
                _ => {}
            }
        }
    }
    let sum: f64 = (0..c)
        .map(|k| {
            let denom = 2 * tp[k] + fp[k] + fneg[k];
            if denom == 0 {
                0.0
            } else {
                2.0 * tp[k] as f64 / denom as f64
            }
        })
        .sum();
    Ok(sum / c as f64)
}

pub fn threshold_outputs(outputs: &[f64], threshold: f64) -> Vec<bool> {
    outputs.iter().map(|&f| f > threshold).collect()
}

pub fn macro_f1(model: &Model, dataset: &Dataset, threshold: f64) -> Result<f64> {
    let preds = dataset
        .features()
        .iter()
        .map(|x| Ok(threshold_outputs(&model.predict(x)?, threshold)))
        .collect::<Result<Vec<_>>>()?;
    macro_f1_from_predictions(&preds, dataset.labels())
}

/// Argmax over `main` (ties to the earliest listed index).
pub fn argmax_over(outputs: &[f64], main: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for &k in main {
        if best.is_none_or(|b| outputs[k] > outputs[b]) {
            best = Some(k);
        }
    }
    best
}

/// The single positive main class of a label row.
pub fn true_main_class(labels: &[Label], main: &[usize]) -> Result<usize> {
    let pos: Vec<usize> = main.iter().copied().filter(|&k| labels[k] == Label::Known1).collect();
    match pos.as_slice() {
        [k] => Ok(*k),
        _ => Err(Error::NotSingleLabel(pos.len())),
    }
}

/// Fraction of rows whose main-class argmax hits the positive main class.
pub fn acc_main_from_outputs(outputs: &[Vec<f64>], labels: &[Vec<Label>], main: &[usize]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(Error::EmptySet);
    }
    if main.is_empty() {
        return Err(Error::NoMainClasses);
    }
    if outputs.len() != labels.len() {
        return Err(Error::Misaligned(format!("{} outputs for {} label rows", outputs.len(), labels.len())));
    }
    let mut hits = 0usize;
    for (f, y) in outputs.iter().zip(labels) {
        if argmax_over(f, main) == Some(true_main_class(y, main)?) {
            hits += 1;
        }
    }
    Ok(hits as f64 / outputs.len() as f64)
}

pub fn acc_main(model: &Model, dataset: &Dataset, main: &[usize]) -> Result<f64> {
    let outputs = dataset
        .features()
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    acc_main_from_outputs(&outputs, dataset.labels(), main)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::Label::{Known0 as N, Known1 as P};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn f1_perfect_and_all_wrong() {
        let labels = vec![vec![P, N], vec![N, P]];
        let perfect = vec![vec![true, false], vec![false, true]];
        let wrong = vec![vec![false, true], vec![true, false]];
        assert_eq!(macro_f1_from_predictions(&perfect, &labels).unwrap(), 1.0);
        assert_eq!(macro_f1_from_predictions(&wrong, &labels).unwrap(), 0.0);
    }

    #[test]
    fn f1_hand_confusion() {
        // class 0: TP=1 FP=1 FN=0; class 1: TP=0 FP=0 FN=1
        let labels = vec![vec![P, P], vec![N, N]];
        let preds = vec![vec![true, false], vec![true, false]];
        let f1 = macro_f1_from_predictions(&preds, &labels).unwrap();
        assert!((f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn f1_empty_is_error() {
        assert!(matches!(macro_f1_from_predictions(&[], &[]), Err(Error::EmptySet)));
    }

    #[test]
    fn acc_main_cases() {
        let labels = vec![vec![P, N, N], vec![N, N, P]];
        let outs = vec![vec![0.9, 0.1, 0.2], vec![0.1, 0.2, 0.8]];
        assert_eq!(acc_main_from_outputs(&outs, &labels, &[0, 1, 2]).unwrap(), 1.0);
        assert!(matches!(acc_main_from_outputs(&[], &[], &[0]), Err(Error::EmptySet)));
        let multi = vec![vec![P, P, N]];
        assert!(matches!(
            acc_main_from_outputs(&outs[..1], &multi, &[0, 1, 2]),
            Err(Error::NotSingleLabel(2))
        ));
    }

    #[test]
    fn acc_main_uniform_random_near_quarter() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4000;
        let mut outs = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..n {
            outs.push((0..4).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
            let k = rng.random_range(0..4);
            labels.push((0..4).map(|j| Label::from_bool(j == k)).collect::<Vec<_>>());
        }
        let acc = acc_main_from_outputs(&outs, &labels, &[0, 1, 2, 3]).unwrap();
        // 4 binomial standard deviations
        let sd = (0.25f64 * 0.75 / n as f64).sqrt();
        assert!((acc - 0.25).abs() < 4.0 * sd, "acc {acc}");
    }

    #[test]
    fn argmax_ties_to_first() {
        assert_eq!(argmax_over(&[0.5, 0.5, 0.1], &[0, 1, 2]), Some(0));
        assert_eq!(argmax_over(&[0.2, 0.9, 0.1], &[0, 1, 2]), Some(1));
        assert_eq!(argmax_over(&[0.2], &[]), None);
    }

    fn naive_f1(preds: &[Vec<bool>], labels: &[Vec<Label>]) -> f64 {
        let c = labels[0].len();
        let mut total = 0.0;
        for k in 0..c {
            let pairs: Vec<(bool, bool)> = preds
                .iter()
                .zip(labels)
                .filter_map(|(p, y)| y[k].as_bool().map(|t| (p[k], t)))
                .collect();
            let tp = pairs.iter().filter(|&&(p, t)| p && t).count() as f64;
            let predicted = pairs.iter().filter(|&&(p, _)| p).count() as f64;
            let actual = pairs.iter().filter(|&&(_, t)| t).count() as f64;
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0.0 { tp / actual } else { 0.0 };
            total += if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
        }
        total / c as f64
    }

    #[test]
    fn metrics_match_naive_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let n = rng.random_range(1..40);
            let c = rng.random_range(2..6);
            let preds: Vec<Vec<bool>> = (0..n).map(|_| (0..c).map(|_| rng.random()).collect()).collect();
            let labels: Vec<Vec<Label>> =
                (0..n).map(|_| (0..c).map(|_| Label::from_bool(rng.random())).collect()).collect();
            let a = macro_f1_from_predictions(&preds, &labels).unwrap();
            let b = naive_f1(&preds, &labels);
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");

            let outs: Vec<Vec<f64>> = (0..n).map(|_| (0..c).map(|_| rng.random()).collect()).collect();
            let main: Vec<usize> = (0..c).collect();
            let single: Vec<Vec<Label>> = (0..n)
                .map(|_| {
                    let k = rng.random_range(0..c);
                    (0..c).map(|j| Label::from_bool(j == k)).collect()
                })
                .collect();
            let acc = acc_main_from_outputs(&outs, &single, &main).unwrap();
            let naive = outs
                .iter()
                .zip(&single)
                .filter(|(o, y)| {
                    let k = y.iter().position(|&l| l == Label::Known1).unwrap();
                    o.iter().enumerate().all(|(j, &v)| v < o[k] || (v == o[k] && j >= k))
                })
                .count() as f64
                / n as f64;
            assert_eq!(acc, naive);
        }
    }
}
