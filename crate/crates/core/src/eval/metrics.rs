use serde::{Deserialize, Serialize};

use super::EvalError;

/// Default false-positive-rate cap of the challenge metric.
pub const FPR_CAP: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::InvalidScore(i));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClassLabels);
    }
    Ok((pos, neg))
}

/// ROC over every distinct score, positive iff `score >= threshold`. Starts
/// with a `+∞` point at (0, 0) and runs in descending threshold order, so
/// tied scores always cross the threshold together.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<RocPoint>, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, tpr: 0.0, fpr: 0.0 }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint { threshold, tpr: tp as f64 / pos as f64, fpr: fp as f64 / neg as f64 });
    }
    Ok(points)
}

/// Highest true-positive rate among thresholds whose false-positive rate is
/// at most `fpr_cap`. Labels are `true` for Poor.
pub fn challenge_metric(scores: &[f64], labels: &[bool], fpr_cap: f64) -> Result<f64, EvalError> {
    Ok(roc_points(scores, labels)?
        .into_iter()
        .filter(|p| p.fpr <= fpr_cap)
        .map(|p| p.tpr)
        .fold(0.0, f64::max))
}

pub fn accuracy(preds: &[bool], labels: &[bool]) -> Result<f64, EvalError> {
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if preds.len() != labels.len() {
        return Err(EvalError::LengthMismatch(format!("{} predictions, {} labels", preds.len(), labels.len())));
    }
    Ok(preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / preds.len() as f64)
}
