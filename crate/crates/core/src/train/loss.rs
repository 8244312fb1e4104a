use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::autodiff::{bce_value, Graph, Var};
use crate::dsp::BipolarSegment;
use crate::model::{forward_graph, BoundParams, ModelConfig};

/// Probabilities are clamped to `[CE_CLAMP, 1 − CE_CLAMP]` before the log.
pub const CE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub mse: f64,
    pub total: f64,
}

/// Mean binary cross-entropy of `probs` against 0/1 `labels`.
pub fn cross_entropy_loss(probs: &[f64], labels: &[f64]) -> Result<f64, TrainError> {
    if probs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if probs.len() != labels.len() {
        return Err(TrainError::ShapeMismatch(format!("{} probabilities, {} labels", probs.len(), labels.len())));
    }
    Ok(bce_value(probs, labels, CE_CLAMP))
}

pub fn mse_loss(preds: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if preds.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if preds.len() != targets.len() {
        return Err(TrainError::ShapeMismatch(format!("{} predictions, {} targets", preds.len(), targets.len())));
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum::<f64>() / preds.len() as f64)
}

pub fn total_loss(ce: f64, mse: f64) -> LossBreakdown {
    LossBreakdown { ce, mse, total: ce + mse }
}

/// One labelled example: `label` is 1 for the model's positive class.
#[derive(Clone, Copy, Debug)]
pub struct LabelledSegment<'a> {
    pub segment: &'a BipolarSegment,
    pub label: f64,
    pub cpc: f64,
}

pub struct BatchLoss {
    pub loss: Var,
    pub breakdown: LossBreakdown,
    pub probs: Vec<f64>,
}

/// Builds the summed classification and regression loss of a batch inside `g`.
pub fn batch_loss(
    g: &mut Graph<'_>,
    bound: &BoundParams,
    cfg: &ModelConfig,
    batch: &[LabelledSegment<'_>],
) -> Result<BatchLoss, TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let mut logits = Vec::with_capacity(batch.len());
    let mut cpcs = Vec::with_capacity(batch.len());
    for ex in batch {
        let heads = forward_graph(g, &bound.encoders, &bound.context, cfg, ex.segment)?;
        logits.push(heads.logit);
        cpcs.push(heads.cpc_raw);
    }
    let labels: Vec<f64> = batch.iter().map(|e| e.label).collect();
    let targets: Vec<f64> = batch.iter().map(|e| e.cpc).collect();
    let logit = g.concat0(&logits)?;
    let probs = g.sigmoid(logit)?;
    let ce = g.binary_cross_entropy(probs, &labels, CE_CLAMP)?;
    let cpc = g.concat0(&cpcs)?;
    let mse = g.mean_squared_error(cpc, &targets)?;
    let loss = g.add(ce, mse)?;
    let breakdown = total_loss(g.value(ce).data()[0], g.value(mse).data()[0]);
    Ok(BatchLoss { loss, breakdown, probs: g.value(probs).data().to_vec() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::kernels::sigmoid_scalar;
    use crate::autodiff::Tensor;
    use proptest::prelude::*;

    #[test]
    fn cross_entropy_examples() {
        assert!(cross_entropy_loss(&[1.0], &[1.0]).unwrap() <= 1e-6);
        assert!((cross_entropy_loss(&[0.5], &[1.0]).unwrap() - std::f64::consts::LN_2).abs() <= 1e-6);
        assert!((cross_entropy_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap() - (-(0.9f64).ln())).abs() <= 1e-5);
        assert!((cross_entropy_loss(&[0.9, 0.1], &[1.0, 0.0]).unwrap() - 0.10536).abs() <= 1e-5);
        assert!(matches!(cross_entropy_loss(&[], &[]), Err(TrainError::EmptyBatch)));
        assert!(cross_entropy_loss(&[0.0], &[1.0]).unwrap().is_finite());
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_loss(&[1.0, 4.0], &[1.0, 4.0]).unwrap(), 0.0);
        assert_eq!(mse_loss(&[3.0], &[5.0]).unwrap(), 4.0);
        assert_eq!(mse_loss(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 2.5);
        assert!(matches!(mse_loss(&[], &[]), Err(TrainError::EmptyBatch)));
    }

    #[test]
    fn total_is_exact_sum() {
        assert_eq!(total_loss(0.0, 0.0).total, 0.0);
        let b = total_loss(0.6931, 4.0);
        assert_eq!(b.total, 0.6931 + 4.0);
        assert!((b.total - 4.6931).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn total_dominates_parts(ce in 0.0f64..50.0, mse in 0.0f64..50.0) {
            let b = total_loss(ce, mse);
            prop_assert!(b.total >= b.ce.max(b.mse));
            prop_assert_eq!(b.total, ce + mse);
        }

        #[test]
        fn ce_gradient_wrt_logit_is_prob_minus_label(z in -8.0f64..8.0, y in 0u8..2) {
            let logit = Tensor::from_vec(vec![z]);
            let mut g = Graph::new();
            let zv = g.param(&logit);
            let p = g.sigmoid(zv).unwrap();
            let loss = g.binary_cross_entropy(p, &[f64::from(y)], CE_CLAMP).unwrap();
            let grad = g.backward(loss).unwrap().wrt(zv).data()[0];
            prop_assert!((grad - (sigmoid_scalar(z) - f64::from(y))).abs() < 1e-9);
        }
    }
}
