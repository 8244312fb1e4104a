//! Whole-model gradient check: autodiff gradients of the total loss against
//! central differences on randomly chosen parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::loss::{batch_loss, LabelledSegment};
use super::TrainError;
use crate::autodiff::{relative_error, Graph, Tensor, GRADCHECK_FLOOR};
use crate::dsp::{preprocess, BipolarSegment};
use crate::eeg_io::{synthesize_excerpt, Outcome, SynthesisProfile};
use crate::model::{ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct ModelGradCheck {
    pub checks: Vec<ParamCheck>,
}

impl ModelGradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.checks.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

fn loss_value(cfg: &ModelConfig, params: &ModelParams, batch: &[LabelledSegment<'_>]) -> Result<f64, TrainError> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    Ok(batch_loss(&mut g, &bound, cfg, batch)?.breakdown.total)
}

/// Checks `n_coords` parameters. Tensors are visited round-robin so every
/// tensor gets probed; the element within each tensor is random.
pub fn check_model_gradients(
    cfg: &ModelConfig,
    params: &ModelParams,
    batch: &[LabelledSegment<'_>],
    n_coords: usize,
    h: f64,
    seed: u64,
) -> Result<ModelGradCheck, TrainError> {
    let (names, grads): (Vec<String>, Vec<Tensor>) = {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let loss = batch_loss(&mut g, &bound, cfg, batch)?.loss;
        let mut grads = g.backward(loss)?;
        let names = params.tensors().into_iter().map(|(n, _)| n);
        names.zip(bound.vars().into_iter().map(|v| grads.take(v))).unzip()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = params.clone();
    let mut checks = Vec::with_capacity(n_coords);
    for k in 0..n_coords {
        let t = k % grads.len();
        let index = rng.random_range(0..grads[t].numel());
        let orig = probe.tensors_mut()[t].data()[index];
        probe.tensors_mut()[t].data_mut()[index] = orig + h;
        let plus = loss_value(cfg, &probe, batch)?;
        probe.tensors_mut()[t].data_mut()[index] = orig - h;
        let minus = loss_value(cfg, &probe, batch)?;
        probe.tensors_mut()[t].data_mut()[index] = orig;
        let numeric = (plus - minus) / (2.0 * h);
        let analytic = grads[t].data()[index];
        checks.push(ParamCheck {
            tensor: names[t].clone(),
            index,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, GRADCHECK_FLOOR),
        });
    }
    Ok(ModelGradCheck { checks })
}

/// One preprocessed segment each from a synthetic Good and a synthetic Poor
/// patient, narrowed to the config's channels.
pub fn demo_segments(cfg: &ModelConfig, seed: u64) -> Result<Vec<(BipolarSegment, Outcome, u8)>, TrainError> {
    let seconds = cfg.segment_len as f64 / crate::dsp::TARGET_FS_HZ + 5.0;
    let mut out = Vec::new();
    for (i, outcome) in [Outcome::Good, Outcome::Poor].into_iter().enumerate() {
        let profile = SynthesisProfile::new(outcome, seed.wrapping_add(i as u64));
        let rec = synthesize_excerpt(&profile, &format!("demo-{outcome}"), 0, seconds)?;
        let seg = preprocess(&rec)?.into_iter().next().ok_or(TrainError::EmptySplit)?;
        let seg = cfg.adapt_segment(&seg)?.into_owned();
        let cpc = if outcome == Outcome::Good { 1 } else { 5 };
        out.push((seg, outcome, cpc));
    }
    Ok(out)
}

/// Labels demo segments for the config's positive class.
pub fn labelled<'a>(cfg: &ModelConfig, segs: &'a [(BipolarSegment, Outcome, u8)]) -> Vec<LabelledSegment<'a>> {
    segs.iter()
        .map(|(s, o, cpc)| LabelledSegment {
            segment: s,
            label: if *o == cfg.positive_class { 1.0 } else { 0.0 },
            cpc: f64::from(*cpc),
        })
        .collect()
}
