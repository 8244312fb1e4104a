use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamState};
use super::loss::{batch_loss, LabelledSegment, LossBreakdown};
use super::store::{sample_training_example, PreprocessedStore};
use super::TrainError;
use crate::autodiff::{Graph, Tensor};
use crate::dsp::BipolarSegment;
use crate::eeg_io::Outcome;
use crate::model::{infer, Checkpoint, Model, ModelConfig, ModelParams, Provenance};

const SAMPLER_STREAM: u64 = 2;
const VALIDATION_STREAM: u64 = 3;

pub const INIT_DESCRIPTION: &str =
    "conv/linear weights and biases U(-1/sqrt(fan_in), 1/sqrt(fan_in)); tokens and positional encoding N(0, 0.02^2); norm gain 1, shift 0";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_iterations: u64,
    pub eval_every: u64,
    pub split_ratio: f64,
    pub seed: u64,
    pub val_segments_per_patient: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_iterations: 300,
            eval_every: 50,
            split_ratio: 0.8,
            seed: 0,
            val_segments_per_patient: 4,
        }
    }
}

impl TrainConfig {
    /// The full-length schedule: 40000 iterations.
    pub fn long_schedule() -> Self {
        Self { max_iterations: 40_000, eval_every: 500, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return bad(format!("split_ratio {} outside (0, 1)", self.split_ratio));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return bad("Adam constants need 0 <= beta < 1 and eps > 0".into());
        }
        if self.max_iterations == 0 || self.eval_every == 0 || self.val_segments_per_patient == 0 {
            return bad("max_iterations, eval_every and val_segments_per_patient must be >= 1".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iteration: u64,
    pub loss: LossBreakdown,
    pub val_accuracy: Option<f64>,
}

pub const METRICS_HEADER: &str = "iteration,ce,mse,total,val_accuracy";

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let acc = self.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
        format!("{},{},{},{},{acc}", self.iteration, self.loss.ce, self.loss.mse, self.loss.total)
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

/// A labelled validation segment.
#[derive(Clone, Copy, Debug)]
pub struct ValidationItem<'a> {
    pub segment: &'a BipolarSegment,
    pub outcome: Outcome,
}

/// A fixed, seeded draw of up to `per_patient` segments (without
/// replacement) from each listed patient, in id order.
pub fn validation_segments<'a>(
    store: &'a PreprocessedStore,
    ids: &[String],
    per_patient: usize,
    seed: u64,
) -> Result<Vec<ValidationItem<'a>>, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(VALIDATION_STREAM);
    let mut items = Vec::new();
    for id in ids {
        let patient = store.patients.get(id).ok_or_else(|| TrainError::UnknownPatient(id.clone()))?;
        let all: Vec<&BipolarSegment> = patient.hours.iter().flat_map(|h| &h.segments).collect();
        let mut picks = rand::seq::index::sample(&mut rng, all.len(), per_patient.min(all.len())).into_vec();
        picks.sort_unstable();
        items.extend(picks.into_iter().map(|i| ValidationItem { segment: all[i], outcome: patient.meta.outcome }));
    }
    Ok(items)
}

/// Fraction of segments whose thresholded poor probability (≥ 0.5) matches the outcome.
pub fn segment_accuracy(cfg: &ModelConfig, params: &ModelParams, items: &[ValidationItem<'_>]) -> Result<f64, TrainError> {
    if items.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let mut correct = 0usize;
    for item in items {
        let out = infer(cfg, params, item.segment)?;
        if (out.poor_prob >= 0.5) == (item.outcome == Outcome::Poor) {
            correct += 1;
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub metrics: Vec<MetricsRow>,
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
    /// Validation accuracy of the retained checkpoint after each evaluation.
    pub retained: Vec<(u64, f64)>,
}

/// One optimisation step on a batch; returns the batch loss.
pub fn train_step(
    cfg: &ModelConfig,
    params: &mut ModelParams,
    state: &mut AdamState,
    batch: &[LabelledSegment<'_>],
    train_cfg: &TrainConfig,
) -> Result<LossBreakdown, TrainError> {
    let (grads, breakdown) = {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let bl = batch_loss(&mut g, &bound, cfg, batch)?;
        let mut grads = g.backward(bl.loss)?;
        let grads: Vec<Tensor> = bound.vars().into_iter().map(|v| grads.take(v)).collect();
        (grads, bl.breakdown)
    };
    adam_step(&mut params.tensors_mut(), &grads, state, train_cfg)?;
    params.round_to_f32();
    Ok(breakdown)
}

/// Trains from a seeded initialization, evaluating every `eval_every`
/// iterations and at the last one. The checkpoint with the highest
/// validation accuracy is kept; ties keep the earlier one. `on_row` sees
/// each metrics row as it is produced.
pub fn train(
    store: &PreprocessedStore,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    mut on_row: impl FnMut(&MetricsRow),
) -> Result<TrainOutcome, TrainError> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    if store.channels.len() != model_cfg.n_bipolar_channels {
        return Err(TrainError::InvalidConfig(format!(
            "store keeps {} channels, model expects {}",
            store.channels.len(),
            model_cfg.n_bipolar_channels
        )));
    }
    let patients = store.usable_patients();
    for class in [Outcome::Good, Outcome::Poor] {
        if !patients.iter().any(|(_, o)| *o == class) {
            return Err(TrainError::SingleClassDataset { missing: class });
        }
    }
    let (train_ids, val_ids) = super::split_patients(&patients, train_cfg.split_ratio, train_cfg.seed)?;
    let val_items = validation_segments(store, &val_ids, train_cfg.val_segments_per_patient, train_cfg.seed)?;

    let mut params = ModelParams::init(model_cfg, train_cfg.seed);
    let mut state = AdamState::zeros_like(params.tensors().into_iter().map(|(_, t)| t));
    let mut rng = ChaCha8Rng::seed_from_u64(train_cfg.seed);
    rng.set_stream(SAMPLER_STREAM);

    let provenance = |iteration: u64, val_accuracy: Option<f64>| Provenance {
        seed: train_cfg.seed,
        iteration,
        val_accuracy,
        train_ids: train_ids.clone(),
        val_ids: val_ids.clone(),
        train_config: serde_json::to_value(train_cfg).expect("config serializes"),
        init: INIT_DESCRIPTION.to_string(),
    };

    let mut metrics = Vec::with_capacity(train_cfg.max_iterations as usize);
    let mut retained = Vec::new();
    let mut best: Option<(u64, f64, ModelParams)> = None;
    let mut last_acc = None;
    for iteration in 1..=train_cfg.max_iterations {
        let batch = (0..train_cfg.batch_size)
            .map(|_| {
                let ex = sample_training_example(&train_ids, store, &mut rng)?;
                Ok(LabelledSegment {
                    segment: ex.segment,
                    label: if ex.outcome == model_cfg.positive_class { 1.0 } else { 0.0 },
                    cpc: f64::from(ex.cpc),
                })
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        let loss = train_step(model_cfg, &mut params, &mut state, &batch, train_cfg)?;

        let mut val_accuracy = None;
        if iteration % train_cfg.eval_every == 0 || iteration == train_cfg.max_iterations {
            let acc = segment_accuracy(model_cfg, &params, &val_items)?;
            if best.as_ref().is_none_or(|(_, b, _)| acc > *b) {
                best = Some((iteration, acc, params.clone()));
            }
            retained.push((iteration, best.as_ref().map_or(acc, |b| b.1)));
            val_accuracy = Some(acc);
            last_acc = Some(acc);
        }
        let row = MetricsRow { iteration, loss, val_accuracy };
        on_row(&row);
        metrics.push(row);
    }

    let (best_iter, best_acc, best_params) = best.expect("final iteration always evaluates");
    Ok(TrainOutcome {
        best: Checkpoint {
            model: Model::new(model_cfg.clone(), best_params)?,
            provenance: provenance(best_iter, Some(best_acc)),
        },
        last: Checkpoint {
            model: Model::new(model_cfg.clone(), params)?,
            provenance: provenance(train_cfg.max_iterations, last_acc),
        },
        metrics,
        train_ids,
        val_ids,
        retained,
    })
}
