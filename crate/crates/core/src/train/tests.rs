use super::gradcheck::{check_model_gradients, demo_segments, labelled};
use super::*;
use crate::autodiff::{GRADCHECK_STEP, GRADCHECK_TOLERANCE};
use crate::dsp::PreprocessConfig;
use crate::eeg_io::{synthesize_excerpt, synthesized_meta, SynthesisProfile};
use crate::model::ModelConfig;

/// `n_good` + `n_poor` synthetic patients with one short (two-segment) hour each.
fn small_store(n_good: u64, n_poor: u64) -> PreprocessedStore {
    let cfg = ModelConfig::preset("desk").unwrap();
    let mut store = PreprocessedStore::new(cfg.channel_indices()).unwrap();
    let outcomes = (0..n_good).map(|i| (Outcome::Good, i)).chain((0..n_poor).map(|i| (Outcome::Poor, 100 + i)));
    for (outcome, seed) in outcomes {
        let profile = SynthesisProfile::new(outcome, seed);
        let id = format!("p{seed:03}");
        let meta = synthesized_meta(&profile, &id).unwrap();
        let rec = synthesize_excerpt(&profile, &id, 0, 605.0).unwrap();
        store.add_recording(&meta, &rec, &PreprocessConfig::default()).unwrap();
    }
    store
}

fn quick_cfg(iters: u64) -> TrainConfig {
    TrainConfig { batch_size: 2, max_iterations: iters, eval_every: 3, seed: 5, ..TrainConfig::default() }
}

#[test]
fn config_defaults_and_validation() {
    let c = TrainConfig::default();
    assert_eq!((c.batch_size, c.learning_rate, c.max_iterations, c.split_ratio), (10, 1e-4, 300, 0.8));
    assert_eq!(TrainConfig::long_schedule().max_iterations, 40_000);
    assert!(c.validate().is_ok());
    for bad in [
        TrainConfig { batch_size: 0, ..c.clone() },
        TrainConfig { split_ratio: 1.0, ..c.clone() },
        TrainConfig { split_ratio: 0.0, ..c.clone() },
        TrainConfig { learning_rate: -1.0, ..c.clone() },
        TrainConfig { eval_every: 0, ..c.clone() },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))), "{bad:?}");
    }
    let parsed: TrainConfig = serde_json::from_str(r#"{"max_iterations": 7}"#).unwrap();
    assert_eq!(parsed, TrainConfig { max_iterations: 7, ..c });
    assert!(serde_json::from_str::<TrainConfig>(r#"{"lr": 1}"#).is_err());
}

#[test]
fn metrics_csv_leaves_accuracy_blank_between_evaluations() {
    let loss = total_loss(0.5, 2.0);
    let rows = [
        MetricsRow { iteration: 1, loss, val_accuracy: None },
        MetricsRow { iteration: 2, loss, val_accuracy: Some(0.75) },
    ];
    assert_eq!(metrics_csv(&rows), format!("{METRICS_HEADER}\n1,0.5,2,2.5,\n2,0.5,2,2.5,0.75\n"));
}

#[test]
fn validation_segments_are_seeded_and_capped() {
    let store = small_store(2, 2);
    let ids: Vec<String> = store.patients.keys().cloned().collect();
    let a = validation_segments(&store, &ids, 4, 9).unwrap();
    // each patient only has two segments
    assert_eq!(a.len(), 8);
    let b = validation_segments(&store, &ids, 1, 9).unwrap();
    assert_eq!(b.len(), 4);
    let key = |v: &[ValidationItem<'_>]| v.iter().map(|i| (i.segment.patient_id.clone(), i.segment.segment_index)).collect::<Vec<_>>();
    assert_eq!(key(&b), key(&validation_segments(&store, &ids, 1, 9).unwrap()));
    assert!(matches!(validation_segments(&store, &["nobody".into()], 1, 0), Err(TrainError::UnknownPatient(_))));
}

#[test]
fn single_class_dataset_is_rejected() {
    let store = small_store(3, 0);
    let cfg = ModelConfig::preset("desk").unwrap();
    let err = train(&store, &cfg, &quick_cfg(1), |_| {}).unwrap_err();
    assert!(matches!(err, TrainError::SingleClassDataset { missing: Outcome::Poor }), "{err}");
}

#[test]
fn training_is_deterministic_and_keeps_the_best_checkpoint() {
    let store = small_store(3, 3);
    let cfg = ModelConfig::preset("desk").unwrap();
    let mut streamed = Vec::new();
    let a = train(&store, &cfg, &quick_cfg(7), |r| streamed.push(*r)).unwrap();
    let b = train(&store, &cfg, &quick_cfg(7), |_| {}).unwrap();
    assert_eq!(metrics_csv(&a.metrics), metrics_csv(&b.metrics));
    assert_eq!(streamed, a.metrics);
    assert_eq!(a.best.to_bytes(), b.best.to_bytes());

    assert_eq!(a.metrics.len(), 7);
    let evaluated: Vec<u64> = a.metrics.iter().filter(|r| r.val_accuracy.is_some()).map(|r| r.iteration).collect();
    assert_eq!(evaluated, [3, 6, 7]);
    for r in &a.metrics {
        assert_eq!(r.loss.total, r.loss.ce + r.loss.mse);
    }
    assert!(a.retained.windows(2).all(|w| w[0].1 <= w[1].1));
    let best_acc = a.retained.last().unwrap().1;
    assert_eq!(a.best.provenance.val_accuracy, Some(best_acc));
    let first_with_best = a.metrics.iter().find(|r| r.val_accuracy == Some(best_acc)).unwrap().iteration;
    assert_eq!(a.best.provenance.iteration, first_with_best);
    assert_eq!(a.last.provenance.iteration, 7);
    assert!(a.train_ids.iter().all(|id| !a.val_ids.contains(id)));
}

#[test]
fn training_reduces_the_loss_on_a_fixed_batch() {
    let cfg = ModelConfig::preset("desk").unwrap();
    let segs = demo_segments(&cfg, 2).unwrap();
    let batch = labelled(&cfg, &segs);
    let tc = TrainConfig { learning_rate: 1e-3, ..TrainConfig::default() };
    let mut params = crate::model::ModelParams::init(&cfg, 0);
    let mut state = AdamState::zeros_like(params.tensors().into_iter().map(|(_, t)| t));
    let first = train_step(&cfg, &mut params, &mut state, &batch, &tc).unwrap().total;
    let mut last = first;
    for _ in 0..20 {
        last = train_step(&cfg, &mut params, &mut state, &batch, &tc).unwrap().total;
    }
    assert!(last < first, "{first} -> {last}");
    assert!(params.is_finite());
}

#[test]
fn model_gradients_match_finite_differences() {
    let cfg = ModelConfig::preset("desk").unwrap();
    let segs = demo_segments(&cfg, 0).unwrap();
    let params = crate::model::ModelParams::init(&cfg, 1);
    let report = check_model_gradients(&cfg, &params, &labelled(&cfg, &segs), 80, GRADCHECK_STEP, 3).unwrap();
    assert_eq!(report.checks.len(), 80);
    let worst = report.worst().unwrap();
    assert!(worst.rel_error <= GRADCHECK_TOLERANCE, "{worst:?}");
}
