use prognosis_core::dsp::{preprocess, PreprocessConfig};
use prognosis_core::eeg_io::{load_dataset, synthesize_excerpt, synthesized_meta, write_patient_meta, write_recording, Outcome, SynthesisProfile};
use prognosis_core::eval::{evaluate_dataset, EvalOptions};
use prognosis_core::model::{infer, Checkpoint, ModelConfig};
use prognosis_core::train::{train, PreprocessedStore, TrainConfig};

fn write_corpus(root: &std::path::Path) {
    for i in 0..6u64 {
        let outcome = if i < 3 { Outcome::Good } else { Outcome::Poor };
        let mut profile = SynthesisProfile::new(outcome, 100 + i);
        profile.fs_hz = 100.0;
        let id = format!("p{i}");
        let dir = root.join(&id);
        std::fs::create_dir_all(&dir).unwrap();
        write_patient_meta(&dir, &synthesized_meta(&profile, &id).unwrap()).unwrap();
        write_recording(&synthesize_excerpt(&profile, &id, 0, 610.0).unwrap(), &dir).unwrap();
    }
}

#[test]
fn disk_corpus_trains_checkpoints_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    write_corpus(tmp.path());
    let ds = load_dataset(tmp.path()).unwrap();
    assert_eq!(ds.len(), 6);

    let cfg = ModelConfig::preset("desk").unwrap();
    let store = PreprocessedStore::from_dataset(&ds, cfg.channel_indices(), &PreprocessConfig::default()).unwrap();
    let tc = TrainConfig { max_iterations: 3, eval_every: 1, batch_size: 2, ..TrainConfig::default() };
    let out = train(&store, &cfg, &tc, |_| {}).unwrap();
    assert_eq!(out.metrics.len(), 3);
    assert_eq!(out.train_ids.len() + out.val_ids.len(), 6);

    let path = tmp.path().join("best.ckpt");
    out.best.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, out.best);

    // the saved model scores a freshly preprocessed segment exactly as in memory
    let rec = ds.patients["p0"].recordings[0].load().unwrap();
    let seg = preprocess(&rec).unwrap()[0].select_channels(&cfg.channel_indices()).unwrap();
    assert_eq!(
        infer(&cfg, &out.best.model.params, &seg).unwrap(),
        loaded.model.forward(&seg).unwrap()
    );

    let report = evaluate_dataset(&loaded.model, &ds, None, &EvalOptions::default()).unwrap();
    assert_eq!(report.n_patients, 6);
    assert!((0.0..=1.0).contains(&report.challenge_metric));
    assert!(report.rows.iter().all(|r| r.poor_prob > 0.0 && r.poor_prob < 1.0));
}
