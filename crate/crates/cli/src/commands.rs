use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;
use serde_json::json;

use prognosis_core::autodiff::{op_suite, GRADCHECK_STEP, GRADCHECK_TOLERANCE};
use prognosis_core::dsp::{montage_csv, PreprocessConfig, DEFAULT_MONTAGE};
use prognosis_core::eeg_io::{
    load_dataset, load_patient, load_recording, synthesize_excerpt, synthesized_meta, write_patient_meta, write_recording, Dataset,
    Outcome, RawRecording, SynthesisProfile, META_FILE,
};
use prognosis_core::eval::{self, EvalError, EvalOptions};
use prognosis_core::model::{Checkpoint, Model, ModelConfig};
use prognosis_core::train::gradcheck::{check_model_gradients, demo_segments, labelled};
use prognosis_core::train::{self as training, metrics_csv, PreprocessedStore, TrainConfig, STORE_MANIFEST};

use crate::manifest::{unix_now, RunManifest, VERSION};
use crate::{EvaluateArgs, GradcheckArgs, PredictArgs, PreprocessArgs, Split, SynthesizeArgs, TrainArgs, UsageError};

const RUNS_DIR_ENV: &str = "PROGNOSIS_RUNS_DIR";
const DEFAULT_RUNS_DIR: &str = "runs";

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Per-patient profile seeds: distinct for every (seed, index) pair.
fn patient_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(1 << 20).wrapping_add(index as u64)
}

pub fn synthesize(a: SynthesizeArgs) -> Result<()> {
    if a.good + a.poor == 0 {
        return Err(usage("need at least one patient: pass --good and/or --poor greater than 0"));
    }
    if a.hours == 0 {
        return Err(usage("--hours must be at least 1"));
    }
    if !(a.seconds > 0.0) {
        return Err(usage("--seconds must be positive"));
    }
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let outcomes = std::iter::repeat_n(Outcome::Good, a.good).chain(std::iter::repeat_n(Outcome::Poor, a.poor));
    let mut n_recordings = 0;
    for (i, outcome) in outcomes.enumerate() {
        let mut profile = SynthesisProfile::new(outcome, patient_seed(a.seed, i));
        profile.fs_hz = a.fs;
        profile.n_hours = a.hours;
        let id = format!("syn-{i:03}");
        let dir = a.out.join(&id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_patient_meta(&dir, &synthesized_meta(&profile, &id).map_err(|e| usage(e.to_string()))?)?;
        for hour in 0..a.hours {
            let rec = synthesize_excerpt(&profile, &id, hour, a.seconds)?;
            write_recording(&rec, &dir)?;
            n_recordings += 1;
        }
    }
    println!("wrote {} patients ({} good, {} poor), {n_recordings} recordings to {}", a.good + a.poor, a.good, a.poor, a.out.display());
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset> {
    load_dataset(path).with_context(|| format!("loading dataset {}", path.display()))
}

pub fn preprocess(a: PreprocessArgs) -> Result<()> {
    let ds = load_data(&a.data)?;
    let summary = PreprocessedStore::write_cache(&ds, &a.out, &PreprocessConfig::default())?;
    println!(
        "cached {} patients, {} hours, {} segments to {}",
        summary.patients,
        summary.hours,
        summary.segments,
        a.out.display()
    );
    for s in &summary.skipped {
        eprintln!("skipped {} hour {}: {}", s.patient_id, s.hour_index, s.reason);
    }
    Ok(())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    model: Option<ModelConfig>,
    #[serde(default)]
    train: Option<TrainConfig>,
}

fn resolve_configs(a: &TrainArgs) -> Result<(ModelConfig, TrainConfig, String)> {
    let (model, mut train, label) = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            let file: ConfigFile = serde_json::from_str(&text).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("config").to_string();
            (file.model.unwrap_or(ModelConfig::preset("desk")?), file.train.unwrap_or_default(), stem)
        }
        None => {
            let model = ModelConfig::preset(&a.preset).map_err(|e| usage(e.to_string()))?;
            let train = if a.preset == "paper" { TrainConfig::long_schedule() } else { TrainConfig::default() };
            (model, train, a.preset.clone())
        }
    };
    if let Some(v) = a.iters {
        train.max_iterations = v;
    }
    if let Some(v) = a.seed {
        train.seed = v;
    }
    if let Some(v) = a.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = a.lr {
        train.learning_rate = v;
    }
    if let Some(v) = a.eval_every {
        train.eval_every = v;
    }
    model.validate().map_err(|e| usage(e.to_string()))?;
    train.validate().map_err(|e| usage(e.to_string()))?;
    Ok((model, train, label))
}

fn dry_run(model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<()> {
    let (c, t, d) = (model_cfg.n_bipolar_channels, model_cfg.tokens_per_channel, model_cfg.embed_dim);
    println!("channels: {c}");
    println!("tokens per channel: {t}");
    println!("sequence: {}x{d} before tokens, {}x{d} with class and regress tokens", c * t, model_cfg.seq_len());
    println!("attention blocks K={}, heads M={}, ffn hidden {}", model_cfg.n_attention_blocks, model_cfg.n_heads, model_cfg.ffn_hidden);
    let started = Instant::now();
    let model = Model::init(model_cfg.clone(), train_cfg.seed)?;
    println!("parameters: {}", model.params.count_parameters());
    let segs = demo_segments(model_cfg, train_cfg.seed)?;
    let out = model.forward(&segs[0].0)?;
    println!(
        "forward: poor_prob={:.6} cpc_raw={:.6} cpc_pred={} ({:.1} s)",
        out.poor_prob,
        out.cpc_raw,
        out.cpc_pred,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

fn load_store(data: &Path, channels: Vec<usize>) -> Result<PreprocessedStore> {
    if data.join(STORE_MANIFEST).is_file() {
        return PreprocessedStore::load_cache(data, channels).with_context(|| format!("loading cache {}", data.display()));
    }
    let ds = load_data(data)?;
    Ok(PreprocessedStore::from_dataset(&ds, channels, &PreprocessConfig::default())?)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let (model_cfg, train_cfg, label) = resolve_configs(&a)?;
    if a.dry_run {
        return dry_run(&model_cfg, &train_cfg);
    }
    let data = a.data.clone().expect("clap requires --data without --dry-run");
    let started = unix_now();
    let run_dir = a.run.clone().unwrap_or_else(|| {
        let root = std::env::var_os(RUNS_DIR_ENV).map_or_else(|| PathBuf::from(DEFAULT_RUNS_DIR), PathBuf::from);
        root.join(format!("{label}-seed{}", train_cfg.seed))
    });
    let store = load_store(&data, model_cfg.channel_indices())?;
    for s in &store.skipped {
        eprintln!("skipped {} hour {}: {}", s.patient_id, s.hour_index, s.reason);
    }
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;

    let outcome = training::train(&store, &model_cfg, &train_cfg, |row| {
        if let Some(acc) = row.val_accuracy {
            eprintln!("iter {:>6}  loss {:.5} (ce {:.5}, mse {:.5})  val_acc {acc:.4}", row.iteration, row.loss.total, row.loss.ce, row.loss.mse);
        }
    })?;
    outcome.best.save(&run_dir.join("best.ckpt"))?;
    outcome.last.save(&run_dir.join("last.ckpt"))?;
    let metrics_path = run_dir.join("metrics.csv");
    fs::write(&metrics_path, metrics_csv(&outcome.metrics)).with_context(|| format!("writing {}", metrics_path.display()))?;

    let run_id = run_dir.file_name().and_then(|s| s.to_str()).unwrap_or("run").to_string();
    RunManifest {
        run_id,
        command: "train",
        version: VERSION,
        seed: train_cfg.seed,
        data,
        model_config: serde_json::to_value(&model_cfg)?,
        train_config: serde_json::to_value(&train_cfg)?,
        started_unix_s: started,
        finished_unix_s: unix_now(),
        details: json!({
            "train_ids": outcome.train_ids,
            "val_ids": outcome.val_ids,
            "best_iteration": outcome.best.provenance.iteration,
            "best_val_accuracy": outcome.best.provenance.val_accuracy,
            "skipped_recordings": store.skipped,
        }),
    }
    .write(&run_dir)?;
    println!(
        "best checkpoint: iteration {} val_accuracy {:.4}",
        outcome.best.provenance.iteration,
        outcome.best.provenance.val_accuracy.unwrap_or(f64::NAN)
    );
    println!("run written to {}", run_dir.display());
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

pub fn evaluate(a: EvaluateArgs) -> Result<()> {
    let started = unix_now();
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let cfg = &ckpt.model.config;
    if let Some(preset) = &a.preset {
        let expected = ModelConfig::preset(preset).map_err(|e| usage(e.to_string()))?;
        if let Some(diff) = expected.first_difference(cfg) {
            bail!("checkpoint does not match preset {preset}: {diff}");
        }
    }
    let ds = load_data(&a.data)?;
    let prov = &ckpt.provenance;
    let ids: Option<&[String]> = match a.split {
        Split::All => None,
        Split::Train => Some(&prov.train_ids),
        Split::Val => Some(&prov.val_ids),
    };
    if ids.is_some_and(|ids| ids.is_empty()) {
        bail!("checkpoint records no {:?} patients", a.split);
    }
    let opts = EvalOptions { aggregation: a.aggregation, threshold: a.threshold, ..EvalOptions::default() };
    let mut report = eval::evaluate_dataset(&ckpt.model, &ds, ids, &opts)?;

    if a.split == Split::Val {
        // the same fixed segments the training run scored
        let tc: TrainConfig = serde_json::from_value(prov.train_config.clone()).unwrap_or_default();
        let store = PreprocessedStore::from_patients(&ds, &prov.val_ids, cfg.channel_indices(), &PreprocessConfig::default())?;
        let items = training::validation_segments(&store, &prov.val_ids, tc.val_segments_per_patient, prov.seed)?;
        report.segment_accuracy = Some(training::segment_accuracy(cfg, &ckpt.model.params, &items)?);
    }
    eval::write_report(&report, &a.out)?;

    RunManifest {
        run_id: a.out.file_name().and_then(|s| s.to_str()).unwrap_or("eval").to_string(),
        command: "evaluate",
        version: VERSION,
        seed: prov.seed,
        data: a.data.clone(),
        model_config: serde_json::to_value(cfg)?,
        train_config: prov.train_config.clone(),
        started_unix_s: started,
        finished_unix_s: unix_now(),
        details: json!({
            "checkpoint": a.checkpoint,
            "split": format!("{:?}", a.split).to_lowercase(),
            "n_patients": report.n_patients,
        }),
    }
    .write(&a.out)?;

    println!("challenge_metric={}", report.challenge_metric);
    println!("accuracy={}", report.accuracy);
    println!("mse_cpc={}", report.mse_cpc);
    if let Some(s) = report.segment_accuracy {
        println!("segment_accuracy={s}");
    }
    Ok(())
}

enum PredictTarget {
    Stored(String, Vec<prognosis_core::eeg_io::RecordingHandle>),
    Loaded(String, Vec<RawRecording>),
}

fn predict_targets(inputs: &[PathBuf]) -> Result<Vec<PredictTarget>> {
    let mut targets = Vec::new();
    let mut loose: BTreeMap<String, Vec<RawRecording>> = BTreeMap::new();
    for path in inputs {
        if path.is_dir() {
            if path.join(META_FILE).is_file() {
                let entry = load_patient(path).with_context(|| format!("loading patient {}", path.display()))?;
                targets.push(PredictTarget::Stored(entry.meta.patient_id, entry.recordings));
            } else {
                for (id, entry) in load_data(path)?.patients {
                    targets.push(PredictTarget::Stored(id, entry.recordings));
                }
            }
        } else {
            let rec = load_recording(path).with_context(|| format!("loading recording {}", path.display()))?;
            loose.entry(rec.patient_id.clone()).or_default().push(rec);
        }
    }
    targets.extend(loose.into_iter().map(|(id, recs)| PredictTarget::Loaded(id, recs)));
    Ok(targets)
}

pub fn predict(a: PredictArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.threshold) {
        return Err(usage(format!("--threshold {} outside [0, 1]", a.threshold)));
    }
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let pre = PreprocessConfig::default();
    let mut failures = Vec::new();
    for target in predict_targets(&a.inputs)? {
        let result = match &target {
            PredictTarget::Stored(id, handles) => eval::predict_patient(&ckpt.model, id, handles, a.aggregation, &pre),
            PredictTarget::Loaded(id, recs) => eval::predict_recordings(&ckpt.model, id, recs, a.aggregation, &pre),
        };
        match result {
            Ok(p) => {
                let outcome_pred = if p.poor_prob >= a.threshold { Outcome::Poor } else { Outcome::Good };
                let line = json!({
                    "patient_id": p.patient_id,
                    "poor_prob": p.poor_prob,
                    "outcome_pred": outcome_pred,
                    "cpc_pred": p.cpc_pred,
                });
                println!("{line}");
            }
            Err(e @ EvalError::NoUsableRecording { .. }) => failures.push(e.to_string()),
            Err(e) => return Err(e.into()),
        }
    }
    if !failures.is_empty() {
        return Err(anyhow!("unusable recordings:\n  {}", failures.join("\n  ")));
    }
    Ok(())
}

pub fn montage_list() -> Result<()> {
    print!("{}", montage_csv(&DEFAULT_MONTAGE));
    Ok(())
}

pub fn config(preset: &str) -> Result<()> {
    let model = ModelConfig::preset(preset).map_err(|e| usage(e.to_string()))?;
    let train = if preset == "paper" { TrainConfig::long_schedule() } else { TrainConfig::default() };
    println!("{}", serde_json::to_string_pretty(&json!({ "model": model, "train": train }))?);
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let mut failed = false;
    for check in op_suite(a.seed) {
        let ok = check.max_rel_error <= GRADCHECK_TOLERANCE;
        failed |= !ok;
        println!(
            "{:<4} {:<24} coords {:>4}  max rel error {:.3e}",
            if ok { "ok" } else { "FAIL" },
            check.name,
            check.coords,
            check.max_rel_error
        );
    }
    if !a.ops_only {
        let cfg = ModelConfig::preset("desk")?;
        let segs = demo_segments(&cfg, a.seed)?;
        let params = prognosis_core::model::ModelParams::init(&cfg, a.seed);
        let report = check_model_gradients(&cfg, &params, &labelled(&cfg, &segs), a.coords, GRADCHECK_STEP, a.seed)?;
        let max = report.max_rel_error();
        let ok = max <= GRADCHECK_TOLERANCE;
        failed |= !ok;
        println!(
            "{:<4} {:<24} coords {:>4}  max rel error {max:.3e}",
            if ok { "ok" } else { "FAIL" },
            "desk model total loss",
            report.checks.len()
        );
        if let Some(w) = report.worst() {
            println!("     worst: {}[{}] autodiff {:.6e} numeric {:.6e}", w.tensor, w.index, w.analytic, w.numeric);
        }
    }
    if failed {
        bail!("gradients disagree with finite differences beyond {GRADCHECK_TOLERANCE:e}");
    }
    Ok(())
}
