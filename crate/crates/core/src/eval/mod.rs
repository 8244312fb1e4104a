//! Patient-level prediction, the challenge metric (best TPR with FPR ≤ 0.05)
//! and the evaluation report.

mod metrics;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use metrics::{accuracy, challenge_metric, roc_points, RocPoint, FPR_CAP};

use crate::dsp::{preprocess_with, BipolarSegment, DspError, PreprocessConfig};
use crate::eeg_io::{EegIoError, Outcome, PatientEntry, RawRecording, RecordingHandle};
use crate::model::{cpc_from_raw, Model, ModelError, ModelOutput};

pub const REPORT_FILE: &str = "report.json";
pub const PATIENTS_FILE: &str = "patients.csv";
pub const PATIENTS_HEADER: &str = "patient_id,poor_prob,outcome,cpc_pred,cpc_true,n_segments_used";

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("labels contain only one class")]
    SingleClassLabels,
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("score {0} is NaN")]
    InvalidScore(usize),
    #[error("patient {patient_id} has no usable recording: {}", reasons.join("; "))]
    NoUsableRecording { patient_id: String, reasons: Vec<String> },
    #[error("patient {0} is not in the dataset")]
    UnknownPatient(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    EegIo(#[from] EegIoError),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How segment outputs of one hour are pooled into a patient prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Median,
    Max,
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> Option<f64> {
        if values.is_empty() {
            return None;
        }
        Some(match self {
            Self::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Self::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            Self::Median => {
                let mut v = values.to_vec();
                v.sort_by(f64::total_cmp);
                let m = v.len() / 2;
                if v.len() % 2 == 1 {
                    v[m]
                } else {
                    0.5 * (v[m - 1] + v[m])
                }
            }
        })
    }
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mean" => Ok(Self::Mean),
            "median" => Ok(Self::Median),
            "max" => Ok(Self::Max),
            other => Err(format!("unknown aggregation {other:?} (expected mean, median or max)")),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Mean => "mean",
            Self::Median => "median",
            Self::Max => "max",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientPrediction {
    pub patient_id: String,
    pub poor_prob: f64,
    pub cpc_pred: u8,
    pub n_segments_used: usize,
    pub hour_index: u32,
}

/// Pools per-segment outputs: `poor_prob` and `cpc_raw` are aggregated
/// separately, then the CPC is rounded and clamped.
pub fn aggregate_outputs(outputs: &[ModelOutput], agg: Aggregation) -> Option<(f64, u8)> {
    let probs: Vec<f64> = outputs.iter().map(|o| o.poor_prob).collect();
    let cpcs: Vec<f64> = outputs.iter().map(|o| o.cpc_raw).collect();
    Some((agg.apply(&probs)?, cpc_from_raw(agg.apply(&cpcs)?)))
}

pub fn predict_segments(
    model: &Model,
    patient_id: &str,
    hour_index: u32,
    segments: &[BipolarSegment],
    agg: Aggregation,
) -> Result<PatientPrediction, EvalError> {
    let outputs = segments.iter().map(|s| model.forward(s)).collect::<Result<Vec<_>, _>>()?;
    let (poor_prob, cpc_pred) = aggregate_outputs(&outputs, agg).ok_or(EvalError::EmptyInput)?;
    Ok(PatientPrediction { patient_id: patient_id.to_string(), poor_prob, cpc_pred, n_segments_used: segments.len(), hour_index })
}

/// Walks hours from the most recent backwards and predicts from the first
/// one that preprocesses. `load(i)` yields the i-th recording in hour order.
fn predict_latest(
    model: &Model,
    patient_id: &str,
    n: usize,
    mut load: impl FnMut(usize) -> Result<RawRecording, EegIoError>,
    agg: Aggregation,
    pre: &PreprocessConfig,
) -> Result<PatientPrediction, EvalError> {
    let mut reasons = Vec::new();
    for i in (0..n).rev() {
        let rec = load(i)?;
        match preprocess_with(&rec, pre) {
            Ok(segments) => return predict_segments(model, patient_id, rec.hour_index, &segments, agg),
            Err(e @ (DspError::TooShort { .. } | DspError::MissingElectrode(_))) => {
                reasons.push(format!("hour {}: {e}", rec.hour_index))
            }
            Err(e) => return Err(ModelError::from(e).into()),
        }
    }
    if reasons.is_empty() {
        reasons.push("no recordings".into());
    }
    Err(EvalError::NoUsableRecording { patient_id: patient_id.to_string(), reasons })
}

/// Prediction from the most recent usable hour of a patient on disk.
pub fn predict_patient(
    model: &Model,
    patient_id: &str,
    recordings: &[RecordingHandle],
    agg: Aggregation,
    pre: &PreprocessConfig,
) -> Result<PatientPrediction, EvalError> {
    let mut sorted: Vec<&RecordingHandle> = recordings.iter().collect();
    sorted.sort_by_key(|h| h.hour_index);
    predict_latest(model, patient_id, sorted.len(), |i| sorted[i].load(), agg, pre)
}

/// Same as [`predict_patient`] for recordings already in memory.
pub fn predict_recordings(
    model: &Model,
    patient_id: &str,
    recordings: &[RawRecording],
    agg: Aggregation,
    pre: &PreprocessConfig,
) -> Result<PatientPrediction, EvalError> {
    let mut sorted: Vec<&RawRecording> = recordings.iter().collect();
    sorted.sort_by_key(|r| r.hour_index);
    predict_latest(model, patient_id, sorted.len(), |i| Ok(sorted[i].clone()), agg, pre)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatientRow {
    pub patient_id: String,
    pub poor_prob: f64,
    pub outcome: Outcome,
    pub cpc_pred: u8,
    pub cpc_true: u8,
    pub n_segments_used: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub challenge_metric: f64,
    pub accuracy: f64,
    pub mse_cpc: f64,
    pub n_patients: usize,
    /// Segment-level accuracy on the training run's fixed validation segments, when known.
    pub segment_accuracy: Option<f64>,
    pub threshold: f64,
    pub aggregation: Aggregation,
    #[serde(skip)]
    pub rows: Vec<PatientRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub aggregation: Aggregation,
    /// `poor_prob >= threshold` counts as a Poor prediction for accuracy.
    pub threshold: f64,
    pub fpr_cap: f64,
    pub preprocess: PreprocessConfig,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { aggregation: Aggregation::Mean, threshold: 0.5, fpr_cap: FPR_CAP, preprocess: PreprocessConfig::default() }
    }
}

/// Builds the report from already computed patient rows.
pub fn report_from_rows(rows: Vec<PatientRow>, opts: &EvalOptions) -> Result<EvalReport, EvalError> {
    let scores: Vec<f64> = rows.iter().map(|r| r.poor_prob).collect();
    let labels: Vec<bool> = rows.iter().map(|r| r.outcome == Outcome::Poor).collect();
    let preds: Vec<bool> = scores.iter().map(|&s| s >= opts.threshold).collect();
    let challenge = challenge_metric(&scores, &labels, opts.fpr_cap)?;
    let acc = accuracy(&preds, &labels)?;
    let mse_cpc = rows.iter().map(|r| (f64::from(r.cpc_pred) - f64::from(r.cpc_true)).powi(2)).sum::<f64>() / rows.len() as f64;
    Ok(EvalReport {
        challenge_metric: challenge,
        accuracy: acc,
        mse_cpc,
        n_patients: rows.len(),
        segment_accuracy: None,
        threshold: opts.threshold,
        aggregation: opts.aggregation,
        rows,
    })
}

/// Predicts every patient and scores the result.
pub fn evaluate_patients<'a>(
    model: &Model,
    patients: impl IntoIterator<Item = &'a PatientEntry>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let mut rows = Vec::new();
    for entry in patients {
        let p = predict_patient(model, &entry.meta.patient_id, &entry.recordings, opts.aggregation, &opts.preprocess)?;
        rows.push(PatientRow {
            patient_id: p.patient_id,
            poor_prob: p.poor_prob,
            outcome: entry.meta.outcome,
            cpc_pred: p.cpc_pred,
            cpc_true: entry.meta.cpc,
            n_segments_used: p.n_segments_used,
        });
    }
    report_from_rows(rows, opts)
}

pub fn evaluate_dataset(
    model: &Model,
    dataset: &crate::eeg_io::Dataset,
    ids: Option<&[String]>,
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    match ids {
        None => evaluate_patients(model, dataset.patients.values(), opts),
        Some(ids) => {
            let entries = ids
                .iter()
                .map(|id| dataset.patients.get(id).ok_or_else(|| EvalError::UnknownPatient(id.clone())))
                .collect::<Result<Vec<_>, _>>()?;
            evaluate_patients(model, entries, opts)
        }
    }
}

pub fn patients_csv(rows: &[PatientRow]) -> String {
    let mut out = format!("{PATIENTS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.patient_id, r.poor_prob, r.outcome, r.cpc_pred, r.cpc_true, r.n_segments_used
        ));
    }
    out
}

/// Writes `report.json` and `patients.csv` into `dir`.
pub fn write_report(report: &EvalReport, dir: &Path) -> Result<(), EvalError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| EvalError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    let report_path = dir.join(REPORT_FILE);
    fs::write(&report_path, json + "\n").map_err(io(&report_path))?;
    let csv_path = dir.join(PATIENTS_FILE);
    fs::write(&csv_path, patients_csv(&report.rows)).map_err(io(&csv_path))?;
    Ok(())
}
