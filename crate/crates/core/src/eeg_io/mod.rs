//! On-disk recording format, patient metadata, dataset discovery and the
//! synthetic EEG generator.
//!
//! A recording is a pair of files: `<name>.hdr.json` describing the
//! recording and `<name>.f32` holding little-endian `f32` samples,
//! channel-major (every sample of electrode 0, then electrode 1, ...).
//! A dataset is a directory with one subdirectory per patient, each holding
//! `patient.json` and one or more recordings.

mod dataset;
mod format;
mod synth;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use dataset::{load_dataset, load_patient, write_patient_meta, Dataset, PatientEntry, RecordingHandle, META_FILE};
pub use format::{load_recording, write_recording, RecordingHeader, SIGNAL_DTYPE};
pub use synth::{synthesize_excerpt, synthesize_hour, synthesize_patient, synthesize_patient_as, synthesized_meta, SynthesisProfile};

#[derive(Debug, thiserror::Error)]
pub enum EegIoError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("malformed header {path}: {reason}")]
    MalformedHeader { path: PathBuf, reason: String },
    #[error("sample count mismatch in {path}: expected {expected} values, found {found}")]
    SampleCountMismatch { path: PathBuf, expected: usize, found: usize },
    #[error("non-finite sample in electrode {electrode} at index {index}")]
    NonFiniteSample { electrode: String, index: usize },
    #[error("invalid recording: {0}")]
    InvalidRecording(String),
    #[error("invalid patient metadata: {0}")]
    InvalidMeta(String),
    #[error("invalid synthesis profile: {0}")]
    InvalidProfile(String),
    #[error("dataset at {0} contains no patients")]
    EmptyDataset(PathBuf),
    #[error("patient {patient_id}: {source}")]
    Patient {
        patient_id: String,
        #[source]
        source: Box<EegIoError>,
    },
    #[error("io failure on {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl EegIoError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::IoFailure { path: path.into(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Outcome {
    Good,
    Poor,
}

impl Outcome {
    /// Outcome class implied by a CPC score (1–2 good, 3–5 poor).
    pub fn from_cpc(cpc: u8) -> Option<Self> {
        match cpc {
            1 | 2 => Some(Self::Good),
            3..=5 => Some(Self::Poor),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Good => "Good",
            Self::Poor => "Poor",
        }
    }
}

impl std::fmt::Display for Outcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientMeta {
    pub patient_id: String,
    pub outcome: Outcome,
    pub cpc: u8,
    pub hospital: String,
}

impl PatientMeta {
    pub fn validate(&self) -> Result<(), EegIoError> {
        match Outcome::from_cpc(self.cpc) {
            None => Err(EegIoError::InvalidMeta(format!("cpc {} outside 1..=5", self.cpc))),
            Some(o) if o != self.outcome => Err(EegIoError::InvalidMeta(format!(
                "outcome {} inconsistent with cpc {} (Good requires cpc 1-2)",
                self.outcome, self.cpc
            ))),
            Some(_) => Ok(()),
        }
    }
}

/// One hour (or excerpt) of referential multi-channel EEG in microvolts.
#[derive(Clone, Debug, PartialEq)]
pub struct RawRecording {
    pub patient_id: String,
    pub hour_index: u32,
    pub fs_hz: f64,
    pub electrodes: Vec<String>,
    /// One row per electrode.
    pub samples: Vec<Vec<f32>>,
}

impl RawRecording {
    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), EegIoError> {
        if !(self.fs_hz.is_finite() && self.fs_hz > 0.0) {
            return Err(EegIoError::InvalidRecording(format!("fs_hz {} must be positive", self.fs_hz)));
        }
        if self.electrodes.is_empty() || self.samples.len() != self.electrodes.len() {
            return Err(EegIoError::InvalidRecording(format!(
                "{} sample rows for {} electrodes",
                self.samples.len(),
                self.electrodes.len()
            )));
        }
        let n = self.n_samples();
        if n == 0 || self.samples.iter().any(|r| r.len() != n) {
            return Err(EegIoError::InvalidRecording("empty or ragged sample rows".into()));
        }
        for (name, row) in self.electrodes.iter().zip(&self.samples) {
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(EegIoError::NonFiniteSample { electrode: name.clone(), index });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cpc_outcome_mapping() {
        assert_eq!(Outcome::from_cpc(1), Some(Outcome::Good));
        assert_eq!(Outcome::from_cpc(2), Some(Outcome::Good));
        assert_eq!(Outcome::from_cpc(3), Some(Outcome::Poor));
        assert_eq!(Outcome::from_cpc(5), Some(Outcome::Poor));
        assert_eq!(Outcome::from_cpc(0), None);
        assert_eq!(Outcome::from_cpc(6), None);
    }

    #[test]
    fn inconsistent_meta_rejected() {
        let meta = PatientMeta { patient_id: "a".into(), outcome: Outcome::Good, cpc: 4, hospital: "X".into() };
        assert!(matches!(meta.validate(), Err(EegIoError::InvalidMeta(_))));
        let meta = PatientMeta { cpc: 6, outcome: Outcome::Poor, ..meta };
        assert!(meta.validate().is_err());
    }

    #[test]
    fn recording_invariants() {
        let mut rec = RawRecording {
            patient_id: "p".into(),
            hour_index: 0,
            fs_hz: 100.0,
            electrodes: vec!["Cz".into()],
            samples: vec![vec![0.0, 1.0]],
        };
        assert!(rec.validate().is_ok());
        rec.samples[0][1] = f32::INFINITY;
        assert!(matches!(rec.validate(), Err(EegIoError::NonFiniteSample { index: 1, .. })));
        rec.samples.push(vec![0.0, 0.0]);
        assert!(matches!(rec.validate(), Err(EegIoError::InvalidRecording(_))));
    }
}
