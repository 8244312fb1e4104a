//! Joint classification and regression training: losses, Adam, the
//! patient-level split, segment sampling and the training loop.

mod adam;
pub mod gradcheck;
mod loss;
mod split;
mod store;
mod trainer;

use std::path::PathBuf;

pub use adam::{adam_step, AdamState};
pub use loss::{batch_loss, cross_entropy_loss, mse_loss, total_loss, BatchLoss, LabelledSegment, LossBreakdown, CE_CLAMP};
pub use split::split_patients;
pub use store::{
    sample_training_example, CacheSummary, PreprocessedStore, SkippedRecording, StoredHour, StoredPatient, TrainingExample,
    STORE_MANIFEST,
};
pub use trainer::{
    metrics_csv, segment_accuracy, train, train_step, validation_segments, MetricsRow, TrainConfig, TrainOutcome,
    ValidationItem, INIT_DESCRIPTION, METRICS_HEADER,
};

use crate::autodiff::AutodiffError;
use crate::dsp::DspError;
use crate::eeg_io::{EegIoError, Outcome};
use crate::model::ModelError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("need at least 2 patients, found {0}")]
    TooFewPatients(usize),
    #[error("dataset has no usable {missing} patients; training needs both outcome classes")]
    SingleClassDataset { missing: Outcome },
    #[error("no patients with usable segments in this split")]
    EmptySplit,
    #[error("patient {0} is not in the preprocessed store")]
    UnknownPatient(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("preprocessed cache: {0}")]
    Cache(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    EegIo(#[from] EegIoError),
    #[error("io failure on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[cfg(test)]
mod tests;
