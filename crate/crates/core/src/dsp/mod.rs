//! Preprocessing: band-pass filtering, resampling to 100 Hz, min-max
//! rescaling, bipolar conversion and 5-minute segmentation.

mod filter;
mod montage;
mod resample;

pub use filter::{design_butterworth_bandpass, filter_signal, Biquad, BiquadCascade};
pub use montage::{montage_csv, to_bipolar, MontagePair, DEFAULT_MONTAGE, ELECTRODES_10_20};
pub use resample::{design_resampling_filter, rational_ratio, resample};

use crate::eeg_io::RawRecording;

/// Samples per segment: 5 minutes at 100 Hz.
pub const SEGMENT_SAMPLES: usize = 30_000;
pub const TARGET_FS_HZ: f64 = 100.0;
pub const N_BIPOLAR: usize = 18;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("unstable filter design: {0}")]
    UnstableDesign(String),
    #[error("non-finite input sample at index {0}")]
    NonFiniteInput(usize),
    #[error("bad sampling rate: {0}")]
    BadRate(String),
    #[error("cannot express {fs_out}/{fs_in} as a ratio with denominators <= 10000")]
    IrreducibleRatio { fs_in: f64, fs_out: f64 },
    #[error("missing electrode {0}")]
    MissingElectrode(String),
    #[error("invalid montage: {0}")]
    InvalidMontage(String),
    #[error("signal too short: need {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid segment: {0}")]
    InvalidSegment(String),
}

/// `n_channels × 30000` block of preprocessed bipolar signal, stored
/// channel-major. Values lie in `[−1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BipolarSegment {
    pub patient_id: String,
    pub hour_index: u32,
    pub segment_index: u32,
    n_channels: usize,
    data: Vec<f32>,
}

impl BipolarSegment {
    pub fn new(patient_id: impl Into<String>, hour_index: u32, segment_index: u32, n_channels: usize, data: Vec<f32>) -> Result<Self, DspError> {
        if n_channels == 0 || data.len() != n_channels * SEGMENT_SAMPLES {
            return Err(DspError::InvalidSegment(format!(
                "{} values for {n_channels} channels of {SEGMENT_SAMPLES}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && v.abs() <= 1.0)) {
            return Err(DspError::InvalidSegment(format!("value {v} outside [-1, 1]")));
        }
        Ok(Self { patient_id: patient_id.into(), hour_index, segment_index, n_channels, data })
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn channel(&self, i: usize) -> &[f32] {
        &self.data[i * SEGMENT_SAMPLES..(i + 1) * SEGMENT_SAMPLES]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Keeps the listed channels, in the given order.
    pub fn select_channels(&self, channels: &[usize]) -> Result<Self, DspError> {
        if channels.is_empty() {
            return Err(DspError::InvalidSegment("no channels selected".into()));
        }
        if let Some(&bad) = channels.iter().find(|&&c| c >= self.n_channels) {
            return Err(DspError::InvalidSegment(format!("channel {bad} of {}", self.n_channels)));
        }
        Ok(Self {
            patient_id: self.patient_id.clone(),
            hour_index: self.hour_index,
            segment_index: self.segment_index,
            n_channels: channels.len(),
            data: channels.iter().flat_map(|&c| self.channel(c).iter().copied()).collect(),
        })
    }
}

/// `(x − min) / (max − min)`; a constant signal maps to zeros.
pub fn minmax_rescale(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.0; x.len()];
    }
    let span = hi - lo;
    x.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Consecutive non-overlapping 30000-sample windows from the start; the
/// trailing remainder is dropped.
pub fn segment(bipolar: &[Vec<f64>], patient_id: &str, hour_index: u32) -> Result<Vec<BipolarSegment>, DspError> {
    let len = bipolar.first().map_or(0, Vec::len);
    if bipolar.iter().any(|row| row.len() != len) {
        return Err(DspError::InvalidSegment("ragged channel lengths".into()));
    }
    if len < SEGMENT_SAMPLES {
        return Err(DspError::TooShort { needed: SEGMENT_SAMPLES, got: len });
    }
    (0..len / SEGMENT_SAMPLES)
        .map(|s| {
            let window = s * SEGMENT_SAMPLES..(s + 1) * SEGMENT_SAMPLES;
            let data = bipolar.iter().flat_map(|row| row[window.clone()].iter().map(|&v| v as f32)).collect();
            BipolarSegment::new(patient_id, hour_index, s as u32, bipolar.len(), data)
        })
        .collect()
}

/// Pipeline settings; defaults are the standard configuration.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PreprocessConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub filter_order: usize,
    pub target_fs_hz: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self { low_hz: 0.5, high_hz: 35.0, filter_order: 4, target_fs_hz: TARGET_FS_HZ }
    }
}

/// Filter → resample → per-electrode min-max → bipolar → segment.
pub fn preprocess(rec: &RawRecording) -> Result<Vec<BipolarSegment>, DspError> {
    preprocess_with(rec, &PreprocessConfig::default())
}

pub fn preprocess_with(rec: &RawRecording, cfg: &PreprocessConfig) -> Result<Vec<BipolarSegment>, DspError> {
    let mut needed: Vec<&str> = Vec::new();
    for p in &DEFAULT_MONTAGE {
        for name in [p.anode, p.cathode] {
            if !needed.contains(&name) {
                needed.push(name);
            }
        }
    }
    let indices = needed
        .iter()
        .map(|&name| {
            rec.electrodes
                .iter()
                .position(|e| e == name)
                .ok_or_else(|| DspError::MissingElectrode(name.to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let expected_len = (rec.n_samples() as f64 * cfg.target_fs_hz / rec.fs_hz).round() as usize;
    if expected_len < SEGMENT_SAMPLES {
        return Err(DspError::TooShort { needed: SEGMENT_SAMPLES, got: expected_len });
    }

    let cascade = design_butterworth_bandpass(cfg.low_hz, cfg.high_hz, cfg.filter_order, rec.fs_hz)?;
    let rows = indices
        .iter()
        .map(|&i| {
            let raw: Vec<f64> = rec.samples[i].iter().map(|&v| f64::from(v)).collect();
            let filtered = filter_signal(&cascade, &raw)?;
            let resampled = resample(&filtered, rec.fs_hz, cfg.target_fs_hz)?;
            Ok(minmax_rescale(&resampled))
        })
        .collect::<Result<Vec<_>, DspError>>()?;

    let bipolar = to_bipolar(&needed, &rows, &DEFAULT_MONTAGE)?;
    segment(&bipolar, &rec.patient_id, rec.hour_index)
}
