//! Three operations for the static page in `www/`: band-pass magnitude
//! response, a synthetic EEG trace, and ROC points with the challenge metric.
//!
//! Each export is a thin wrapper over a plain function so the logic is
//! testable natively.

use prognosis_core::dsp::{design_butterworth_bandpass, filter_signal, DEFAULT_MONTAGE};
use prognosis_core::eeg_io::{synthesize_excerpt, Outcome, SynthesisProfile};
use prognosis_core::eval::{challenge_metric, roc_points, RocPoint};
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// `(frequencies, magnitudes)` on `n_points` evenly spaced frequencies in `[0, fs/2]`.
pub fn band_response(low_hz: f64, high_hz: f64, order: usize, fs_hz: f64, n_points: usize) -> Result<(Vec<f64>, Vec<f64>), String> {
    let cascade = design_butterworth_bandpass(low_hz, high_hz, order, fs_hz).map_err(|e| e.to_string())?;
    if n_points < 2 {
        return Err("need at least 2 points".into());
    }
    let freqs: Vec<f64> = (0..n_points).map(|i| fs_hz / 2.0 * i as f64 / (n_points - 1) as f64).collect();
    let mags = freqs.iter().map(|&f| cascade.magnitude(f, fs_hz)).collect();
    Ok((freqs, mags))
}

/// One bipolar channel of a synthetic excerpt, optionally band-passed
/// (0.5-35 Hz, order 4) at the excerpt's own rate.
pub fn bipolar_trace(poor: bool, seed: u64, seconds: f64, fs_hz: f64, channel: usize, filtered: bool) -> Result<Vec<f64>, String> {
    let pair = DEFAULT_MONTAGE.get(channel).ok_or_else(|| format!("channel {channel} out of range"))?;
    let mut profile = SynthesisProfile::new(if poor { Outcome::Poor } else { Outcome::Good }, seed);
    profile.fs_hz = fs_hz;
    let rec = synthesize_excerpt(&profile, "demo", 0, seconds).map_err(|e| e.to_string())?;
    let row = |name: &str| rec.electrodes.iter().position(|e| e == name).map(|i| &rec.samples[i]);
    let (a, c) = row(pair.anode).zip(row(pair.cathode)).ok_or("montage electrode missing")?;
    let trace: Vec<f64> = a.iter().zip(c).map(|(x, y)| f64::from(*x) - f64::from(*y)).collect();
    if !filtered {
        return Ok(trace);
    }
    let cascade = design_butterworth_bandpass(0.5, 35.0, 4, fs_hz).map_err(|e| e.to_string())?;
    filter_signal(&cascade, &trace).map_err(|e| e.to_string())
}

#[derive(Debug, Serialize)]
pub struct RocSummary {
    pub points: Vec<RocPoint>,
    pub challenge_metric: f64,
}

/// Labels are 1 for the positive (poor outcome) class.
pub fn roc_summary(scores: &[f64], labels: &[u8], fpr_cap: f64) -> Result<RocSummary, String> {
    let labels: Vec<bool> = labels.iter().map(|&l| l != 0).collect();
    let points = roc_points(scores, &labels).map_err(|e| e.to_string())?;
    let metric = challenge_metric(scores, &labels, fpr_cap).map_err(|e| e.to_string())?;
    Ok(RocSummary { points, challenge_metric: metric })
}

/// Frequencies then magnitudes, concatenated: `[f_0..f_n, |H|_0..|H|_n]`.
#[wasm_bindgen(js_name = filterResponse)]
pub fn filter_response(low_hz: f64, high_hz: f64, order: usize, fs_hz: f64, n_points: usize) -> Result<Vec<f64>, JsError> {
    let (mut f, m) = band_response(low_hz, high_hz, order, fs_hz, n_points).map_err(|e| JsError::new(&e))?;
    f.extend(m);
    Ok(f)
}

#[wasm_bindgen(js_name = syntheticTrace)]
pub fn synthetic_trace(poor: bool, seed: u64, seconds: f64, fs_hz: f64, channel: usize, filtered: bool) -> Result<Vec<f64>, JsError> {
    bipolar_trace(poor, seed, seconds, fs_hz, channel, filtered).map_err(|e| JsError::new(&e))
}

/// JSON `{points: [{threshold, tpr, fpr}], challenge_metric}`. The first
/// point's threshold is infinite and serializes as `null`.
#[wasm_bindgen(js_name = rocExplorer)]
pub fn roc_explorer(scores: &[f64], labels: &[u8], fpr_cap: f64) -> Result<String, JsError> {
    let summary = roc_summary(scores, labels, fpr_cap).map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&summary).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = montageLabels)]
pub fn montage_labels() -> Vec<String> {
    DEFAULT_MONTAGE.iter().map(|p| format!("{}-{}", p.anode, p.cathode)).collect()
}
