//! Synthetic labelled EEG. Good-outcome patients show continuous band-limited
//! (alpha-like) activity over a 1/f background; poor-outcome patients show
//! burst suppression: 1/f activity gated by an envelope that alternates
//! between full amplitude and a small suppression factor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{EegIoError, Outcome, PatientMeta, RawRecording};
use crate::dsp::ELECTRODES_10_20;

const HOUR_S: f64 = 3600.0;
/// Target RMS of the dominant component, microvolts.
const SIGNAL_RMS_UV: f64 = 20.0;
/// Background-to-oscillation RMS ratio for good-outcome signals.
const BACKGROUND_RATIO: f64 = 0.35;
/// Lowest frequency carried by the 1/f background.
const NOISE_FLOOR_HZ: f64 = 0.5;
const PATIENT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisProfile {
    pub outcome: Outcome,
    pub seed: u64,
    pub n_hours: u32,
    pub fs_hz: f64,
    /// Length of each burst and each suppression phase (poor only).
    pub burst_period_s: f64,
    /// Amplitude multiplier during suppression, relative to bursts (poor only).
    pub suppression_amplitude: f64,
    /// Oscillation band (good only).
    pub oscillation_band_hz: (f64, f64),
    /// Background spectral slope: power ∝ 1/f^exponent.
    pub noise_exponent: f64,
}

impl SynthesisProfile {
    pub fn new(outcome: Outcome, seed: u64) -> Self {
        Self {
            outcome,
            seed,
            n_hours: 1,
            fs_hz: 250.0,
            burst_period_s: 6.0,
            suppression_amplitude: 0.05,
            oscillation_band_hz: (8.0, 12.0),
            noise_exponent: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), EegIoError> {
        let bad = |m: String| Err(EegIoError::InvalidProfile(m));
        if self.n_hours < 1 {
            return bad("n_hours must be >= 1".into());
        }
        if !(self.fs_hz.is_finite() && self.fs_hz > 70.0) {
            return bad(format!("fs_hz {} must exceed 70", self.fs_hz));
        }
        let (lo, hi) = self.oscillation_band_hz;
        if !(lo > 0.0 && lo < hi && hi < self.fs_hz / 2.0) {
            return bad(format!("oscillation band ({lo}, {hi}) invalid at fs {}", self.fs_hz));
        }
        if !(self.burst_period_s.is_finite() && self.burst_period_s > 0.0) {
            return bad(format!("burst_period_s {} must be positive", self.burst_period_s));
        }
        if !(self.suppression_amplitude > 0.0 && self.suppression_amplitude <= 1.0) {
            return bad(format!("suppression_amplitude {} must lie in (0, 1]", self.suppression_amplitude));
        }
        if !(self.noise_exponent.is_finite() && self.noise_exponent >= 0.0) {
            return bad(format!("noise_exponent {} must be >= 0", self.noise_exponent));
        }
        Ok(())
    }

    /// Envelope gain at time `t_s`: bursts occupy even-numbered phases.
    pub fn burst_envelope(&self, t_s: f64) -> f64 {
        if ((t_s / self.burst_period_s).floor() as u64) % 2 == 0 {
            1.0
        } else {
            self.suppression_amplitude
        }
    }

    fn meta(&self, patient_id: &str) -> PatientMeta {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(PATIENT_STREAM);
        let cpc = match self.outcome {
            Outcome::Good => rng.random_range(1..=2),
            Outcome::Poor => rng.random_range(3..=5),
        };
        PatientMeta { patient_id: patient_id.to_string(), outcome: self.outcome, cpc, hospital: "synthetic".into() }
    }
}

fn sample_spectrum(rng: &mut ChaCha8Rng, n: usize, fs: f64, weight: impl Fn(f64) -> f64, target_rms: f64) -> Vec<Complex<f64>> {
    let mut spec = vec![Complex::new(0.0, 0.0); n];
    let mut energy = 0.0;
    for k in 1..n.div_ceil(2) {
        let f = k as f64 * fs / n as f64;
        let w = weight(f);
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        if w > 0.0 {
            let c = Complex::new(re, im) * w;
            spec[k] = c;
            spec[n - k] = c.conj();
            energy += 2.0 * c.norm_sqr();
        }
    }
    // Parseval: mean square of the inverse transform is energy / n².
    let rms = (energy / (n as f64 * n as f64)).sqrt();
    let gain = if rms > 0.0 { target_rms / rms } else { 0.0 };
    spec.iter_mut().for_each(|c| *c *= gain);
    spec
}

/// `seconds` of one hour's signal over the 19 standard electrodes.
pub fn synthesize_excerpt(profile: &SynthesisProfile, patient_id: &str, hour_index: u32, seconds: f64) -> Result<RawRecording, EegIoError> {
    profile.validate()?;
    let n = (seconds * profile.fs_hz).round() as usize;
    if n < 2 {
        return Err(EegIoError::InvalidProfile(format!("{seconds} s is too short")));
    }
    let fs = profile.fs_hz;
    let mut rng = ChaCha8Rng::seed_from_u64(profile.seed);
    rng.set_stream(u64::from(hour_index));
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(n);
    let exponent = profile.noise_exponent;
    let pink = move |f: f64| if f >= NOISE_FLOOR_HZ { f.powf(-exponent / 2.0) } else { 0.0 };
    let (lo, hi) = profile.oscillation_band_hz;
    let band = move |f: f64| if f >= lo && f <= hi { 1.0 } else { 0.0 };

    let mut samples = Vec::with_capacity(ELECTRODES_10_20.len());
    for _ in ELECTRODES_10_20 {
        let electrode_gain = rng.random_range(0.8..1.2);
        let offset = rng.random_range(-50.0..50.0);
        let rms = SIGNAL_RMS_UV * electrode_gain;
        let mut spec = match profile.outcome {
            Outcome::Good => {
                let osc = sample_spectrum(&mut rng, n, fs, band, rms);
                let bg = sample_spectrum(&mut rng, n, fs, pink, BACKGROUND_RATIO * rms);
                osc.iter().zip(&bg).map(|(a, b)| a + b).collect()
            }
            Outcome::Poor => sample_spectrum(&mut rng, n, fs, pink, rms),
        };
        fft.process(&mut spec);
        let inv_n = 1.0 / n as f64;
        let row = spec
            .iter()
            .enumerate()
            .map(|(t, c)| {
                let v = c.re * inv_n;
                let gated = match profile.outcome {
                    Outcome::Good => v,
                    Outcome::Poor => v * profile.burst_envelope(t as f64 / fs),
                };
                (gated + offset) as f32
            })
            .collect();
        samples.push(row);
    }
    Ok(RawRecording {
        patient_id: patient_id.to_string(),
        hour_index,
        fs_hz: fs,
        electrodes: ELECTRODES_10_20.iter().map(|s| s.to_string()).collect(),
        samples,
    })
}

/// One full hour. Each hour draws from its own RNG stream, so hours can be
/// generated independently and in any order.
pub fn synthesize_hour(profile: &SynthesisProfile, patient_id: &str, hour_index: u32) -> Result<RawRecording, EegIoError> {
    synthesize_excerpt(profile, patient_id, hour_index, HOUR_S)
}

pub fn synthesize_patient_as(profile: &SynthesisProfile, patient_id: &str) -> Result<(Vec<RawRecording>, PatientMeta), EegIoError> {
    profile.validate()?;
    let recordings = (0..profile.n_hours)
        .map(|h| synthesize_hour(profile, patient_id, h))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((recordings, profile.meta(patient_id)))
}

/// Patient id defaults to `syn-<seed>`.
pub fn synthesize_patient(profile: &SynthesisProfile) -> Result<(Vec<RawRecording>, PatientMeta), EegIoError> {
    synthesize_patient_as(profile, &format!("syn-{}", profile.seed))
}

/// Metadata a profile would produce, without generating samples.
pub fn synthesized_meta(profile: &SynthesisProfile, patient_id: &str) -> Result<PatientMeta, EegIoError> {
    profile.validate()?;
    Ok(profile.meta(patient_id))
}
