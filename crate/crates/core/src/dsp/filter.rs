use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::DspError;

/// One second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    /// Poles strictly inside the unit circle (stability triangle).
    pub fn is_stable(&self) -> bool {
        self.a2.abs() < 1.0 && self.a1.abs() < 1.0 + self.a2
    }

    pub fn response(&self, z_inv: Complex64) -> Complex64 {
        let z2 = z_inv * z_inv;
        (self.b0 + self.b1 * z_inv + self.b2 * z2) / (1.0 + self.a1 * z_inv + self.a2 * z2)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiquadCascade {
    pub sections: Vec<Biquad>,
}

impl BiquadCascade {
    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Biquad::is_stable)
    }

    /// Complex response at `freq_hz` for sampling rate `fs_hz`.
    pub fn response(&self, freq_hz: f64, fs_hz: f64) -> Complex64 {
        let z_inv = Complex64::from_polar(1.0, -2.0 * PI * freq_hz / fs_hz);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    pub fn magnitude(&self, freq_hz: f64, fs_hz: f64) -> f64 {
        self.response(freq_hz, fs_hz).norm()
    }
}

/// Butterworth band-pass of prototype order `order` (even), realized as
/// `order` second-order sections via the bilinear transform with pre-warped
/// band edges. Each section is normalized to unit gain at the digital centre
/// frequency, so the cascade passes the band at unity.
pub fn design_butterworth_bandpass(low_hz: f64, high_hz: f64, order: usize, fs_hz: f64) -> Result<BiquadCascade, DspError> {
    let nyquist = fs_hz / 2.0;
    if !(fs_hz.is_finite() && low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(DspError::InvalidBand(format!(
            "need 0 < low ({low_hz}) < high ({high_hz}) < fs/2 ({nyquist})"
        )));
    }
    if order < 2 || order % 2 != 0 {
        return Err(DspError::InvalidBand(format!("order must be even and >= 2, got {order}")));
    }

    let k = 2.0 * fs_hz;
    let w_low = k * (PI * low_hz / fs_hz).tan();
    let w_high = k * (PI * high_hz / fs_hz).tan();
    let w0_sq = w_low * w_high;
    let bandwidth = w_high - w_low;
    let center = 2.0 * (w0_sq.sqrt() / k).atan();
    let z_center = Complex64::from_polar(1.0, -center);

    let mut sections = Vec::with_capacity(order);
    // Upper-half-plane prototype poles; their conjugates land in the same sections.
    for i in 0..order / 2 {
        let theta = PI * (2 * i + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::new(-theta.sin(), theta.cos());
        let half = proto * (bandwidth / 2.0);
        let disc = (half * half - w0_sq).sqrt();
        for s in [half + disc, half - disc] {
            let z = (k + s) / (k - s);
            let mut sec = Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1: -2.0 * z.re, a2: z.norm_sqr() };
            let gain = sec.response(z_center).norm();
            if !(gain.is_finite() && gain > 0.0) {
                return Err(DspError::UnstableDesign(format!("degenerate section gain {gain}")));
            }
            sec.b0 /= gain;
            sec.b2 /= gain;
            sections.push(sec);
        }
    }

    let cascade = BiquadCascade { sections };
    if !cascade.is_stable() {
        return Err(DspError::UnstableDesign(format!(
            "pole outside unit circle for band {low_hz}-{high_hz} Hz at fs {fs_hz}"
        )));
    }
    Ok(cascade)
}

/// Causal direct-form-II-transposed filtering from rest.
pub fn filter_signal(cascade: &BiquadCascade, x: &[f64]) -> Result<Vec<f64>, DspError> {
    if x.is_empty() {
        return Err(DspError::TooShort { needed: 1, got: 0 });
    }
    if let Some(i) = x.iter().position(|v| !v.is_finite()) {
        return Err(DspError::NonFiniteInput(i));
    }
    let mut y = x.to_vec();
    for s in &cascade.sections {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in y.iter_mut() {
            let input = *v;
            let out = s.b0 * input + z1;
            z1 = s.b1 * input - s.a1 * out + z2;
            z2 = s.b2 * input - s.a2 * out;
            *v = out;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// |DTFT| of the measured impulse response: a route independent of the
    /// closed-form section responses.
    fn measured_magnitude(cascade: &BiquadCascade, freq: f64, fs: f64, n: usize) -> f64 {
        let mut impulse = vec![0.0; n];
        impulse[0] = 1.0;
        let h = filter_signal(cascade, &impulse).unwrap();
        let w = 2.0 * PI * freq / fs;
        let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, v)| {
            (re + v * (w * i as f64).cos(), im - v * (w * i as f64).sin())
        });
        (re * re + im * im).sqrt()
    }

    #[test]
    fn default_design_cutoffs_and_passband() {
        let c = design_butterworth_bandpass(0.5, 35.0, 4, 100.0).unwrap();
        assert_eq!(c.sections.len(), 4);
        for f in [0.5, 35.0] {
            let m = measured_magnitude(&c, f, 100.0, 40_000);
            assert!((m - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.01, "|H({f})| = {m}");
            assert!((c.magnitude(f, 100.0) - m).abs() < 1e-6);
        }
        let mid = measured_magnitude(&c, 10.0, 100.0, 40_000);
        assert!((mid - 1.0).abs() < 0.02, "|H(10)| = {mid}");
        assert!(c.magnitude(0.0, 100.0) < 1e-12);
    }

    #[test]
    fn default_design_stop_band() {
        let c = design_butterworth_bandpass(0.5, 35.0, 4, 100.0).unwrap();
        assert!(c.magnitude(0.05, 100.0) < 0.1);
        assert!(c.magnitude(49.0, 100.0) < 0.1);
    }

    #[test]
    fn invalid_bands_are_rejected() {
        for (lo, hi, order, fs) in [(0.0, 35.0, 4, 100.0), (35.0, 0.5, 4, 100.0), (0.5, 50.0, 4, 100.0), (0.5, 35.0, 3, 100.0), (0.5, 35.0, 0, 100.0)] {
            assert!(matches!(design_butterworth_bandpass(lo, hi, order, fs), Err(DspError::InvalidBand(_))));
        }
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let c = design_butterworth_bandpass(0.5, 35.0, 4, 100.0).unwrap();
        assert!(filter_signal(&c, &[0.0; 500]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let c = design_butterworth_bandpass(0.5, 35.0, 4, 100.0).unwrap();
        assert!(matches!(filter_signal(&c, &[0.0, f64::NAN]), Err(DspError::NonFiniteInput(1))));
    }

    #[test]
    fn steady_state_ten_hertz_tone_passes() {
        let c = design_butterworth_bandpass(0.5, 35.0, 4, 100.0).unwrap();
        let x: Vec<f64> = (0..3000).map(|i| (2.0 * PI * 10.0 * i as f64 / 100.0).sin()).collect();
        let y = filter_signal(&c, &x).unwrap();
        let peak = y[500..].iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 1.0).abs() < 0.05, "steady-state amplitude {peak}");
    }

    proptest! {
        #[test]
        fn filtering_is_linear(
            x in proptest::collection::vec(-10.0f64..10.0, 64),
            y in proptest::collection::vec(-10.0f64..10.0, 64),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let c = design_butterworth_bandpass(0.5, 35.0, 4, 100.0).unwrap();
            let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = filter_signal(&c, &mix).unwrap();
            let fx = filter_signal(&c, &x).unwrap();
            let fy = filter_signal(&c, &y).unwrap();
            let scale = lhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for i in 0..64 {
                prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() <= 1e-9 * scale);
            }
        }

        #[test]
        fn designs_are_stable(
            low in 0.05f64..20.0,
            width in 0.1f64..0.9,
            half_order in 1usize..5,
            fs in prop::sample::select(vec![100.0, 128.0, 200.0, 250.0, 500.0, 1000.0]),
        ) {
            let high = low + width * (fs / 2.0 - low);
            prop_assume!(high < fs / 2.0 * 0.98 && high > low * 1.01);
            let c = design_butterworth_bandpass(low, high, 2 * half_order, fs).unwrap();
            prop_assert!(c.is_stable());
            prop_assert_eq!(c.sections.len(), 2 * half_order);
        }
    }
}
