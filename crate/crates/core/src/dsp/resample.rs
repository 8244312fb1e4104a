use std::f64::consts::PI;

use super::DspError;

const MAX_DENOMINATOR: usize = 10_000;

/// Reduced `(up, down)` factors with `up / down == fs_out / fs_in`.
pub fn rational_ratio(fs_in: f64, fs_out: f64) -> Result<(usize, usize), DspError> {
    if !(fs_in.is_finite() && fs_out.is_finite() && fs_in > 0.0 && fs_out > 0.0) {
        return Err(DspError::BadRate(format!("fs_in {fs_in}, fs_out {fs_out}")));
    }
    let ratio = fs_out / fs_in;
    for down in 1..=MAX_DENOMINATOR {
        let up = (ratio * down as f64).round();
        if up >= 1.0 && (up / down as f64 - ratio).abs() <= 1e-12 * ratio && up <= MAX_DENOMINATOR as f64 {
            return Ok((up as usize, down));
        }
    }
    Err(DspError::IrreducibleRatio { fs_in, fs_out })
}

/// Hann-windowed sinc low-pass taps for the upsampled rate, `10·max(L, M) + 1`
/// long, cut off at `0.45·min(fs_in, fs_out)`, with gain `L` to undo zero stuffing.
pub fn design_resampling_filter(up: usize, down: usize, fs_in: f64, fs_out: f64) -> Vec<f64> {
    let n_taps = 10 * up.max(down) + 1;
    let fs_up = fs_in * up as f64;
    let cutoff = 0.45 * fs_in.min(fs_out) / fs_up; // cycles per upsampled sample
    let centre = (n_taps - 1) as f64 / 2.0;
    (0..n_taps)
        .map(|n| {
            let t = n as f64 - centre;
            let lowpass = if t == 0.0 { 2.0 * cutoff } else { (2.0 * PI * cutoff * t).sin() / (PI * t) };
            let window = 0.5 - 0.5 * (2.0 * PI * n as f64 / (n_taps - 1) as f64).cos();
            up as f64 * lowpass * window
        })
        .collect()
}

/// Rational polyphase resampling. The FIR is applied centred (delay
/// compensated) so output sample `m` sits at input time `m·fs_in/fs_out`.
pub fn resample(x: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>, DspError> {
    let (up, down) = rational_ratio(fs_in, fs_out)?;
    if x.len() < 2 {
        return Err(DspError::TooShort { needed: 2, got: x.len() });
    }
    if up == down {
        return Ok(x.to_vec());
    }
    let taps = design_resampling_filter(up, down, fs_in, fs_out);
    let delay = (taps.len() - 1) / 2;
    let n_in = x.len();
    let n_out = (n_in as f64 * up as f64 / down as f64).round() as usize;
    let n_up = n_in * up;

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        // Upsampled index aligned with tap 0.
        let k0 = m * down + delay;
        let first = k0 % up;
        let mut acc = 0.0;
        let mut tap = first;
        while tap < taps.len() && tap <= k0 {
            let k = k0 - tap;
            if k < n_up {
                acc += taps[tap] * x[k / up];
            }
            tap += up;
        }
        out.push(acc);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ratios_reduce() {
        assert_eq!(rational_ratio(250.0, 100.0).unwrap(), (2, 5));
        assert_eq!(rational_ratio(200.0, 100.0).unwrap(), (1, 2));
        assert_eq!(rational_ratio(500.0, 100.0).unwrap(), (1, 5));
        assert_eq!(rational_ratio(256.0, 100.0).unwrap(), (25, 64));
        assert!(matches!(rational_ratio(0.0, 100.0), Err(DspError::BadRate(_))));
        assert!(matches!(rational_ratio(PI * 100.0, 100.0), Err(DspError::IrreducibleRatio { .. })));
    }

    #[test]
    fn length_contract() {
        let x = vec![0.5; 1000];
        assert_eq!(resample(&x, 200.0, 100.0).unwrap().len(), 500);
        assert_eq!(resample(&vec![0.0; 900_000], 250.0, 100.0).unwrap().len(), 360_000);
    }

    #[test]
    fn identity_rate_returns_input() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64).sqrt()).collect();
        assert_eq!(resample(&x, 100.0, 100.0).unwrap(), x);
    }

    #[test]
    fn too_short_input_rejected() {
        assert!(matches!(resample(&[1.0], 250.0, 100.0), Err(DspError::TooShort { .. })));
    }

    #[test]
    fn five_hertz_tone_matches_analytic_reference() {
        let x: Vec<f64> = (0..2500).map(|i| (2.0 * PI * 5.0 * i as f64 / 250.0).sin()).collect();
        let y = resample(&x, 250.0, 100.0).unwrap();
        let reference: Vec<f64> = (0..y.len()).map(|i| (2.0 * PI * 5.0 * i as f64 / 100.0).sin()).collect();
        let (a, b) = (&y[50..y.len() - 50], &reference[50..y.len() - 50]);
        let dot: f64 = a.iter().zip(b).map(|(p, q)| p * q).sum();
        let na: f64 = a.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|p| p * p).sum::<f64>().sqrt();
        assert!(dot / (na * nb) >= 0.99, "ncc {}", dot / (na * nb));
    }

    fn dominant_bin(y: &[f64]) -> usize {
        // Direct DFT magnitude scan, bins 1..n/2.
        let n = y.len();
        (1..n / 2)
            .map(|k| {
                let w = 2.0 * PI * k as f64 / n as f64;
                let (re, im) = y.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, v)| {
                    (re + v * (w * i as f64).cos(), im - v * (w * i as f64).sin())
                });
                (k, re * re + im * im)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn tone_frequency_is_preserved(f in 1.0f64..30.0, fs_in in prop::sample::select(vec![200.0, 250.0, 500.0])) {
            let seconds = 10.0;
            let n = (fs_in * seconds) as usize;
            let x: Vec<f64> = (0..n).map(|i| (2.0 * PI * f * i as f64 / fs_in).sin()).collect();
            let y = resample(&x, fs_in, 100.0).unwrap();
            let bin = dominant_bin(&y);
            let bin_hz = 100.0 / y.len() as f64;
            prop_assert!((bin as f64 * bin_hz - f).abs() <= bin_hz, "f {} got {}", f, bin as f64 * bin_hz);
        }
    }
}
