//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails. The end-to-end criteria drive the `prognosis`
//! binary on a synthetic corpus of 24 two-hour patients (~3 GB in a temp dir).

use std::f64::consts::PI;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use prognosis_core::autodiff::{Graph, Tensor, GRADCHECK_STEP};
use prognosis_core::dsp::{design_butterworth_bandpass, resample, PreprocessConfig};
use prognosis_core::eval::{challenge_metric, FPR_CAP};
use prognosis_core::model::{
    assemble_sequence, output_length, receptive_field, ContextParams, HeadParams, ModelConfig, ModelParams, TokenParams,
};
use prognosis_core::train::gradcheck::{check_model_gradients, demo_segments, labelled};
use prognosis_core::train::{cross_entropy_loss, mse_loss, total_loss};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SHAPES_BUDGET: Duration = Duration::from_secs(1);
const GRADCHECK_COORDS: usize = 200;
const GRADCHECK_MAX_REL: f64 = 1e-4;
const GRADCHECK_BUDGET: Duration = Duration::from_secs(300);
const CUTOFF_GAIN: f64 = std::f64::consts::FRAC_1_SQRT_2;
const CUTOFF_TOL: f64 = 0.01;
const DC_MAX: f64 = 1e-6;
const PASSBAND_TOL: f64 = 0.02;
const METRIC_INSTANCES: usize = 1000;
const E2E_PATIENTS_PER_CLASS: usize = 12;
const E2E_HOURS: u32 = 2;
const E2E_DATA_SEED: u64 = 7;
const E2E_TRAIN_SEED: u64 = 1;
const E2E_ITERS: u64 = 400;
const E2E_MIN_METRIC: f64 = 0.8;
const LOSS_WINDOW: usize = 50;
const DRY_RUN_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn shapes() -> Outcome {
    let t0 = Instant::now();
    let cfg = ModelConfig::preset("paper").map_err(|e| e.to_string())?;
    let rf = receptive_field(&cfg.conv_layers);
    let tokens = output_length(&cfg.conv_layers, 30_000);

    let (d, t, c) = (768, 12, 18);
    let ctx = ContextParams {
        tokens: TokenParams {
            pos_encoding: Tensor::zeros(&[c * t + 2, d]),
            class_token: Tensor::full(&[d], 1.0),
            regress_token: Tensor::full(&[d], 2.0),
        },
        blocks: Vec::new(),
        class_head: HeadParams { weight: Tensor::zeros(&[d, 1]), bias: Tensor::zeros(&[1]) },
        regress_head: HeadParams { weight: Tensor::zeros(&[d, 1]), bias: Tensor::zeros(&[1]) },
    };
    let mut g = Graph::new();
    let bound = ctx.bind(&mut g);
    let channel_tokens: Vec<_> = (0..c).map(|i| g.constant(Tensor::full(&[t, d], 10.0 + i as f64))).collect();
    let stacked = g.concat0(&channel_tokens).map_err(|e| e.to_string())?;
    let stacked_shape = g.value(stacked).shape().to_vec();
    let seq = assemble_sequence(&mut g, &bound, &channel_tokens).map_err(|e| e.to_string())?;
    let v = g.value(seq);
    let rows_ok = v.data()[0] == 1.0 && v.data()[d] == 2.0 && v.data()[2 * d] == 10.0 && v.data()[(c * t + 1) * d] == 10.0 + (c - 1) as f64;
    let elapsed = t0.elapsed();
    check(
        rf == (2970, 2430)
            && tokens == Some(12)
            && stacked_shape == [216, 768]
            && v.shape() == [218, 768]
            && rows_ok
            && elapsed < SHAPES_BUDGET,
        format!(
            "receptive field {rf:?}, tokens {tokens:?}, {stacked_shape:?} -> {:?}, token rows in place {rows_ok}, {elapsed:.2?}",
            v.shape()
        ),
    )
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let cfg = ModelConfig::preset("desk").map_err(|e| e.to_string())?;
    let segs = demo_segments(&cfg, 0).map_err(|e| e.to_string())?;
    let params = ModelParams::init(&cfg, 0);
    let report = check_model_gradients(&cfg, &params, &labelled(&cfg, &segs), GRADCHECK_COORDS, GRADCHECK_STEP, 0)
        .map_err(|e| e.to_string())?;
    let max = report.max_rel_error();
    let elapsed = t0.elapsed();
    check(
        report.checks.len() == GRADCHECK_COORDS && max <= GRADCHECK_MAX_REL && elapsed < GRADCHECK_BUDGET,
        format!("{} coords, max relative error {max:.3e}, {elapsed:.1?}", report.checks.len()),
    )
}

/// Index of the largest-magnitude DFT bin in `1..n/2`, by direct summation.
fn dft_peak(x: &[f64]) -> usize {
    let n = x.len();
    (1..n / 2)
        .map(|k| {
            let (re, im) = x.iter().enumerate().fold((0.0, 0.0), |(re, im), (i, &v)| {
                let a = 2.0 * PI * (k * i) as f64 / n as f64;
                (re + v * a.cos(), im - v * a.sin())
            });
            (k, re * re + im * im)
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map_or(0, |(k, _)| k)
}

fn filter_and_resampler() -> Outcome {
    let pre = PreprocessConfig::default();
    let fs = 100.0;
    let bp = design_butterworth_bandpass(pre.low_hz, pre.high_hz, pre.filter_order, fs).map_err(|e| e.to_string())?;
    let low = bp.magnitude(pre.low_hz, fs);
    let high = bp.magnitude(pre.high_hz, fs);
    let dc = bp.magnitude(0.0, fs);
    let mid = bp.magnitude(10.0, fs);
    let mut ok = (low - CUTOFF_GAIN).abs() <= CUTOFF_TOL
        && (high - CUTOFF_GAIN).abs() <= CUTOFF_TOL
        && dc <= DC_MAX
        && (mid - 1.0).abs() <= PASSBAND_TOL;
    let mut peaks = Vec::new();
    let tone = 7.3;
    for fs_in in [200.0, 250.0, 500.0] {
        let x: Vec<f64> = (0..(20.0 * fs_in) as usize).map(|i| (2.0 * PI * tone * i as f64 / fs_in).sin()).collect();
        let y = resample(&x, fs_in, fs).map_err(|e| e.to_string())?;
        let expected = tone * y.len() as f64 / fs;
        let k = dft_peak(&y);
        ok &= (k as f64 - expected).abs() <= 1.0;
        peaks.push(format!("{fs_in}Hz: bin {k} (expected {expected:.1})"));
    }
    check(
        ok,
        format!("|H| {low:.4} at {} Hz, {high:.4} at {} Hz, {dc:.1e} at DC, {mid:.4} at 10 Hz; {}", pre.low_hz, pre.high_hz, peaks.join(", ")),
    )
}

/// Counts true and false positives directly at every candidate threshold.
fn brute_force_metric(scores: &[f64], labels: &[bool]) -> f64 {
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    let mut best = 0.0f64;
    for &t in scores {
        let (mut tp, mut fp) = (0.0, 0.0);
        for (s, &l) in scores.iter().zip(labels) {
            if *s >= t {
                if l {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        if fp / neg <= FPR_CAP {
            best = best.max(tp / pos);
        }
    }
    best
}

fn metric() -> Outcome {
    let worked = challenge_metric(&[0.9, 0.8, 0.7, 0.2, 0.1], &[true, true, false, true, false], FPR_CAP).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut mismatches = 0;
    for _ in 0..METRIC_INSTANCES {
        let n = rng.random_range(2..=60);
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        labels[0] = true;
        labels[1] = false;
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0u8..25)) / 24.0).collect();
        let got = challenge_metric(&scores, &labels, FPR_CAP).map_err(|e| e.to_string())?;
        if got != brute_force_metric(&scores, &labels) {
            mismatches += 1;
        }
    }
    check(
        worked == 2.0 / 3.0 && mismatches == 0,
        format!("worked example {worked}, {mismatches}/{METRIC_INSTANCES} mismatches against brute force"),
    )
}

fn losses() -> Outcome {
    let ce = |p: &[f64], l: &[f64]| cross_entropy_loss(p, l).map_err(|e| e.to_string());
    let mse = |p: &[f64], t: &[f64]| mse_loss(p, t).map_err(|e| e.to_string());
    let half = ce(&[0.5], &[1.0])?;
    let pair = ce(&[0.9, 0.1], &[1.0, 0.0])?;
    let sure = ce(&[1.0], &[1.0])?;
    let m1 = mse(&[3.0], &[5.0])?;
    let m2 = mse(&[1.0, 2.0], &[2.0, 4.0])?;
    let m0 = mse(&[1.0, 4.0], &[1.0, 4.0])?;
    let sum = total_loss(pair, m2);
    check(
        (half - std::f64::consts::LN_2).abs() <= 1e-6
            && (pair - (-(0.9f64).ln())).abs() <= 1e-5
            && sure <= 1e-6
            && m1 == 4.0
            && m2 == 2.5
            && m0 == 0.0
            && sum.total == pair + m2,
        format!("ce {half:.7} {pair:.6} {sure:.1e}, mse {m1} {m2} {m0}, total {}", sum.total),
    )
}

fn prognosis(args: &[&str], cwd: &Path) -> Result<String, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_prognosis"))
        .args(args)
        .current_dir(cwd)
        .output()
        .map_err(|e| e.to_string())?;
    if o.status.success() {
        Ok(String::from_utf8_lossy(&o.stdout).into_owned())
    } else {
        Err(format!("prognosis {} failed: {}", args.join(" "), String::from_utf8_lossy(&o.stderr).trim()))
    }
}

fn dry_run() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let out = prognosis(&["train", "--preset", "entry4", "--dry-run"], tmp.path())?;
    let elapsed = t0.elapsed();
    let params = out.lines().find(|l| l.starts_with("parameters:")).unwrap_or("parameters: ?");
    check(
        out.contains("216x768 before tokens, 218x768")
            && out.contains("K=8")
            && out.contains("M=8")
            && out.contains("forward: poor_prob=")
            && elapsed < DRY_RUN_BUDGET,
        format!("{params}, {elapsed:.1?}"),
    )
}

/// Mean of the `total` column over `rows`.
fn mean_total(rows: &[Vec<&str>]) -> f64 {
    rows.iter().map(|r| r[3].parse::<f64>().unwrap_or(f64::NAN)).sum::<f64>() / rows.len() as f64
}

/// Returns (end-to-end outcome, determinism outcome).
fn end_to_end() -> (Outcome, Outcome) {
    let tmp = match tempfile::tempdir() {
        Ok(t) => t,
        Err(e) => return (Err(e.to_string()), Err("not run".into())),
    };
    let dir = tmp.path();
    let per_class = E2E_PATIENTS_PER_CLASS.to_string();
    let hours = E2E_HOURS.to_string();
    let data_seed = E2E_DATA_SEED.to_string();
    let train_seed = E2E_TRAIN_SEED.to_string();
    let iters = E2E_ITERS.to_string();
    let t0 = Instant::now();
    let setup = prognosis(&["synthesize", "--good", &per_class, "--poor", &per_class, "--hours", &hours, "--seed", &data_seed, "--out", "data"], dir)
        .and_then(|_| prognosis(&["preprocess", "--data", "data", "--out", "cache"], dir))
        .and_then(|_| {
            prognosis(&["train", "--data", "cache", "--preset", "desk", "--iters", &iters, "--seed", &train_seed, "--run", "run1"], dir)
        });
    if let Err(e) = setup {
        return (Err(e), Err("not run".into()));
    }
    let trained = t0.elapsed();

    let e2e = (|| {
        let out = prognosis(&["evaluate", "--data", "data", "--checkpoint", "run1/best.ckpt", "--out", "eval", "--split", "val"], dir)?;
        let metric: f64 = out
            .lines()
            .find_map(|l| l.strip_prefix("challenge_metric="))
            .and_then(|v| v.parse().ok())
            .ok_or("no challenge_metric in evaluate output")?;
        let csv = std::fs::read_to_string(dir.join("run1/metrics.csv")).map_err(|e| e.to_string())?;
        let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
        if rows.len() < 2 * LOSS_WINDOW {
            return Err(format!("only {} metric rows", rows.len()));
        }
        let first = mean_total(&rows[..LOSS_WINDOW]);
        let last = mean_total(&rows[rows.len() - LOSS_WINDOW..]);
        check(
            metric >= E2E_MIN_METRIC && last < first,
            format!("val challenge metric {metric}, loss mean first {LOSS_WINDOW} {first:.4} -> last {LOSS_WINDOW} {last:.4}, pipeline {trained:.0?}"),
        )
    })();

    let repeat = (|| {
        prognosis(&["train", "--data", "cache", "--preset", "desk", "--iters", &iters, "--seed", &train_seed, "--run", "run2"], dir)?;
        let read = |r: &str| std::fs::read(dir.join(r)).map_err(|e| e.to_string());
        let same_metrics = read("run1/metrics.csv")? == read("run2/metrics.csv")?;
        let same_ckpt = read("run1/best.ckpt")? == read("run2/best.ckpt")?;
        check(same_metrics, format!("metrics.csv identical {same_metrics}, best.ckpt identical {same_ckpt}"))
    })();
    (e2e, repeat)
}

fn main() -> ExitCode {
    let mut results: Vec<(u8, &str, Outcome)> = vec![
        (1, "shapes and token assembly", shapes()),
        (2, "model gradients match finite differences", gradients()),
        (3, "band-pass response and resampler", filter_and_resampler()),
        (4, "challenge metric", metric()),
    ];
    let (e2e, repeat) = end_to_end();
    results.push((5, "end-to-end synthetic training", e2e));
    results.push((6, "full-size dry run", dry_run()));
    results.push((7, "deterministic training", repeat));
    results.push((8, "loss values", losses()));

    let mut failed = false;
    for (n, name, r) in &results {
        match r {
            Ok(d) => println!("PASS criterion {n}: {name}: {d}"),
            Err(d) => {
                failed = true;
                println!("FAIL criterion {n}: {name}: {d}");
            }
        }
    }
    if failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
