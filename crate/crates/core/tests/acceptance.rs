//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (run with `--nocapture` to see them) and then asserts.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use mmd_drift::cli::linear_profile;
use mmd_drift::sim::{
    correlation_study, gaussian_matrix, localization_trial, null_calibration, ratio_drift_study,
    shift_ladder_study, ClassMixtureSpec, CorrelationSetup,
};
use mmd_drift::{
    drift_scan, load_embeddings, mmd, mmd_oracle, save_embeddings, BandwidthPolicy, BatchConfig,
    DatasetPair, DriftError, EmbeddingMatrix, Estimator, FileFormat, KernelSpec, RngPolicy,
    ScanConfig,
};
use rand::Rng;

fn verdict(id: u32, name: &str, pass: bool, detail: String) {
    println!("criterion {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {id} {name} failed: {detail}");
}

#[test]
fn c1_oracle_equivalence() {
    let start = Instant::now();
    let policy = RngPolicy::new(20_240_501);
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for i in 0..50u64 {
        let mut rng = policy.stream("oracle", i, 0);
        let n1 = rng.random_range(2..=64);
        let n2 = rng.random_range(2..=64);
        let d = rng.random_range(1..=16);
        let shift = rng.random_range(0.0..2.0);
        let q1 = gaussian_matrix(n1, d, 0.0, policy.derive_seed("q1", i, 0)).unwrap();
        let q2 = gaussian_matrix(n2, d, shift, policy.derive_seed("q2", i, 0)).unwrap();
        let kernels = [
            KernelSpec::default(),
            KernelSpec::rbf_fixed(rng.random_range(0.5..4.0)).unwrap(),
            KernelSpec::linear(),
        ];
        for spec in &kernels {
            for est in [Estimator::Biased, Estimator::Unbiased] {
                let fast = mmd(spec, &q1, &q2, est).unwrap().squared;
                let slow = mmd_oracle(spec, &q1, &q2, est).unwrap().squared;
                let err = (fast - slow).abs();
                let ok = if slow.abs() < 1e-2 { err <= 1e-12 } else { err <= 1e-10 * slow.abs() };
                if slow.abs() >= 1e-2 {
                    worst = worst.max(err / slow.abs());
                }
                if !ok {
                    failures.push(format!("instance {i} {spec:?} {est:?}: {fast} vs {slow}"));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = failures.is_empty() && elapsed < Duration::from_secs(5);
    verdict(
        1,
        "oracle equivalence",
        pass,
        format!("300 comparisons, worst relative error {worst:.2e}, {elapsed:.2?}, failures {failures:?}"),
    );
}

#[test]
fn c2_null_calibration() {
    let start = Instant::now();
    let scan = ScanConfig {
        window: 32,
        bootstraps: 199,
        seed: 7,
        alpha: 0.05,
        ..ScanConfig::default()
    };
    let outcome = null_calibration(200, 512, 8, &scan).unwrap();
    let elapsed = start.elapsed();
    let pass = (0.02..=0.10).contains(&outcome.rate) && elapsed < Duration::from_secs(60);
    verdict(
        2,
        "null calibration",
        pass,
        format!("{}/{} rejected, rate {:.3}, {elapsed:.2?}", outcome.rejections, outcome.trials, outcome.rate),
    );
}

#[test]
fn c3_unbiasedness() {
    let policy = RngPolicy::new(99);
    let trials = 500u64;
    let values: Vec<f64> = (0..trials)
        .map(|i| {
            let a = gaussian_matrix(40, 8, 0.0, policy.derive_seed("a", i, 0)).unwrap();
            let b = gaussian_matrix(40, 8, 0.0, policy.derive_seed("b", i, 0)).unwrap();
            mmd(&KernelSpec::rbf_fixed(4.0).unwrap(), &a, &b, Estimator::Unbiased)
                .unwrap()
                .squared
        })
        .collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    verdict(
        3,
        "unbiasedness",
        mean.abs() <= 3.0 * se,
        format!("mean {mean:.3e}, standard error {se:.3e}, |mean|/se {:.2}", mean.abs() / se),
    );
}

#[test]
fn c4_monotone_drift_response() {
    let scan = ScanConfig {
        window: 32,
        bootstraps: 50,
        seed: 4,
        ..ScanConfig::default()
    };
    let rows = shift_ladder_study(2000, 8, &[0.0, 1.0, 2.0, 4.0], &scan, 4).unwrap();
    let scores: Vec<f64> = rows.iter().map(|r| r.summary_score).collect();
    let pass = scores.windows(2).all(|w| w[0] < w[1]);
    verdict(4, "monotone drift response", pass, format!("summary_score {scores:?}"));
}

#[test]
fn c5_ratio_study_shape() {
    let start = Instant::now();
    let base = ClassMixtureSpec::separated(16, 4.0, 1.0, 0.5, 5000, 5);
    let scan = ScanConfig {
        window: 32,
        bootstraps: 50,
        seed: 5,
        ..ScanConfig::default()
    };
    let batch = BatchConfig {
        batch_size: 64,
        seed: 5,
        ..BatchConfig::default()
    };
    let rows = ratio_drift_study(&base, &[0.1, 0.3, 0.5, 0.7, 0.9], &scan, Some(&batch)).unwrap();
    let s: Vec<f64> = rows.iter().map(|r| r.summary_score).collect();
    let elapsed = start.elapsed();
    let min_at_half = s.iter().enumerate().all(|(i, &v)| i == 2 || v > s[2]);
    let endpoints = s[0] > 3.0 * s[2] && s[4] > 3.0 * s[2];
    let inner = (s[1] - s[3]).abs() <= 0.25 * s[1].max(s[3]);
    let pass = min_at_half && endpoints && inner && elapsed < Duration::from_secs(120);
    verdict(
        5,
        "ratio study shape",
        pass,
        format!(
            "summary_score {s:?}; endpoint ratios {:.2}/{:.2}; 0.3 vs 0.7 gap {:.1}%; {elapsed:.2?}",
            s[0] / s[2],
            s[4] / s[2],
            100.0 * (s[1] - s[3]).abs() / s[1].max(s[3])
        ),
    );
}

#[test]
fn c6_drift_tracks_classifier_quality() {
    let scan = ScanConfig {
        window: 32,
        bootstraps: 50,
        stride: 4,
        seed: 6,
        ..ScanConfig::default()
    };
    let profile = linear_profile(12, 2.75);
    let out = correlation_study(&CorrelationSetup::default(), &profile, &scan, 6).unwrap();
    let pass = out.pearson_drift_bce > 0.6 && out.pearson_drift_auc < -0.5;
    verdict(
        6,
        "drift vs classifier quality",
        pass,
        format!("pearson(drift, bce) {:.3}, pearson(drift, auc) {:.3}", out.pearson_drift_bce, out.pearson_drift_auc),
    );
}

#[test]
fn c7_localization() {
    let scan = ScanConfig {
        window: 32,
        bootstraps: 20,
        seed: 7,
        ..ScanConfig::default()
    };
    let policy = RngPolicy::new(7);
    let n = 512;
    let mut hits = 0;
    let mut overlaps = Vec::new();
    for trial in 0..20u64 {
        let start = policy.stream("inject", trial, 0).random_range(0..=n - scan.window);
        let seed = policy.derive_seed("trial", trial, 0);
        let t = localization_trial(n, 8, start..start + scan.window, 3.0, &ScanConfig { seed, ..scan }, seed).unwrap();
        if t.overlap >= 0.5 {
            hits += 1;
        }
        overlaps.push((t.overlap * 100.0).round() as u32);
    }
    verdict(7, "localization", hits >= 18, format!("{hits}/20 trials at >= 50% overlap; overlaps % {overlaps:?}"));
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_mmd-drift")
}

fn run_cli(dir: &Path, threads: &str, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(bin())
        .current_dir(dir)
        .arg("--threads")
        .arg(threads)
        .args(args)
        .output()
        .unwrap();
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_file())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn c8_cli_determinism() {
    let inputs = tempfile::tempdir().unwrap();
    let reference = gaussian_matrix(160, 4, 0.0, 1).unwrap();
    let mut target = gaussian_matrix(160, 4, 0.0, 2).unwrap().as_slice().to_vec();
    for r in 100..132 {
        target[r * 4] += 3.0;
    }
    let target = EmbeddingMatrix::new(160, 4, target).unwrap();
    let ref_path = inputs.path().join("ref.csv");
    let tgt_path = inputs.path().join("target.csv");
    save_embeddings(&reference, &ref_path, FileFormat::Csv).unwrap();
    save_embeddings(&target, &tgt_path, FileFormat::Csv).unwrap();
    let r = ref_path.to_str().unwrap();
    let t = tgt_path.to_str().unwrap();

    let invocations: Vec<Vec<&str>> = vec![
        vec!["mmd", "--ref", r, "--target", t, "--out", "mmd.json"],
        vec!["scan", "--ref", r, "--target", t, "--window", "16", "--bootstraps", "30", "--seed", "11", "--out", "report.json", "--series-csv", "series.csv"],
        vec!["scan", "--ref", r, "--target", t, "--window", "8", "--bootstraps", "20", "--seed", "12", "--batch-size", "4", "--out", "batched.json"],
        vec!["extract", "--ref", r, "--target", t, "--report", "report.json", "--side", "both", "--out", "cause.csv"],
        vec!["batch", "--input", t, "--batch-size", "8", "--seed", "3", "--out", "means.bin", "--out-format", "binary"],
        vec!["simulate", "shift-ladder", "--n", "200", "--dims", "4", "--window", "16", "--bootstraps", "10", "--stride", "8", "--seed", "13", "--out", "ladder.csv"],
        vec!["simulate", "ratio-drift", "--n", "1024", "--dims", "4", "--batch-size", "16", "--window", "16", "--bootstraps", "10", "--seed", "14", "--out", "ratio.csv"],
        vec!["calibrate", "--trials", "10", "--n", "64", "--dims", "4", "--bootstraps", "19", "--seed", "15", "--out", "calib.json"],
        vec!["correlate", "--buckets", "4", "--rows", "128", "--dims", "4", "--window", "16", "--bootstraps", "10", "--stride", "16", "--seed", "16", "--out", "corr.csv"],
    ];

    let mut runs = Vec::new();
    for threads in ["1", "4", "1"] {
        let dir = tempfile::tempdir().unwrap();
        let mut stdout = Vec::new();
        for args in &invocations {
            let (code, out) = run_cli(dir.path(), threads, args);
            assert_eq!(code, 0, "{args:?} exited with {code}");
            stdout.push(out);
        }
        runs.push((snapshot(dir.path()), stdout));
    }
    let files = runs[0].0.len();
    let pass = files == 11 && runs.iter().all(|r| r == &runs[0]);
    verdict(
        8,
        "cli determinism",
        pass,
        format!("{} invocations, {files} output files, threads 1/4/1 byte-identical: {}", invocations.len(), runs.iter().all(|r| r == &runs[0])),
    );
}

#[test]
fn c9_degenerate_safety() {
    let mut problems = Vec::new();

    let m = gaussian_matrix(100, 4, 0.0, 9).unwrap();
    let pair = DatasetPair::new(m.clone(), m.clone()).unwrap();
    let scan = ScanConfig {
        window: 16,
        bootstraps: 30,
        seed: 9,
        ..ScanConfig::default()
    };
    let report = drift_scan(&pair, &scan).unwrap();
    if !report.windows.iter().all(|w| w.observed_sq == 0.0 && w.p_value == 1.0 && !w.flagged) {
        problems.push("identical inputs gave a nonzero statistic, p < 1 or a flag".to_string());
    }

    let expect_err = |label: &str, r: mmd_drift::Result<_>, problems: &mut Vec<String>| match r {
        Err(_) => {}
        Ok(()) => problems.push(format!("{label}: no error")),
    };
    let constant = EmbeddingMatrix::new(64, 3, vec![1.0; 192]).unwrap();
    expect_err(
        "constant inputs under the median heuristic",
        drift_scan(&DatasetPair::new(constant.clone(), constant.clone()).unwrap(), &scan).map(|_| ()),
        &mut problems,
    );
    let linear = ScanConfig {
        kernel: KernelSpec::linear(),
        ..scan
    };
    match drift_scan(&DatasetPair::new(constant.clone(), constant).unwrap(), &linear) {
        Ok(r) if r.windows.iter().all(|w| w.observed_sq == 0.0 && w.p_value == 1.0) => {}
        other => problems.push(format!("constant inputs under the linear kernel: {other:?}")),
    }
    let short = gaussian_matrix(10, 4, 0.0, 1).unwrap();
    match drift_scan(&DatasetPair::new(short.clone(), short.clone()).unwrap(), &scan) {
        Err(DriftError::InsufficientRows { .. }) => {}
        other => problems.push(format!("window larger than input: {other:?}")),
    }
    let empty = EmbeddingMatrix::empty(4).unwrap();
    expect_err(
        "empty inputs",
        drift_scan(&DatasetPair::new(empty.clone(), empty.clone()).unwrap(), &scan).map(|_| ()),
        &mut problems,
    );
    expect_err(
        "empty mmd",
        mmd(&KernelSpec::default(), &empty, &short, Estimator::Biased).map(|_| ()),
        &mut problems,
    );
    match DatasetPair::new(short, gaussian_matrix(10, 3, 0.0, 1).unwrap()) {
        Err(DriftError::DimensionMismatch { .. }) => {}
        other => problems.push(format!("dimension mismatch: {other:?}")),
    }
    let bad = ScanConfig {
        window: 0,
        ..scan
    };
    match drift_scan(&pair, &bad) {
        Err(DriftError::InvalidConfig(_)) => {}
        other => problems.push(format!("zero window: {other:?}")),
    }
    let zero_h = KernelSpec {
        bandwidth_policy: BandwidthPolicy::Fixed(0.0),
        ..KernelSpec::default()
    };
    expect_err(
        "zero bandwidth",
        mmd(&zero_h, &m, &m, Estimator::Biased).map(|_| ()),
        &mut problems,
    );

    let dir = tempfile::tempdir().unwrap();
    let nan = dir.path().join("nan.csv");
    std::fs::write(&nan, "1,2\n3,NaN\n").unwrap();
    match load_embeddings(&nan, FileFormat::Auto) {
        Err(DriftError::NonFinite { row: 1, col: 1 }) => {}
        other => problems.push(format!("NaN input: {other:?}")),
    }
    let blank = dir.path().join("blank.csv");
    std::fs::write(&blank, "").unwrap();
    expect_err("blank file", load_embeddings(&blank, FileFormat::Auto).map(|_| ()), &mut problems);

    // The binary must report data errors with exit code 2, never a panic.
    let ok = dir.path().join("ok.csv");
    save_embeddings(&m, &ok, FileFormat::Csv).unwrap();
    let cases: [(&str, &[&str]); 4] = [
        ("nan", &["scan", "--ref", nan.to_str().unwrap(), "--target", nan.to_str().unwrap(), "--out", "r.json"]),
        ("blank", &["mmd", "--ref", blank.to_str().unwrap(), "--target", ok.to_str().unwrap()]),
        ("missing", &["mmd", "--ref", "/nonexistent/x.csv", "--target", ok.to_str().unwrap()]),
        ("short", &["scan", "--ref", ok.to_str().unwrap(), "--target", ok.to_str().unwrap(), "--window", "500", "--out", "r.json"]),
    ];
    for (label, args) in cases {
        let code = run_cli(dir.path(), "1", args).0;
        if code != 2 {
            problems.push(format!("cli {label}: exit {code}"));
        }
    }

    verdict(
        9,
        "degenerate safety",
        problems.is_empty(),
        if problems.is_empty() { "all degenerate cases handled".to_string() } else { problems.join("; ") },
    );
}
