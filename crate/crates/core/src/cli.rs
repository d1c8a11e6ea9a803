//! Command-line entry point.
//!
//! Every subcommand prints a JSON run record to stdout holding the fully
//! resolved configuration and a result summary; bulk outputs (reports,
//! matrices, tables) go to the files named by `--out`. Exit codes: 0 on
//! success, 1 for usage errors, 2 for data or validation errors.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::error::{DriftError, Result};
use crate::kernel::{BandwidthPolicy, KernelFamily, KernelSpec};
use crate::matrix::{load_embeddings, save_embeddings, DatasetPair, EmbeddingMatrix, FileFormat};
use crate::mmd::{mmd, Estimator};
use crate::prep::{batch_means, stage_pair, BatchConfig, TailPolicy};
use crate::resample::SplitPolicy;
use crate::scan::{drift_scan, extract_cause_samples, DriftReport, ScanConfig, Side};
use crate::sim::{
    correlation_study, correlation_table_csv, null_calibration, ratio_drift_study, ratio_table_csv,
    shift_ladder_study, ClassMixtureSpec, CorrelationSetup,
};

const EXIT_OK: i32 = 0;
const EXIT_USAGE: i32 = 1;
const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "mmd-drift", version, about = "Embedding drift detection with a windowed MMD test")]
struct Cli {
    /// Worker threads; 0 picks one per core. Never changes results.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// MMD between two whole embedding files.
    Mmd(MmdArgs),
    /// Sliding-window drift scan producing a JSON report.
    Scan(ScanCmd),
    /// Reduce an embedding file to mini-batch means.
    Batch(BatchCmd),
    /// Write the rows of the highest-drift window named by a report.
    Extract(ExtractCmd),
    /// Synthetic studies.
    #[command(subcommand)]
    Simulate(Simulate),
    /// Empirical false-positive rate on same-distribution data.
    Calibrate(CalibrateCmd),
    /// Drift versus classifier quality over progressively drifting buckets.
    Correlate(CorrelateCmd),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FormatArg {
    Auto,
    Csv,
    Binary,
}

impl From<FormatArg> for FileFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Auto => FileFormat::Auto,
            FormatArg::Csv => FileFormat::Csv,
            FormatArg::Binary => FileFormat::Binary,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum KernelArg {
    Rbf,
    Linear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EstimatorArg {
    Biased,
    Unbiased,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Paired,
    Literal,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum TailArg {
    Drop,
    Keep,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SideArg {
    Reference,
    Target,
    Both,
}

fn parse_bandwidth(s: &str) -> std::result::Result<BandwidthPolicy, String> {
    match s {
        "median" => Ok(BandwidthPolicy::MedianHeuristicGlobal),
        "median-window" => Ok(BandwidthPolicy::MedianHeuristicPerWindow),
        other => match other.parse::<f64>() {
            Ok(h) if h.is_finite() && h > 0.0 => Ok(BandwidthPolicy::Fixed(h)),
            _ => Err(format!(
                "expected 'median', 'median-window' or a positive number, got {other:?}"
            )),
        },
    }
}

#[derive(Debug, Args)]
struct KernelArgs {
    #[arg(long, value_enum, default_value = "rbf")]
    kernel: KernelArg,
    /// `median`, `median-window`, or a fixed positive bandwidth.
    #[arg(long, value_parser = parse_bandwidth, default_value = "median")]
    bandwidth: BandwidthPolicy,
    #[arg(long, value_enum, default_value = "biased")]
    estimator: EstimatorArg,
}

impl KernelArgs {
    fn spec(&self) -> KernelSpec {
        KernelSpec {
            family: match self.kernel {
                KernelArg::Rbf => KernelFamily::Rbf,
                KernelArg::Linear => KernelFamily::Linear,
            },
            bandwidth_policy: self.bandwidth,
        }
    }

    fn estimator(&self) -> Estimator {
        match self.estimator {
            EstimatorArg::Biased => Estimator::Biased,
            EstimatorArg::Unbiased => Estimator::Unbiased,
        }
    }
}

#[derive(Debug, Args)]
struct ScanArgs {
    /// Window size β.
    #[arg(long, default_value_t = 32)]
    window: usize,
    /// Bootstrap resamples per window K (default depends on the command).
    #[arg(long)]
    bootstraps: Option<usize>,
    /// Step between window ends (default depends on the command).
    #[arg(long)]
    stride: Option<usize>,
    #[arg(long, value_enum, default_value = "paired")]
    split: SplitArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[command(flatten)]
    kernel: KernelArgs,
}

impl ScanArgs {
    fn config(&self, default_bootstraps: usize, default_stride: usize) -> ScanConfig {
        ScanConfig {
            window: self.window,
            bootstraps: self.bootstraps.unwrap_or(default_bootstraps),
            stride: self.stride.unwrap_or(default_stride),
            estimator: self.kernel.estimator(),
            kernel: self.kernel.spec(),
            split: match self.split {
                SplitArg::Paired => SplitPolicy::PairedHalves,
                SplitArg::Literal => SplitPolicy::LiteralQuarter,
            },
            seed: self.seed,
            alpha: self.alpha,
        }
    }
}

#[derive(Debug, Args)]
struct InputArgs {
    /// Reference embeddings (CSV or binary).
    #[arg(long = "ref")]
    reference: PathBuf,
    /// Target embeddings compared against the reference.
    #[arg(long)]
    target: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
}

impl InputArgs {
    fn load(&self) -> Result<DatasetPair> {
        let f = self.format.into();
        DatasetPair::new(load_embeddings(&self.reference, f)?, load_embeddings(&self.target, f)?)
    }
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// Reduce inputs to means of this many rows before scanning.
    #[arg(long)]
    batch_size: Option<usize>,
    /// Keep row order when batching.
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, value_enum, default_value = "drop")]
    tail: TailArg,
}

impl BatchArgs {
    fn config(&self, batch_size: usize, seed: u64) -> BatchConfig {
        BatchConfig {
            batch_size,
            shuffle: !self.no_shuffle,
            seed,
            tail: match self.tail {
                TailArg::Drop => TailPolicy::Drop,
                TailArg::Keep => TailPolicy::KeepPartial,
            },
        }
    }
}

#[derive(Debug, Args)]
struct MmdArgs {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Also write the run record here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScanCmd {
    #[command(flatten)]
    input: InputArgs,
    #[command(flatten)]
    scan: ScanArgs,
    #[command(flatten)]
    batch: BatchArgs,
    /// Report destination.
    #[arg(long)]
    out: PathBuf,
    /// Window series as CSV for plotting.
    #[arg(long)]
    series_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BatchCmd {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    no_shuffle: bool,
    #[arg(long, value_enum, default_value = "drop")]
    tail: TailArg,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    out_format: FormatArg,
}

#[derive(Debug, Args)]
struct ExtractCmd {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    report: PathBuf,
    #[arg(long, value_enum, default_value = "target")]
    side: SideArg,
    /// Output file. With `--side both`, `.reference` and `.target` are
    /// inserted before the extension.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    out_format: FormatArg,
}

#[derive(Debug, Subcommand)]
enum Simulate {
    /// Vary the positive-class share of the target against a balanced reference.
    RatioDrift(RatioCmd),
    /// Mean-shift the target by a list of multiples of the standard deviation.
    ShiftLadder(LadderCmd),
}

#[derive(Debug, Args)]
struct RatioCmd {
    #[arg(long, default_value_t = 5000)]
    n: usize,
    #[arg(long, default_value_t = 16)]
    dims: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.1, 0.3, 0.5, 0.7, 0.9])]
    fractions: Vec<f64>,
    /// Class-mean distance in units of `--scale`.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    /// 0 disables mini-batch staging.
    #[arg(long, default_value_t = 64)]
    batch_size: usize,
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct LadderCmd {
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    dims: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 1.0, 2.0, 4.0])]
    shifts: Vec<f64>,
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CalibrateCmd {
    #[arg(long, default_value_t = 200)]
    trials: usize,
    #[arg(long, default_value_t = 512)]
    n: usize,
    #[arg(long, default_value_t = 8)]
    dims: usize,
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CorrelateCmd {
    #[arg(long, default_value_t = 12)]
    buckets: usize,
    /// Explicit per-bucket shifts; overrides `--buckets`/`--max-shift`.
    #[arg(long, value_delimiter = ',')]
    profile: Option<Vec<f64>>,
    /// Largest shift of the default linear profile, in units of scale.
    #[arg(long, default_value_t = 2.75)]
    max_shift: f64,
    #[arg(long, default_value_t = 8)]
    dims: usize,
    #[arg(long, default_value_t = 3.0)]
    separation: f64,
    #[arg(long, default_value_t = 512)]
    rows: usize,
    #[command(flatten)]
    scan: ScanArgs,
    #[arg(long)]
    out: PathBuf,
}

/// Parse `argv` (program name first) and execute. Returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return EXIT_USAGE;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(record) => {
            let text = serde_json::to_string_pretty(&record).expect("record serializes");
            // A closed stdout (e.g. piped into `head`) is not a failure of the run.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_DATA
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| DriftError::io(path, e))
}

fn out_format(f: FormatArg) -> FileFormat {
    match f {
        FormatArg::Binary => FileFormat::Binary,
        _ => FileFormat::Csv,
    }
}

fn execute(command: Command) -> Result<serde_json::Value> {
    match command {
        Command::Mmd(a) => {
            let pair = a.input.load()?;
            let spec = a.kernel.spec();
            let est = mmd(&spec, &pair.reference, &pair.target, a.kernel.estimator())?;
            let record = json!({
                "command": "mmd",
                "kernel": spec,
                "estimator": est.estimator,
                "reference_rows": pair.reference.rows(),
                "target_rows": pair.target.rows(),
                "bandwidth_used": est.bandwidth_used,
                "mmd_squared": est.squared,
                "mmd": est.value,
            });
            if let Some(out) = &a.out {
                write_text(out, &(serde_json::to_string_pretty(&record).unwrap() + "\n"))?;
            }
            Ok(record)
        }
        Command::Scan(a) => {
            let raw = a.input.load()?;
            let config = a.scan.config(50, 1);
            let batch = a.batch.batch_size.map(|b| a.batch.config(b, config.seed));
            let pair = match &batch {
                Some(b) => stage_pair(&raw, b)?,
                None => raw,
            };
            let mut report = drift_scan(&pair, &config)?;
            report.batch = batch;
            write_text(&a.out, &report.to_json())?;
            if let Some(csv) = &a.series_csv {
                write_text(csv, &report.series_csv())?;
            }
            Ok(json!({
                "command": "scan",
                "config": report.config,
                "batch": report.batch,
                "windows": report.windows.len(),
                "flagged": report.flagged_count(),
                "summary_score": report.summary_score,
                "argmax_index": report.argmax_index,
                "cause_target": report.cause_target,
            }))
        }
        Command::Batch(a) => {
            let m = load_embeddings(&a.input, a.format.into())?;
            let cfg = BatchConfig {
                batch_size: a.batch_size,
                shuffle: !a.no_shuffle,
                seed: a.seed,
                tail: match a.tail {
                    TailArg::Drop => TailPolicy::Drop,
                    TailArg::Keep => TailPolicy::KeepPartial,
                },
            };
            let out = batch_means(&m, &cfg)?;
            if let Some(w) = &out.warning {
                eprintln!("warning: {w}");
            }
            save_embeddings(&out.means, &a.out, out_format(a.out_format))?;
            Ok(json!({
                "command": "batch",
                "config": cfg,
                "input_rows": m.rows(),
                "output_rows": out.means.rows(),
                "warning": out.warning,
            }))
        }
        Command::Extract(a) => {
            let raw = a.input.load()?;
            let text = fs::read_to_string(&a.report).map_err(|e| DriftError::io(&a.report, e))?;
            let report = DriftReport::from_json(&text)?;
            let pair = match &report.batch {
                Some(b) => stage_pair(&raw, b)?,
                None => raw,
            };
            let side = match a.side {
                SideArg::Reference => Side::Reference,
                SideArg::Target => Side::Target,
                SideArg::Both => Side::Both,
            };
            let cause = extract_cause_samples(&pair, &report, side)?;
            let fmt = out_format(a.out_format);
            let mut written = Vec::new();
            let mut save = |m: &EmbeddingMatrix, path: PathBuf| -> Result<()> {
                save_embeddings(m, &path, fmt)?;
                written.push(path.display().to_string());
                Ok(())
            };
            match (&cause.reference, &cause.target) {
                (Some(r), Some(t)) => {
                    save(r, tagged_path(&a.out, "reference"))?;
                    save(t, tagged_path(&a.out, "target"))?;
                }
                (Some(m), None) | (None, Some(m)) => save(m, a.out.clone())?,
                (None, None) => {}
            }
            Ok(json!({
                "command": "extract",
                "side": side,
                "argmax_index": report.argmax_index,
                "cause_reference": report.cause_reference,
                "cause_target": report.cause_target,
                "written": written,
            }))
        }
        Command::Simulate(Simulate::RatioDrift(a)) => {
            let scan = a.scan.config(50, 1);
            let base = ClassMixtureSpec::separated(a.dims, a.separation * a.scale, a.scale, 0.5, a.n, scan.seed);
            let batch = (a.batch_size > 0).then(|| BatchConfig {
                batch_size: a.batch_size,
                seed: scan.seed,
                ..BatchConfig::default()
            });
            let rows = ratio_drift_study(&base, &a.fractions, &scan, batch.as_ref())?;
            write_text(&a.out, &ratio_table_csv(&rows))?;
            Ok(json!({
                "command": "simulate ratio-drift",
                "mixture": base,
                "fractions": a.fractions,
                "batch": batch,
                "config": scan,
                "rows": rows,
            }))
        }
        Command::Simulate(Simulate::ShiftLadder(a)) => {
            let scan = a.scan.config(50, 1);
            let rows = shift_ladder_study(a.n, a.dims, &a.shifts, &scan, scan.seed)?;
            let mut csv = String::from("shift,summary_score,null_median_mean\n");
            for r in &rows {
                csv.push_str(&format!("{},{},{}\n", r.shift, r.summary_score, r.null_median_mean));
            }
            write_text(&a.out, &csv)?;
            Ok(json!({
                "command": "simulate shift-ladder",
                "n": a.n,
                "dims": a.dims,
                "config": scan,
                "rows": rows,
            }))
        }
        Command::Calibrate(a) => {
            let scan = a.scan.config(199, 1);
            let outcome = null_calibration(a.trials, a.n, a.dims, &scan)?;
            let record = json!({
                "command": "calibrate",
                "n": a.n,
                "dims": a.dims,
                "config": scan,
                "trials": outcome.trials,
                "rejections": outcome.rejections,
                "rejection_rate": outcome.rate,
                "alpha": outcome.alpha,
            });
            if let Some(out) = &a.out {
                write_text(out, &(serde_json::to_string_pretty(&record).unwrap() + "\n"))?;
            }
            Ok(record)
        }
        Command::Correlate(a) => {
            let scan = a.scan.config(50, 4);
            let profile = match &a.profile {
                Some(p) => p.clone(),
                None => linear_profile(a.buckets, a.max_shift),
            };
            let setup = CorrelationSetup {
                dims: a.dims,
                separation: a.separation,
                scale: 1.0,
                rows_per_bucket: a.rows,
            };
            let outcome = correlation_study(&setup, &profile, &scan, scan.seed)?;
            if let Some(w) = &outcome.warning {
                eprintln!("warning: {w}");
            }
            write_text(&a.out, &correlation_table_csv(&outcome))?;
            Ok(json!({
                "command": "correlate",
                "setup": setup,
                "profile": profile,
                "config": scan,
                "pearson_drift_bce": finite_or_null(outcome.pearson_drift_bce),
                "pearson_drift_auc": finite_or_null(outcome.pearson_drift_auc),
                "warning": outcome.warning,
            }))
        }
    }
}

/// `count` evenly spaced shifts from 0 to `max` inclusive.
pub fn linear_profile(count: usize, max: f64) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count).map(|i| max * i as f64 / (count - 1) as f64).collect(),
    }
}

fn finite_or_null(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else {
        serde_json::Value::Null
    }
}

fn tagged_path(path: &Path, tag: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}.{tag}.{}", ext.to_string_lossy()),
        None => format!("{stem}.{tag}"),
    };
    path.with_file_name(name)
}
