//! Sliding-window drift scan.
//!
//! For every window end `t` in `window..=M` (stepping by `stride`, with
//! `M = min(reference.rows, target.rows)`), the trailing `window` rows of the
//! reference and of the target are compared by MMD², and the pooled rows are
//! bootstrapped to obtain the null median and a p-value. The window with the
//! largest observed MMD² is reported as the cause of the drift.
//!
//! Index conventions: `t_index` and `start_index` are 1-based and inclusive,
//! so a window covers rows `start_index..=t_index` counting from 1. Cause
//! ranges are 0-based half-open row ranges `[t_index - window, t_index)`,
//! ready for slicing.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::kernel::{BandwidthPolicy, KernelSpec, ResolvedKernel};
use crate::matrix::{DatasetPair, EmbeddingMatrix};
use crate::prep::BatchConfig;
use crate::mmd::{mmd_with_kernel, pairwise_sum, Estimator};
use crate::resample::{bootstrap_with_kernel, combine_under_null, median, SplitPolicy, StreamKey};
use crate::rng::RngPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanConfig {
    /// Rows per window on each side (β).
    pub window: usize,
    /// Bootstrap resamples per window (K).
    pub bootstraps: usize,
    pub stride: usize,
    pub estimator: Estimator,
    pub kernel: KernelSpec,
    pub split: SplitPolicy,
    pub seed: u64,
    /// Windows with `p_value <= alpha` are flagged.
    pub alpha: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            window: 32,
            bootstraps: 50,
            stride: 1,
            estimator: Estimator::Biased,
            kernel: KernelSpec::default(),
            split: SplitPolicy::PairedHalves,
            seed: 0,
            alpha: 0.05,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DriftError::InvalidConfig(m));
        if self.window < 2 {
            return bad(format!("window must be at least 2, got {}", self.window));
        }
        if self.bootstraps < 1 {
            return bad("bootstraps must be at least 1".into());
        }
        if self.stride < 1 {
            return bad("stride must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        let block = self.split.block_size(self.window);
        if block < self.estimator.min_rows() {
            return bad(format!(
                "window {} with {:?} split gives {block}-row bootstrap blocks, \
                 too small for the {:?} estimator",
                self.window, self.split, self.estimator
            ));
        }
        self.kernel.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowResult {
    pub t_index: usize,
    pub start_index: usize,
    pub observed_sq: f64,
    pub observed: f64,
    /// Median of this window's bootstrap null.
    pub boot_median: f64,
    pub p_value: f64,
    pub flagged: bool,
    /// Set only under the per-window bandwidth policy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Full bootstrap sample; kept in memory, not serialized.
    #[serde(skip)]
    pub boot_stats: Vec<f64>,
}

impl WindowResult {
    /// 0-based half-open row range covered by this window.
    pub fn rows(&self) -> Range<usize> {
        self.start_index - 1..self.t_index
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub config: ScanConfig,
    /// Mini-batch staging applied to both inputs before scanning, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<BatchConfig>,
    /// Bandwidth shared by every window; `None` for the linear kernel and the
    /// per-window policy.
    pub bandwidth_used: Option<f64>,
    pub reference_rows: usize,
    pub target_rows: usize,
    /// Rows scanned on each side, `min(reference_rows, target_rows)`.
    pub scanned_rows: usize,
    /// True when the longer input was cut to `scanned_rows`.
    pub truncated: bool,
    pub windows: Vec<WindowResult>,
    /// Mean observed MMD² over all windows.
    pub summary_score: f64,
    /// Median observed MMD² over all windows.
    pub summary_median: f64,
    /// Mean of the per-window bootstrap medians.
    pub null_median_mean: f64,
    /// Median of the per-window bootstrap medians.
    pub null_median_median: f64,
    /// `t_index` of the first window attaining the largest observed MMD².
    pub argmax_index: usize,
    pub cause_reference: [usize; 2],
    pub cause_target: [usize; 2],
}

impl DriftReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| DriftError::Format {
            line: e.line(),
            message: format!("invalid drift report: {e}"),
        })
    }

    /// Plot-friendly window series.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("t_index,observed_sq,boot_median,p_value\n");
        for w in &self.windows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                w.t_index, w.observed_sq, w.boot_median, w.p_value
            ));
        }
        out
    }

    pub fn observed_series(&self) -> Vec<f64> {
        self.windows.iter().map(|w| w.observed_sq).collect()
    }

    pub fn flagged_count(&self) -> usize {
        self.windows.iter().filter(|w| w.flagged).count()
    }

    pub fn cause_target_rows(&self) -> Range<usize> {
        self.cause_target[0]..self.cause_target[1]
    }

    pub fn cause_reference_rows(&self) -> Range<usize> {
        self.cause_reference[0]..self.cause_reference[1]
    }
}

/// Number of windows a scan over `m` rows produces.
pub fn window_count(m: usize, window: usize, stride: usize) -> usize {
    if m < window || stride == 0 {
        0
    } else {
        (m - window) / stride + 1
    }
}

pub fn drift_scan(pair: &DatasetPair, config: &ScanConfig) -> Result<DriftReport> {
    config.validate()?;
    let (reference, target) = (&pair.reference, &pair.target);
    let m = reference.rows().min(target.rows());
    if m < config.window {
        return Err(DriftError::InsufficientRows {
            needed: config.window,
            available: m,
        });
    }
    let count = window_count(m, config.window, config.stride);
    if count == 0 {
        return Err(DriftError::InvalidConfig("no windows to scan".into()));
    }

    let shared_kernel = match config.kernel.bandwidth_policy {
        BandwidthPolicy::MedianHeuristicPerWindow => None,
        _ => Some(config.kernel.resolve(&combine_under_null(reference, target)?)?),
    };

    let beta = config.window;
    let policy = RngPolicy::new(config.seed);
    let windows = (0..count)
        .into_par_iter()
        .map(|w| {
            let t = beta + w * config.stride;
            let q1 = reference.slice_rows(t - beta..t);
            let q2 = target.slice_rows(t - beta..t);
            let pooled = combine_under_null(&q1, &q2)?;
            let kernel = match shared_kernel {
                Some(k) => k,
                None => config.kernel.resolve(&pooled)?,
            };
            evaluate_window(&kernel, &q1, &q2, &pooled, t, w as u64, policy, config)
                .map(|mut r| {
                    if shared_kernel.is_none() {
                        r.bandwidth = kernel.bandwidth;
                    }
                    r
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let observed: Vec<f64> = windows.iter().map(|w| w.observed_sq).collect();
    let medians: Vec<f64> = windows.iter().map(|w| w.boot_median).collect();
    let best = windows
        .iter()
        .enumerate()
        .fold(0, |best, (i, w)| if w.observed_sq > windows[best].observed_sq { i } else { best });
    let z = windows[best].t_index;
    let cause = [z - beta, z];

    Ok(DriftReport {
        config: *config,
        batch: None,
        bandwidth_used: shared_kernel.and_then(|k| k.bandwidth),
        reference_rows: reference.rows(),
        target_rows: target.rows(),
        scanned_rows: m,
        truncated: reference.rows() != target.rows(),
        summary_score: pairwise_sum(&observed) / count as f64,
        summary_median: median(&observed).expect("at least one window"),
        null_median_mean: pairwise_sum(&medians) / count as f64,
        null_median_median: median(&medians).expect("at least one window"),
        argmax_index: z,
        cause_reference: cause,
        cause_target: cause,
        windows,
    })
}

#[allow(clippy::too_many_arguments)]
fn evaluate_window(
    kernel: &ResolvedKernel,
    q1: &EmbeddingMatrix,
    q2: &EmbeddingMatrix,
    pooled: &EmbeddingMatrix,
    t: usize,
    window_ordinal: u64,
    policy: RngPolicy,
    config: &ScanConfig,
) -> Result<WindowResult> {
    let est = mmd_with_kernel(kernel, q1, q2, config.estimator)?;
    let boot = bootstrap_with_kernel(
        kernel,
        pooled,
        config.window,
        config.bootstraps,
        StreamKey {
            policy,
            index: window_ordinal,
        },
        config.split,
        config.estimator,
        est.squared,
    )?;
    Ok(WindowResult {
        t_index: t,
        start_index: t - config.window + 1,
        observed_sq: est.squared,
        observed: est.value,
        boot_median: boot.median,
        p_value: boot.p_value,
        flagged: boot.p_value <= config.alpha,
        bandwidth: None,
        boot_stats: boot.stats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Reference,
    #[default]
    Target,
    Both,
}

/// Rows of the highest-drift window, per requested side.
#[derive(Debug, Clone, PartialEq)]
pub struct CauseSamples {
    pub reference: Option<EmbeddingMatrix>,
    pub target: Option<EmbeddingMatrix>,
}

pub fn extract_cause_samples(
    pair: &DatasetPair,
    report: &DriftReport,
    which: Side,
) -> Result<CauseSamples> {
    if pair.reference.rows() != report.reference_rows || pair.target.rows() != report.target_rows {
        return Err(DriftError::ReportMismatch(format!(
            "report was produced for {}/{} rows, dataset has {}/{}",
            report.reference_rows,
            report.target_rows,
            pair.reference.rows(),
            pair.target.rows()
        )));
    }
    let take = |m: &EmbeddingMatrix, range: Range<usize>| {
        if range.start > range.end || range.end > m.rows() {
            Err(DriftError::ReportMismatch(format!(
                "cause range {range:?} outside {} rows",
                m.rows()
            )))
        } else {
            Ok(m.slice_rows(range))
        }
    };
    let want_ref = matches!(which, Side::Reference | Side::Both);
    let want_tgt = matches!(which, Side::Target | Side::Both);
    Ok(CauseSamples {
        reference: want_ref
            .then(|| take(&pair.reference, report.cause_reference_rows()))
            .transpose()?,
        target: want_tgt
            .then(|| take(&pair.target, report.cause_target_rows()))
            .transpose()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn gaussian(rows: usize, dims: usize, seed: u64) -> EmbeddingMatrix {
        let mut rng = RngPolicy::new(seed).stream("scan-test", 0, 0);
        let data = (0..rows * dims)
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        EmbeddingMatrix::new(rows, dims, data).unwrap()
    }

    fn small_config() -> ScanConfig {
        ScanConfig {
            window: 8,
            bootstraps: 20,
            seed: 3,
            ..ScanConfig::default()
        }
    }

    #[test]
    fn identical_inputs_are_quiet() {
        let m = gaussian(40, 3, 1);
        let pair = DatasetPair::new(m.clone(), m).unwrap();
        let r = drift_scan(&pair, &small_config()).unwrap();
        assert_eq!(r.windows.len(), 33);
        for w in &r.windows {
            assert_eq!(w.observed_sq, 0.0);
            assert_eq!(w.p_value, 1.0);
            assert!(!w.flagged);
        }
        assert_eq!(r.summary_score, 0.0);
        assert!(r.null_median_mean > 0.0);
        assert_eq!(r.argmax_index, 8);
        assert_eq!(r.cause_target, [0, 8]);
    }

    #[test]
    fn window_geometry() {
        let pair = DatasetPair::new(gaussian(30, 2, 1), gaussian(27, 2, 2)).unwrap();
        let cfg = ScanConfig {
            stride: 4,
            ..small_config()
        };
        let r = drift_scan(&pair, &cfg).unwrap();
        assert!(r.truncated);
        assert_eq!(r.scanned_rows, 27);
        assert_eq!(r.windows.len(), window_count(27, 8, 4));
        assert_eq!(r.windows.len(), (27 - 8) / 4 + 1);
        for (i, w) in r.windows.iter().enumerate() {
            assert_eq!(w.t_index, 8 + 4 * i);
            assert_eq!(w.t_index - w.start_index + 1, 8);
            assert_eq!(w.rows().len(), 8);
        }
        assert_eq!(r.cause_target[1], r.argmax_index);
        assert_eq!(r.cause_target[1] - r.cause_target[0], 8);
    }

    #[test]
    fn argmax_takes_first_on_ties() {
        // Linear kernel on a constant shift: every window has the same MMD².
        let a = EmbeddingMatrix::new(12, 1, vec![0.0; 12]).unwrap();
        let b = EmbeddingMatrix::new(12, 1, vec![2.0; 12]).unwrap();
        let pair = DatasetPair::new(a, b).unwrap();
        let cfg = ScanConfig {
            window: 4,
            kernel: KernelSpec::linear(),
            ..small_config()
        };
        let r = drift_scan(&pair, &cfg).unwrap();
        assert!(r.windows.iter().all(|w| w.observed_sq == 4.0));
        assert_eq!(r.argmax_index, 4);
        assert_eq!(r.bandwidth_used, None);
    }

    #[test]
    fn errors_on_short_inputs_and_bad_config() {
        let pair = DatasetPair::new(gaussian(5, 2, 1), gaussian(9, 2, 2)).unwrap();
        assert!(matches!(
            drift_scan(&pair, &small_config()),
            Err(DriftError::InsufficientRows { needed: 8, available: 5 })
        ));
        let pair = DatasetPair::new(gaussian(20, 2, 1), gaussian(20, 2, 2)).unwrap();
        for cfg in [
            ScanConfig { window: 1, ..small_config() },
            ScanConfig { bootstraps: 0, ..small_config() },
            ScanConfig { stride: 0, ..small_config() },
            ScanConfig { alpha: 1.0, ..small_config() },
            ScanConfig {
                window: 2,
                split: SplitPolicy::LiteralQuarter,
                estimator: Estimator::Unbiased,
                ..small_config()
            },
        ] {
            assert!(matches!(drift_scan(&pair, &cfg), Err(DriftError::InvalidConfig(_))));
        }
    }

    #[test]
    fn per_window_bandwidth_recorded() {
        let pair = DatasetPair::new(gaussian(12, 2, 1), gaussian(12, 2, 2)).unwrap();
        let cfg = ScanConfig {
            kernel: KernelSpec::rbf(BandwidthPolicy::MedianHeuristicPerWindow).unwrap(),
            ..small_config()
        };
        let r = drift_scan(&pair, &cfg).unwrap();
        assert_eq!(r.bandwidth_used, None);
        assert!(r.windows.iter().all(|w| w.bandwidth.is_some_and(|h| h > 0.0)));
    }

    #[test]
    fn json_round_trip_and_csv() {
        let pair = DatasetPair::new(gaussian(20, 2, 1), gaussian(20, 2, 2)).unwrap();
        let r = drift_scan(&pair, &small_config()).unwrap();
        let json = r.to_json();
        let back = DriftReport::from_json(&json).unwrap();
        assert_eq!(back.to_json(), json);
        let csv = r.series_csv();
        assert!(csv.starts_with("t_index,observed_sq,boot_median,p_value\n"));
        assert_eq!(csv.lines().count(), r.windows.len() + 1);
    }

    #[test]
    fn extraction_boundaries() {
        let pair = DatasetPair::new(gaussian(20, 2, 1), gaussian(20, 2, 2)).unwrap();
        let mut r = drift_scan(&pair, &small_config()).unwrap();
        r.cause_reference = [0, 8];
        r.cause_target = [0, 8];
        let both = extract_cause_samples(&pair, &r, Side::Both).unwrap();
        assert_eq!(both.reference.unwrap(), pair.reference.slice_rows(0..8));
        assert_eq!(both.target.unwrap(), pair.target.slice_rows(0..8));
        let only = extract_cause_samples(&pair, &r, Side::Target).unwrap();
        assert!(only.reference.is_none());

        let other = DatasetPair::new(gaussian(21, 2, 1), gaussian(20, 2, 2)).unwrap();
        assert!(extract_cause_samples(&other, &r, Side::Target).is_err());
    }
}
