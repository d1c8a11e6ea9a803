//! Synthetic embeddings and experiment drivers.
//!
//! Two-class isotropic Gaussian mixtures stand in for encoder output. The
//! studies here run the full prep + scan pipeline on them:
//!
//! * [`ratio_drift_study`]: the reference holds both classes in equal
//!   proportion; targets vary the positive-class fraction.
//! * [`correlation_study`]: a sequence of buckets drifts progressively away
//!   from the reference while a fixed classifier is scored on each, relating
//!   drift to AUC and BCE.
//! * [`null_calibration`]: repeated single-window tests on same-distribution
//!   data, giving the empirical false-positive rate.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::matrix::{DatasetPair, EmbeddingMatrix};
use crate::prep::{stage_pair, BatchConfig};
use crate::scan::{drift_scan, DriftReport, ScanConfig};
use crate::rng::RngPolicy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMixtureSpec {
    pub dims: usize,
    pub positive_mean: Vec<f64>,
    pub negative_mean: Vec<f64>,
    /// Shared isotropic standard deviation.
    pub scale: f64,
    pub positive_fraction: f64,
    pub n: usize,
    pub seed: u64,
}

impl ClassMixtureSpec {
    /// Negative class at the origin, positive class `separation` away along
    /// the first axis.
    pub fn separated(dims: usize, separation: f64, scale: f64, positive_fraction: f64, n: usize, seed: u64) -> Self {
        let mut positive_mean = vec![0.0; dims];
        if let Some(first) = positive_mean.first_mut() {
            *first = separation;
        }
        ClassMixtureSpec {
            dims,
            positive_mean,
            negative_mean: vec![0.0; dims],
            scale,
            positive_fraction,
            n,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DriftError::InvalidConfig(m));
        if self.dims == 0 {
            return bad("mixture dims must be at least 1".into());
        }
        if self.positive_mean.len() != self.dims || self.negative_mean.len() != self.dims {
            return bad("class means must have length dims".into());
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad(format!("scale must be positive, got {}", self.scale));
        }
        if !(0.0..=1.0).contains(&self.positive_fraction) {
            return bad(format!(
                "positive fraction must lie in [0, 1], got {}",
                self.positive_fraction
            ));
        }
        Ok(())
    }

    pub fn positive_count(&self) -> usize {
        ((self.n as f64 * self.positive_fraction + 0.5).floor() as usize).min(self.n)
    }
}

/// Rows plus their class labels (1 = positive).
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub matrix: EmbeddingMatrix,
    pub labels: Vec<u8>,
}

pub fn generate_labeled(spec: &ClassMixtureSpec) -> Result<LabeledSample> {
    spec.validate()?;
    let mut rng = RngPolicy::new(spec.seed).stream("mixture", 0, 0);
    let positives = spec.positive_count();
    let mut rows: Vec<(Vec<f64>, u8)> = (0..spec.n)
        .map(|i| {
            let (mean, label) = if i < positives {
                (&spec.positive_mean, 1)
            } else {
                (&spec.negative_mean, 0)
            };
            let row = mean
                .iter()
                .map(|m| m + spec.scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            (row, label)
        })
        .collect();
    rows.shuffle(&mut rng);
    let labels = rows.iter().map(|(_, l)| *l).collect();
    let data = rows.into_iter().flat_map(|(r, _)| r).collect();
    Ok(LabeledSample {
        matrix: EmbeddingMatrix::new(spec.n, spec.dims, data)?,
        labels,
    })
}

pub fn generate_mixture(spec: &ClassMixtureSpec) -> Result<EmbeddingMatrix> {
    Ok(generate_labeled(spec)?.matrix)
}

/// `n x dims` standard normal rows, offset by `shift` on the first axis.
pub fn gaussian_matrix(n: usize, dims: usize, shift: f64, seed: u64) -> Result<EmbeddingMatrix> {
    let mut rng = RngPolicy::new(seed).stream("gaussian", 0, 0);
    let data = (0..n * dims)
        .map(|i| {
            let z: f64 = rng.sample(StandardNormal);
            if i % dims == 0 {
                z + shift
            } else {
                z
            }
        })
        .collect();
    EmbeddingMatrix::new(n, dims, data)
}

fn staged_scan(
    reference: &EmbeddingMatrix,
    target: &EmbeddingMatrix,
    batch: Option<&BatchConfig>,
    scan: &ScanConfig,
) -> Result<DriftReport> {
    let pair = DatasetPair::new(reference.clone(), target.clone())?;
    match batch {
        Some(b) => {
            let mut report = drift_scan(&stage_pair(&pair, b)?, scan)?;
            report.batch = Some(*b);
            Ok(report)
        }
        None => drift_scan(&pair, scan),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub fraction: f64,
    pub summary_score: f64,
    pub summary_median: f64,
    pub null_median_mean: f64,
    pub flagged_fraction: f64,
}

/// Reference at positive fraction 0.5 against targets at each of `fractions`.
///
/// `base` supplies the geometry, size and seed; its own fraction is ignored.
/// Each target gets a seed derived from `base.seed` and its position in
/// `fractions`. When `batch` is set both sides are reduced to mini-batch means
/// before scanning.
pub fn ratio_drift_study(
    base: &ClassMixtureSpec,
    fractions: &[f64],
    scan: &ScanConfig,
    batch: Option<&BatchConfig>,
) -> Result<Vec<RatioRow>> {
    if fractions.is_empty() {
        return Err(DriftError::InvalidConfig("no fractions given".into()));
    }
    let policy = RngPolicy::new(base.seed);
    let reference = generate_mixture(&ClassMixtureSpec {
        positive_fraction: 0.5,
        seed: policy.derive_seed("reference", 0, 0),
        ..base.clone()
    })?;
    fractions
        .par_iter()
        .enumerate()
        .map(|(i, &fraction)| {
            let target = generate_mixture(&ClassMixtureSpec {
                positive_fraction: fraction,
                seed: policy.derive_seed("target", i as u64, 0),
                ..base.clone()
            })?;
            let report = staged_scan(&reference, &target, batch, scan)?;
            Ok(RatioRow {
                fraction,
                summary_score: report.summary_score,
                summary_median: report.summary_median,
                null_median_mean: report.null_median_mean,
                flagged_fraction: report.flagged_count() as f64 / report.windows.len() as f64,
            })
        })
        .collect()
}

pub fn ratio_table_csv(rows: &[RatioRow]) -> String {
    let mut out = String::from("fraction,summary_score,summary_median,null_median_mean,flagged_fraction\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.fraction, r.summary_score, r.summary_median, r.null_median_mean, r.flagged_fraction
        ));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftRow {
    pub shift: f64,
    pub summary_score: f64,
    pub null_median_mean: f64,
}

/// Standard normal reference against targets mean-shifted by each of `shifts`
/// (in units of the standard deviation) on the first axis.
pub fn shift_ladder_study(
    n: usize,
    dims: usize,
    shifts: &[f64],
    scan: &ScanConfig,
    seed: u64,
) -> Result<Vec<ShiftRow>> {
    let policy = RngPolicy::new(seed);
    let reference = gaussian_matrix(n, dims, 0.0, policy.derive_seed("reference", 0, 0))?;
    shifts
        .par_iter()
        .enumerate()
        .map(|(i, &shift)| {
            let target = gaussian_matrix(n, dims, shift, policy.derive_seed("target", i as u64, 0))?;
            let report = staged_scan(&reference, &target, None, scan)?;
            Ok(ShiftRow {
                shift,
                summary_score: report.summary_score,
                null_median_mean: report.null_median_mean,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationTrial {
    pub report: DriftReport,
    pub injected: std::ops::Range<usize>,
    /// Share of the injected rows covered by the reported cause window.
    pub overlap: f64,
}

/// Standard normal reference and target, with target rows `injected` shifted
/// by `shift` standard deviations on the first axis.
pub fn localization_trial(
    n: usize,
    dims: usize,
    injected: std::ops::Range<usize>,
    shift: f64,
    scan: &ScanConfig,
    seed: u64,
) -> Result<LocalizationTrial> {
    if injected.end > n || injected.is_empty() {
        return Err(DriftError::InvalidConfig(format!(
            "injected range {injected:?} must be non-empty and inside {n} rows"
        )));
    }
    let policy = RngPolicy::new(seed);
    let reference = gaussian_matrix(n, dims, 0.0, policy.derive_seed("reference", 0, 0))?;
    let clean = gaussian_matrix(n, dims, 0.0, policy.derive_seed("target", 0, 0))?;
    let mut data = clean.as_slice().to_vec();
    for r in injected.clone() {
        data[r * dims] += shift;
    }
    let target = EmbeddingMatrix::new(n, dims, data)?;
    let report = drift_scan(&DatasetPair::new(reference, target)?, scan)?;
    let cause = report.cause_target_rows();
    let covered = cause.start.max(injected.start)..cause.end.min(injected.end);
    let overlap = covered.len() as f64 / injected.len() as f64;
    Ok(LocalizationTrial {
        report,
        injected,
        overlap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOutcome {
    pub trials: usize,
    pub rejections: usize,
    pub rate: f64,
    pub alpha: f64,
}

/// Repeated single-window tests with reference and target both drawn from a
/// standard normal. Each trial draws `n` rows per side; the bandwidth policy
/// resolves over those, and the test uses the first `scan.window` rows.
pub fn null_calibration(
    trials: usize,
    n: usize,
    dims: usize,
    scan: &ScanConfig,
) -> Result<CalibrationOutcome> {
    if trials == 0 {
        return Err(DriftError::InvalidConfig("trials must be at least 1".into()));
    }
    let policy = RngPolicy::new(scan.seed);
    let rejections = (0..trials)
        .into_par_iter()
        .map(|i| {
            let i = i as u64;
            let reference = gaussian_matrix(n, dims, 0.0, policy.derive_seed("calib-ref", i, 0))?;
            let target = gaussian_matrix(n, dims, 0.0, policy.derive_seed("calib-target", i, 0))?;
            let cfg = ScanConfig {
                stride: n.max(1),
                seed: policy.derive_seed("calib-scan", i, 0),
                ..*scan
            };
            let report = drift_scan(&DatasetPair::new(reference, target)?, &cfg)?;
            Ok(usize::from(report.windows[0].flagged))
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum::<usize>();
    Ok(CalibrationOutcome {
        trials,
        rejections,
        rate: rejections as f64 / trials as f64,
        alpha: scan.alpha,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub bucket_id: usize,
    pub shift: f64,
    pub drift: f64,
    pub bce: f64,
    pub auc: f64,
}

/// Geometry of the correlation study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSetup {
    pub dims: usize,
    /// Distance between the class means, in units of `scale`.
    pub separation: f64,
    pub scale: f64,
    /// Labeled rows drawn per bucket (and for the reference).
    pub rows_per_bucket: usize,
}

impl Default for CorrelationSetup {
    fn default() -> Self {
        CorrelationSetup {
            dims: 8,
            separation: 3.0,
            scale: 1.0,
            rows_per_bucket: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationOutcome {
    pub series: Vec<MetricSeries>,
    /// `NaN` when undefined.
    pub pearson_drift_bce: f64,
    /// `NaN` when undefined.
    pub pearson_drift_auc: f64,
    pub warning: Option<String>,
}

/// Logistic scorer along the class-separating axis, fitted in closed form
/// (linear discriminant) on a labeled reference sample.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisScorer {
    direction: Vec<f64>,
    midpoint: f64,
    slope: f64,
}

impl AxisScorer {
    pub fn fit(sample: &LabeledSample) -> Result<Self> {
        let m = &sample.matrix;
        let split = |label: u8| {
            let idx: Vec<usize> = (0..m.rows()).filter(|&i| sample.labels[i] == label).collect();
            m.select_rows(&idx)
        };
        let (pos, neg) = (split(1), split(0));
        let (Some(mp), Some(mn)) = (pos.mean_row(), neg.mean_row()) else {
            return Err(DriftError::Degenerate("scorer needs both classes".into()));
        };
        let diff: Vec<f64> = mp.iter().zip(&mn).map(|(a, b)| a - b).collect();
        let gap = diff.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gap == 0.0 {
            return Err(DriftError::Degenerate("class means coincide".into()));
        }
        let direction: Vec<f64> = diff.iter().map(|v| v / gap).collect();
        let project = |r: &[f64]| r.iter().zip(&direction).map(|(a, b)| a * b).sum::<f64>();
        let proj_p: f64 = mp.iter().zip(&direction).map(|(a, b)| a * b).sum();
        let proj_n: f64 = mn.iter().zip(&direction).map(|(a, b)| a * b).sum();
        let mut ss = 0.0;
        for (r, &l) in m.iter_rows().zip(&sample.labels) {
            let c = if l == 1 { proj_p } else { proj_n };
            ss += (project(r) - c).powi(2);
        }
        let var = ss / (m.rows().saturating_sub(2).max(1)) as f64;
        Ok(AxisScorer {
            direction,
            midpoint: (proj_p + proj_n) / 2.0,
            slope: gap / var,
        })
    }

    /// Positive-class probability, kept strictly inside (0, 1).
    pub fn score(&self, x: &[f64]) -> f64 {
        let s: f64 = x.iter().zip(&self.direction).map(|(a, b)| a * b).sum();
        let p = 1.0 / (1.0 + (-(self.slope * (s - self.midpoint))).exp());
        p.clamp(1e-12, 1.0 - 1e-12)
    }
}

/// Drift scores and classifier quality over buckets that drift away from a
/// fixed reference.
///
/// In bucket `b` the positive class is displaced by `drift_profile[b] * scale`
/// along the unit direction halfway between "towards the negative class" and
/// an axis orthogonal to the class axis, so larger displacements both move the
/// distribution and erode class separation.
pub fn correlation_study(
    setup: &CorrelationSetup,
    drift_profile: &[f64],
    scan: &ScanConfig,
    seed: u64,
) -> Result<CorrelationOutcome> {
    if drift_profile.is_empty() {
        return Err(DriftError::InvalidConfig("drift profile is empty".into()));
    }
    if setup.dims < 2 {
        return Err(DriftError::InvalidConfig("correlation study needs dims >= 2".into()));
    }
    let policy = RngPolicy::new(seed);
    let base = ClassMixtureSpec::separated(
        setup.dims,
        setup.separation * setup.scale,
        setup.scale,
        0.5,
        setup.rows_per_bucket,
        policy.derive_seed("reference", 0, 0),
    );
    let reference = generate_labeled(&base)?;
    let scorer = AxisScorer::fit(&reference)?;

    let series = drift_profile
        .par_iter()
        .enumerate()
        .map(|(b, &shift)| {
            let step = shift * setup.scale / std::f64::consts::SQRT_2;
            let mut positive_mean = base.positive_mean.clone();
            positive_mean[0] -= step;
            positive_mean[1] += step;
            let bucket = generate_labeled(&ClassMixtureSpec {
                positive_mean,
                seed: policy.derive_seed("bucket", b as u64, 0),
                ..base.clone()
            })?;
            let report = drift_scan(
                &DatasetPair::new(reference.matrix.clone(), bucket.matrix.clone())?,
                &ScanConfig {
                    seed: policy.derive_seed("bucket-scan", b as u64, 0),
                    ..*scan
                },
            )?;
            let scores: Vec<f64> = bucket.matrix.iter_rows().map(|r| scorer.score(r)).collect();
            Ok(MetricSeries {
                bucket_id: b,
                shift,
                drift: report.summary_score,
                bce: bce(&scores, &bucket.labels)?,
                auc: auc(&scores, &bucket.labels)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let drift: Vec<f64> = series.iter().map(|s| s.drift).collect();
    let constant_profile = drift_profile.iter().all(|&s| s == drift_profile[0]);
    let (r_bce, r_auc, warning) = if series.len() < 2 {
        (f64::NAN, f64::NAN, Some("correlation undefined for a single bucket".to_string()))
    } else if constant_profile {
        (
            f64::NAN,
            f64::NAN,
            Some("drift profile is constant; correlation undefined".to_string()),
        )
    } else {
        let bces: Vec<f64> = series.iter().map(|s| s.bce).collect();
        let aucs: Vec<f64> = series.iter().map(|s| s.auc).collect();
        let r_bce = pearson(&drift, &bces)?;
        let r_auc = pearson(&drift, &aucs)?;
        let warning = (r_bce.is_nan() || r_auc.is_nan())
            .then(|| "zero variance in a series; correlation undefined".to_string());
        (r_bce, r_auc, warning)
    };
    Ok(CorrelationOutcome {
        series,
        pearson_drift_bce: r_bce,
        pearson_drift_auc: r_auc,
        warning,
    })
}

pub fn correlation_table_csv(outcome: &CorrelationOutcome) -> String {
    let mut out = String::from("bucket_id,shift,drift,bce,auc\n");
    for s in &outcome.series {
        out.push_str(&format!("{},{},{},{},{}\n", s.bucket_id, s.shift, s.drift, s.bce, s.auc));
    }
    out
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(DriftError::InvalidConfig(format!("length mismatch: {a} vs {b}")));
    }
    Ok(())
}

/// Area under the ROC curve via the rank-sum statistic, ties at midranks.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DriftError::Degenerate("auc needs both classes present".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share their mean
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Mean binary cross-entropy; every score must lie strictly inside (0, 1).
pub fn bce(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    if scores.is_empty() {
        return Err(DriftError::Degenerate("bce of an empty sample".into()));
    }
    let mut total = 0.0;
    for (&p, &y) in scores.iter().zip(labels) {
        if !(p > 0.0 && p < 1.0) {
            return Err(DriftError::InvalidConfig(format!("score {p} outside (0, 1)")));
        }
        total -= if y == 1 { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(total / scores.len() as f64)
}

/// Pearson correlation. `NaN` when fewer than two points or either series
/// has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_lengths(x.len(), y.len())?;
    let n = x.len();
    if n < 2 {
        return Ok(f64::NAN);
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(f64::NAN);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
