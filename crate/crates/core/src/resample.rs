//! Bootstrap null distribution for the windowed MMD statistic.
//!
//! Under the hypothesis of no drift the two windows are exchangeable, so they
//! are pooled, the pool is resampled with replacement, and the MMD² between
//! two disjoint blocks of the resample is recorded. Repeating this `K` times
//! gives the null sample that the observed statistic is ranked against.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::kernel::{KernelSpec, ResolvedKernel};
use crate::matrix::EmbeddingMatrix;
use crate::mmd::{mmd_from_gram, Estimator, SumScratch};
use crate::rng::RngPolicy;

const BOOTSTRAP_TAG: &str = "bootstrap";

/// How each resample is cut into the two compared blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPolicy {
    /// Two blocks of `window` rows each, the same size as the observed windows.
    #[default]
    PairedHalves,
    /// Two blocks of `window / 2` rows each (rounded down).
    LiteralQuarter,
}

impl SplitPolicy {
    pub fn block_size(self, window: usize) -> usize {
        match self {
            SplitPolicy::PairedHalves => window,
            SplitPolicy::LiteralQuarter => window / 2,
        }
    }

    /// Rows the pooled sample must hold for this policy.
    pub fn required_rows(self, window: usize) -> usize {
        match self {
            SplitPolicy::PairedHalves => 2 * window,
            SplitPolicy::LiteralQuarter => window,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    /// Bootstrapped MMD² values in iteration order.
    pub stats: Vec<f64>,
    pub median: f64,
    /// `(1 + #{stats >= observed}) / (K + 1)`.
    pub p_value: f64,
}

/// Identifies the random stream for one bootstrap run. Iteration `i` draws
/// from `policy.stream("bootstrap", index, i)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub policy: RngPolicy,
    pub index: u64,
}

/// Stack `q1` on top of `q2`.
pub fn combine_under_null(q1: &EmbeddingMatrix, q2: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    q1.concat(q2)
}

/// Order-statistic median; mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

pub fn p_value(stats: &[f64], observed: f64) -> f64 {
    let exceed = stats.iter().filter(|&&s| s >= observed).count();
    (1 + exceed) as f64 / (stats.len() + 1) as f64
}

/// Bootstrap the null distribution of MMD² over the pooled sample `t`.
///
/// `window` is the per-side window size β of the observed statistic; the
/// compared block size follows from `split`. Median bandwidth policies are
/// resolved over `t`.
#[allow(clippy::too_many_arguments)]
pub fn bootstrap_null(
    spec: &KernelSpec,
    t: &EmbeddingMatrix,
    window: usize,
    k: usize,
    stream: StreamKey,
    split: SplitPolicy,
    estimator: Estimator,
    observed: f64,
) -> Result<BootstrapResult> {
    check_request(t, window, k, split, estimator)?;
    let kernel = spec.resolve(t)?;
    bootstrap_with_kernel(&kernel, t, window, k, stream, split, estimator, observed)
}

fn check_request(
    t: &EmbeddingMatrix,
    window: usize,
    k: usize,
    split: SplitPolicy,
    estimator: Estimator,
) -> Result<()> {
    if k == 0 {
        return Err(DriftError::InvalidConfig("bootstrap count must be at least 1".into()));
    }
    let block = split.block_size(window);
    if block < estimator.min_rows() {
        return Err(DriftError::InvalidConfig(format!(
            "window {window} gives bootstrap blocks of {block} rows; \
             the {estimator:?} estimator needs at least {}",
            estimator.min_rows()
        )));
    }
    let needed = split.required_rows(window);
    if t.rows() < needed {
        return Err(DriftError::InsufficientRows {
            needed,
            available: t.rows(),
        });
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn bootstrap_with_kernel(
    kernel: &ResolvedKernel,
    t: &EmbeddingMatrix,
    window: usize,
    k: usize,
    stream: StreamKey,
    split: SplitPolicy,
    estimator: Estimator,
    observed: f64,
) -> Result<BootstrapResult> {
    check_request(t, window, k, split, estimator)?;
    let n = t.rows();
    let block = split.block_size(window);
    let gram = kernel.gram(t);

    let stats: Vec<f64> = (0..k)
        .into_par_iter()
        .map_init(
            || (SumScratch::default(), vec![0usize; n]),
            |(scratch, draw), i| {
                let mut rng = stream.policy.stream(BOOTSTRAP_TAG, stream.index, i as u64);
                for d in draw.iter_mut() {
                    *d = rng.random_range(0..n);
                }
                mmd_from_gram(
                    &gram,
                    n,
                    &draw[..block],
                    &draw[block..2 * block],
                    estimator,
                    scratch,
                )
            },
        )
        .collect();

    let median = median(&stats).expect("k >= 1");
    let p_value = p_value(&stats, observed);
    Ok(BootstrapResult {
        stats,
        median,
        p_value,
    })
}
