//! Kernels and bandwidth selection.

use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::matrix::{check_dims, EmbeddingMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// Gaussian kernel `exp(-|x - y|^2 / (2 h^2))`.
    Rbf,
    /// Inner product `<x, y>`.
    Linear,
}

/// How the RBF bandwidth is chosen. Ignored by the linear kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthPolicy {
    /// Median pairwise distance over all reference and target rows, computed
    /// once before scanning.
    MedianHeuristicGlobal,
    /// Median pairwise distance over the pooled rows of each window.
    MedianHeuristicPerWindow,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth_policy: BandwidthPolicy,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            family: KernelFamily::Rbf,
            bandwidth_policy: BandwidthPolicy::MedianHeuristicGlobal,
        }
    }
}

impl KernelSpec {
    pub fn rbf(bandwidth_policy: BandwidthPolicy) -> Result<Self> {
        let spec = KernelSpec {
            family: KernelFamily::Rbf,
            bandwidth_policy,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn rbf_fixed(bandwidth: f64) -> Result<Self> {
        Self::rbf(BandwidthPolicy::Fixed(bandwidth))
    }

    pub fn linear() -> Self {
        KernelSpec {
            family: KernelFamily::Linear,
            bandwidth_policy: BandwidthPolicy::MedianHeuristicGlobal,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let BandwidthPolicy::Fixed(h) = self.bandwidth_policy {
            if !(h.is_finite() && h > 0.0) {
                return Err(DriftError::InvalidConfig(format!(
                    "fixed bandwidth must be positive and finite, got {h}"
                )));
            }
        }
        Ok(())
    }

    /// Resolve the bandwidth policy against `samples`. Both median policies
    /// compute the heuristic over `samples`; callers decide which rows to pass.
    pub fn resolve(&self, samples: &EmbeddingMatrix) -> Result<ResolvedKernel> {
        self.validate()?;
        let bandwidth = match (self.family, self.bandwidth_policy) {
            (KernelFamily::Linear, _) => None,
            (KernelFamily::Rbf, BandwidthPolicy::Fixed(h)) => Some(h),
            (KernelFamily::Rbf, _) => Some(median_heuristic_bandwidth(samples)?),
        };
        Ok(ResolvedKernel {
            family: self.family,
            bandwidth,
        })
    }
}

/// A kernel with its bandwidth fixed; cheap to copy into worker threads.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResolvedKernel {
    pub family: KernelFamily,
    pub bandwidth: Option<f64>,
}

impl ResolvedKernel {
    pub fn rbf(bandwidth: f64) -> Self {
        ResolvedKernel {
            family: KernelFamily::Rbf,
            bandwidth: Some(bandwidth),
        }
    }

    pub fn linear() -> Self {
        ResolvedKernel {
            family: KernelFamily::Linear,
            bandwidth: None,
        }
    }

    /// Freeze this kernel back into a spec with a fixed bandwidth.
    pub fn as_spec(&self) -> KernelSpec {
        match (self.family, self.bandwidth) {
            (KernelFamily::Rbf, Some(h)) => KernelSpec {
                family: KernelFamily::Rbf,
                bandwidth_policy: BandwidthPolicy::Fixed(h),
            },
            _ => KernelSpec::linear(),
        }
    }

    #[inline]
    pub(crate) fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self.family {
            KernelFamily::Rbf => {
                let h = self.bandwidth.expect("rbf kernel without bandwidth");
                (-squared_distance(x, y) / (2.0 * h * h)).exp()
            }
            KernelFamily::Linear => dot(x, y),
        }
    }

    /// Symmetric Gram matrix of `m` in row-major order. Entries below the
    /// diagonal are copies of those above, so the matrix is exactly symmetric.
    pub fn gram(&self, m: &EmbeddingMatrix) -> Vec<f64> {
        let n = m.rows();
        let mut g = vec![0.0; n * n];
        for i in 0..n {
            let xi = m.row(i);
            for j in i..n {
                let v = self.eval(xi, m.row(j));
                g[i * n + j] = v;
                g[j * n + i] = v;
            }
        }
        g
    }
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| a * b).sum()
}

/// Evaluate the kernel on a single pair of vectors. `bandwidth` is the
/// already-resolved RBF bandwidth and is ignored for the linear kernel.
pub fn kernel_value(spec: &KernelSpec, bandwidth: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    check_dims(x.len(), y.len())?;
    let k = match spec.family {
        KernelFamily::Linear => ResolvedKernel::linear(),
        KernelFamily::Rbf => {
            if !(bandwidth.is_finite() && bandwidth > 0.0) {
                return Err(DriftError::InvalidConfig(format!(
                    "bandwidth must be positive and finite, got {bandwidth}"
                )));
            }
            ResolvedKernel::rbf(bandwidth)
        }
    };
    Ok(k.eval(x, y))
}

/// Median of the Euclidean distances over all index pairs `i < j`.
///
/// With an even number of pairs the lower of the two middle values is
/// returned. Fails when fewer than two rows are given or when the median is
/// zero (for example every row identical), since the result is used as an RBF
/// bandwidth.
pub fn median_heuristic_bandwidth(samples: &EmbeddingMatrix) -> Result<f64> {
    let n = samples.rows();
    if n < 2 {
        return Err(DriftError::Degenerate(format!(
            "median heuristic needs at least 2 rows, got {n}"
        )));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        let xi = samples.row(i);
        for j in (i + 1)..n {
            dists.push(squared_distance(xi, samples.row(j)).sqrt());
        }
    }
    let mid = (dists.len() - 1) / 2;
    let (_, median, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if median > 0.0 {
        Ok(median)
    } else {
        Err(DriftError::Degenerate(
            "median pairwise distance is zero; use a fixed bandwidth".into(),
        ))
    }
}
