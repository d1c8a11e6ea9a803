//! Shuffling and mini-batch mean reduction applied before scanning.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{DriftError, Result};
use crate::matrix::{DatasetPair, EmbeddingMatrix};
use crate::rng::RngPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailPolicy {
    /// Discard a final block shorter than `batch_size`.
    #[default]
    Drop,
    /// Average a short final block as well.
    KeepPartial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchConfig {
    pub batch_size: usize,
    pub shuffle: bool,
    pub seed: u64,
    pub tail: TailPolicy,
}

impl Default for BatchConfig {
    fn default() -> Self {
        BatchConfig {
            batch_size: 64,
            shuffle: true,
            seed: 0,
            tail: TailPolicy::Drop,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchOutput {
    pub means: EmbeddingMatrix,
    /// Set when the reduction produced no rows.
    pub warning: Option<String>,
}

/// Row permutation drawn from `seed` (Fisher–Yates over row indices).
pub fn shuffle_rows(m: &EmbeddingMatrix, seed: u64) -> EmbeddingMatrix {
    let mut idx: Vec<usize> = (0..m.rows()).collect();
    idx.shuffle(&mut RngPolicy::new(seed).stream("shuffle", 0, 0));
    m.select_rows(&idx)
}

pub fn batch_means(m: &EmbeddingMatrix, config: &BatchConfig) -> Result<BatchOutput> {
    if config.batch_size == 0 {
        return Err(DriftError::InvalidConfig("batch size must be at least 1".into()));
    }
    if m.is_empty() {
        return Err(DriftError::Degenerate("cannot batch an empty matrix".into()));
    }
    let shuffled;
    let source = if config.shuffle {
        shuffled = shuffle_rows(m, config.seed);
        &shuffled
    } else {
        m
    };

    let d = m.dims();
    let mut data = Vec::new();
    let mut rows = 0;
    for block in source.as_slice().chunks(config.batch_size * d) {
        let len = block.len() / d;
        if len < config.batch_size && config.tail == TailPolicy::Drop {
            break;
        }
        let mut acc = vec![0.0; d];
        for r in block.chunks_exact(d) {
            acc.iter_mut().zip(r).for_each(|(a, v)| *a += v);
        }
        data.extend(acc.into_iter().map(|a| a / len as f64));
        rows += 1;
    }

    let warning = (rows == 0).then(|| {
        format!(
            "batch size {} exceeds {} rows; no complete batch",
            config.batch_size,
            m.rows()
        )
    });
    Ok(BatchOutput {
        means: EmbeddingMatrix::new(rows, d, data)?,
        warning,
    })
}

/// Reduce both sides of `pair` to batch means. The two sides are shuffled
/// with independent seeds derived from `config.seed`.
pub fn stage_pair(pair: &DatasetPair, config: &BatchConfig) -> Result<DatasetPair> {
    let policy = RngPolicy::new(config.seed);
    let side = |m: &EmbeddingMatrix, tag: &str| {
        let cfg = BatchConfig {
            seed: policy.derive_seed(tag, 0, 0),
            ..*config
        };
        batch_means(m, &cfg).map(|out| out.means)
    };
    DatasetPair::new(side(&pair.reference, "reference")?, side(&pair.target, "target")?)
}
