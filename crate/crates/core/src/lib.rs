//! Drift detection between a reference and a target set of embedding vectors.
//!
//! The scan slides a window of β rows over both sets, measures the maximum
//! mean discrepancy (MMD) between the two windows with a kernel two-sample
//! statistic, and ranks it against a bootstrap null built by pooling the
//! windows and resampling with replacement. The window with the largest
//! discrepancy is returned as the sample most responsible for the drift.
//!
//! ```
//! use mmd_drift::{drift_scan, DatasetPair, ScanConfig};
//! use mmd_drift::sim::gaussian_matrix;
//!
//! let reference = gaussian_matrix(80, 4, 0.0, 1).unwrap();
//! let target = gaussian_matrix(80, 4, 2.0, 2).unwrap();
//! let pair = DatasetPair::new(reference, target).unwrap();
//! let config = ScanConfig { window: 16, bootstraps: 20, stride: 8, ..ScanConfig::default() };
//! let report = drift_scan(&pair, &config).unwrap();
//! assert!(report.windows.iter().all(|w| w.flagged));
//! ```

pub mod cli;
pub mod error;
pub mod kernel;
pub mod matrix;
pub mod mmd;
pub mod prep;
pub mod resample;
pub mod rng;
pub mod scan;
pub mod sim;

pub use error::{DriftError, Result};
pub use kernel::{kernel_value, median_heuristic_bandwidth, BandwidthPolicy, KernelFamily, KernelSpec};
pub use matrix::{load_embeddings, save_embeddings, DatasetPair, EmbeddingMatrix, FileFormat};
pub use mmd::{mmd, mmd_oracle, Estimator, MmdEstimate};
pub use prep::{batch_means, shuffle_rows, BatchConfig, TailPolicy};
pub use resample::{bootstrap_null, combine_under_null, BootstrapResult, SplitPolicy, StreamKey};
pub use rng::RngPolicy;
pub use scan::{drift_scan, extract_cause_samples, DriftReport, ScanConfig, Side, WindowResult};
