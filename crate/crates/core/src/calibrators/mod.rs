//! Post-hoc calibrators.
//!
//! * [`consistency`]: Consistency Calibration, which replaces each row's
//!   softmax with the frequency of argmax votes over noise-perturbed copies
//!   of its logits (or, for the ablation, the mean softmax over the same
//!   copies).
//! * [`temperature`]: temperature scaling, the single-parameter baseline.
//! * [`diagnose`]: logit-gap statistics of highly confident predictions.

pub mod consistency;
pub mod diagnose;
pub mod temperature;

use thiserror::Error;

pub use consistency::{
    cc_calibrate, cc_local_report, consistency_votes, Aggregation, ConsistencyConfig, LocalReport,
    NoiseKind, NoiseSpec,
};
pub use diagnose::{diagnose_logit_gap, FiveNumberSummary, GapGroup, GapReport};
pub use temperature::{ts_apply, ts_fit, Temperature};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibError {
    #[error("noise strength must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("number of perturbations must be at least 1")]
    InvalidPerturbationCount,
    #[error("temperature {0} outside [0.01, 100]")]
    InvalidTemperature(f64),
    #[error("row {row} out of range for {n_samples} samples")]
    IndexOutOfRange { row: usize, n_samples: usize },
    #[error("confidence threshold must lie in (0, 1), got {0}")]
    InvalidThreshold(f64),
}
