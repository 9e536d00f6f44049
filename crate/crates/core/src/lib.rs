//! Classifier calibration toolkit.
//!
//! Measures calibration (ECE, adaptive ECE, classwise ECE, NLL, accuracy)
//! and recalibrates logits post hoc, either with temperature scaling or
//! with Consistency Calibration: a row's confidence in class `k` becomes
//! the fraction of noise-perturbed copies of its logits whose argmax is `k`.
//!
//! ```
//! use cocal::calibrators::{cc_calibrate, ConsistencyConfig, NoiseSpec};
//! use cocal::data::LogitSet;
//! use cocal::metrics::softmax;
//!
//! let set = LogitSet::from_rows(&[vec![4.0, 3.9, 0.0]], vec![1]).unwrap();
//! let cfg = ConsistencyConfig::new(NoiseSpec::gaussian(1.0).unwrap(), 1000).unwrap();
//! let calibrated = cc_calibrate(&set, &cfg);
//! // the two leading classes are almost tied, so votes split between them
//! assert!(calibrated.row(0)[0] < 0.6);
//! assert!(softmax(&set).row(0)[0] < 0.6);
//! ```
//!
//! The guide in `book/` walks through each module; its code listings are
//! compiled and run as doc-tests of this crate.

pub mod calibrators;
pub mod data;
pub mod metrics;
pub mod rng;
pub mod synthetic;
pub mod toy;
pub mod tuner;

pub use calibrators::{
    cc_calibrate, cc_local_report, diagnose_logit_gap, ts_apply, ts_fit, Aggregation,
    ConsistencyConfig, NoiseKind, NoiseSpec, Temperature,
};
pub use data::{load, save, split, Format, LogitSet, ProbSet, SplitSpec};
pub use metrics::{CalibrationReport, DEFAULT_BINS};
pub use tuner::{tune, TuneGrid, TuneResult};

// Book chapters, checked by `cargo test --doc`.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/data.md")]
    mod data {}
    #[doc = include_str!("../../../book/src/randomness.md")]
    mod randomness {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/consistency.md")]
    mod consistency {}
    #[doc = include_str!("../../../book/src/temperature.md")]
    mod temperature {}
    #[doc = include_str!("../../../book/src/tuning.md")]
    mod tuning {}
    #[doc = include_str!("../../../book/src/toy.md")]
    mod toy {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
