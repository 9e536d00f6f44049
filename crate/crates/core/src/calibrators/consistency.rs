//! Consistency Calibration on logits.
//!
//! For row `i` the calibrated confidence of class `k` is
//!
//! ```text
//! p'_k = (1/T) · #{ t : argmax(z_i + noise_t) = k }
//! ```
//!
//! with `noise_t` a K-vector of i.i.d. draws. Row `i` owns the stream
//! `(seed, i, PERTURBATION)` and consumes it in `(t, k)` row-major order,
//! so results do not depend on how rows are scheduled across threads.
//! Votes are counted in integers and divided by `T` once.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::CalibError;
use crate::data::{LogitSet, ProbSet};
use crate::metrics::{argmax, softmax_row};
use crate::rng::{tags, Stream, StreamKey};

pub const DEFAULT_PERTURBATIONS: u32 = 1000;
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    /// Per-coordinate `U(-ε, ε)`.
    Uniform,
    /// Per-coordinate `N(0, ε²)`.
    Gaussian,
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NoiseKind::Uniform => "uniform",
            NoiseKind::Gaussian => "gaussian",
        })
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "uniform" | "u" => Ok(NoiseKind::Uniform),
            "gaussian" | "g" | "normal" => Ok(NoiseKind::Gaussian),
            other => Err(format!(
                "unknown noise kind '{other}' (expected uniform or gaussian)"
            )),
        }
    }
}

/// Noise family and strength ε.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoiseSpec {
    kind: NoiseKind,
    #[serde(rename = "eps")]
    strength: f64,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, strength: f64) -> Result<Self, CalibError> {
        if !strength.is_finite() || strength < 0.0 {
            return Err(CalibError::InvalidNoise(strength));
        }
        Ok(Self { kind, strength })
    }

    pub fn uniform(strength: f64) -> Result<Self, CalibError> {
        Self::new(NoiseKind::Uniform, strength)
    }

    pub fn gaussian(strength: f64) -> Result<Self, CalibError> {
        Self::new(NoiseKind::Gaussian, strength)
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    /// One noise value. Zero strength draws nothing.
    #[inline]
    pub(crate) fn draw(&self, stream: &mut Stream) -> f64 {
        if self.strength == 0.0 {
            return 0.0;
        }
        match self.kind {
            NoiseKind::Uniform => stream.uniform_unchecked(-self.strength, self.strength),
            NoiseKind::Gaussian => self.strength * stream.standard_normal(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Vote frequency of the perturbed argmax.
    #[default]
    Consistency,
    /// Mean of the perturbed softmax vectors.
    MeanSoftmax,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consistency" => Ok(Aggregation::Consistency),
            "mean_softmax" | "mean" => Ok(Aggregation::MeanSoftmax),
            other => Err(format!("unknown aggregation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyConfig {
    noise: NoiseSpec,
    t_perturbations: u32,
    aggregation: Aggregation,
    seed: u64,
}

impl ConsistencyConfig {
    pub fn new(noise: NoiseSpec, t_perturbations: u32) -> Result<Self, CalibError> {
        if t_perturbations == 0 {
            return Err(CalibError::InvalidPerturbationCount);
        }
        Ok(Self {
            noise,
            t_perturbations,
            aggregation: Aggregation::Consistency,
            seed: DEFAULT_SEED,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_aggregation(mut self, aggregation: Aggregation) -> Self {
        self.aggregation = aggregation;
        self
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn t_perturbations(&self) -> u32 {
        self.t_perturbations
    }

    pub fn aggregation(&self) -> Aggregation {
        self.aggregation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

fn row_stream(cfg: &ConsistencyConfig, sample_index: usize) -> Stream {
    StreamKey::new(cfg.seed, sample_index as u64, tags::PERTURBATION).stream()
}

/// Integer argmax votes of one row under `cfg`'s noise. `sample_index`
/// selects the row's random stream.
pub fn consistency_votes(logits: &[f32], sample_index: usize, cfg: &ConsistencyConfig) -> Vec<u32> {
    let k = logits.len();
    let z: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    let mut votes = vec![0u32; k];
    if cfg.noise.strength == 0.0 {
        votes[argmax(&z)] = cfg.t_perturbations;
        return votes;
    }
    let mut stream = row_stream(cfg, sample_index);
    for _ in 0..cfg.t_perturbations {
        let mut best = 0;
        let mut best_value = f64::NEG_INFINITY;
        for (j, &zj) in z.iter().enumerate() {
            let v = zj + cfg.noise.draw(&mut stream);
            if j == 0 || v > best_value {
                best = j;
                best_value = v;
            }
        }
        votes[best] += 1;
    }
    votes
}

fn mean_softmax_row(logits: &[f32], sample_index: usize, cfg: &ConsistencyConfig, out: &mut [f64]) {
    let k = logits.len();
    let z: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    if cfg.noise.strength == 0.0 {
        softmax_row(&z, out);
        return;
    }
    let mut stream = row_stream(cfg, sample_index);
    let mut perturbed = vec![0.0; k];
    let mut p = vec![0.0; k];
    out.fill(0.0);
    for _ in 0..cfg.t_perturbations {
        for (dst, &zj) in perturbed.iter_mut().zip(&z) {
            *dst = zj + cfg.noise.draw(&mut stream);
        }
        softmax_row(&perturbed, &mut p);
        out.iter_mut().zip(&p).for_each(|(o, v)| *o += v);
    }
    let t = cfg.t_perturbations as f64;
    out.iter_mut().for_each(|o| *o /= t);
}

fn calibrate_row(logits: &[f32], sample_index: usize, cfg: &ConsistencyConfig, out: &mut [f64]) {
    match cfg.aggregation {
        Aggregation::Consistency => {
            let t = cfg.t_perturbations as f64;
            for (o, v) in out
                .iter_mut()
                .zip(consistency_votes(logits, sample_index, cfg))
            {
                *o = v as f64 / t;
            }
        }
        Aggregation::MeanSoftmax => mean_softmax_row(logits, sample_index, cfg, out),
    }
}

/// Calibrate every row. Parallel over rows; the output is bit-identical
/// for any thread count.
pub fn cc_calibrate(set: &LogitSet, cfg: &ConsistencyConfig) -> ProbSet {
    let k = set.n_classes();
    let mut probs = vec![0.0; set.logits().len()];
    probs.par_chunks_mut(k).enumerate().for_each(|(i, out)| {
        calibrate_row(set.row(i), i, cfg, out);
    });
    ProbSet::from_parts(k, probs, set.labels().to_vec())
}

/// Vanilla softmax and consistency vector of a single sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalReport {
    pub row: usize,
    pub label: u32,
    pub vanilla_probs: Vec<f64>,
    pub vanilla_confidence: f64,
    pub vanilla_prediction: usize,
    pub consistency: Vec<f64>,
    pub cc_confidence: f64,
    pub cc_prediction: usize,
    pub config: ConsistencyConfig,
}

/// Uses the same stream as row `row` of [`cc_calibrate`], so the
/// consistency vector matches that row of the full calibration.
pub fn cc_local_report(
    set: &LogitSet,
    cfg: &ConsistencyConfig,
    row: usize,
) -> Result<LocalReport, CalibError> {
    let n = set.n_samples();
    if row >= n {
        return Err(CalibError::IndexOutOfRange { row, n_samples: n });
    }
    let logits = set.row(row);
    let z: Vec<f64> = logits.iter().map(|&v| v as f64).collect();
    let mut vanilla = vec![0.0; z.len()];
    softmax_row(&z, &mut vanilla);
    let mut consistency = vec![0.0; z.len()];
    calibrate_row(logits, row, cfg, &mut consistency);
    let vanilla_prediction = argmax(&vanilla);
    let cc_prediction = argmax(&consistency);
    Ok(LocalReport {
        row,
        label: set.labels()[row],
        vanilla_confidence: vanilla[vanilla_prediction],
        vanilla_prediction,
        cc_confidence: consistency[cc_prediction],
        cc_prediction,
        vanilla_probs: vanilla,
        consistency,
        config: *cfg,
    })
}
