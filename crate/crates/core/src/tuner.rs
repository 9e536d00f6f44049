//! Noise-family and strength search for consistency calibration, scored by
//! validation ECE.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::calibrators::{
    cc_calibrate, Aggregation, CalibError, ConsistencyConfig, NoiseKind, NoiseSpec,
};
use crate::data::LogitSet;
use crate::metrics::{ece, MetricsError, DEFAULT_BINS};

/// Perturbations per grid point while tuning. Final calibration runs at the
/// full default count.
pub const DEFAULT_TUNING_PERTURBATIONS: u32 = 256;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuneError {
    #[error("tuning grid has no noise kinds")]
    NoKinds,
    #[error("tuning grid has no strengths")]
    NoEpsilons,
    #[error("strengths must be positive, finite and strictly ascending")]
    BadEpsilons,
    #[error(transparent)]
    Calib(#[from] CalibError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneGrid {
    pub kinds: Vec<NoiseKind>,
    pub epsilons: Vec<f64>,
    pub n_bins: usize,
    pub t_perturbations: u32,
    pub seed: u64,
    pub aggregation: Aggregation,
}

impl Default for TuneGrid {
    /// Both families; ε = 0.05 · 1.35^j for j = 0..=24 (about 0.05 to 67).
    fn default() -> Self {
        Self {
            kinds: vec![NoiseKind::Uniform, NoiseKind::Gaussian],
            epsilons: geometric_epsilons(0.05, 1.35, 25),
            n_bins: DEFAULT_BINS,
            t_perturbations: DEFAULT_TUNING_PERTURBATIONS,
            seed: crate::calibrators::consistency::DEFAULT_SEED,
            aggregation: Aggregation::Consistency,
        }
    }
}

pub fn geometric_epsilons(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|j| start * ratio.powi(j as i32)).collect()
}

impl TuneGrid {
    fn validate(&self) -> Result<(), TuneError> {
        if self.kinds.is_empty() {
            return Err(TuneError::NoKinds);
        }
        if self.epsilons.is_empty() {
            return Err(TuneError::NoEpsilons);
        }
        let positive = self.epsilons.iter().all(|e| e.is_finite() && *e > 0.0);
        let ascending = self.epsilons.windows(2).all(|w| w[0] < w[1]);
        if !positive || !ascending {
            return Err(TuneError::BadEpsilons);
        }
        if self.n_bins == 0 {
            return Err(MetricsError::ZeroBins.into());
        }
        if self.t_perturbations == 0 {
            return Err(CalibError::InvalidPerturbationCount.into());
        }
        Ok(())
    }

    /// Grid points in evaluation (and tie-break) order.
    pub fn points(&self) -> Result<Vec<NoiseSpec>, TuneError> {
        let mut out = Vec::with_capacity(self.kinds.len() * self.epsilons.len());
        for &kind in &self.kinds {
            for &eps in &self.epsilons {
                out.push(NoiseSpec::new(kind, eps)?);
            }
        }
        Ok(out)
    }

    pub fn config_for(&self, noise: NoiseSpec) -> Result<ConsistencyConfig, TuneError> {
        Ok(ConsistencyConfig::new(noise, self.t_perturbations)?
            .with_seed(self.seed)
            .with_aggregation(self.aggregation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TracePoint {
    pub noise: NoiseSpec,
    pub val_ece: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneResult {
    pub best: NoiseSpec,
    pub val_ece: f64,
    pub trace: Vec<TracePoint>,
}

/// Evaluate every grid point and keep the lowest validation ECE. Ties go to
/// the earlier point: kinds in listed order, then smaller ε.
pub fn tune(validation: &LogitSet, grid: &TuneGrid) -> Result<TuneResult, TuneError> {
    grid.validate()?;
    let points = grid.points()?;
    let trace = points
        .par_iter()
        .map(|&noise| {
            let cfg = grid.config_for(noise)?;
            let (value, _) = ece(&cc_calibrate(validation, &cfg), grid.n_bins)?;
            Ok(TracePoint {
                noise,
                val_ece: value,
            })
        })
        .collect::<Result<Vec<_>, TuneError>>()?;
    let mut best = trace[0];
    for p in &trace[1..] {
        if p.val_ece < best.val_ece {
            best = *p;
        }
    }
    Ok(TuneResult {
        best: best.noise,
        val_ece: best.val_ece,
        trace,
    })
}
