//! Temperature scaling: `softmax(z / t)` with `t` fitted to minimize
//! validation NLL.

use serde::Serialize;

use super::CalibError;
use crate::data::{LogitSet, ProbSet};
use crate::metrics::scaled_softmax;

pub const MIN_TEMPERATURE: f64 = 0.01;
pub const MAX_TEMPERATURE: f64 = 100.0;

const GRID_STEP: f64 = 0.05;
const GRID_POINTS: usize = 200;
const GOLDEN_ITERATIONS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(t: f64) -> Result<Self, CalibError> {
        if (MIN_TEMPERATURE..=MAX_TEMPERATURE).contains(&t) {
            Ok(Self(t))
        } else {
            Err(CalibError::InvalidTemperature(t))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Mean NLL of `softmax(z / t)` computed through log-sum-exp.
pub fn scaled_nll(set: &LogitSet, t: f64) -> f64 {
    let mut total = 0.0;
    for (row, &y) in set.rows().zip(set.labels()) {
        let max = row.iter().fold(f32::NEG_INFINITY, |m, &v| m.max(v)) as f64 / t;
        let lse = max
            + row
                .iter()
                .map(|&v| (v as f64 / t - max).exp())
                .sum::<f64>()
                .ln();
        total += lse - row[y as usize] as f64 / t;
    }
    total / set.n_samples() as f64
}

/// Coarse grid `t = 0.05 j` for `j = 1..=200`, then 40 golden-section
/// steps inside one grid step either side of the best grid point.
pub fn ts_fit(validation: &LogitSet) -> Temperature {
    let lo_edge = GRID_STEP;
    let hi_edge = GRID_STEP * GRID_POINTS as f64;
    let (mut best_t, mut best_nll) = (lo_edge, f64::INFINITY);
    for j in 1..=GRID_POINTS {
        let t = GRID_STEP * j as f64;
        let v = scaled_nll(validation, t);
        if v < best_nll {
            best_t = t;
            best_nll = v;
        }
    }

    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = (best_t - GRID_STEP).max(lo_edge);
    let mut b = (best_t + GRID_STEP).min(hi_edge);
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = scaled_nll(validation, c);
    let mut fd = scaled_nll(validation, d);
    for _ in 0..GOLDEN_ITERATIONS {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = scaled_nll(validation, c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = scaled_nll(validation, d);
        }
    }
    let refined = 0.5 * (a + b);
    let t = if scaled_nll(validation, refined) < best_nll {
        refined
    } else {
        best_t
    };
    Temperature(t)
}

pub fn ts_apply(set: &LogitSet, temp: Temperature) -> ProbSet {
    scaled_softmax(set, temp.0)
}
