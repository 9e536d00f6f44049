//! Synthetic overconfident logit sets with known class distributions.
//!
//! Each row draws a latent class and a margin, forms a score vector
//! `u = N(0, I) + margin · e_class`, and takes `softmax(u)` as its true class
//! distribution. The label is sampled from that distribution and the stored
//! logits are `sharpness · log softmax(u)`, so with `sharpness > 1` the
//! softmax of the stored logits is overconfident, and temperature
//! `sharpness` recovers the truth exactly.
//!
//! Margins mix easy rows (wide margins, near-certain labels) with hard ones,
//! which mirrors the confidence profile of image classifiers with around
//! 94% accuracy.

use serde::Serialize;

use crate::data::{DataError, LogitSet, ProbSet};
use crate::metrics::softmax_row;
use crate::rng::{tags, StreamKey};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_classes: usize,
    /// Multiplier applied to the true log-probabilities.
    pub sharpness: f64,
    pub easy_fraction: f64,
    pub easy_margin: (f64, f64),
    pub hard_margin: (f64, f64),
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_samples: 20_000,
            n_classes: 10,
            sharpness: 3.0,
            easy_fraction: 0.85,
            easy_margin: (8.0, 14.0),
            hard_margin: (0.0, 6.0),
            seed: 42,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub logits: LogitSet,
    pub true_probs: ProbSet,
}

pub fn overconfident(cfg: &SyntheticConfig) -> Result<SyntheticSet, DataError> {
    let k = cfg.n_classes;
    let mut logits = Vec::with_capacity(cfg.n_samples * k);
    let mut probs = Vec::with_capacity(cfg.n_samples * k);
    let mut labels = Vec::with_capacity(cfg.n_samples);
    let mut u = vec![0.0; k];
    let mut p = vec![0.0; k];
    for i in 0..cfg.n_samples {
        let mut s = StreamKey::new(cfg.seed, i as u64, tags::SYNTHETIC).stream();
        let latent = s.below(k.max(1) as u64) as usize;
        u.iter_mut().for_each(|v| *v = s.standard_normal());
        let (lo, hi) = if s.next_unit() < cfg.easy_fraction {
            cfg.easy_margin
        } else {
            cfg.hard_margin
        };
        u[latent] += lo + (hi - lo) * s.next_unit();
        softmax_row(&u, &mut p);

        let draw = s.next_unit();
        let mut acc = 0.0;
        let mut label = k - 1;
        for (j, &pj) in p.iter().enumerate() {
            acc += pj;
            if draw < acc {
                label = j;
                break;
            }
        }
        let max = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + u.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        logits.extend(u.iter().map(|v| (cfg.sharpness * (v - lse)) as f32));
        probs.extend_from_slice(&p);
        labels.push(label as u32);
    }
    Ok(SyntheticSet {
        logits: LogitSet::new(k, logits, labels.clone())?,
        true_probs: ProbSet::new(k, probs, labels)?,
    })
}
