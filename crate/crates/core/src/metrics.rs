//! Calibration metrics: ECE with equal-width bins, adaptive (equal-mass)
//! ECE, classwise ECE, negative log-likelihood and accuracy.
//!
//! Conventions shared by every metric:
//!
//! * the confidence of a row is its largest probability, and the predicted
//!   label is the first index attaining it;
//! * a value `c` falls in equal-width bin `min(floor(c * M), M - 1)`, so a
//!   confidence of exactly 1.0 lands in the top bin;
//! * empty bins carry zero weight.

use serde::Serialize;
use thiserror::Error;

use crate::data::{LogitSet, ProbSet};

pub const DEFAULT_BINS: usize = 15;

/// Floor applied to the true-class probability before taking its log.
pub const NLL_CLAMP: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("number of bins must be at least 1")]
    ZeroBins,
    #[error("{bins} adaptive bins requested for only {samples} samples")]
    TooManyBins { bins: usize, samples: usize },
}

/// Index of the first maximum.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax with max subtraction.
pub fn softmax_row(z: &[f64], out: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(z) {
        *o = (v - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub fn softmax(set: &LogitSet) -> ProbSet {
    scaled_softmax(set, 1.0)
}

/// `softmax(z / temperature)` for every row.
pub(crate) fn scaled_softmax(set: &LogitSet, temperature: f64) -> ProbSet {
    let k = set.n_classes();
    let mut probs = vec![0.0; set.logits().len()];
    let mut z = vec![0.0; k];
    for (row, out) in set.rows().zip(probs.chunks_exact_mut(k)) {
        for (zi, &v) in z.iter_mut().zip(row) {
            *zi = v as f64 / temperature;
        }
        softmax_row(&z, out);
    }
    ProbSet::from_parts(k, probs, set.labels().to_vec())
}

/// Reliability-diagram statistics for one bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats {
    #[serde(rename = "index")]
    pub bin_index: usize,
    pub count: usize,
    #[serde(rename = "avg_conf")]
    pub avg_confidence: f64,
    #[serde(rename = "acc")]
    pub accuracy: f64,
    #[serde(rename = "lower")]
    pub lower_edge: f64,
    #[serde(rename = "upper")]
    pub upper_edge: f64,
    /// Set when `count == 0`; the averages are then reported as 0.
    pub empty: bool,
}

/// Confidence and correctness of every row.
pub fn confidence_and_correctness(probs: &ProbSet) -> (Vec<f64>, Vec<bool>) {
    probs
        .rows()
        .zip(probs.labels())
        .map(|(p, &y)| {
            let pred = argmax(p);
            (p[pred], pred == y as usize)
        })
        .unzip()
}

#[inline]
pub fn equal_width_bin(value: f64, n_bins: usize) -> usize {
    ((value * n_bins as f64).floor() as usize).min(n_bins - 1)
}

fn check_bins(n_bins: usize) -> Result<(), MetricsError> {
    if n_bins == 0 {
        Err(MetricsError::ZeroBins)
    } else {
        Ok(())
    }
}

pub fn reliability_diagram(probs: &ProbSet, n_bins: usize) -> Result<Vec<BinStats>, MetricsError> {
    check_bins(n_bins)?;
    let (conf, correct) = confidence_and_correctness(probs);
    let mut counts = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in conf.iter().zip(&correct) {
        let b = equal_width_bin(c, n_bins);
        counts[b] += 1;
        conf_sum[b] += c;
        hits[b] += ok as usize;
    }
    Ok((0..n_bins)
        .map(|b| {
            let count = counts[b];
            let (avg_confidence, accuracy) = if count == 0 {
                (0.0, 0.0)
            } else {
                (conf_sum[b] / count as f64, hits[b] as f64 / count as f64)
            };
            BinStats {
                bin_index: b,
                count,
                avg_confidence,
                accuracy,
                lower_edge: b as f64 / n_bins as f64,
                upper_edge: (b + 1) as f64 / n_bins as f64,
                empty: count == 0,
            }
        })
        .collect())
}

/// Equal-width ECE and the bins it was computed from.
pub fn ece(probs: &ProbSet, n_bins: usize) -> Result<(f64, Vec<BinStats>), MetricsError> {
    let bins = reliability_diagram(probs, n_bins)?;
    let n = probs.n_samples() as f64;
    let value = bins
        .iter()
        .filter(|b| !b.empty)
        .map(|b| b.count as f64 / n * (b.accuracy - b.avg_confidence).abs())
        .sum();
    Ok((value, bins))
}

/// ECE over `n_bins` equal-mass groups.
///
/// Samples are sorted by confidence with a stable sort, so equal
/// confidences keep their row order. Group sizes differ by at most one; the
/// first `N mod M` groups are larger.
pub fn adaece(probs: &ProbSet, n_bins: usize) -> Result<f64, MetricsError> {
    check_bins(n_bins)?;
    let n = probs.n_samples();
    if n_bins > n {
        return Err(MetricsError::TooManyBins {
            bins: n_bins,
            samples: n,
        });
    }
    let (conf, correct) = confidence_and_correctness(probs);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| conf[a].total_cmp(&conf[b]));
    let base = n / n_bins;
    let extra = n % n_bins;
    let mut start = 0;
    let mut total = 0.0;
    for g in 0..n_bins {
        let size = base + usize::from(g < extra);
        let group = &order[start..start + size];
        start += size;
        let avg_conf = group.iter().map(|&i| conf[i]).sum::<f64>() / size as f64;
        let acc = group.iter().filter(|&&i| correct[i]).count() as f64 / size as f64;
        total += size as f64 / n as f64 * (acc - avg_conf).abs();
    }
    Ok(total)
}

/// Classwise ECE: equal-width binning of each class's probability column
/// against the frequency of that class, averaged over classes.
pub fn cece(probs: &ProbSet, n_bins: usize) -> Result<f64, MetricsError> {
    check_bins(n_bins)?;
    let n = probs.n_samples();
    let k = probs.n_classes();
    let mut total = 0.0;
    let mut counts = vec![0usize; n_bins];
    let mut prob_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for class in 0..k {
        counts.fill(0);
        prob_sum.fill(0.0);
        hits.fill(0);
        for (row, &y) in probs.rows().zip(probs.labels()) {
            let p = row[class];
            let b = equal_width_bin(p, n_bins);
            counts[b] += 1;
            prob_sum[b] += p;
            hits[b] += (y as usize == class) as usize;
        }
        for b in 0..n_bins {
            if counts[b] > 0 {
                let c = counts[b] as f64;
                total += c / n as f64 * (hits[b] as f64 / c - prob_sum[b] / c).abs();
            }
        }
    }
    Ok(total / k as f64)
}

/// Mean negative log-probability of the true class, clamped at
/// [`NLL_CLAMP`].
pub fn nll(probs: &ProbSet) -> f64 {
    let n = probs.n_samples() as f64;
    probs
        .rows()
        .zip(probs.labels())
        .map(|(p, &y)| -p[y as usize].max(NLL_CLAMP).ln())
        .sum::<f64>()
        / n
}

pub fn accuracy(probs: &ProbSet) -> f64 {
    let hits = probs
        .rows()
        .zip(probs.labels())
        .filter(|(p, &y)| argmax(p) == y as usize)
        .count();
    hits as f64 / probs.n_samples() as f64
}

/// Fraction of rows whose logit argmax equals the label.
pub fn logit_accuracy(set: &LogitSet) -> f64 {
    let hits = set
        .rows()
        .zip(set.labels())
        .filter(|(z, &y)| argmax(z) == y as usize)
        .count();
    hits as f64 / set.n_samples() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport {
    pub ece: f64,
    pub adaece: f64,
    pub cece: f64,
    pub nll: f64,
    pub accuracy: f64,
    pub bins: Vec<BinStats>,
    pub n_samples: usize,
    pub n_classes: usize,
    pub n_bins: usize,
}

impl CalibrationReport {
    pub fn compute(probs: &ProbSet, n_bins: usize) -> Result<Self, MetricsError> {
        let (ece, bins) = ece(probs, n_bins)?;
        Ok(Self {
            ece,
            adaece: adaece(probs, n_bins)?,
            cece: cece(probs, n_bins)?,
            nll: nll(probs),
            accuracy: accuracy(probs),
            bins,
            n_samples: probs.n_samples(),
            n_classes: probs.n_classes(),
            n_bins,
        })
    }
}

// NLL is published ×100 to match the usual table scale.
impl Serialize for CalibrationReport {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Wire<'a> {
            ece: f64,
            adaece: f64,
            cece: f64,
            nll_x100: f64,
            accuracy: f64,
            n_bins: usize,
            n_samples: usize,
            n_classes: usize,
            bins: &'a [BinStats],
        }
        Wire {
            ece: self.ece,
            adaece: self.adaece,
            cece: self.cece,
            nll_x100: self.nll * 100.0,
            accuracy: self.accuracy,
            n_bins: self.n_bins,
            n_samples: self.n_samples,
            n_classes: self.n_classes,
            bins: &self.bins,
        }
        .serialize(serializer)
    }
}
