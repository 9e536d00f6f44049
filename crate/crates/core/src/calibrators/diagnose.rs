//! Logit-gap diagnosis: among predictions above a confidence threshold,
//! compare the largest and second-largest logits of correct and incorrect
//! predictions. Small gaps mark predictions a little noise can overturn.

use serde::Serialize;

use super::CalibError;
use crate::data::LogitSet;
use crate::metrics::{argmax, softmax_row};

pub const DEFAULT_CONF_THRESHOLD: f64 = 0.99;

/// Box-plot statistics; quartiles by linear interpolation between order
/// statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiveNumberSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl FiveNumberSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            min: v[0],
            q1: quantile_sorted(&v, 0.25),
            median: quantile_sorted(&v, 0.5),
            q3: quantile_sorted(&v, 0.75),
            max: v[v.len() - 1],
        })
    }
}

fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapGroup {
    pub count: usize,
    /// No member passed the threshold; the summaries are `null`.
    pub empty: bool,
    pub max_logit: Option<FiveNumberSummary>,
    pub second_logit: Option<FiveNumberSummary>,
    pub gap: Option<FiveNumberSummary>,
}

impl GapGroup {
    fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let top: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let second: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let gap: Vec<f64> = pairs.iter().map(|p| p.0 - p.1).collect();
        Self {
            count: pairs.len(),
            empty: pairs.is_empty(),
            max_logit: FiveNumberSummary::from_values(&top),
            second_logit: FiveNumberSummary::from_values(&second),
            gap: FiveNumberSummary::from_values(&gap),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapReport {
    pub conf_threshold: f64,
    pub n_samples: usize,
    pub n_selected: usize,
    pub correct: GapGroup,
    pub incorrect: GapGroup,
}

pub fn diagnose_logit_gap(set: &LogitSet, conf_threshold: f64) -> Result<GapReport, CalibError> {
    if !(conf_threshold > 0.0 && conf_threshold < 1.0) {
        return Err(CalibError::InvalidThreshold(conf_threshold));
    }
    let k = set.n_classes();
    let mut z = vec![0.0; k];
    let mut p = vec![0.0; k];
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for (row, &y) in set.rows().zip(set.labels()) {
        for (zi, &v) in z.iter_mut().zip(row) {
            *zi = v as f64;
        }
        softmax_row(&z, &mut p);
        let pred = argmax(&p);
        if p[pred] <= conf_threshold {
            continue;
        }
        let top = z[pred];
        let second = z
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != pred)
            .map(|(_, &v)| v)
            .fold(f64::NEG_INFINITY, f64::max);
        if pred == y as usize {
            correct.push((top, second));
        } else {
            incorrect.push((top, second));
        }
    }
    Ok(GapReport {
        conf_threshold,
        n_samples: set.n_samples(),
        n_selected: correct.len() + incorrect.len(),
        correct: GapGroup::from_pairs(&correct),
        incorrect: GapGroup::from_pairs(&incorrect),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hand_set() -> LogitSet {
        LogitSet::from_rows(
            &[
                vec![10.0, 1.0, 0.0],
                vec![10.0, 1.0, 0.0],
                vec![10.0, 1.0, 0.0],
                vec![10.0, 9.0, 0.0],
                vec![10.0, 9.0, 0.0],
            ],
            vec![0, 0, 0, 1, 2],
        )
        .unwrap()
    }

    #[test]
    fn hand_order_statistics() {
        // softmax(10, 9, 0) tops out near 0.731, so a low threshold keeps all rows
        let r = diagnose_logit_gap(&hand_set(), 0.5).unwrap();
        assert_eq!(r.n_selected, 5);
        assert_eq!(r.correct.count, 3);
        assert_eq!(r.incorrect.count, 2);
        assert_eq!(r.correct.second_logit.unwrap().median, 1.0);
        assert_eq!(r.incorrect.second_logit.unwrap().median, 9.0);
        assert_eq!(r.correct.gap.unwrap().median, 9.0);
        assert_eq!(r.incorrect.gap.unwrap().median, 1.0);
    }

    #[test]
    fn all_correct_flags_incorrect_group() {
        let set = LogitSet::from_rows(&[vec![10.0, 0.0], vec![0.0, 10.0]], vec![0, 1]).unwrap();
        let r = diagnose_logit_gap(&set, DEFAULT_CONF_THRESHOLD).unwrap();
        assert!(r.incorrect.empty && r.incorrect.gap.is_none());
        assert!(!r.correct.empty);
    }

    #[test]
    fn strict_threshold_empties_both_groups() {
        let r = diagnose_logit_gap(&hand_set(), 0.999999).unwrap();
        assert!(r.correct.empty && r.incorrect.empty);
        assert_eq!(r.n_selected, 0);
    }

    #[test]
    fn threshold_validated() {
        for t in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(diagnose_logit_gap(&hand_set(), t).is_err());
        }
    }

    #[test]
    fn quartiles_interpolate() {
        let s = FiveNumberSummary::from_values(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(
            (s.min, s.q1, s.median, s.q3, s.max),
            (1.0, 1.75, 2.5, 3.25, 4.0)
        );
    }
}
