//! Brute-force reference implementations used only by tests. Written from
//! the metric definitions, without sharing code with the library.
#![allow(dead_code)]

#[derive(Debug, Clone)]
pub struct Instance {
    pub k: usize,
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Instance {
    fn predicted(&self, i: usize) -> usize {
        let row = &self.probs[i];
        let mut best = 0;
        for j in 1..row.len() {
            if row[j] > row[best] {
                best = j;
            }
        }
        best
    }

    fn conf(&self, i: usize) -> f64 {
        self.probs[i][self.predicted(i)]
    }

    fn hit(&self, i: usize) -> f64 {
        if self.predicted(i) == self.labels[i] {
            1.0
        } else {
            0.0
        }
    }
}

fn bin_of(v: f64, m: usize) -> usize {
    ((v * m as f64).floor() as usize).min(m - 1)
}

/// Weighted |acc - conf| over the given groups of sample indices.
fn grouped_gap(
    groups: &[Vec<usize>],
    conf: impl Fn(usize) -> f64,
    hit: impl Fn(usize) -> f64,
    n: usize,
) -> f64 {
    let mut total = 0.0;
    for g in groups.iter().filter(|g| !g.is_empty()) {
        let c: f64 = g.iter().map(|&i| conf(i)).sum::<f64>() / g.len() as f64;
        let a: f64 = g.iter().map(|&i| hit(i)).sum::<f64>() / g.len() as f64;
        total += g.len() as f64 / n as f64 * (a - c).abs();
    }
    total
}

pub fn ece(inst: &Instance, m: usize) -> f64 {
    let n = inst.labels.len();
    let groups: Vec<Vec<usize>> = (0..m)
        .map(|b| (0..n).filter(|&i| bin_of(inst.conf(i), m) == b).collect())
        .collect();
    grouped_gap(&groups, |i| inst.conf(i), |i| inst.hit(i), n)
}

pub fn adaece(inst: &Instance, m: usize) -> f64 {
    let n = inst.labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    // insertion sort keeps equal confidences in row order
    for a in 1..n {
        let mut b = a;
        while b > 0 && inst.conf(order[b - 1]) > inst.conf(order[b]) {
            order.swap(b - 1, b);
            b -= 1;
        }
    }
    let base = n / m;
    let extra = n % m;
    let mut groups = Vec::new();
    let mut pos = 0;
    for g in 0..m {
        let size = base + usize::from(g < extra);
        groups.push(order[pos..pos + size].to_vec());
        pos += size;
    }
    grouped_gap(&groups, |i| inst.conf(i), |i| inst.hit(i), n)
}

pub fn cece(inst: &Instance, m: usize) -> f64 {
    let n = inst.labels.len();
    let mut total = 0.0;
    for j in 0..inst.k {
        let groups: Vec<Vec<usize>> = (0..m)
            .map(|b| {
                (0..n)
                    .filter(|&i| bin_of(inst.probs[i][j], m) == b)
                    .collect()
            })
            .collect();
        total += grouped_gap(
            &groups,
            |i| inst.probs[i][j],
            |i| if inst.labels[i] == j { 1.0 } else { 0.0 },
            n,
        );
    }
    total / inst.k as f64
}

pub fn nll(inst: &Instance) -> f64 {
    let n = inst.labels.len();
    -(0..n)
        .map(|i| inst.probs[i][inst.labels[i]].max(1e-12).ln())
        .sum::<f64>()
        / n as f64
}

/// Standard normal CDF from the Numerical Recipes erfc approximation
/// (fractional error below 1.2e-7).
pub fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn erfc(x: f64) -> f64 {
    let z = x.abs();
    let t = 1.0 / (1.0 + 0.5 * z);
    let poly = -z * z - 1.26551223
        + t * (1.00002368
            + t * (0.37409196
                + t * (0.09678418
                    + t * (-0.18628806
                        + t * (0.27886807
                            + t * (-1.13520398
                                + t * (1.48851587 + t * (-0.82215223 + t * 0.17087277))))))));
    let r = t * poly.exp();
    if x >= 0.0 {
        r
    } else {
        2.0 - r
    }
}

/// P(a + U1 > U2) for independent U1, U2 ~ U(-eps, eps) and gap `delta >= 0`.
/// U2 - U1 is triangular on [-2eps, 2eps].
pub fn uniform_win_probability(delta: f64, eps: f64) -> f64 {
    let w = 2.0 * eps;
    if delta >= w {
        1.0
    } else {
        1.0 - (w - delta).powi(2) / (2.0 * w * w)
    }
}
