//! Ground-truth uncertainty study on two 2-D Gaussian classes.
//!
//! Both classes share a covariance, so the posterior
//! `η(x) = p⁰(x) / (p⁰(x) + p¹(x))` is known exactly. A logistic model is
//! fitted to samples, and three estimators try to recover the ground-truth
//! confidence of the model's predicted class at each test point:
//!
//! * **confidence gap**: mean correctness of pool points whose model
//!   confidence lies within δ of the target's (the equal-width ECE view);
//! * **top-K**: mean correctness of the K pool points with the closest
//!   confidences (the equal-mass view);
//! * **consistency**: how often the prediction survives Gaussian noise
//!   added to the input point itself.
//!
//! The pool for the first two is the test set. For shared-covariance
//! classes the Bayes boundary is linear, so logistic regression is a
//! well-specified model here.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::rng::{tags, Stream, StreamKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("covariance is not symmetric positive-definite")]
    NotPositiveDefinite,
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("no pool point within confidence distance {0}")]
    EmptyNeighborhood(f64),
    #[error("k = {k} outside 1..={pool}")]
    KOutOfRange { k: usize, pool: usize },
    #[error("noise strength must be finite and >= 0, got {0}")]
    InvalidNoise(f64),
    #[error("number of perturbations must be at least 1")]
    InvalidPerturbationCount,
}

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyWorld {
    pub mu0: Point,
    pub mu1: Point,
    pub sigma: [[f64; 2]; 2],
    /// Training points per class.
    pub n_train: usize,
    /// Test points per class.
    pub n_test: usize,
    pub seed: u64,
}

impl Default for ToyWorld {
    fn default() -> Self {
        Self {
            mu0: [-1.0, 0.0],
            mu1: [1.0, 0.0],
            sigma: [[1.0, 0.0], [0.0, 1.0]],
            n_train: 20_000,
            n_test: 2_000,
            seed: 42,
        }
    }
}

impl ToyWorld {
    /// Lower Cholesky factor of `sigma`.
    pub fn cholesky(&self) -> Result<[[f64; 2]; 2], ToyError> {
        let s = self.sigma;
        let scale = s[0][0].abs().max(s[1][1].abs()).max(f64::MIN_POSITIVE);
        let finite = s.iter().flatten().all(|v| v.is_finite());
        if !finite || (s[0][1] - s[1][0]).abs() > 1e-12 * scale || !(s[0][0] > 0.0) {
            return Err(ToyError::NotPositiveDefinite);
        }
        let l00 = s[0][0].sqrt();
        let l10 = s[1][0] / l00;
        let rem = s[1][1] - l10 * l10;
        if !(rem > 0.0) {
            return Err(ToyError::NotPositiveDefinite);
        }
        Ok([[l00, 0.0], [l10, rem.sqrt()]])
    }

    fn precision(&self) -> Result<[[f64; 2]; 2], ToyError> {
        self.cholesky()?;
        let s = self.sigma;
        let det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        Ok([
            [s[1][1] / det, -s[0][1] / det],
            [-s[1][0] / det, s[0][0] / det],
        ])
    }

    /// The same world with the class means swapped.
    pub fn swapped(&self) -> Self {
        Self {
            mu0: self.mu1,
            mu1: self.mu0,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledPoints {
    pub points: Vec<Point>,
    pub labels: Vec<u8>,
}

impl LabeledPoints {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn sample_split(
    world: &ToyWorld,
    chol: &[[f64; 2]; 2],
    per_class: usize,
    tag: u64,
) -> LabeledPoints {
    let mut out = LabeledPoints::default();
    for (class, mu) in [world.mu0, world.mu1].into_iter().enumerate() {
        for i in 0..per_class {
            let mut s = StreamKey::new(world.seed, (class * per_class + i) as u64, tag).stream();
            let g0 = s.standard_normal();
            let g1 = s.standard_normal();
            out.points.push([
                mu[0] + chol[0][0] * g0,
                mu[1] + chol[1][0] * g0 + chol[1][1] * g1,
            ]);
            out.labels.push(class as u8);
        }
    }
    out
}

/// Training and test samples, class 0 first. Point `i` of each class is
/// drawn from its own stream, so the sets are fixed by the seed.
pub fn generate(world: &ToyWorld) -> Result<(LabeledPoints, LabeledPoints), ToyError> {
    let chol = world.cholesky()?;
    Ok((
        sample_split(world, &chol, world.n_train, tags::TOY_TRAIN),
        sample_split(world, &chol, world.n_test, tags::TOY_TEST),
    ))
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

fn quad(prec: &[[f64; 2]; 2], d: Point) -> f64 {
    d[0] * (prec[0][0] * d[0] + prec[0][1] * d[1]) + d[1] * (prec[1][0] * d[0] + prec[1][1] * d[1])
}

/// Posterior probability of class 0, evaluated as the sigmoid of the
/// log-density ratio so that distant points never produce `0/0`.
pub fn eta(world: &ToyWorld, x: Point) -> Result<f64, ToyError> {
    let prec = world.precision()?;
    Ok(eta_with(&prec, world, x))
}

fn eta_with(prec: &[[f64; 2]; 2], world: &ToyWorld, x: Point) -> f64 {
    let d0 = quad(prec, [x[0] - world.mu0[0], x[1] - world.mu0[1]]);
    let d1 = quad(prec, [x[0] - world.mu1[0], x[1] - world.mu1[1]]);
    sigmoid(0.5 * (d1 - d0))
}

/// `η` on a regular grid for external heat-map plotting, as `(x, y, η)`.
pub fn eta_grid(
    world: &ToyWorld,
    x_range: (f64, f64),
    y_range: (f64, f64),
    steps: usize,
) -> Result<Vec<[f64; 3]>, ToyError> {
    let prec = world.precision()?;
    let steps = steps.max(2);
    let at = |r: (f64, f64), i: usize| r.0 + (r.1 - r.0) * i as f64 / (steps - 1) as f64;
    let mut out = Vec::with_capacity(steps * steps);
    for iy in 0..steps {
        for ix in 0..steps {
            let p = [at(x_range, ix), at(y_range, iy)];
            out.push([p[0], p[1], eta_with(&prec, world, p)]);
        }
    }
    Ok(out)
}

/// Logistic model: class-1 probability `sigmoid(w · x + b)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ToyModel {
    pub weights: [f64; 2],
    pub bias: f64,
}

impl ToyModel {
    pub fn score(&self, x: Point) -> f64 {
        self.weights[0] * x[0] + self.weights[1] * x[1] + self.bias
    }

    /// Class 1 only when strictly favoured; a zero score predicts class 0.
    pub fn predict(&self, x: Point) -> u8 {
        u8::from(self.score(x) > 0.0)
    }

    pub fn confidence(&self, x: Point) -> f64 {
        let p = sigmoid(self.score(x));
        p.max(1.0 - p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            learning_rate: 1.0,
        }
    }
}

/// Full-batch gradient descent on the mean logistic loss, from zero.
pub fn train_model(train: &LabeledPoints, cfg: &TrainConfig) -> Result<ToyModel, ToyError> {
    if train.is_empty() {
        return Err(ToyError::EmptyTrainingSet);
    }
    let n = train.len() as f64;
    let mut model = ToyModel {
        weights: [0.0, 0.0],
        bias: 0.0,
    };
    for _ in 0..cfg.epochs {
        let mut grad = [0.0; 3];
        for (x, &y) in train.points.iter().zip(&train.labels) {
            let r = sigmoid(model.score(*x)) - y as f64;
            grad[0] += r * x[0];
            grad[1] += r * x[1];
            grad[2] += r;
        }
        model.weights[0] -= cfg.learning_rate * grad[0] / n;
        model.weights[1] -= cfg.learning_rate * grad[1] / n;
        model.bias -= cfg.learning_rate * grad[2] / n;
    }
    Ok(model)
}

pub fn accuracy(model: &ToyModel, data: &LabeledPoints) -> f64 {
    let hits = data
        .points
        .iter()
        .zip(&data.labels)
        .filter(|(x, &y)| model.predict(**x) == y)
        .count();
    hits as f64 / data.len() as f64
}

/// Ground-truth probability of the class the model predicts at `x`.
pub fn ground_truth_confidence(
    world: &ToyWorld,
    model: &ToyModel,
    x: Point,
) -> Result<f64, ToyError> {
    let e = eta(world, x)?;
    Ok(if model.predict(x) == 0 { e } else { 1.0 - e })
}

/// Model confidence and correctness of each pool point.
struct PoolView {
    confidence: Vec<f64>,
    correct: Vec<bool>,
}

impl PoolView {
    fn new(pool: &LabeledPoints, model: &ToyModel) -> Self {
        let (confidence, correct) = pool
            .points
            .iter()
            .zip(&pool.labels)
            .map(|(x, &y)| (model.confidence(*x), model.predict(*x) == y))
            .unzip();
        Self {
            confidence,
            correct,
        }
    }

    fn conf_gap(&self, target_conf: f64, delta: f64) -> Result<f64, ToyError> {
        let mut count = 0usize;
        let mut hits = 0usize;
        for (&c, &ok) in self.confidence.iter().zip(&self.correct) {
            if (c - target_conf).abs() < delta {
                count += 1;
                hits += ok as usize;
            }
        }
        if count == 0 {
            return Err(ToyError::EmptyNeighborhood(delta));
        }
        Ok(hits as f64 / count as f64)
    }

    /// Pool indices ordered by (|confidence difference|, index).
    fn nearest_order(&self, target_conf: f64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.confidence.len()).collect();
        order.sort_by(|&a, &b| {
            (self.confidence[a] - target_conf)
                .abs()
                .total_cmp(&(self.confidence[b] - target_conf).abs())
                .then(a.cmp(&b))
        });
        order
    }
}

pub fn estimate_conf_gap(
    target: Point,
    pool: &LabeledPoints,
    model: &ToyModel,
    delta: f64,
) -> Result<f64, ToyError> {
    PoolView::new(pool, model).conf_gap(model.confidence(target), delta)
}

pub fn estimate_topk(
    target: Point,
    pool: &LabeledPoints,
    model: &ToyModel,
    k: usize,
) -> Result<f64, ToyError> {
    if k == 0 || k > pool.len() {
        return Err(ToyError::KOutOfRange {
            k,
            pool: pool.len(),
        });
    }
    let view = PoolView::new(pool, model);
    let order = view.nearest_order(model.confidence(target));
    Ok(order[..k].iter().filter(|&&i| view.correct[i]).count() as f64 / k as f64)
}

/// Frequency with which the model keeps its prediction at `target` over
/// `t` inputs `target + N(0, ε² I)`. The noise comes from `stream`.
pub fn estimate_consistency(
    target: Point,
    model: &ToyModel,
    eps: f64,
    t: u32,
    stream: &mut Stream,
) -> Result<f64, ToyError> {
    if !eps.is_finite() || eps < 0.0 {
        return Err(ToyError::InvalidNoise(eps));
    }
    if t == 0 {
        return Err(ToyError::InvalidPerturbationCount);
    }
    if eps == 0.0 {
        return Ok(1.0);
    }
    let predicted = model.predict(target);
    let mut kept = 0u32;
    for _ in 0..t {
        let x = [
            target[0] + eps * stream.standard_normal(),
            target[1] + eps * stream.standard_normal(),
        ];
        kept += u32::from(model.predict(x) == predicted);
    }
    Ok(kept as f64 / t as f64)
}

/// Stream used for the consistency estimate of test point `index`.
pub fn consistency_stream(seed: u64, index: usize) -> Stream {
    StreamKey::new(seed, index as u64, tags::TOY_PERTURBATION).stream()
}

pub fn mean_abs_error(estimates: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(estimates.len(), truth.len());
    estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| (e - t).abs())
        .sum::<f64>()
        / truth.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "estimator", rename_all = "snake_case")]
pub enum Estimator {
    ConfGap {
        delta: f64,
    },
    #[serde(rename = "topk")]
    TopK {
        k: usize,
    },
    Consistency {
        eps: f64,
        t: u32,
    },
}

impl Estimator {
    pub fn name(&self) -> &'static str {
        match self {
            Estimator::ConfGap { .. } => "conf_gap",
            Estimator::TopK { .. } => "topk",
            Estimator::Consistency { .. } => "consistency",
        }
    }

    pub fn parameter(&self) -> f64 {
        match *self {
            Estimator::ConfGap { delta } => delta,
            Estimator::TopK { k } => k as f64,
            Estimator::Consistency { eps, .. } => eps,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EstimatorError {
    #[serde(flatten)]
    pub estimator: Estimator,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorGrids {
    pub deltas: Vec<f64>,
    pub ks: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub t_perturbations: u32,
}

impl Default for EstimatorGrids {
    fn default() -> Self {
        Self {
            deltas: vec![0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5],
            ks: vec![1, 3, 9, 27, 50, 100, 200, 300, 400, 600, 800, 1200],
            epsilons: vec![0.25, 0.5, 0.65, 0.75, 0.8, 0.85, 0.9, 1.0, 1.25, 1.5, 2.0],
            t_perturbations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToyReport {
    pub world: ToyWorld,
    pub train_config: TrainConfig,
    pub model: ToyModel,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub errors: Vec<EstimatorError>,
}

impl ToyReport {
    /// Lowest error among estimators of one family (`conf_gap`, `topk`,
    /// `consistency`).
    pub fn best(&self, family: &str) -> Option<EstimatorError> {
        self.errors
            .iter()
            .filter(|e| e.estimator.name() == family)
            .copied()
            .min_by(|a, b| a.mean_abs_error.total_cmp(&b.mean_abs_error))
    }
}

pub fn run_toy_experiment(
    world: &ToyWorld,
    train_cfg: &TrainConfig,
    grids: &EstimatorGrids,
) -> Result<ToyReport, ToyError> {
    let (train, test) = generate(world)?;
    let model = train_model(&train, train_cfg)?;
    let prec = world.precision()?;
    let truth: Vec<f64> = test
        .points
        .iter()
        .map(|&x| {
            let e = eta_with(&prec, world, x);
            if model.predict(x) == 0 {
                e
            } else {
                1.0 - e
            }
        })
        .collect();
    let view = PoolView::new(&test, &model);
    let mut errors = Vec::new();

    for &delta in &grids.deltas {
        let estimates = test
            .points
            .par_iter()
            .map(|&x| view.conf_gap(model.confidence(x), delta))
            .collect::<Result<Vec<_>, _>>()?;
        errors.push(EstimatorError {
            estimator: Estimator::ConfGap { delta },
            mean_abs_error: mean_abs_error(&estimates, &truth),
        });
    }

    if let Some(&k) = grids.ks.iter().find(|&&k| k == 0 || k > test.len()) {
        return Err(ToyError::KOutOfRange {
            k,
            pool: test.len(),
        });
    }
    // one neighbour ordering per target serves every K
    let per_target: Vec<Vec<f64>> = test
        .points
        .par_iter()
        .map(|&x| {
            let order = view.nearest_order(model.confidence(x));
            let mut hits = 0usize;
            let mut prefix = Vec::with_capacity(order.len());
            for &i in &order {
                hits += view.correct[i] as usize;
                prefix.push(hits);
            }
            grids
                .ks
                .iter()
                .map(|&k| prefix[k - 1] as f64 / k as f64)
                .collect()
        })
        .collect();
    for (col, &k) in grids.ks.iter().enumerate() {
        let estimates: Vec<f64> = per_target.iter().map(|row| row[col]).collect();
        errors.push(EstimatorError {
            estimator: Estimator::TopK { k },
            mean_abs_error: mean_abs_error(&estimates, &truth),
        });
    }

    for &eps in &grids.epsilons {
        let estimates = test
            .points
            .par_iter()
            .enumerate()
            .map(|(i, &x)| {
                let mut stream = consistency_stream(world.seed, i);
                estimate_consistency(x, &model, eps, grids.t_perturbations, &mut stream)
            })
            .collect::<Result<Vec<_>, _>>()?;
        errors.push(EstimatorError {
            estimator: Estimator::Consistency {
                eps,
                t: grids.t_perturbations,
            },
            mean_abs_error: mean_abs_error(&estimates, &truth),
        });
    }

    Ok(ToyReport {
        world: world.clone(),
        train_config: *train_cfg,
        model,
        train_accuracy: accuracy(&model, &train),
        test_accuracy: accuracy(&model, &test),
        errors,
    })
}
