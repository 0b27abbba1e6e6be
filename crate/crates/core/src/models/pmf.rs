//! Probabilistic matrix factorization trained by per-rating gradient steps.
//!
//! Each iteration runs two sweeps in ascending index order. The user sweep
//! walks every user's ratings (items ascending) and moves `p_u` against the
//! gradient of the per-rating loss
//!
//! ```text
//! f(p_u, q_i) = (r_ui − p_u·q_i)² + λ/2 (‖p_u‖² + ‖q_i‖²)
//! ```
//!
//! with the item factors held fixed, i.e. `p_u ← p_u + α(2 e_ui q_i − λ p_u)`.
//! The item sweep does the same for every `q_i` with users fixed.

use crate::data::RatingDataset;
use crate::models::{dot, train_mean, FactorModel, Factors, FitError, ModelConfig, ModelKind, Support};
use crate::rng::SeededRng;

/// Hyperparameters shared by the gradient-trained models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub k: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub regularization: f64,
    pub seed: u64,
}

impl From<&ModelConfig> for Params {
    fn from(c: &ModelConfig) -> Self {
        Self {
            k: c.k,
            iterations: c.iterations,
            learning_rate: c.learning_rate,
            regularization: c.regularization,
            seed: c.seed,
        }
    }
}

/// Factors drawn uniformly from (0, 1/√k), so initial dot products sit in (0, 1).
pub(crate) fn init_factors(rows: usize, k: usize, rng: &mut SeededRng) -> Factors {
    let hi = 1.0 / (k as f64).sqrt();
    Factors::from_fn(rows, k, |_, _| rng.uniform(0.0, hi))
}

pub fn fit(train: &RatingDataset, params: &Params) -> Result<FactorModel, FitError> {
    let mut rng = SeededRng::new(params.seed);
    let p = init_factors(train.num_users(), params.k, &mut rng);
    let q = init_factors(train.num_items(), params.k, &mut rng);
    fit_from(train, params, p, q)
}

/// Trains from caller-supplied initial factors.
pub fn fit_from(train: &RatingDataset, params: &Params, mut p: Factors, mut q: Factors) -> Result<FactorModel, FitError> {
    let fallback = train_mean(train)?;
    let (alpha, lambda) = (params.learning_rate, params.regularization);
    let mut grad = vec![0.0; params.k];
    let diverged = |iteration| FitError::Diverged {
        kind: ModelKind::Pmf,
        iteration,
        learning_rate: alpha,
        regularization: lambda,
    };
    for it in 0..params.iterations {
        for u in 0..train.num_users() {
            for e in train.user_ratings(u) {
                let pu = p.row_mut(u);
                gradient_wrt(pu, q.row(e.index), e.value, lambda, &mut grad);
                for (x, g) in pu.iter_mut().zip(&grad) {
                    *x -= alpha * g;
                }
            }
        }
        if !p.is_bounded() {
            return Err(diverged(it + 1));
        }
        for i in 0..train.num_items() {
            for e in train.item_ratings(i) {
                let qi = q.row_mut(i);
                gradient_wrt(qi, p.row(e.index), e.value, lambda, &mut grad);
                for (x, g) in qi.iter_mut().zip(&grad) {
                    *x -= alpha * g;
                }
            }
        }
        if !q.is_bounded() {
            return Err(diverged(it + 1));
        }
    }
    Ok(FactorModel {
        p,
        q,
        biases: None,
        scale: *train.scale(),
        fallback,
        support: Support::of(train),
    })
}

/// Per-rating loss `(r − own·other)² + λ/2 (‖own‖² + ‖other‖²)`.
pub fn rating_loss(own: &[f64], other: &[f64], rating: f64, lambda: f64) -> f64 {
    let e = rating - dot(own, other);
    e * e + 0.5 * lambda * (dot(own, own) + dot(other, other))
}

/// Gradient of [`rating_loss`] with respect to `own`: `−2 e·other + λ·own`.
/// The loss is symmetric, so the same routine serves user and item rows.
#[inline]
pub fn gradient_wrt(own: &[f64], other: &[f64], rating: f64, lambda: f64, out: &mut [f64]) {
    let e = rating - dot(own, other);
    for ((g, &x), &y) in out.iter_mut().zip(own).zip(other) {
        *g = -2.0 * e * y + lambda * x;
    }
}

/// Sum of [`rating_loss`] over the training ratings.
pub fn objective(train: &RatingDataset, p: &Factors, q: &Factors, lambda: f64) -> f64 {
    train
        .ratings()
        .iter()
        .map(|r| rating_loss(p.row(r.user), q.row(r.item), r.value, lambda))
        .sum()
}

/// Analytic gradient of [`objective`] with respect to every entry of P and Q.
pub fn objective_gradient(train: &RatingDataset, p: &Factors, q: &Factors, lambda: f64) -> (Factors, Factors) {
    let k = p.k();
    let mut gp = Factors::zeros(p.rows(), k);
    let mut gq = Factors::zeros(q.rows(), k);
    let mut buf = vec![0.0; k];
    for r in train.ratings() {
        gradient_wrt(p.row(r.user), q.row(r.item), r.value, lambda, &mut buf);
        for (g, b) in gp.row_mut(r.user).iter_mut().zip(&buf) {
            *g += b;
        }
        gradient_wrt(q.row(r.item), p.row(r.user), r.value, lambda, &mut buf);
        for (g, b) in gq.row_mut(r.item).iter_mut().zip(&buf) {
            *g += b;
        }
    }
    (gp, gq)
}
