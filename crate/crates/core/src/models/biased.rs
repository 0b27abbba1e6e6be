//! Matrix factorization with global, user and item biases.
//!
//! Prediction is `μ + b_u + b_i + p_u·q_i` with `μ` pinned to the training
//! mean. Each rating contributes the loss
//!
//! ```text
//! ½ e² + λ/2 (b_u² + b_i² + ‖p_u‖² + ‖q_i‖²),   e = r − r̂
//! ```
//!
//! whose negative gradient gives the familiar steps
//! `b_u += α(e − λ b_u)`, `p_u += α(e q_i − λ p_u)` and their item twins.
//! The sweep schedule is the one PMF uses: users first (updating `b_u` and
//! `p_u`), then items.

use crate::data::RatingDataset;
use crate::models::pmf::{init_factors, Params};
use crate::models::{dot, train_mean, Biases, FactorModel, Factors, FitError, ModelKind, Support};
use crate::rng::SeededRng;

pub fn fit(train: &RatingDataset, params: &Params) -> Result<FactorModel, FitError> {
    let mut rng = SeededRng::new(params.seed);
    let p = init_factors(train.num_users(), params.k, &mut rng);
    let q = init_factors(train.num_items(), params.k, &mut rng);
    let biases = Biases {
        global: train_mean(train)?,
        user: vec![0.0; train.num_users()],
        item: vec![0.0; train.num_items()],
    };
    fit_from(train, params, p, q, biases)
}

/// Trains from caller-supplied factors and biases; `biases.global` is kept.
pub fn fit_from(
    train: &RatingDataset,
    params: &Params,
    mut p: Factors,
    mut q: Factors,
    mut biases: Biases,
) -> Result<FactorModel, FitError> {
    let fallback = train_mean(train)?;
    let (alpha, lambda) = (params.learning_rate, params.regularization);
    let mu = biases.global;
    let diverged = |iteration| FitError::Diverged {
        kind: ModelKind::BiasedMf,
        iteration,
        learning_rate: alpha,
        regularization: lambda,
    };
    let bounded = |v: &[f64]| v.iter().all(|x| x.is_finite() && x.abs() <= super::DIVERGENCE_LIMIT);

    for it in 0..params.iterations {
        for u in 0..train.num_users() {
            for r in train.user_ratings(u) {
                let i = r.index;
                let bu = &mut biases.user[u];
                let pu = p.row_mut(u);
                let qi = q.row(i);
                let e = r.value - (mu + *bu + biases.item[i] + dot(pu, qi));
                *bu += alpha * (e - lambda * *bu);
                for (x, &y) in pu.iter_mut().zip(qi) {
                    *x += alpha * (e * y - lambda * *x);
                }
            }
        }
        if !p.is_bounded() || !bounded(&biases.user) {
            return Err(diverged(it + 1));
        }
        for i in 0..train.num_items() {
            for r in train.item_ratings(i) {
                let u = r.index;
                let bi = &mut biases.item[i];
                let qi = q.row_mut(i);
                let pu = p.row(u);
                let e = r.value - (mu + biases.user[u] + *bi + dot(pu, qi));
                *bi += alpha * (e - lambda * *bi);
                for (x, &y) in qi.iter_mut().zip(pu) {
                    *x += alpha * (e * y - lambda * *x);
                }
            }
        }
        if !q.is_bounded() || !bounded(&biases.item) {
            return Err(diverged(it + 1));
        }
    }
    Ok(FactorModel {
        p,
        q,
        biases: Some(biases),
        scale: *train.scale(),
        fallback,
        support: Support::of(train),
    })
}

/// Per-rating loss of the biased model.
pub fn rating_loss(mu: f64, bu: f64, bi: f64, pu: &[f64], qi: &[f64], rating: f64, lambda: f64) -> f64 {
    let e = rating - (mu + bu + bi + dot(pu, qi));
    0.5 * e * e + 0.5 * lambda * (bu * bu + bi * bi + dot(pu, pu) + dot(qi, qi))
}

/// Gradients of [`rating_loss`]: `(∂b_u, ∂b_i, ∂p_u, ∂q_i)`.
pub fn rating_gradient(
    mu: f64,
    bu: f64,
    bi: f64,
    pu: &[f64],
    qi: &[f64],
    rating: f64,
    lambda: f64,
) -> (f64, f64, Vec<f64>, Vec<f64>) {
    let e = rating - (mu + bu + bi + dot(pu, qi));
    let gp = pu.iter().zip(qi).map(|(&p, &q)| -e * q + lambda * p).collect();
    let gq = qi.iter().zip(pu).map(|(&q, &p)| -e * p + lambda * q).collect();
    (-e + lambda * bu, -e + lambda * bi, gp, gq)
}

/// Sum of [`rating_loss`] over the training ratings.
pub fn objective(train: &RatingDataset, model: &FactorModel, lambda: f64) -> f64 {
    let b = model.biases.as_ref().expect("biased model carries biases");
    train
        .ratings()
        .iter()
        .map(|r| {
            rating_loss(
                b.global,
                b.user[r.user],
                b.item[r.item],
                model.p.row(r.user),
                model.q.row(r.item),
                r.value,
                lambda,
            )
        })
        .sum()
}
