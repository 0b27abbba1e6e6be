//! Bayesian nonnegative matrix factorization by variational inference.
//!
//! Ratings are normalized to `r* ∈ [0, 1]` and read as binomial counts out
//! of `D − 1` trials: `r⁺ = (D−1) r*` successes and `r⁻ = (D−1)(1 − r*)`
//! failures. Each user carries a Dirichlet posterior `γ_u` over K groups,
//! each item a Beta posterior `(ε⁺_ik, ε⁻_ik)` per group, and each observed
//! rating a categorical responsibility vector `λ_ui`. One iteration is
//!
//! ```text
//! λ_uik ∝ exp(ψ(γ_uk) + r⁺ψ(ε⁺_ik) + r⁻ψ(ε⁻_ik) − (D−1)ψ(ε⁺_ik + ε⁻_ik))
//! γ_uk  = α + Σ_i λ_uik
//! ε⁺_ik = β + Σ_u λ_uik r⁺_ui
//! ε⁻_ik = β + Σ_u λ_uik r⁻_ui
//! ```
//!
//! with ψ the digamma function and all sums over observed ratings. The
//! responsibilities start as normalized uniform draws and the posteriors
//! are derived from them before the first iteration; starting the
//! posteriors at their priors would make every group identical.
//!
//! The prediction `p_ui = Σ_k a_uk b_ik`, with `a_uk = γ_uk / Σ_k γ_uk` and
//! `b_ik = ε⁺_ik / (ε⁺_ik + ε⁻_ik)`, lies in [0, 1] and maps affinely onto
//! the rating scale.

use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, ScoreScale};
use crate::mathfns::digamma_unchecked as digamma;
use crate::models::{train_mean, Factors, FitError, ModelConfig, ModelKind, PredictError, Support};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub k: usize,
    pub iterations: usize,
    pub alpha: f64,
    pub beta: f64,
    pub seed: u64,
}

impl From<&ModelConfig> for Params {
    fn from(c: &ModelConfig) -> Self {
        Self {
            k: c.k,
            iterations: c.iterations,
            alpha: c.bnmf_alpha,
            beta: c.bnmf_beta,
            seed: c.seed,
        }
    }
}

/// Variational posterior of a trained BNMF model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnmfModel {
    /// Dirichlet parameters, users × K.
    pub gamma: Factors,
    /// Beta parameters, items × K.
    pub eps_plus: Factors,
    pub eps_minus: Factors,
    /// Responsibilities, one row per training rating in by-user order.
    pub lambda: Factors,
    pub alpha: f64,
    pub beta: f64,
    pub scale: ScoreScale,
    pub fallback: f64,
    pub support: Support,
}

pub fn fit(train: &RatingDataset, params: &Params) -> Result<BnmfModel, FitError> {
    fit_observed(train, params, |_, _| {})
}

/// Like [`fit`], calling `observe(iteration, &model)` after every iteration.
pub fn fit_observed(
    train: &RatingDataset,
    params: &Params,
    observe: impl FnMut(usize, &BnmfModel),
) -> Result<BnmfModel, FitError> {
    let mut rng = SeededRng::new(params.seed);
    let lambda = Factors::from_fn(train.len(), params.k, |_, _| rng.unit_open());
    fit_from(train, params, lambda, observe)
}

/// Trains from caller-supplied (unnormalized) initial responsibilities,
/// one row per training rating in by-user order.
pub fn fit_from(
    train: &RatingDataset,
    params: &Params,
    mut lambda: Factors,
    mut observe: impl FnMut(usize, &BnmfModel),
) -> Result<BnmfModel, FitError> {
    let fallback = train_mean(train)?;
    let (k, scale) = (params.k, *train.scale());
    assert_eq!(lambda.rows(), train.len(), "one responsibility row per rating");
    for n in 0..lambda.rows() {
        normalize(lambda.row_mut(n));
    }
    let mut model = BnmfModel {
        gamma: Factors::zeros(train.num_users(), k),
        eps_plus: Factors::zeros(train.num_items(), k),
        eps_minus: Factors::zeros(train.num_items(), k),
        lambda,
        alpha: params.alpha,
        beta: params.beta,
        scale,
        fallback,
        support: Support::of(train),
    };
    let trials = (scale.num_scores() - 1) as f64;
    let counts = |value: f64| {
        let star = (value - scale.min) / scale.width();
        (trials * star, trials * (1.0 - star))
    };
    update_posteriors(&mut model, train, &counts);
    let mut psi_gamma = Factors::zeros(train.num_users(), k);
    let mut psi_plus = Factors::zeros(train.num_items(), k);
    let mut psi_minus = Factors::zeros(train.num_items(), k);
    let mut psi_total = Factors::zeros(train.num_items(), k);
    for it in 0..params.iterations {
        for (dst, src) in psi_gamma.as_mut_slice().iter_mut().zip(model.gamma.as_slice()) {
            *dst = digamma(*src);
        }
        for j in 0..model.eps_plus.as_slice().len() {
            let (a, b) = (model.eps_plus.as_slice()[j], model.eps_minus.as_slice()[j]);
            psi_plus.as_mut_slice()[j] = digamma(a);
            psi_minus.as_mut_slice()[j] = digamma(b);
            psi_total.as_mut_slice()[j] = digamma(a + b);
        }
        let mut n = 0;
        for u in 0..train.num_users() {
            let pg = psi_gamma.row(u);
            for e in train.user_ratings(u) {
                let (plus, minus) = counts(e.value);
                let (pp, pm, pt) = (psi_plus.row(e.index), psi_minus.row(e.index), psi_total.row(e.index));
                let row = model.lambda.row_mut(n);
                for f in 0..k {
                    row[f] = pg[f] + plus * pp[f] + minus * pm[f] - trials * pt[f];
                }
                softmax_in_place(row);
                n += 1;
            }
        }
        update_posteriors(&mut model, train, &counts);
        if !model.gamma.as_slice().iter().chain(model.eps_plus.as_slice()).chain(model.eps_minus.as_slice()).all(|v| v.is_finite()) {
            return Err(FitError::Diverged {
                kind: ModelKind::Bnmf,
                iteration: it + 1,
                learning_rate: 0.0,
                regularization: 0.0,
            });
        }
        observe(it + 1, &model);
    }
    Ok(model)
}

/// γ, ε⁺, ε⁻ from the current responsibilities.
fn update_posteriors(model: &mut BnmfModel, train: &RatingDataset, counts: &dyn Fn(f64) -> (f64, f64)) {
    model.gamma.as_mut_slice().fill(model.alpha);
    model.eps_plus.as_mut_slice().fill(model.beta);
    model.eps_minus.as_mut_slice().fill(model.beta);
    let mut n = 0;
    for u in 0..train.num_users() {
        for e in train.user_ratings(u) {
            let (plus, minus) = counts(e.value);
            let lam = model.lambda.row(n);
            for (g, l) in model.gamma.row_mut(u).iter_mut().zip(lam) {
                *g += l;
            }
            for (x, l) in model.eps_plus.row_mut(e.index).iter_mut().zip(lam) {
                *x += l * plus;
            }
            for (x, l) in model.eps_minus.row_mut(e.index).iter_mut().zip(lam) {
                *x += l * minus;
            }
            n += 1;
        }
    }
}

fn normalize(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    for x in row {
        *x /= total;
    }
}

/// Exponentiates log-weights after subtracting their maximum, then normalizes.
pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for x in row.iter_mut() {
        *x = (*x - max).exp();
    }
    normalize(row);
}

impl BnmfModel {
    /// `a_uk = γ_uk / Σ_k γ_uk`.
    pub fn user_weights(&self, user: usize) -> Vec<f64> {
        let g = self.gamma.row(user);
        let total: f64 = g.iter().sum();
        g.iter().map(|x| x / total).collect()
    }

    /// `b_ik = ε⁺_ik / (ε⁺_ik + ε⁻_ik)`.
    pub fn item_probabilities(&self, item: usize) -> Vec<f64> {
        self.eps_plus
            .row(item)
            .iter()
            .zip(self.eps_minus.row(item))
            .map(|(p, m)| p / (p + m))
            .collect()
    }

    /// `p_ui = Σ_k a_uk b_ik ∈ [0, 1]`.
    pub fn probability(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        self.support.check(user, item)?;
        let a = self.user_weights(user);
        let b = self.item_probabilities(item);
        Ok(a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>().clamp(0.0, 1.0))
    }

    /// Continuous prediction `min + p_ui (max − min)`; global mean for
    /// cold-start pairs.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        self.support.check(user, item)?;
        if !self.support.known(user, item) {
            return Ok(self.scale.clamp(self.fallback));
        }
        let p = self.probability(user, item)?;
        Ok(self.scale.clamp(self.scale.min + p * self.scale.width()))
    }

    /// Score on the grid whose bin of width 1/D contains `p_ui`.
    pub fn predict_discrete(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        let p = self.probability(user, item)?;
        Ok(self.scale.score(discretize(p, self.scale.num_scores())))
    }

    pub fn squared_error(&self, train: &RatingDataset) -> f64 {
        train
            .ratings()
            .iter()
            .map(|r| {
                let e = r.value - self.predict(r.user, r.item).unwrap_or(self.fallback);
                e * e
            })
            .sum()
    }
}

/// Bin index of `p ∈ [0, 1]` among `d` equal-width bins; `p = 1` falls in
/// the last bin.
pub fn discretize(p: f64, d: usize) -> usize {
    ((p * d as f64).floor() as usize).min(d - 1)
}
