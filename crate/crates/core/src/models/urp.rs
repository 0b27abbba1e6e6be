//! User rating profile model fitted by variational EM.
//!
//! Each user mixes K attitudes with Dirichlet weights θ ~ Dir(α); each
//! attitude z holds, per item y, a multinomial β_·yz over the V scores. The
//! variational posterior keeps a Dirichlet γᵘ per user and a responsibility
//! vector φᵘ_·y per observed rating:
//!
//! ```text
//! φᵘ_zy ∝ β_{v(u,y) y z} · exp(ψ(γᵘ_z) − ψ(Σ_j γᵘ_j))
//! γᵘ_z  = α_z + Σ_y φᵘ_zy
//! β_vyz ∝ Σ_u φᵘ_zy δ(rᵘ_y, v) + s
//! ψ(α_z) = ψ(Σ_j α_j) + 1/N Σ_u (ψ(γᵘ_z) − ψ(Σ_j γᵘ_j))
//! ```
//!
//! with `s` a small additive smoothing that keeps unseen (item, score)
//! cells away from zero. The α equation is solved by fixed-point iteration
//! through [`inverse_digamma`]; N counts the users with training ratings.
//!
//! Training starts from normalized uniform φ, γ derived from it, β uniform
//! and α = 1. Each iteration runs the M step (β, then α) followed by the E
//! step (φ, then γ), so γ is always consistent with the current α.
//!
//! The prediction is the posterior expected rating
//! `Σ_v s_v Σ_z θ̂ᵘ_z β_viz` with `θ̂ᵘ = γᵘ / Σ γᵘ`.

use serde::{Deserialize, Serialize};

use crate::data::{RatingDataset, ScoreScale};
use crate::mathfns::{digamma_unchecked as digamma, inverse_digamma};
use crate::models::bnmf::softmax_in_place;
use crate::models::{train_mean, Factors, FitError, ModelKind, PredictError, Support};
use crate::rng::SeededRng;

/// Pseudo-count added to every (score, item, attitude) cell of β.
pub const BETA_SMOOTHING: f64 = 0.01;

const ALPHA_FIXED_POINT_STEPS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UrpModel {
    /// Variational Dirichlet parameters, users × K.
    pub gamma: Factors,
    /// Responsibilities, one row per training rating in by-user order.
    pub phi: Factors,
    /// `beta[v]` is items × K; every (item, attitude) sums to 1 over v.
    pub beta: Vec<Factors>,
    pub alpha: Vec<f64>,
    pub scale: ScoreScale,
    pub fallback: f64,
    pub support: Support,
    /// Iterations whose α update failed and was skipped.
    pub alpha_update_skips: usize,
}

pub fn fit(train: &RatingDataset, k: usize, iterations: usize, seed: u64) -> Result<UrpModel, FitError> {
    fit_observed(train, k, iterations, seed, |_, _| {})
}

/// Like [`fit`], calling `observe(iteration, &model)` after every iteration.
pub fn fit_observed(
    train: &RatingDataset,
    k: usize,
    iterations: usize,
    seed: u64,
    observe: impl FnMut(usize, &UrpModel),
) -> Result<UrpModel, FitError> {
    let mut rng = SeededRng::new(seed);
    let phi = Factors::from_fn(train.len(), k, |_, _| rng.unit_open());
    fit_from(train, iterations, phi, observe)
}

/// Trains from caller-supplied (unnormalized) initial responsibilities,
/// one row per training rating in by-user order.
pub fn fit_from(
    train: &RatingDataset,
    iterations: usize,
    mut phi: Factors,
    mut observe: impl FnMut(usize, &UrpModel),
) -> Result<UrpModel, FitError> {
    let fallback = train_mean(train)?;
    let scale = *train.scale();
    let (k, v_count) = (phi.k(), scale.num_scores());
    assert_eq!(phi.rows(), train.len(), "one responsibility row per rating");
    let mut score_index = Vec::with_capacity(train.len());
    for u in 0..train.num_users() {
        for e in train.user_ratings(u) {
            match scale.index_of(e.value) {
                Some(v) => score_index.push(v),
                None => {
                    return Err(FitError::UnsuitableData {
                        kind: ModelKind::Urp,
                        message: format!("rating {} is not a member of the score set", e.value),
                    })
                }
            }
        }
    }
    for n in 0..phi.rows() {
        let row = phi.row_mut(n);
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= total);
    }
    let mut model = UrpModel {
        gamma: Factors::zeros(train.num_users(), k),
        phi,
        beta: vec![Factors::from_fn(train.num_items(), k, |_, _| 1.0 / v_count as f64); v_count],
        alpha: vec![1.0; k],
        scale,
        fallback,
        support: Support::of(train),
        alpha_update_skips: 0,
    };
    update_gamma(&mut model, train);

    let mut log_beta = vec![Factors::zeros(train.num_items(), k); v_count];
    for it in 0..iterations {
        update_beta(&mut model, train, &score_index);
        if !update_alpha(&mut model, train) {
            model.alpha_update_skips += 1;
        }

        for (lb, b) in log_beta.iter_mut().zip(&model.beta) {
            for (dst, src) in lb.as_mut_slice().iter_mut().zip(b.as_slice()) {
                *dst = src.ln();
            }
        }
        let mut n = 0;
        let mut psi = vec![0.0; k];
        for u in 0..train.num_users() {
            let g = model.gamma.row(u);
            let psi_total = digamma(g.iter().sum());
            for (p, &x) in psi.iter_mut().zip(g) {
                *p = digamma(x) - psi_total;
            }
            for e in train.user_ratings(u) {
                let lb = log_beta[score_index[n]].row(e.index);
                let row = model.phi.row_mut(n);
                for z in 0..k {
                    row[z] = lb[z] + psi[z];
                }
                softmax_in_place(row);
                n += 1;
            }
        }
        update_gamma(&mut model, train);

        if !model.gamma.as_slice().iter().all(|g| g.is_finite()) {
            return Err(FitError::Diverged {
                kind: ModelKind::Urp,
                iteration: it + 1,
                learning_rate: 0.0,
                regularization: 0.0,
            });
        }
        observe(it + 1, &model);
    }
    Ok(model)
}

fn update_gamma(model: &mut UrpModel, train: &RatingDataset) {
    let mut n = 0;
    for u in 0..train.num_users() {
        let g = model.gamma.row_mut(u);
        g.copy_from_slice(&model.alpha);
        for _ in train.user_ratings(u) {
            for (x, f) in g.iter_mut().zip(model.phi.row(n)) {
                *x += f;
            }
            n += 1;
        }
    }
}

fn update_beta(model: &mut UrpModel, train: &RatingDataset, score_index: &[usize]) {
    for b in &mut model.beta {
        b.as_mut_slice().fill(BETA_SMOOTHING);
    }
    let mut n = 0;
    for u in 0..train.num_users() {
        for e in train.user_ratings(u) {
            let row = model.beta[score_index[n]].row_mut(e.index);
            for (b, f) in row.iter_mut().zip(model.phi.row(n)) {
                *b += f;
            }
            n += 1;
        }
    }
    let cells = train.num_items() * model.alpha.len();
    for c in 0..cells {
        let total: f64 = model.beta.iter().map(|b| b.as_slice()[c]).sum();
        for b in &mut model.beta {
            b.as_mut_slice()[c] /= total;
        }
    }
}

/// Solves the α fixed point; leaves α unchanged and returns false when the
/// iteration leaves the domain of the inverse digamma.
fn update_alpha(model: &mut UrpModel, train: &RatingDataset) -> bool {
    let k = model.alpha.len();
    let mut mean_log = vec![0.0; k];
    let mut users = 0usize;
    for u in 0..train.num_users() {
        if train.user_ratings(u).is_empty() {
            continue;
        }
        let g = model.gamma.row(u);
        let psi_total = digamma(g.iter().sum());
        for (m, &x) in mean_log.iter_mut().zip(g) {
            *m += digamma(x) - psi_total;
        }
        users += 1;
    }
    if users == 0 {
        return false;
    }
    mean_log.iter_mut().for_each(|m| *m /= users as f64);

    let mut alpha = model.alpha.clone();
    for _ in 0..ALPHA_FIXED_POINT_STEPS {
        let psi_total = digamma(alpha.iter().sum());
        let mut change: f64 = 0.0;
        for (a, m) in alpha.iter_mut().zip(&mean_log) {
            let next = match inverse_digamma(psi_total + m) {
                Ok(x) if x.is_finite() && x > 0.0 => x,
                _ => return false,
            };
            change = change.max((next - *a).abs() / a.max(1.0));
            *a = next;
        }
        if change < 1e-12 {
            break;
        }
    }
    model.alpha = alpha;
    true
}

impl UrpModel {
    /// Posterior mean of the user's attitude mixture.
    pub fn attitude_weights(&self, user: usize) -> Vec<f64> {
        let g = self.gamma.row(user);
        let total: f64 = g.iter().sum();
        g.iter().map(|x| x / total).collect()
    }

    /// Predicted distribution over the score set for a pair.
    pub fn score_distribution(&self, user: usize, item: usize) -> Result<Vec<f64>, PredictError> {
        self.support.check(user, item)?;
        let theta = self.attitude_weights(user);
        Ok(self
            .beta
            .iter()
            .map(|b| b.row(item).iter().zip(&theta).map(|(x, t)| x * t).sum())
            .collect())
    }

    /// Expected rating under [`Self::score_distribution`]; clamped global
    /// mean for cold-start pairs.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        self.support.check(user, item)?;
        if !self.support.known(user, item) {
            return Ok(self.scale.clamp(self.fallback));
        }
        let dist = self.score_distribution(user, item)?;
        let expected: f64 = dist.iter().enumerate().map(|(v, p)| self.scale.score(v) * p).sum();
        Ok(self.scale.clamp(expected))
    }

    /// Σ log P(r_ui) of the training ratings under the predicted distributions.
    pub fn log_likelihood(&self, train: &RatingDataset) -> f64 {
        train
            .ratings()
            .iter()
            .map(|r| {
                let v = self.scale.index_of(r.value).expect("rating on the score grid");
                self.score_distribution(r.user, r.item).map_or(0.0, |d| d[v].ln())
            })
            .sum()
    }
}
