//! Bernoulli matrix factorization: one logistic factorization per score.
//!
//! For every score `s` the ratings define a binary matrix `R^s` with
//! `R^s_ui = 1` when `r_ui = s`, `0` when `r_ui` is another score, and
//! missing otherwise. Each `R^s` gets its own `(P^s, Q^s)`, fitted by
//! gradient ascent on
//!
//! ```text
//! J^s = Σ_{R^s=1} log σ(p_u·q_i) + Σ_{R^s=0} log(1 − σ(p_u·q_i)) − η/2 (Σ‖p_u‖² + Σ‖q_i‖²)
//! ```
//!
//! A row step uses the whole row's gradient, `p_u += γ(Σ_i (R^s_ui − σ_ui) q_i − η p_u)`,
//! evaluated at the row's pre-step value; users are swept first, then items.
//!
//! At prediction time the D success probabilities are normalized into a
//! distribution over scores. The most probable score is the prediction and
//! its probability the reliability.

use serde::{Deserialize, Serialize};

use crate::data::{Entry, RatingDataset, ScoreScale};
use crate::mathfns::sigmoid;
use crate::models::pmf::{init_factors, Params};
use crate::models::{dot, train_mean, Factors, FitError, ModelKind, PredictError, Support};
use crate::rng::SeededRng;

/// Factors of the binary problem for one score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreFactors {
    pub p: Factors,
    pub q: Factors,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BemfModel {
    /// One pair per score, ascending.
    pub factors: Vec<ScoreFactors>,
    pub scale: ScoreScale,
    pub fallback: f64,
    pub support: Support,
}

/// Prediction plus the probability the model assigns to it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BemfPrediction {
    pub score: f64,
    pub score_index: usize,
    pub reliability: f64,
}

pub fn fit(train: &RatingDataset, params: &Params) -> Result<BemfModel, FitError> {
    let scale = *train.scale();
    let fallback = train_mean(train)?;
    let d = scale.num_scores();
    if let Some(r) = train.ratings().iter().find(|r| scale.index_of(r.value).is_none()) {
        return Err(FitError::UnsuitableData {
            kind: ModelKind::Bemf,
            message: format!("rating {} is not a member of the score set", r.value),
        });
    }
    let mut rng = SeededRng::new(params.seed);
    let mut factors = Vec::with_capacity(d);
    for _ in 0..d {
        let p = init_factors(train.num_users(), params.k, &mut rng);
        let q = init_factors(train.num_items(), params.k, &mut rng);
        factors.push(ScoreFactors { p, q });
    }

    let (gamma, eta) = (params.learning_rate, params.regularization);
    let mut grad = vec![0.0; params.k];
    for (s, sf) in factors.iter_mut().enumerate() {
        for it in 0..params.iterations {
            for u in 0..train.num_users() {
                let entries = train.user_ratings(u);
                if entries.is_empty() {
                    continue;
                }
                row_gradient(sf.p.row(u), entries, &sf.q, &scale, s, eta, &mut grad);
                for (x, g) in sf.p.row_mut(u).iter_mut().zip(&grad) {
                    *x += gamma * g;
                }
            }
            for i in 0..train.num_items() {
                let entries = train.item_ratings(i);
                if entries.is_empty() {
                    continue;
                }
                row_gradient(sf.q.row(i), entries, &sf.p, &scale, s, eta, &mut grad);
                for (x, g) in sf.q.row_mut(i).iter_mut().zip(&grad) {
                    *x += gamma * g;
                }
            }
            if !sf.p.is_bounded() || !sf.q.is_bounded() {
                return Err(FitError::Diverged {
                    kind: ModelKind::Bemf,
                    iteration: it + 1,
                    learning_rate: gamma,
                    regularization: eta,
                });
            }
        }
    }
    Ok(BemfModel {
        factors,
        scale,
        fallback,
        support: Support::of(train),
    })
}

/// `R^s` label of a rating: whether it equals the `s`-th score.
#[inline]
fn label(scale: &ScoreScale, value: f64, s: usize) -> bool {
    scale.index_of(value) == Some(s)
}

/// Ascent direction of `J^s` for one row: `Σ (y − σ(row·o)) o − η row`.
fn row_gradient(
    row: &[f64],
    entries: &[Entry],
    other: &Factors,
    scale: &ScoreScale,
    s: usize,
    eta: f64,
    out: &mut [f64],
) {
    for (g, &x) in out.iter_mut().zip(row) {
        *g = -eta * x;
    }
    for e in entries {
        let o = other.row(e.index);
        let sig = sigmoid(dot(row, o));
        let coeff = if label(scale, e.value, s) { 1.0 - sig } else { -sig };
        for (g, &y) in out.iter_mut().zip(o) {
            *g += coeff * y;
        }
    }
}

/// `log σ(x)` without overflow.
fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Penalized log-likelihood `J^s` of one binary problem.
pub fn score_objective(train: &RatingDataset, s: usize, p: &Factors, q: &Factors, eta: f64) -> f64 {
    let scale = train.scale();
    let ll: f64 = train
        .ratings()
        .iter()
        .map(|r| {
            let x = dot(p.row(r.user), q.row(r.item));
            if label(scale, r.value, s) {
                log_sigmoid(x)
            } else {
                log_sigmoid(-x)
            }
        })
        .sum();
    let rows_norm = |f: &Factors, present: &dyn Fn(usize) -> bool| -> f64 {
        (0..f.rows()).filter(|&r| present(r)).map(|r| dot(f.row(r), f.row(r))).sum()
    };
    let pn = rows_norm(p, &|u| !train.user_ratings(u).is_empty());
    let qn = rows_norm(q, &|i| !train.item_ratings(i).is_empty());
    ll - 0.5 * eta * (pn + qn)
}

/// Gradient of [`score_objective`] with respect to every entry of P and Q.
pub fn score_gradient(train: &RatingDataset, s: usize, p: &Factors, q: &Factors, eta: f64) -> (Factors, Factors) {
    let scale = train.scale();
    let k = p.k();
    let mut gp = Factors::zeros(p.rows(), k);
    let mut gq = Factors::zeros(q.rows(), k);
    for u in 0..p.rows() {
        let entries = train.user_ratings(u);
        if !entries.is_empty() {
            row_gradient(p.row(u), entries, q, scale, s, eta, gp.row_mut(u));
        }
    }
    for i in 0..q.rows() {
        let entries = train.item_ratings(i);
        if !entries.is_empty() {
            row_gradient(q.row(i), entries, p, scale, s, eta, gq.row_mut(i));
        }
    }
    (gp, gq)
}

/// Index and normalized probability of the largest entry; ties go to the
/// lowest index.
pub fn aggregate(success: &[f64]) -> (usize, f64) {
    let total: f64 = success.iter().sum();
    let mut best = 0;
    for (j, &v) in success.iter().enumerate() {
        if v > success[best] {
            best = j;
        }
    }
    (best, success[best] / total)
}

impl BemfModel {
    /// Normalized distribution over scores for `(user, item)`.
    pub fn probabilities(&self, user: usize, item: usize) -> Result<Vec<f64>, PredictError> {
        self.support.check(user, item)?;
        let mut v: Vec<f64> = self
            .factors
            .iter()
            .map(|sf| sigmoid(dot(sf.p.row(user), sf.q.row(item))))
            .collect();
        let total: f64 = v.iter().sum();
        for x in &mut v {
            *x /= total;
        }
        Ok(v)
    }

    /// Most probable score and its probability, computed from the factors
    /// even for cold-start pairs.
    pub fn predict_with_reliability(&self, user: usize, item: usize) -> Result<BemfPrediction, PredictError> {
        self.support.check(user, item)?;
        let success: Vec<f64> = self
            .factors
            .iter()
            .map(|sf| sigmoid(dot(sf.p.row(user), sf.q.row(item))))
            .collect();
        let (score_index, reliability) = aggregate(&success);
        Ok(BemfPrediction {
            score: self.scale.score(score_index),
            score_index,
            reliability,
        })
    }

    pub fn predict(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        self.support.check(user, item)?;
        if !self.support.known(user, item) {
            return Ok(self.scale.clamp(self.fallback));
        }
        Ok(self.predict_with_reliability(user, item)?.score)
    }

    /// Σ_s J^s at the trained factors.
    pub fn penalized_log_likelihood(&self, train: &RatingDataset, eta: f64) -> f64 {
        self.factors
            .iter()
            .enumerate()
            .map(|(s, sf)| score_objective(train, s, &sf.p, &sf.q, eta))
            .sum()
    }
}
