//! Nonnegative matrix factorization with masked multiplicative updates.
//!
//! Only observed entries enter the updates:
//!
//! ```text
//! p_uk ← p_uk · Σ_{i∈I_u} r_ui q_ik / (Σ_{i∈I_u} r̂_ui q_ik + ε)
//! q_ik ← q_ik · Σ_{u∈U_i} r_ui p_uk / (Σ_{u∈U_i} r̂_ui p_uk + ε)
//! ```
//!
//! A whole row is rescaled at once from its pre-update values, users first
//! and then items. Starting from strictly positive factors the updates
//! keep every entry nonnegative, and the masked squared error never rises.

use crate::data::RatingDataset;
use crate::models::{dot, train_mean, FactorModel, Factors, FitError, ModelKind, Support};
use crate::rng::SeededRng;

/// Stabilizer added to update denominators.
pub const EPSILON: f64 = 1e-9;

pub fn fit(train: &RatingDataset, k: usize, iterations: usize, seed: u64) -> Result<FactorModel, FitError> {
    fit_observed(train, k, iterations, seed, |_, _, _| {})
}

/// Like [`fit`], calling `observe(iteration, &P, &Q)` after every iteration.
pub fn fit_observed(
    train: &RatingDataset,
    k: usize,
    iterations: usize,
    seed: u64,
    mut observe: impl FnMut(usize, &Factors, &Factors),
) -> Result<FactorModel, FitError> {
    if let Some(r) = train.ratings().iter().find(|r| r.value < 0.0) {
        return Err(FitError::UnsuitableData {
            kind: ModelKind::Nmf,
            message: format!("negative rating {} for user {}", r.value, r.user),
        });
    }
    let fallback = train_mean(train)?;
    let mut rng = SeededRng::new(seed);
    let mut p = Factors::from_fn(train.num_users(), k, |_, _| rng.uniform(0.1, 1.0));
    let mut q = Factors::from_fn(train.num_items(), k, |_, _| rng.uniform(0.1, 1.0));
    let mut num = vec![0.0; k];
    let mut den = vec![0.0; k];

    for it in 0..iterations {
        for u in 0..train.num_users() {
            multiplicative_row(p.row_mut(u), train.user_ratings(u), &q, &mut num, &mut den);
        }
        for i in 0..train.num_items() {
            multiplicative_row(q.row_mut(i), train.item_ratings(i), &p, &mut num, &mut den);
        }
        if !p.is_bounded() || !q.is_bounded() {
            return Err(FitError::Diverged {
                kind: ModelKind::Nmf,
                iteration: it + 1,
                learning_rate: 0.0,
                regularization: 0.0,
            });
        }
        observe(it + 1, &p, &q);
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

fn multiplicative_row(
    row: &mut [f64],
    entries: &[crate::data::Entry],
    other: &Factors,
    num: &mut [f64],
    den: &mut [f64],
) {
    if entries.is_empty() {
        return;
    }
    num.fill(0.0);
    den.fill(0.0);
    for e in entries {
        let o = other.row(e.index);
        let pred = dot(row, o);
        for f in 0..row.len() {
            num[f] += e.value * o[f];
            den[f] += pred * o[f];
        }
    }
    for f in 0..row.len() {
        row[f] *= num[f] / (den[f] + EPSILON);
    }
}

/// Squared error over observed entries.
pub fn objective(train: &RatingDataset, p: &Factors, q: &Factors) -> f64 {
    train
        .ratings()
        .iter()
        .map(|r| {
            let e = r.value - dot(p.row(r.user), q.row(r.item));
            e * e
        })
        .sum()
}
