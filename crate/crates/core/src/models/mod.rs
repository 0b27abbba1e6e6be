//! The six factorization models behind one train/predict interface.
//!
//! | kind | trained state | prediction |
//! |------|---------------|------------|
//! | PMF | `P`, `Q` | `p_u · q_i` |
//! | BiasedMF | `P`, `Q`, `μ`, `b_u`, `b_i` | `μ + b_u + b_i + p_u · q_i` |
//! | NMF | nonnegative `P`, `Q` | `p_u · q_i` |
//! | BeMF | one `(P, Q)` pair per score | most probable score |
//! | BNMF | Dirichlet/Beta posteriors | affine map of `Σ_k a_uk b_ik` |
//! | URP | attitude posteriors and multinomials | posterior expected rating |
//!
//! All training is single-threaded and deterministic: the same
//! [`ModelConfig`] (including its seed) on the same training set yields
//! bit-identical parameters.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{global_mean, RatingDataset, ScoreScale};

pub mod bemf;
pub mod biased;
pub mod bnmf;
pub mod nmf;
pub mod pmf;
pub mod serialize;
pub mod urp;

pub use bemf::BemfModel;
pub use bnmf::BnmfModel;
pub use urp::UrpModel;

/// Any factor entry beyond this magnitude aborts training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "PMF")]
    Pmf,
    #[serde(rename = "BiasedMF")]
    BiasedMf,
    #[serde(rename = "NMF")]
    Nmf,
    #[serde(rename = "BeMF")]
    Bemf,
    #[serde(rename = "BNMF")]
    Bnmf,
    #[serde(rename = "URP")]
    Urp,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Pmf,
        ModelKind::BiasedMf,
        ModelKind::Nmf,
        ModelKind::Bemf,
        ModelKind::Bnmf,
        ModelKind::Urp,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Pmf => "PMF",
            ModelKind::BiasedMf => "BiasedMF",
            ModelKind::Nmf => "NMF",
            ModelKind::Bemf => "BeMF",
            ModelKind::Bnmf => "BNMF",
            ModelKind::Urp => "URP",
        }
    }

    /// Whether the model is trained by gradient steps with a learning rate
    /// and a regularization weight.
    pub fn uses_gradient_steps(self) -> bool {
        matches!(self, ModelKind::Pmf | ModelKind::BiasedMf | ModelKind::Bemf)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown model {0:?} (expected one of PMF, BiasedMF, NMF, BeMF, BNMF, URP)")]
pub struct UnknownModel(pub String);

impl FromStr for ModelKind {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownModel(s.to_owned()))
    }
}

/// Hyperparameters of one training run. Fields that do not apply to
/// `kind` are ignored but kept for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Latent factor count.
    pub k: usize,
    pub iterations: usize,
    /// Learning rate for PMF, BiasedMF and BeMF.
    pub learning_rate: f64,
    /// L2 weight: λ for PMF/BiasedMF, η for BeMF.
    pub regularization: f64,
    /// Dirichlet prior of BNMF, in (0, 1).
    pub bnmf_alpha: f64,
    /// Beta prior of BNMF, > 0.
    pub bnmf_beta: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            k: 8,
            iterations: 50,
            learning_rate: 0.01,
            regularization: 0.05,
            bnmf_alpha: 0.8,
            bnmf_beta: 5.0,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let bad = |msg: String| Err(FitError::InvalidConfig(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1".into());
        }
        if self.kind.uses_gradient_steps() {
            if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
                return bad(format!("learning rate {} must be >= 0", self.learning_rate));
            }
            if !(self.regularization.is_finite() && self.regularization >= 0.0) {
                return bad(format!("regularization {} must be >= 0", self.regularization));
            }
        }
        if self.kind == ModelKind::Bnmf {
            if !(self.bnmf_alpha > 0.0 && self.bnmf_alpha < 1.0) {
                return bad(format!("BNMF alpha {} must lie in (0, 1)", self.bnmf_alpha));
            }
            if !(self.bnmf_beta > 0.0 && self.bnmf_beta.is_finite()) {
                return bad(format!("BNMF beta {} must be > 0", self.bnmf_beta));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FitError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training data unsuitable for {kind}: {message}")]
    UnsuitableData { kind: ModelKind, message: String },
    #[error(
        "{kind} diverged at iteration {iteration} (learning rate {learning_rate}, regularization {regularization})"
    )]
    Diverged {
        kind: ModelKind,
        iteration: usize,
        learning_rate: f64,
        regularization: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PredictError {
    #[error("pair ({user}, {item}) outside the {num_users}x{num_items} index space")]
    OutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
}

/// Dense row-major matrix of latent factors, one row per user or item.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    rows: usize,
    k: usize,
    data: Vec<f64>,
}

impl Factors {
    pub fn zeros(rows: usize, k: usize) -> Self {
        Self {
            rows,
            k,
            data: vec![0.0; rows * k],
        }
    }

    pub fn from_fn(rows: usize, k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * k);
        for r in 0..rows {
            for c in 0..k {
                data.push(f(r, c));
            }
        }
        Self { rows, k, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == k), "ragged factor rows");
        Self {
            rows: rows.len(),
            k,
            data: rows.concat(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn k(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.k..(r + 1) * self.k]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.k..(r + 1) * self.k]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// True when every entry is finite and within [`DIVERGENCE_LIMIT`].
    pub fn is_bounded(&self) -> bool {
        self.data
            .iter()
            .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_LIMIT)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Which users and items have at least one training rating.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Support {
    pub users: Vec<bool>,
    pub items: Vec<bool>,
}

impl Support {
    pub fn of(train: &RatingDataset) -> Self {
        Self {
            users: (0..train.num_users())
                .map(|u| !train.user_ratings(u).is_empty())
                .collect(),
            items: (0..train.num_items())
                .map(|i| !train.item_ratings(i).is_empty())
                .collect(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub(crate) fn check(&self, user: usize, item: usize) -> Result<(), PredictError> {
        if user < self.users.len() && item < self.items.len() {
            Ok(())
        } else {
            Err(PredictError::OutOfRange {
                user,
                item,
                num_users: self.users.len(),
                num_items: self.items.len(),
            })
        }
    }

    pub(crate) fn known(&self, user: usize, item: usize) -> bool {
        self.users[user] && self.items[item]
    }
}

/// Global, user and item offsets of BiasedMF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Biases {
    pub global: f64,
    pub user: Vec<f64>,
    pub item: Vec<f64>,
}

/// Dot-product model shared by PMF, BiasedMF and NMF.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorModel {
    pub p: Factors,
    pub q: Factors,
    pub biases: Option<Biases>,
    pub scale: ScoreScale,
    /// Training-set mean, used when the user or item has no training data.
    pub fallback: f64,
    pub support: Support,
}

impl FactorModel {
    /// Raw dot product `p_u · q_i`, without biases or clamping.
    pub fn dot(&self, user: usize, item: usize) -> f64 {
        dot(self.p.row(user), self.q.row(item))
    }

    /// Unclamped prediction including cold-start handling.
    pub fn raw_prediction(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        self.support.check(user, item)?;
        let known_user = self.support.users[user];
        let known_item = self.support.items[item];
        Ok(match &self.biases {
            Some(b) => match (known_user, known_item) {
                (true, true) => b.global + b.user[user] + b.item[item] + self.dot(user, item),
                (false, true) => b.global + b.item[item],
                (true, false) => b.global + b.user[user],
                (false, false) => b.global,
            },
            None if known_user && known_item => self.dot(user, item),
            None => self.fallback,
        })
    }

    /// Prediction clamped onto the rating scale.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        Ok(self.scale.clamp(self.raw_prediction(user, item)?))
    }
}

/// A fitted model of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "state")]
pub enum TrainedModel {
    #[serde(rename = "PMF")]
    Pmf(FactorModel),
    #[serde(rename = "BiasedMF")]
    BiasedMf(FactorModel),
    #[serde(rename = "NMF")]
    Nmf(FactorModel),
    #[serde(rename = "BeMF")]
    Bemf(BemfModel),
    #[serde(rename = "BNMF")]
    Bnmf(BnmfModel),
    #[serde(rename = "URP")]
    Urp(UrpModel),
}

impl TrainedModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            TrainedModel::Pmf(_) => ModelKind::Pmf,
            TrainedModel::BiasedMf(_) => ModelKind::BiasedMf,
            TrainedModel::Nmf(_) => ModelKind::Nmf,
            TrainedModel::Bemf(_) => ModelKind::Bemf,
            TrainedModel::Bnmf(_) => ModelKind::Bnmf,
            TrainedModel::Urp(_) => ModelKind::Urp,
        }
    }

    /// Rating prediction on the dataset's scale.
    pub fn predict(&self, user: usize, item: usize) -> Result<f64, PredictError> {
        match self {
            TrainedModel::Pmf(m) | TrainedModel::BiasedMf(m) | TrainedModel::Nmf(m) => m.predict(user, item),
            TrainedModel::Bemf(m) => m.predict(user, item),
            TrainedModel::Bnmf(m) => m.predict(user, item),
            TrainedModel::Urp(m) => m.predict(user, item),
        }
    }

    pub fn scale(&self) -> &ScoreScale {
        match self {
            TrainedModel::Pmf(m) | TrainedModel::BiasedMf(m) | TrainedModel::Nmf(m) => &m.scale,
            TrainedModel::Bemf(m) => &m.scale,
            TrainedModel::Bnmf(m) => &m.scale,
            TrainedModel::Urp(m) => &m.scale,
        }
    }

    pub fn num_users(&self) -> usize {
        self.support().num_users()
    }

    pub fn num_items(&self) -> usize {
        self.support().num_items()
    }

    fn support(&self) -> &Support {
        match self {
            TrainedModel::Pmf(m) | TrainedModel::BiasedMf(m) | TrainedModel::Nmf(m) => &m.support,
            TrainedModel::Bemf(m) => &m.support,
            TrainedModel::Bnmf(m) => &m.support,
            TrainedModel::Urp(m) => &m.support,
        }
    }

    /// The quantity each model's training drives down, evaluated on `train`:
    ///
    /// * PMF, BiasedMF: regularized squared error;
    /// * NMF: squared error over observed entries;
    /// * BeMF: negative penalized log-likelihood summed over scores;
    /// * BNMF: squared error of the continuous prediction;
    /// * URP: negative log-likelihood of the observed ratings.
    pub fn training_objective(&self, train: &RatingDataset, config: &ModelConfig) -> f64 {
        match self {
            TrainedModel::Pmf(m) => pmf::objective(train, &m.p, &m.q, config.regularization),
            TrainedModel::BiasedMf(m) => biased::objective(train, m, config.regularization),
            TrainedModel::Nmf(m) => nmf::objective(train, &m.p, &m.q),
            TrainedModel::Bemf(m) => -m.penalized_log_likelihood(train, config.regularization),
            TrainedModel::Bnmf(m) => m.squared_error(train),
            TrainedModel::Urp(m) => -m.log_likelihood(train),
        }
    }
}

/// Trains the model selected by `config.kind`.
pub fn fit(config: &ModelConfig, train: &RatingDataset) -> Result<TrainedModel, FitError> {
    config.validate()?;
    if train.is_empty() {
        return Err(FitError::EmptyTrainSet);
    }
    Ok(match config.kind {
        ModelKind::Pmf => TrainedModel::Pmf(pmf::fit(train, &pmf::Params::from(config))?),
        ModelKind::BiasedMf => TrainedModel::BiasedMf(biased::fit(train, &pmf::Params::from(config))?),
        ModelKind::Nmf => TrainedModel::Nmf(nmf::fit(train, config.k, config.iterations, config.seed)?),
        ModelKind::Bemf => TrainedModel::Bemf(bemf::fit(train, &pmf::Params::from(config))?),
        ModelKind::Bnmf => TrainedModel::Bnmf(bnmf::fit(train, &bnmf::Params::from(config))?),
        ModelKind::Urp => TrainedModel::Urp(urp::fit(train, config.k, config.iterations, config.seed)?),
    })
}

pub(crate) fn train_mean(train: &RatingDataset) -> Result<f64, FitError> {
    global_mean(train).map_err(|_| FitError::EmptyTrainSet)
}
