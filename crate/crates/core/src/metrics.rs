//! Prediction, ranking and beyond-accuracy quality measures.
//!
//! Rankings are built per user over that user's held-out items: candidates
//! are sorted by predicted rating, highest first, with ties going to the
//! lower item index. An item is relevant when its held-out rating reaches
//! the scale's threshold. Every list metric is computed per user and then
//! averaged over the users it is defined for, in ascending user order.
//!
//! | metric | per-user value at N | users counted |
//! |--------|---------------------|---------------|
//! | precision | relevant in top N / list length | non-empty list |
//! | recall | relevant in top N / relevant held out | at least one relevant |
//! | NDCG | DCG / ideal DCG, gain = rating, discount log2(pos + 1) | ideal DCG > 0 |
//! | novelty | mean distance from top N to the user's training items | some training items |
//! | diversity | mean pairwise distance within top N | at least 2 recommended |
//!
//! The distance between two items is `1 − cos(x_i, x_j)` where `x_i` is the
//! item's column of the training matrix with unrated cells read as zero.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Rating, RatingDataset, ScoreScale};
use crate::models::{PredictError, TrainedModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("test set is empty")]
    EmptyTest,
    #[error(transparent)]
    Predict(#[from] PredictError),
}

/// Mean absolute error of the model's clamped predictions.
pub fn mae(model: &TrainedModel, test: &[Rating]) -> Result<f64, MetricError> {
    if test.is_empty() {
        return Err(MetricError::EmptyTest);
    }
    let mut total = 0.0;
    for r in test {
        total += (r.value - model.predict(r.user, r.item)?).abs();
    }
    Ok(total / test.len() as f64)
}

/// Held-out ratings grouped by user, items ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    users: Vec<Vec<(usize, f64)>>,
}

impl TestSet {
    pub fn new(num_users: usize, test: &[Rating]) -> Self {
        let mut users = vec![Vec::new(); num_users];
        for r in test {
            users[r.user].push((r.item, r.value));
        }
        for row in &mut users {
            row.sort_by_key(|&(item, _)| item);
        }
        Self { users }
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    /// `(item, rating)` pairs held out for `user`.
    pub fn user(&self, user: usize) -> &[(usize, f64)] {
        &self.users[user]
    }

    pub fn rating(&self, user: usize, item: usize) -> Option<f64> {
        let row = &self.users[user];
        row.binary_search_by_key(&item, |&(i, _)| i).ok().map(|k| row[k].1)
    }
}

/// Items recommended to one user, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RecommendationList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RecommendationList {
    /// Sorts `(item, score)` pairs by score descending, then item ascending,
    /// and keeps the first `n`.
    pub fn from_scores(user: usize, mut scored: Vec<(usize, f64)>, n: usize) -> Self {
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(n);
        let (items, scores) = scored.into_iter().unzip();
        Self { user, items, scores }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The first `min(n, len)` items.
    pub fn top(&self, n: usize) -> &[usize] {
        &self.items[..n.min(self.items.len())]
    }
}

/// Ranks the given candidate items for `user` by the model's predictions.
pub fn recommend_top_n(
    model: &TrainedModel,
    user: usize,
    candidates: &[usize],
    n: usize,
) -> Result<RecommendationList, PredictError> {
    let scored = candidates
        .iter()
        .map(|&i| model.predict(user, i).map(|s| (i, s)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(RecommendationList::from_scores(user, scored, n))
}

/// Ranks every user's held-out items; users without any get an empty list.
pub fn recommend_all(model: &TrainedModel, test: &TestSet, n: usize) -> Result<Vec<RecommendationList>, PredictError> {
    (0..test.num_users())
        .map(|u| {
            let candidates: Vec<usize> = test.user(u).iter().map(|&(i, _)| i).collect();
            recommend_top_n(model, u, &candidates, n)
        })
        .collect()
}

fn macro_average(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (mut sum, mut count) = (0.0, 0usize);
    for v in values.flatten() {
        sum += v;
        count += 1;
    }
    (count > 0).then(|| sum / count as f64)
}

fn hits(list: &RecommendationList, test: &TestSet, scale: &ScoreScale, n: usize) -> usize {
    list.top(n)
        .iter()
        .filter(|&&i| test.rating(list.user, i).is_some_and(|r| scale.is_relevant(r)))
        .count()
}

pub fn user_precision(list: &RecommendationList, test: &TestSet, scale: &ScoreScale, n: usize) -> Option<f64> {
    let len = list.top(n).len();
    (len > 0).then(|| hits(list, test, scale, n) as f64 / len as f64)
}

pub fn user_recall(list: &RecommendationList, test: &TestSet, scale: &ScoreScale, n: usize) -> Option<f64> {
    let relevant = test.user(list.user).iter().filter(|&&(_, r)| scale.is_relevant(r)).count();
    (relevant > 0).then(|| hits(list, test, scale, n) as f64 / relevant as f64)
}

/// `Σ_pos gain_pos / log2(pos + 1)` over the first `n` gains.
pub fn dcg(gains: &[f64], n: usize) -> f64 {
    gains
        .iter()
        .take(n)
        .enumerate()
        .map(|(pos, g)| g / ((pos + 2) as f64).log2())
        .sum()
}

pub fn user_ndcg(list: &RecommendationList, test: &TestSet, n: usize) -> Option<f64> {
    let gains: Vec<f64> = list
        .top(n)
        .iter()
        .map(|&i| test.rating(list.user, i).unwrap_or(0.0))
        .collect();
    let mut ideal: Vec<f64> = test.user(list.user).iter().map(|&(_, r)| r).collect();
    ideal.sort_by(|a, b| b.total_cmp(a));
    let idcg = dcg(&ideal, n);
    (idcg > 0.0).then(|| dcg(&gains, n) / idcg)
}

pub fn precision_at_n(lists: &[RecommendationList], test: &TestSet, scale: &ScoreScale, n: usize) -> Option<f64> {
    macro_average(lists.iter().map(|l| user_precision(l, test, scale, n)))
}

pub fn recall_at_n(lists: &[RecommendationList], test: &TestSet, scale: &ScoreScale, n: usize) -> Option<f64> {
    macro_average(lists.iter().map(|l| user_recall(l, test, scale, n)))
}

pub fn ndcg_at_n(lists: &[RecommendationList], test: &TestSet, n: usize) -> Option<f64> {
    macro_average(lists.iter().map(|l| user_ndcg(l, test, n)))
}

/// Catalogs up to this size get a dense precomputed distance table.
pub const DENSE_DISTANCE_LIMIT: usize = 6000;

/// Cosine distances between items of one training matrix.
///
/// Small catalogs store the upper triangle of the similarity matrix; larger
/// ones compute each similarity from the sparse columns on demand.
#[derive(Debug, Clone)]
pub struct ItemDistance {
    items: usize,
    norms: Vec<f64>,
    packed: Option<Vec<f64>>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl ItemDistance {
    pub fn new(train: &RatingDataset) -> Self {
        Self::with_dense_limit(train, DENSE_DISTANCE_LIMIT)
    }

    pub fn with_dense_limit(train: &RatingDataset, limit: usize) -> Self {
        let items = train.num_items();
        let norms: Vec<f64> = (0..items)
            .map(|i| train.item_ratings(i).iter().map(|e| e.value * e.value).sum::<f64>().sqrt())
            .collect();
        if items <= limit {
            let mut packed = vec![0.0; items * items.saturating_sub(1) / 2];
            for u in 0..train.num_users() {
                let row = train.user_ratings(u);
                for (a, ea) in row.iter().enumerate() {
                    let base = packed_row(items, ea.index);
                    for eb in &row[a + 1..] {
                        packed[base + eb.index - ea.index - 1] += ea.value * eb.value;
                    }
                }
            }
            Self {
                items,
                norms,
                packed: Some(packed),
                columns: Vec::new(),
            }
        } else {
            let columns = (0..items)
                .map(|i| train.item_ratings(i).iter().map(|e| (e.index, e.value)).collect())
                .collect();
            Self {
                items,
                norms,
                packed: None,
                columns,
            }
        }
    }

    pub fn num_items(&self) -> usize {
        self.items
    }

    /// Cosine similarity in [0, 1]; 0 when either item has no ratings.
    pub fn similarity(&self, a: usize, b: usize) -> f64 {
        if a == b {
            return if self.norms[a] > 0.0 { 1.0 } else { 0.0 };
        }
        let (i, j) = if a < b { (a, b) } else { (b, a) };
        let denom = self.norms[i] * self.norms[j];
        if denom == 0.0 {
            return 0.0;
        }
        let dot = match &self.packed {
            Some(p) => p[packed_row(self.items, i) + j - i - 1],
            None => sparse_dot(&self.columns[i], &self.columns[j]),
        };
        (dot / denom).clamp(0.0, 1.0)
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        1.0 - self.similarity(a, b)
    }
}

/// Offset of row `i` in the packed strict upper triangle.
fn packed_row(n: usize, i: usize) -> usize {
    i * n - i * (i + 1) / 2
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut x, mut y, mut total) = (0, 0, 0.0);
    while x < a.len() && y < b.len() {
        match a[x].0.cmp(&b[y].0) {
            std::cmp::Ordering::Less => x += 1,
            std::cmp::Ordering::Greater => y += 1,
            std::cmp::Ordering::Equal => {
                total += a[x].1 * b[y].1;
                x += 1;
                y += 1;
            }
        }
    }
    total
}

pub fn user_novelty(list: &RecommendationList, train: &RatingDataset, dist: &ItemDistance, n: usize) -> Option<f64> {
    let known = train.user_ratings(list.user);
    let top = list.top(n);
    if known.is_empty() || top.is_empty() {
        return None;
    }
    let total: f64 = top
        .iter()
        .map(|&i| known.iter().map(|e| dist.distance(i, e.index)).sum::<f64>() / known.len() as f64)
        .sum();
    Some(total / top.len() as f64)
}

pub fn user_diversity(list: &RecommendationList, dist: &ItemDistance, n: usize) -> Option<f64> {
    let top = list.top(n);
    if top.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    for (a, &i) in top.iter().enumerate() {
        for &j in &top[a + 1..] {
            total += dist.distance(i, j);
        }
    }
    let pairs = top.len() * (top.len() - 1) / 2;
    Some(total / pairs as f64)
}

pub fn novelty_at_n(lists: &[RecommendationList], train: &RatingDataset, dist: &ItemDistance, n: usize) -> Option<f64> {
    macro_average(lists.iter().map(|l| user_novelty(l, train, dist, n)))
}

pub fn diversity_at_n(lists: &[RecommendationList], dist: &ItemDistance, n: usize) -> Option<f64> {
    macro_average(lists.iter().map(|l| user_diversity(l, dist, n)))
}

/// Users left out of each list metric at the largest N.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedUsers {
    pub precision: usize,
    pub recall: usize,
    pub ndcg: usize,
    pub novelty: usize,
    pub diversity: usize,
}

/// All quality measures of one trained model on one fold. List metrics are
/// indexed by `N − 1`; `None` marks an N at which no user qualified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae: f64,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub ndcg: Vec<Option<f64>>,
    pub novelty: Vec<Option<f64>>,
    pub diversity: Vec<Option<f64>>,
    pub skipped: SkippedUsers,
}

/// The list metrics, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ListMetric {
    Precision,
    Recall,
    Ndcg,
    Novelty,
    Diversity,
}

impl ListMetric {
    pub const ALL: [ListMetric; 5] = [
        ListMetric::Precision,
        ListMetric::Recall,
        ListMetric::Ndcg,
        ListMetric::Novelty,
        ListMetric::Diversity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ListMetric::Precision => "precision",
            ListMetric::Recall => "recall",
            ListMetric::Ndcg => "ndcg",
            ListMetric::Novelty => "novelty",
            ListMetric::Diversity => "diversity",
        }
    }
}

impl std::fmt::Display for ListMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl MetricReport {
    pub fn series(&self, metric: ListMetric) -> &[Option<f64>] {
        match metric {
            ListMetric::Precision => &self.precision,
            ListMetric::Recall => &self.recall,
            ListMetric::Ndcg => &self.ndcg,
            ListMetric::Novelty => &self.novelty,
            ListMetric::Diversity => &self.diversity,
        }
    }

    pub fn n_max(&self) -> usize {
        self.precision.len()
    }
}

/// Evaluates `model` on one fold for N = 1..=`n_max`.
pub fn evaluate(
    model: &TrainedModel,
    train: &RatingDataset,
    test: &[Rating],
    dist: &ItemDistance,
    n_max: usize,
) -> Result<MetricReport, MetricError> {
    let mae = mae(model, test)?;
    let scale = *train.scale();
    let tests = TestSet::new(train.num_users(), test);
    let lists = recommend_all(model, &tests, n_max)?;
    let ns = 1..=n_max;
    let skipped = |f: &dyn Fn(&RecommendationList) -> Option<f64>| lists.iter().filter(|l| f(l).is_none()).count();
    Ok(MetricReport {
        mae,
        precision: ns.clone().map(|n| precision_at_n(&lists, &tests, &scale, n)).collect(),
        recall: ns.clone().map(|n| recall_at_n(&lists, &tests, &scale, n)).collect(),
        ndcg: ns.clone().map(|n| ndcg_at_n(&lists, &tests, n)).collect(),
        novelty: ns.clone().map(|n| novelty_at_n(&lists, train, dist, n)).collect(),
        diversity: ns.map(|n| diversity_at_n(&lists, dist, n)).collect(),
        skipped: SkippedUsers {
            precision: skipped(&|l| user_precision(l, &tests, &scale, n_max)),
            recall: skipped(&|l| user_recall(l, &tests, &scale, n_max)),
            ndcg: skipped(&|l| user_ndcg(l, &tests, n_max)),
            novelty: skipped(&|l| user_novelty(l, train, dist, n_max)),
            diversity: skipped(&|l| user_diversity(l, dist, n_max)),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FactorModel, Factors, Support};

    fn scale() -> ScoreScale {
        ScoreScale::one_to_five()
    }

    fn list(user: usize, items: &[usize]) -> RecommendationList {
        RecommendationList {
            user,
            items: items.to_vec(),
            scores: vec![0.0; items.len()],
        }
    }

    fn test_set(triples: &[(usize, usize, f64)]) -> TestSet {
        let users = triples.iter().map(|t| t.0).max().unwrap() + 1;
        let ratings: Vec<Rating> = triples.iter().map(|&(user, item, value)| Rating { user, item, value }).collect();
        TestSet::new(users, &ratings)
    }

    /// A PMF-shaped model whose predictions are `p_u · q_i` with k = 1.
    fn constant_model(users: usize, item_scores: &[f64]) -> TrainedModel {
        TrainedModel::Pmf(FactorModel {
            p: Factors::from_fn(users, 1, |_, _| 1.0),
            q: Factors::from_fn(item_scores.len(), 1, |i, _| item_scores[i]),
            biases: None,
            scale: scale(),
            fallback: 3.0,
            support: Support {
                users: vec![true; users],
                items: vec![true; item_scores.len()],
            },
        })
    }

    #[test]
    fn mae_examples() {
        let m = constant_model(1, &[2.0, 3.0]);
        let test = [Rating { user: 0, item: 0, value: 1.0 }, Rating { user: 0, item: 1, value: 5.0 }];
        assert_eq!(mae(&m, &test).unwrap(), 1.5);
        let exact = [Rating { user: 0, item: 0, value: 2.0 }, Rating { user: 0, item: 1, value: 3.0 }];
        assert_eq!(mae(&m, &exact).unwrap(), 0.0);
        assert_eq!(mae(&m, &[]), Err(MetricError::EmptyTest));

        let m = constant_model(1, &[3.0; 5]);
        let toy: Vec<Rating> = (0..5).map(|i| Rating { user: 0, item: i, value: 1.0 + i as f64 }).collect();
        assert!((mae(&m, &toy).unwrap() - 1.2).abs() < 1e-15);
    }

    #[test]
    fn ranking_rules() {
        let l = RecommendationList::from_scores(0, vec![(7, 4.2), (3, 4.2), (9, 5.0)], 2);
        assert_eq!(l.items, vec![9, 3]);
        let l = RecommendationList::from_scores(0, vec![(5, 1.0), (2, 1.0), (4, 1.0)], 10);
        assert_eq!(l.items, vec![2, 4, 5]);
        let m = constant_model(1, &[1.0, 2.0, 3.0]);
        assert_eq!(recommend_top_n(&m, 0, &[0, 1, 2], 10).unwrap().len(), 3);
    }

    #[test]
    fn precision_and_recall_examples() {
        let t = test_set(&[(0, 0, 5.0), (0, 1, 4.0), (1, 0, 5.0), (1, 1, 2.0)]);
        let lists = [list(0, &[0, 1]), list(1, &[0, 1])];
        assert_eq!(precision_at_n(&lists, &t, &scale(), 2), Some(0.75));
        assert_eq!(precision_at_n(&lists[..1], &t, &scale(), 2), Some(1.0));
        assert_eq!(precision_at_n(&[list(1, &[1])], &t, &scale(), 1), Some(0.0));

        let t = test_set(&[(0, 0, 5.0), (0, 1, 4.0), (0, 2, 4.0), (0, 3, 5.0), (0, 4, 1.0)]);
        assert_eq!(recall_at_n(&[list(0, &[0, 4])], &t, &scale(), 2), Some(0.25));
        assert_eq!(recall_at_n(&[list(0, &[0, 1, 2, 3])], &t, &scale(), 4), Some(1.0));
        let none = test_set(&[(0, 0, 1.0)]);
        assert_eq!(recall_at_n(&[list(0, &[0])], &none, &scale(), 1), None);
        assert_eq!(precision_at_n(&[list(0, &[])], &none, &scale(), 1), None);
    }

    #[test]
    fn ndcg_examples() {
        let t = test_set(&[(0, 0, 3.0), (0, 1, 5.0)]);
        let got = ndcg_at_n(&[list(0, &[0, 1])], &t, 2).unwrap();
        let want = (3.0 + 5.0 / 3f64.log2()) / (5.0 + 3.0 / 3f64.log2());
        assert!((got - want).abs() < 1e-15);
        assert!((got - 0.892_911_205_473_213).abs() < 1e-12);
        assert_eq!(ndcg_at_n(&[list(0, &[1, 0])], &t, 2), Some(1.0));
        let single = test_set(&[(0, 4, 2.0)]);
        assert_eq!(ndcg_at_n(&[list(0, &[4])], &single, 1), Some(1.0));
    }

    fn train(triples: &[(usize, usize, f64)], users: usize, items: usize) -> RatingDataset {
        let ratings = triples.iter().map(|&(user, item, value)| Rating { user, item, value }).collect();
        RatingDataset::new(users, items, ratings, scale()).unwrap()
    }

    #[test]
    fn distance_examples() {
        // Items 0 and 1 share ratings exactly; item 2 has disjoint raters.
        let tr = train(&[(0, 0, 4.0), (0, 1, 4.0), (1, 0, 2.0), (1, 1, 2.0), (2, 2, 5.0), (3, 3, 1.0)], 4, 5);
        for limit in [0, 100] {
            let d = ItemDistance::with_dense_limit(&tr, limit);
            assert!(d.distance(0, 1).abs() < 1e-15);
            assert_eq!(d.distance(0, 2), 1.0);
            assert_eq!(d.distance(2, 0), 1.0);
            assert_eq!(d.distance(4, 0), 1.0);
        }
    }

    #[test]
    fn distance_hand_cosines() {
        // Columns over users 0..3: a = (1, 2, 0), b = (2, 0, 1), c = (1, 1, 1).
        let tr = train(
            &[(0, 0, 1.0), (1, 0, 2.0), (0, 1, 2.0), (2, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0), (2, 2, 1.0)],
            3,
            3,
        );
        let cos = |x: [f64; 3], y: [f64; 3]| {
            let dot: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
            dot / (x.iter().map(|a| a * a).sum::<f64>().sqrt() * y.iter().map(|a| a * a).sum::<f64>().sqrt())
        };
        let (a, b, c) = ([1.0, 2.0, 0.0], [2.0, 0.0, 1.0], [1.0, 1.0, 1.0]);
        let want = ((1.0 - cos(a, b)) + (1.0 - cos(a, c)) + (1.0 - cos(b, c))) / 3.0;
        for limit in [0, 100] {
            let d = ItemDistance::with_dense_limit(&tr, limit);
            let got = diversity_at_n(&[list(0, &[0, 1, 2])], &d, 3).unwrap();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn novelty_and_diversity_bounds() {
        let tr = train(&[(0, 0, 4.0), (0, 1, 4.0), (1, 0, 2.0), (1, 1, 2.0), (2, 2, 5.0)], 3, 3);
        let d = ItemDistance::new(&tr);
        // User 1 knows item 0; recommending its twin is not novel, a disjoint item fully is.
        assert!(novelty_at_n(&[list(1, &[1])], &tr, &d, 1).unwrap().abs() < 1e-15);
        assert_eq!(novelty_at_n(&[list(1, &[2])], &tr, &d, 1), Some(1.0));
        assert!(diversity_at_n(&[list(0, &[0, 1])], &d, 2).unwrap().abs() < 1e-15);
        assert_eq!(diversity_at_n(&[list(0, &[1, 2])], &d, 2), Some(1.0));
        assert_eq!(diversity_at_n(&[list(0, &[1])], &d, 1), None);
    }

    #[test]
    fn evaluate_report_shape() {
        let tr = train(&[(0, 0, 4.0), (0, 1, 5.0), (1, 0, 2.0), (1, 2, 3.0)], 2, 4);
        let test = [
            Rating { user: 0, item: 2, value: 5.0 },
            Rating { user: 0, item: 3, value: 1.0 },
            Rating { user: 1, item: 1, value: 4.0 },
        ];
        let m = constant_model(2, &[3.0, 4.0, 2.0, 5.0]);
        let r = evaluate(&m, &tr, &test, &ItemDistance::new(&tr), 10).unwrap();
        assert_eq!(r.precision.len(), 10);
        assert_eq!(r.n_max(), 10);
        // User 0 ranks item 3 (irrelevant) above item 2; user 1 has one relevant item.
        assert_eq!(r.precision[0], Some(0.5));
        assert_eq!(r.recall[9], Some(1.0));
        assert_eq!(r.diversity[0], None);
        assert_eq!(r.skipped.diversity, 1);
        assert!((r.mae - (3.0 + 4.0 + 0.0) / 3.0).abs() < 1e-15);
    }
}
