//! Rating datasets: loading, dense re-indexing, dual sparse indexing, and
//! seeded k-fold splitting.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: rating {value} is not on the {scale} scale")]
    OutOfScale {
        line: usize,
        value: f64,
        scale: ScoreScale,
    },
    #[error("line {line}: duplicate rating for user {user:?}, item {item:?}")]
    Duplicate {
        line: usize,
        user: String,
        item: String,
    },
    #[error("invalid score scale: {0}")]
    InvalidScale(String),
    #[error("invalid fold request: {0}")]
    InvalidSplit(String),
    #[error("dataset has no ratings")]
    Empty,
    #[error("rating ({user}, {item}) outside the {num_users}x{num_items} index space")]
    IndexOutOfRange {
        user: usize,
        item: usize,
        num_users: usize,
        num_items: usize,
    },
}

/// The discrete grid of legal scores, plus the relevance threshold θ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreScale {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub threshold: f64,
}

impl ScoreScale {
    pub fn new(min: f64, max: f64, step: f64, threshold: f64) -> Result<Self, DataError> {
        let scale = Self {
            min,
            max,
            step,
            threshold,
        };
        scale.validate()?;
        Ok(scale)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let finite = [self.min, self.max, self.step, self.threshold]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.step <= 0.0 || self.max <= self.min {
            return Err(DataError::InvalidScale(format!("{self}")));
        }
        let steps = (self.max - self.min) / self.step;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(DataError::InvalidScale(format!(
                "range {}..{} is not a whole number of {} steps",
                self.min, self.max, self.step
            )));
        }
        if self.threshold < self.min || self.threshold > self.max {
            return Err(DataError::InvalidScale(format!(
                "threshold {} outside {}..{}",
                self.threshold, self.min, self.max
            )));
        }
        Ok(())
    }

    /// 1..5 stars, θ = 4.
    pub fn one_to_five() -> Self {
        Self {
            min: 1.0,
            max: 5.0,
            step: 1.0,
            threshold: 4.0,
        }
    }

    /// Number of distinct scores D.
    pub fn num_scores(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn score(&self, index: usize) -> f64 {
        self.min + index as f64 * self.step
    }

    pub fn scores(&self) -> Vec<f64> {
        (0..self.num_scores()).map(|j| self.score(j)).collect()
    }

    /// Position of `value` on the grid, if it lies on it.
    pub fn index_of(&self, value: f64) -> Option<usize> {
        let pos = (value - self.min) / self.step;
        let rounded = pos.round();
        if (pos - rounded).abs() > 1e-6 || rounded < 0.0 {
            return None;
        }
        let j = rounded as usize;
        (j < self.num_scores()).then_some(j)
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_relevant(&self, value: f64) -> bool {
        value >= self.threshold
    }
}

impl fmt::Display for ScoreScale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} to {} step {} (threshold {})",
            self.min, self.max, self.step, self.threshold
        )
    }
}

/// One observed rating in dense index space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rating {
    pub user: usize,
    pub item: usize,
    pub value: f64,
}

/// A rating seen from one side of the matrix: `index` is the item when the
/// entry sits in a user's row and the user when it sits in an item's column.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub index: usize,
    pub value: f64,
}

/// Bijection between original string ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    ids: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl IdMap {
    /// Returns the index for `id`, assigning the next one on first sight.
    pub fn intern(&mut self, id: &str) -> usize {
        if let Some(&ix) = self.lookup.get(id) {
            return ix;
        }
        let ix = self.ids.len();
        self.ids.push(id.to_owned());
        self.lookup.insert(id.to_owned(), ix);
        ix
    }

    pub fn index(&self, id: &str) -> Option<usize> {
        self.lookup.get(id).copied()
    }

    pub fn id(&self, index: usize) -> Option<&str> {
        self.ids.get(index).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Identity map `"0".."n-1"` for datasets built in memory.
    pub fn sequential(n: usize) -> Self {
        let mut map = Self::default();
        for i in 0..n {
            map.intern(&i.to_string());
        }
        map
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMaps {
    pub users: IdMap,
    pub items: IdMap,
}

/// Compressed rows: `offsets[r]..offsets[r+1]` indexes `entries`.
#[derive(Debug, Clone, PartialEq)]
struct Csr {
    offsets: Vec<usize>,
    entries: Vec<Entry>,
}

impl Csr {
    fn build(rows: usize, ratings: &[Rating], by_user: bool) -> Self {
        let key = |r: &Rating| if by_user { (r.user, r.item) } else { (r.item, r.user) };
        let mut counts = vec![0usize; rows + 1];
        for r in ratings {
            counts[key(r).0 + 1] += 1;
        }
        for i in 0..rows {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut fill = counts;
        let mut entries = vec![Entry { index: 0, value: 0.0 }; ratings.len()];
        for r in ratings {
            let (row, col) = key(r);
            entries[fill[row]] = Entry {
                index: col,
                value: r.value,
            };
            fill[row] += 1;
        }
        for row in 0..rows {
            entries[offsets[row]..offsets[row + 1]].sort_unstable_by_key(|e| e.index);
        }
        Self { offsets, entries }
    }

    fn row(&self, r: usize) -> &[Entry] {
        &self.entries[self.offsets[r]..self.offsets[r + 1]]
    }
}

/// Immutable sparse user×item rating store with by-user and by-item views.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingDataset {
    num_users: usize,
    num_items: usize,
    ratings: Vec<Rating>,
    by_user: Csr,
    by_item: Csr,
    scale: ScoreScale,
    ids: Arc<IdMaps>,
}

impl RatingDataset {
    /// Builds a dataset over a fixed index space. Every rating must lie in
    /// range, sit on the score grid, and be the only one for its pair.
    pub fn new(
        num_users: usize,
        num_items: usize,
        ratings: Vec<Rating>,
        scale: ScoreScale,
    ) -> Result<Self, DataError> {
        let ids = IdMaps {
            users: IdMap::sequential(num_users),
            items: IdMap::sequential(num_items),
        };
        Self::with_ids(num_users, num_items, ratings, scale, Arc::new(ids))
    }

    fn with_ids(
        num_users: usize,
        num_items: usize,
        ratings: Vec<Rating>,
        scale: ScoreScale,
        ids: Arc<IdMaps>,
    ) -> Result<Self, DataError> {
        scale.validate()?;
        for (n, r) in ratings.iter().enumerate() {
            if r.user >= num_users || r.item >= num_items {
                return Err(DataError::IndexOutOfRange {
                    user: r.user,
                    item: r.item,
                    num_users,
                    num_items,
                });
            }
            if scale.index_of(r.value).is_none() {
                return Err(DataError::OutOfScale {
                    line: n + 1,
                    value: r.value,
                    scale,
                });
            }
        }
        let by_user = Csr::build(num_users, &ratings, true);
        for u in 0..num_users {
            if let Some(w) = by_user.row(u).windows(2).find(|w| w[0].index == w[1].index) {
                return Err(DataError::Duplicate {
                    line: 0,
                    user: u.to_string(),
                    item: w[0].index.to_string(),
                });
            }
        }
        let by_item = Csr::build(num_items, &ratings, false);
        Ok(Self {
            num_users,
            num_items,
            ratings,
            by_user,
            by_item,
            scale,
            ids,
        })
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.ratings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratings.is_empty()
    }

    /// Ratings in load order.
    pub fn ratings(&self) -> &[Rating] {
        &self.ratings
    }

    /// Ratings of user `u`, ascending by item.
    pub fn user_ratings(&self, u: usize) -> &[Entry] {
        self.by_user.row(u)
    }

    /// Ratings of item `i`, ascending by user.
    pub fn item_ratings(&self, i: usize) -> &[Entry] {
        self.by_item.row(i)
    }

    pub fn scale(&self) -> &ScoreScale {
        &self.scale
    }

    pub fn ids(&self) -> &IdMaps {
        &self.ids
    }

    /// Same index space and ids, different ratings.
    pub fn subset(&self, ratings: Vec<Rating>) -> Result<Self, DataError> {
        Self::with_ids(
            self.num_users,
            self.num_items,
            ratings,
            self.scale,
            Arc::clone(&self.ids),
        )
    }
}

/// How columns are separated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delimiter {
    Comma,
    Tab,
    Semicolon,
    /// Any run of spaces or tabs.
    Whitespace,
}

/// Describes a delimiter-separated rating file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFormat {
    pub delimiter: Delimiter,
    pub has_header: bool,
    pub user_column: usize,
    pub item_column: usize,
    pub rating_column: usize,
    pub scale: ScoreScale,
    /// Rating values that mark "no rating" and are dropped on load.
    #[serde(default)]
    pub skip_values: Vec<f64>,
}

impl DatasetFormat {
    /// MovieLens `ratings.csv`: `userId,movieId,rating,timestamp` with header.
    pub fn movielens() -> Self {
        Self {
            delimiter: Delimiter::Comma,
            has_header: true,
            user_column: 0,
            item_column: 1,
            rating_column: 2,
            scale: ScoreScale::one_to_five(),
            skip_values: Vec::new(),
        }
    }

    /// MovieLens 100K `u.data`: tab separated, no header.
    pub fn movielens_100k() -> Self {
        Self {
            delimiter: Delimiter::Tab,
            has_header: false,
            ..Self::movielens()
        }
    }

    /// MovieLens 1M `ratings.dat` is `::` separated; we accept the common
    /// CSV conversion with the MovieLens column layout.
    pub fn movielens_1m() -> Self {
        Self::movielens()
    }

    /// FilmTrust `ratings.txt`: `user item rating`, whitespace separated.
    pub fn filmtrust() -> Self {
        Self {
            delimiter: Delimiter::Whitespace,
            has_header: false,
            user_column: 0,
            item_column: 1,
            rating_column: 2,
            scale: ScoreScale {
                min: 0.0,
                max: 5.0,
                step: 0.5,
                threshold: 4.0,
            },
            skip_values: Vec::new(),
        }
    }

    /// MyAnimeList `rating.csv`: `user_id,anime_id,rating`; −1 marks
    /// "watched but not rated".
    pub fn myanimelist() -> Self {
        Self {
            delimiter: Delimiter::Comma,
            has_header: true,
            user_column: 0,
            item_column: 1,
            rating_column: 2,
            scale: ScoreScale {
                min: 1.0,
                max: 10.0,
                step: 1.0,
                threshold: 8.0,
            },
            skip_values: vec![-1.0],
        }
    }

    /// Looks up a named preset.
    pub fn preset(name: &str) -> Option<Self> {
        match name.to_ascii_lowercase().replace('_', "-").as_str() {
            "movielens" => Some(Self::movielens()),
            "movielens100k" | "movielens-100k" | "ml-100k" => Some(Self::movielens_100k()),
            "movielens1m" | "movielens-1m" | "ml-1m" => Some(Self::movielens_1m()),
            "filmtrust" => Some(Self::filmtrust()),
            "myanimelist" => Some(Self::myanimelist()),
            _ => None,
        }
    }

    pub const PRESETS: &'static [&'static str] = &[
        "movielens",
        "movielens100k",
        "movielens1m",
        "filmtrust",
        "myanimelist",
    ];
}

/// Loads a rating file. Ids are re-indexed densely in order of first
/// appearance.
pub fn load_ratings(path: impl AsRef<Path>, format: &DatasetFormat) -> Result<RatingDataset, DataError> {
    let path = path.as_ref();
    let io_err = |source| DataError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;
    read_ratings(file, format).map_err(|e| match e {
        DataError::Io { source, .. } => io_err(source),
        other => other,
    })
}

/// Like [`load_ratings`] but over any reader.
pub fn read_ratings<R: Read>(reader: R, format: &DatasetFormat) -> Result<RatingDataset, DataError> {
    format.scale.validate()?;
    let mut ids = IdMaps::default();
    let mut ratings = Vec::new();
    let mut seen: HashMap<(usize, usize), usize> = HashMap::new();

    let mut push = |line: usize, fields: &[&str]| -> Result<(), DataError> {
        let width = format
            .user_column
            .max(format.item_column)
            .max(format.rating_column)
            + 1;
        if fields.len() < width {
            return Err(DataError::Malformed {
                line,
                message: format!("expected at least {width} fields, found {}", fields.len()),
            });
        }
        let raw = fields[format.rating_column].trim();
        let value: f64 = raw.parse().map_err(|_| DataError::Malformed {
            line,
            message: format!("unparsable rating {raw:?}"),
        })?;
        if format.skip_values.contains(&value) {
            return Ok(());
        }
        if !value.is_finite() || format.scale.index_of(value).is_none() {
            return Err(DataError::OutOfScale {
                line,
                value,
                scale: format.scale,
            });
        }
        let user_id = fields[format.user_column].trim();
        let item_id = fields[format.item_column].trim();
        let user = ids.users.intern(user_id);
        let item = ids.items.intern(item_id);
        if seen.insert((user, item), line).is_some() {
            return Err(DataError::Duplicate {
                line,
                user: user_id.to_owned(),
                item: item_id.to_owned(),
            });
        }
        // Snap onto the grid so 3.4999999 and 3.5 agree.
        let value = format.scale.score(format.scale.index_of(value).unwrap());
        ratings.push(Rating { user, item, value });
        Ok(())
    };

    let io = |source| DataError::Io {
        path: String::new(),
        source,
    };
    match format.delimiter {
        Delimiter::Whitespace => {
            let reader = BufReader::new(reader);
            let mut first = true;
            for (n, line) in reader.lines().enumerate() {
                let line = line.map_err(io)?;
                if std::mem::take(&mut first) && format.has_header {
                    continue;
                }
                let fields: Vec<&str> = line.split_whitespace().collect();
                if fields.is_empty() {
                    continue;
                }
                push(n + 1, &fields)?;
            }
        }
        delim => {
            let byte = match delim {
                Delimiter::Comma => b',',
                Delimiter::Tab => b'\t',
                Delimiter::Semicolon => b';',
                Delimiter::Whitespace => unreachable!(),
            };
            let mut reader = csv::ReaderBuilder::new()
                .delimiter(byte)
                .has_headers(format.has_header)
                .flexible(true)
                .quoting(true)
                .double_quote(true)
                .from_reader(reader);
            for record in reader.records() {
                let record = record.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    match e.into_kind() {
                        csv::ErrorKind::Io(source) => io(source),
                        other => DataError::Malformed {
                            line,
                            message: format!("{other:?}"),
                        },
                    }
                })?;
                let line = record.position().map_or(0, |p| p.line() as usize);
                let fields: Vec<&str> = record.iter().collect();
                if fields.len() == 1 && fields[0].trim().is_empty() {
                    continue;
                }
                push(line, &fields)?;
            }
        }
    }

    let num_users = ids.users.len();
    let num_items = ids.items.len();
    RatingDataset::with_ids(num_users, num_items, ratings, format.scale, Arc::new(ids))
}

/// Size and density summary of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub num_users: usize,
    pub num_items: usize,
    pub num_ratings: usize,
    pub sparsity_percent: f64,
}

impl fmt::Display for Stats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} users, {} items, {} ratings, sparsity {:.2}%",
            self.num_users, self.num_items, self.num_ratings, self.sparsity_percent
        )
    }
}

pub fn dataset_stats(ds: &RatingDataset) -> Stats {
    let cells = ds.num_users() as f64 * ds.num_items() as f64;
    let sparsity_percent = if cells == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - ds.len() as f64 / cells)
    };
    Stats {
        num_users: ds.num_users(),
        num_items: ds.num_items(),
        num_ratings: ds.len(),
        sparsity_percent,
    }
}

pub fn global_mean(ds: &RatingDataset) -> Result<f64, DataError> {
    if ds.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(ds.ratings().iter().map(|r| r.value).sum::<f64>() / ds.len() as f64)
}

/// One cross-validation fold: the training dataset (full index space) and
/// the held-out ratings, sorted by (user, item).
#[derive(Debug, Clone)]
pub struct FoldSplit {
    pub fold_index: usize,
    pub train: RatingDataset,
    pub test: Vec<Rating>,
}

/// Fold index of every rating (in load order) for a seeded k-way split.
///
/// Ratings are shuffled with [`SeededRng`]; the first `n mod k` folds take
/// `ceil(n/k)` ratings and the rest `floor(n/k)`.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Result<Vec<usize>, DataError> {
    if k < 2 {
        return Err(DataError::InvalidSplit(format!("k = {k}, need k >= 2")));
    }
    if k > n {
        return Err(DataError::InvalidSplit(format!(
            "k = {k} exceeds the {n} available ratings"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let base = n / k;
    let extra = n % k;
    let mut assignment = vec![0; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &r in &order[pos..pos + size] {
            assignment[r] = fold;
        }
        pos += size;
    }
    Ok(assignment)
}

pub fn kfold_split(ds: &RatingDataset, k: usize, seed: u64) -> Result<Vec<FoldSplit>, DataError> {
    let assignment = fold_assignment(ds.len(), k, seed)?;
    (0..k)
        .map(|fold| {
            let mut train = Vec::with_capacity(ds.len());
            let mut test = Vec::with_capacity(ds.len() / k + 1);
            for (r, &f) in ds.ratings().iter().zip(&assignment) {
                if f == fold {
                    test.push(*r);
                } else {
                    train.push(*r);
                }
            }
            test.sort_by_key(|r| (r.user, r.item));
            Ok(FoldSplit {
                fold_index: fold,
                train: ds.subset(train)?,
                test,
            })
        })
        .collect()
}
