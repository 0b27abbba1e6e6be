//! Hyperparameter grids, cross-validated trials and result tables.
//!
//! A run is fully determined by its [`ExperimentPlan`]: the folds come from
//! the master seed, every (config, fold) trial gets a seed derived from the
//! master seed and its position, and results are merged in trial order. Any
//! number of worker threads therefore produces the same [`AggregateResult`].
//!
//! Grid dimensions are expanded in the order k, iterations, learning rate,
//! regularization, BNMF α, BNMF β, keeping only those the model uses:
//!
//! | model | dimensions |
//! |-------|-----------|
//! | PMF, BiasedMF, BeMF | k, iterations, learning rate, regularization |
//! | NMF, URP | k, iterations |
//! | BNMF | k, iterations, α, β |

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{kfold_split, DataError, FoldSplit, RatingDataset};
use crate::metrics::{evaluate, ItemDistance, ListMetric, MetricReport};
use crate::models::{fit, FitError, ModelConfig, ModelKind};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("I/O error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed ledger line {line} in {path}: {source}")]
    Ledger {
        path: String,
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Candidate values per hyperparameter. Missing fields in serialized form
/// take the published grid's values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub k: Vec<usize>,
    pub iterations: Vec<usize>,
    pub learning_rate: Vec<f64>,
    pub regularization: Vec<f64>,
    pub bnmf_alpha: Vec<f64>,
    pub bnmf_beta: Vec<f64>,
}

impl Default for Grid {
    fn default() -> Self {
        Self::paper()
    }
}

impl Grid {
    /// The full grid of the original comparison.
    pub fn paper() -> Self {
        Self {
            k: vec![4, 8, 12],
            iterations: vec![25, 50, 75, 100],
            learning_rate: vec![0.001, 0.01, 0.1, 1.0],
            regularization: vec![0.001, 0.01, 0.1, 1.0],
            bnmf_alpha: vec![0.2, 0.4, 0.6, 0.8],
            bnmf_beta: vec![5.0, 15.0, 25.0],
        }
    }

    /// A desk-scale grid: 100 iterations, no learning rate or
    /// regularization of 1.
    pub fn reduced() -> Self {
        Self {
            iterations: vec![100],
            learning_rate: vec![0.001, 0.01, 0.1],
            regularization: vec![0.001, 0.01, 0.1],
            ..Self::paper()
        }
    }

    /// Number of configs [`expand_full_grid`] yields for `kind`.
    pub fn size(&self, kind: ModelKind) -> usize {
        let base = self.k.len() * self.iterations.len();
        match kind {
            ModelKind::Pmf | ModelKind::BiasedMf | ModelKind::Bemf => {
                base * self.learning_rate.len() * self.regularization.len()
            }
            ModelKind::Nmf | ModelKind::Urp => base,
            ModelKind::Bnmf => base * self.bnmf_alpha.len() * self.bnmf_beta.len(),
        }
    }

    fn validate(&self, kind: ModelKind) -> Result<(), HarnessError> {
        let mut dims = vec![("k", self.k.is_empty()), ("iterations", self.iterations.is_empty())];
        match kind {
            ModelKind::Pmf | ModelKind::BiasedMf | ModelKind::Bemf => {
                dims.push(("learning_rate", self.learning_rate.is_empty()));
                dims.push(("regularization", self.regularization.is_empty()));
            }
            ModelKind::Bnmf => {
                dims.push(("bnmf_alpha", self.bnmf_alpha.is_empty()));
                dims.push(("bnmf_beta", self.bnmf_beta.is_empty()));
            }
            ModelKind::Nmf | ModelKind::Urp => {}
        }
        match dims.into_iter().find(|d| d.1) {
            Some((name, _)) => Err(HarnessError::Plan(format!("grid dimension {name} is empty for {kind}"))),
            None => Ok(()),
        }
    }
}

/// Which grid points to run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum Sampling {
    #[default]
    Full,
    /// `count` grid points drawn without replacement, kept in grid order.
    Random { count: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    /// Label of the dataset the plan runs on.
    pub dataset: String,
    pub model: ModelKind,
    pub grid: Grid,
    pub folds: usize,
    pub master_seed: u64,
    pub n_max: usize,
    pub sampling: Sampling,
}

impl ExperimentPlan {
    pub fn new(dataset: impl Into<String>, model: ModelKind, grid: Grid) -> Self {
        Self {
            dataset: dataset.into(),
            model,
            grid,
            folds: 4,
            master_seed: 0,
            n_max: 10,
            sampling: Sampling::Full,
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.folds < 2 {
            return Err(HarnessError::Plan(format!("{} folds, need at least 2", self.folds)));
        }
        if self.n_max == 0 {
            return Err(HarnessError::Plan("n_max must be at least 1".into()));
        }
        self.grid.validate(self.model)
    }
}

/// A config together with its position in the full grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    pub config: ModelConfig,
}

/// Every grid point for `kind`, in dimension order. Fields the model does
/// not use keep [`ModelConfig::new`] defaults; seeds are left at 0.
pub fn expand_full_grid(kind: ModelKind, grid: &Grid) -> Vec<ModelConfig> {
    let base = ModelConfig {
        seed: 0,
        ..ModelConfig::new(kind)
    };
    let uses_steps = kind.uses_gradient_steps();
    let is_bnmf = kind == ModelKind::Bnmf;
    let pick = |used: bool, values: &[f64], default: f64| if used { values.to_vec() } else { vec![default] };
    let lrs = pick(uses_steps, &grid.learning_rate, base.learning_rate);
    let regs = pick(uses_steps, &grid.regularization, base.regularization);
    let alphas = pick(is_bnmf, &grid.bnmf_alpha, base.bnmf_alpha);
    let betas = pick(is_bnmf, &grid.bnmf_beta, base.bnmf_beta);
    let mut out = Vec::with_capacity(grid.size(kind));
    for &k in &grid.k {
        for &iterations in &grid.iterations {
            for &learning_rate in &lrs {
                for &regularization in &regs {
                    for &bnmf_alpha in &alphas {
                        for &bnmf_beta in &betas {
                            out.push(ModelConfig {
                                k,
                                iterations,
                                learning_rate,
                                regularization,
                                bnmf_alpha,
                                bnmf_beta,
                                ..base.clone()
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

/// The grid points a plan runs, after sampling.
pub fn expand_grid(plan: &ExperimentPlan) -> Result<Vec<GridPoint>, HarnessError> {
    plan.validate()?;
    let all = expand_full_grid(plan.model, &plan.grid);
    let mut chosen: Vec<usize> = (0..all.len()).collect();
    if let Sampling::Random { count, seed } = plan.sampling {
        if count == 0 {
            return Err(HarnessError::Plan("random sampling of 0 configs".into()));
        }
        SeededRng::new(seed).shuffle(&mut chosen);
        chosen.truncate(count);
        chosen.sort_unstable();
    }
    Ok(chosen
        .into_iter()
        .map(|index| GridPoint {
            index,
            config: all[index].clone(),
        })
        .collect())
}

/// Seed of the trial for grid point `config_index` on fold `fold_index`.
pub fn trial_seed(master_seed: u64, config_index: usize, fold_index: usize) -> u64 {
    derive_seed(master_seed, &[config_index as u64, fold_index as u64])
}

/// Folds of one dataset plus the item distances of each training part,
/// shared by every model run on them.
#[derive(Debug)]
pub struct PreparedFolds {
    pub folds: Vec<FoldSplit>,
    pub distances: Vec<ItemDistance>,
    pub master_seed: u64,
}

impl PreparedFolds {
    pub fn new(ds: &RatingDataset, k: usize, master_seed: u64) -> Result<Self, HarnessError> {
        let folds = kfold_split(ds, k, master_seed)?;
        let distances = folds.par_iter().map(|f| ItemDistance::new(&f.train)).collect();
        Ok(Self {
            folds,
            distances,
            master_seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum TrialOutcome {
    Completed { report: MetricReport },
    Diverged { message: String },
    Failed { message: String },
}

/// One config trained and evaluated on one fold. The config carries the
/// trial seed actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub config_index: usize,
    pub fold_index: usize,
    pub config: ModelConfig,
    pub outcome: TrialOutcome,
    /// Not persisted: it would break byte-identical reruns.
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl TrialResult {
    pub fn report(&self) -> Option<&MetricReport> {
        match &self.outcome {
            TrialOutcome::Completed { report } => Some(report),
            _ => None,
        }
    }
}

/// Metric values averaged over folds or configs. Each N is averaged over
/// the inputs that have a value there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AveragedMetrics {
    pub mae: f64,
    pub precision: Vec<Option<f64>>,
    pub recall: Vec<Option<f64>>,
    pub ndcg: Vec<Option<f64>>,
    pub novelty: Vec<Option<f64>>,
    pub diversity: Vec<Option<f64>>,
}

impl AveragedMetrics {
    pub fn series(&self, metric: ListMetric) -> &[Option<f64>] {
        match metric {
            ListMetric::Precision => &self.precision,
            ListMetric::Recall => &self.recall,
            ListMetric::Ndcg => &self.ndcg,
            ListMetric::Novelty => &self.novelty,
            ListMetric::Diversity => &self.diversity,
        }
    }

    fn mean_of<'a>(
        parts: &[&'a Self],
        n_max: usize,
    ) -> Option<Self> {
        Self::combine(parts.len(), n_max, |i| parts[i].mae, |i, m| parts[i].series(m))
    }

    fn from_reports(reports: &[&MetricReport], n_max: usize) -> Option<Self> {
        Self::combine(reports.len(), n_max, |i| reports[i].mae, |i, m| reports[i].series(m))
    }

    fn combine<'a>(
        count: usize,
        n_max: usize,
        mae: impl Fn(usize) -> f64,
        series: impl Fn(usize, ListMetric) -> &'a [Option<f64>],
    ) -> Option<Self> {
        if count == 0 {
            return None;
        }
        let avg = |m: ListMetric| -> Vec<Option<f64>> {
            (0..n_max)
                .map(|n| {
                    let vals: Vec<f64> = (0..count).filter_map(|i| series(i, m).get(n).copied().flatten()).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        };
        Some(Self {
            mae: (0..count).map(&mae).sum::<f64>() / count as f64,
            precision: avg(ListMetric::Precision),
            recall: avg(ListMetric::Recall),
            ndcg: avg(ListMetric::Ndcg),
            novelty: avg(ListMetric::Novelty),
            diversity: avg(ListMetric::Diversity),
        })
    }
}

/// Fold-averaged results of one grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigAggregate {
    pub config_index: usize,
    /// The grid point's hyperparameters; the seed field is unused.
    pub config: ModelConfig,
    pub completed: usize,
    pub diverged: usize,
    pub failed: usize,
    pub mean: Option<AveragedMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub dataset: String,
    pub model: ModelKind,
    pub configs: Vec<ConfigAggregate>,
    /// Mean of the per-config fold averages over configs with any
    /// completed fold.
    pub grid_average: Option<AveragedMetrics>,
    /// Grid index of the config with the lowest fold-averaged MAE.
    pub best_config: Option<usize>,
    pub trials: usize,
    pub diverged: usize,
    pub failed: usize,
}

impl AggregateResult {
    pub fn best(&self) -> Option<&ConfigAggregate> {
        let best = self.best_config?;
        self.configs.iter().find(|c| c.config_index == best)
    }

    pub fn view(&self, view: View) -> Option<&AveragedMetrics> {
        match view {
            View::Best => self.best().and_then(|c| c.mean.as_ref()),
            View::Average => self.grid_average.as_ref(),
        }
    }
}

/// Merges trial results, which must be sorted by (config, fold).
pub fn aggregate(plan: &ExperimentPlan, points: &[GridPoint], trials: &[TrialResult]) -> AggregateResult {
    let mut configs = Vec::with_capacity(points.len());
    for p in points {
        let mine: Vec<&TrialResult> = trials.iter().filter(|t| t.config_index == p.index).collect();
        let reports: Vec<&MetricReport> = mine.iter().filter_map(|t| t.report()).collect();
        let count = |pred: fn(&TrialOutcome) -> bool| mine.iter().filter(|t| pred(&t.outcome)).count();
        configs.push(ConfigAggregate {
            config_index: p.index,
            config: p.config.clone(),
            completed: reports.len(),
            diverged: count(|o| matches!(o, TrialOutcome::Diverged { .. })),
            failed: count(|o| matches!(o, TrialOutcome::Failed { .. })),
            mean: AveragedMetrics::from_reports(&reports, plan.n_max),
        });
    }
    let means: Vec<&AveragedMetrics> = configs.iter().filter_map(|c| c.mean.as_ref()).collect();
    let best_config = configs
        .iter()
        .filter_map(|c| c.mean.as_ref().map(|m| (c.config_index, m.mae)))
        .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
        .map(|(i, _)| i);
    AggregateResult {
        dataset: plan.dataset.clone(),
        model: plan.model,
        grid_average: AveragedMetrics::mean_of(&means, plan.n_max),
        best_config,
        trials: trials.len(),
        diverged: configs.iter().map(|c| c.diverged).sum(),
        failed: configs.iter().map(|c| c.failed).sum(),
        configs,
    }
}

/// Execution settings that do not affect results.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Worker threads; 0 uses every available core.
    pub jobs: usize,
    /// Completed trials are appended here and skipped on a rerun.
    pub ledger: Option<PathBuf>,
    /// Called once per trial as it finishes, in completion order.
    pub progress: Option<&'a (dyn Fn(&TrialResult) + Sync)>,
}

/// Trains and evaluates one config on one fold.
pub fn run_trial(point: &GridPoint, folds: &PreparedFolds, fold_index: usize, n_max: usize) -> TrialResult {
    let start = Instant::now();
    let config = ModelConfig {
        seed: trial_seed(folds.master_seed, point.index, fold_index),
        ..point.config.clone()
    };
    let fold = &folds.folds[fold_index];
    let outcome = match fit(&config, &fold.train) {
        Ok(model) => match evaluate(&model, &fold.train, &fold.test, &folds.distances[fold_index], n_max) {
            Ok(report) => TrialOutcome::Completed { report },
            Err(e) => TrialOutcome::Failed { message: e.to_string() },
        },
        Err(e @ FitError::Diverged { .. }) => TrialOutcome::Diverged { message: e.to_string() },
        Err(e) => TrialOutcome::Failed { message: e.to_string() },
    };
    TrialResult {
        config_index: point.index,
        fold_index,
        config,
        outcome,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

#[derive(Serialize, Deserialize)]
struct LedgerLine {
    dataset: String,
    trial: TrialResult,
}

fn read_ledger(path: &Path) -> Result<Vec<LedgerLine>, HarnessError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_error(path)(e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(io_error(path))?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::new();
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(l) => out.push(l),
            // A run killed mid-write leaves at most a truncated last line.
            Err(_) if Some(n) == last => {}
            Err(source) => {
                return Err(HarnessError::Ledger {
                    path: path.display().to_string(),
                    line: n + 1,
                    source,
                })
            }
        }
    }
    Ok(out)
}

/// Runs every (config, fold) trial of `plan` and aggregates the results.
///
/// With a ledger, trials already recorded for the same dataset and config
/// are reused, and on success the ledger is rewritten with this plan's
/// trials in (config, fold) order.
pub fn run_experiment(
    plan: &ExperimentPlan,
    folds: &PreparedFolds,
    options: &RunOptions,
) -> Result<(AggregateResult, Vec<TrialResult>), HarnessError> {
    let points = expand_grid(plan)?;
    if folds.folds.len() != plan.folds || folds.master_seed != plan.master_seed {
        return Err(HarnessError::Plan(format!(
            "prepared folds ({} from seed {}) do not match the plan ({} from seed {})",
            folds.folds.len(),
            folds.master_seed,
            plan.folds,
            plan.master_seed
        )));
    }

    let mut done: HashMap<(usize, usize), TrialResult> = HashMap::new();
    let mut others = Vec::new();
    if let Some(path) = &options.ledger {
        for line in read_ledger(path)? {
            let t = &line.trial;
            let expected = points.iter().find(|p| p.index == t.config_index).map(|p| ModelConfig {
                seed: trial_seed(plan.master_seed, p.index, t.fold_index),
                ..p.config.clone()
            });
            if line.dataset == plan.dataset && t.fold_index < plan.folds && expected.as_ref() == Some(&t.config) {
                done.insert((t.config_index, t.fold_index), line.trial);
            } else {
                others.push(line);
            }
        }
    }

    let todo: Vec<(&GridPoint, usize)> = points
        .iter()
        .flat_map(|p| (0..plan.folds).map(move |f| (p, f)))
        .filter(|(p, f)| !done.contains_key(&(p.index, *f)))
        .collect();
    let writer = match &options.ledger {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_error(dir))?;
            }
            let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_error(path))?;
            Some(Mutex::new(file))
        }
        None => None,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| HarnessError::Plan(format!("cannot start {} worker threads: {e}", options.jobs)))?;
    let fresh: Vec<TrialResult> = pool.install(|| {
        todo.par_iter()
            .map(|&(p, f)| {
                let trial = run_trial(p, folds, f, plan.n_max);
                if let Some(w) = &writer {
                    let line = LedgerLine {
                        dataset: plan.dataset.clone(),
                        trial,
                    };
                    if let Ok(mut text) = serde_json::to_string(&line) {
                        text.push('\n');
                        let mut file = w.lock().unwrap_or_else(|e| e.into_inner());
                        let _ = file.write_all(text.as_bytes());
                    }
                    if let Some(report) = options.progress {
                        report(&line.trial);
                    }
                    return line.trial;
                }
                if let Some(report) = options.progress {
                    report(&trial);
                }
                trial
            })
            .collect()
    });

    let mut trials: Vec<TrialResult> = done.into_values().chain(fresh).collect();
    trials.sort_by_key(|t| (t.config_index, t.fold_index));
    if let Some(path) = &options.ledger {
        drop(writer);
        let mut lines = others;
        lines.extend(trials.iter().map(|t| LedgerLine {
            dataset: plan.dataset.clone(),
            trial: t.clone(),
        }));
        lines.sort_by(|a, b| {
            (a.dataset.as_str(), a.trial.config.kind, a.trial.config_index, a.trial.fold_index).cmp(&(
                b.dataset.as_str(),
                b.trial.config.kind,
                b.trial.config_index,
                b.trial.fold_index,
            ))
        });
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io_error(&tmp))?);
            for l in &lines {
                serde_json::to_writer(&mut w, l)?;
                w.write_all(b"\n").map_err(io_error(&tmp))?;
            }
            w.flush().map_err(io_error(&tmp))?;
        }
        std::fs::rename(&tmp, path).map_err(io_error(path))?;
    }
    Ok((aggregate(plan, &points, &trials), trials))
}

/// Which grid summary a table or series shows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    /// The config with the lowest fold-averaged MAE.
    Best,
    /// The mean over all configs.
    Average,
}

impl View {
    pub const ALL: [View; 2] = [View::Best, View::Average];

    pub fn name(self) -> &'static str {
        match self {
            View::Best => "best",
            View::Average => "average",
        }
    }
}

/// Results of several models on several datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub datasets: Vec<String>,
    pub models: Vec<ModelKind>,
    /// `results[d][m]`, absent when the model was not run or had no
    /// completed trial.
    pub results: Vec<Vec<Option<AggregateResult>>>,
}

/// Arranges results into a datasets × models table; dataset order follows
/// first appearance, models follow [`ModelKind::ALL`].
pub fn report_table(results: &[AggregateResult]) -> ReportTable {
    let mut datasets: Vec<String> = Vec::new();
    for r in results {
        if !datasets.contains(&r.dataset) {
            datasets.push(r.dataset.clone());
        }
    }
    let models: Vec<ModelKind> = ModelKind::ALL
        .into_iter()
        .filter(|k| results.iter().any(|r| r.model == *k))
        .collect();
    let cells = datasets
        .iter()
        .map(|d| {
            models
                .iter()
                .map(|m| results.iter().find(|r| &r.dataset == d && r.model == *m).cloned())
                .collect()
        })
        .collect();
    ReportTable {
        datasets,
        models,
        results: cells,
    }
}

impl ReportTable {
    pub fn mae(&self, dataset: usize, model: usize, view: View) -> Option<f64> {
        self.results[dataset][model].as_ref()?.view(view).map(|m| m.mae)
    }

    /// Model with the lowest MAE on a dataset; ties go to the earlier model.
    pub fn best_model(&self, dataset: usize, view: View) -> Option<ModelKind> {
        (0..self.models.len())
            .filter_map(|m| self.mae(dataset, m, view).map(|v| (m, v)))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
            .map(|(m, _)| self.models[m])
    }

    /// `dataset,<models...>,best`, one row per dataset.
    pub fn write_mae_csv(&self, w: impl Write, view: View) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["dataset".to_string()];
        header.extend(self.models.iter().map(|m| m.to_string()));
        header.push("best".into());
        out.write_record(&header)?;
        for d in 0..self.datasets.len() {
            let mut row = vec![self.datasets[d].clone()];
            row.extend((0..self.models.len()).map(|m| format_cell(self.mae(d, m, view))));
            row.push(self.best_model(d, view).map(|m| m.to_string()).unwrap_or_default());
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| HarnessError::Csv(e.into()))?;
        Ok(())
    }

    /// `N,<models...>` for one dataset and metric, one row per N.
    pub fn write_series_csv(&self, w: impl Write, dataset: usize, metric: ListMetric, view: View) -> Result<(), HarnessError> {
        let n_max = self.results[dataset]
            .iter()
            .flatten()
            .filter_map(|r| r.view(view).map(|m| m.precision.len()))
            .max()
            .unwrap_or(0);
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["N".to_string()];
        header.extend(self.models.iter().map(|m| m.to_string()));
        out.write_record(&header)?;
        for n in 0..n_max {
            let mut row = vec![(n + 1).to_string()];
            for m in 0..self.models.len() {
                let v = self.results[dataset][m]
                    .as_ref()
                    .and_then(|r| r.view(view))
                    .and_then(|a| a.series(metric).get(n).copied().flatten());
                row.push(format_cell(v));
            }
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| HarnessError::Csv(e.into()))?;
        Ok(())
    }
}

/// Shortest round-trip decimal form; empty for a missing value.
pub fn format_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
