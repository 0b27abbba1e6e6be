use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use cfmf::data::{dataset_stats, kfold_split, RatingDataset, Stats};
use cfmf::harness::{
    report_table, run_experiment, AggregateResult, ExperimentPlan, Grid, PreparedFolds, RunOptions, TrialOutcome, View,
};
use cfmf::metrics::{evaluate as evaluate_model, ItemDistance, ListMetric, MetricReport};
use cfmf::models::serialize::ModelDump;
use cfmf::models::{fit, ModelConfig, ModelKind};
use serde::Serialize;

use crate::config::{DatasetEntry, RunConfig, SCHEMA_VERSION};
use crate::error::CliError;
use crate::{BenchmarkArgs, DatasetArgs, EvaluateArgs, ExportArgs, GridChoice, Hyperparams, SplitArgs, StatsArgs, TrainArgs};

const LEDGER_FILE: &str = "trials.jsonl";
const RESULTS_FILE: &str = "results.json";
const SERIES_DIR: &str = "series";

/// Datasets named on the command line, looked up in the config when one is
/// given.
fn select_datasets(args: &DatasetArgs, config: Option<&RunConfig>) -> Result<Vec<DatasetEntry>, CliError> {
    match config {
        Some(c) if args.dataset.is_empty() => Ok(c.datasets.clone()),
        Some(c) => args
            .dataset
            .iter()
            .map(|name| {
                c.datasets
                    .iter()
                    .find(|d| &d.name == name)
                    .cloned()
                    .map(Ok)
                    .unwrap_or_else(|| DatasetEntry::from_arg(name, args.format.as_deref()))
            })
            .collect(),
        None if args.dataset.is_empty() => Err(CliError::Usage("pass --dataset or --config".into())),
        None => args
            .dataset
            .iter()
            .map(|d| DatasetEntry::from_arg(d, args.format.as_deref()))
            .collect(),
    }
}

fn load_config(args: &DatasetArgs) -> Result<Option<RunConfig>, CliError> {
    args.config.as_deref().map(RunConfig::load).transpose()
}

/// The single dataset a train or evaluate run works on.
fn single_dataset(args: &DatasetArgs) -> Result<(DatasetEntry, RatingDataset), CliError> {
    let config = load_config(args)?;
    let mut entries = select_datasets(args, config.as_ref())?;
    if entries.len() != 1 {
        return Err(CliError::Usage(format!(
            "this command works on one dataset, got {}",
            entries.len()
        )));
    }
    let entry = entries.remove(0);
    let ds = entry.load()?;
    Ok((entry, ds))
}

pub fn stats(args: &StatsArgs) -> Result<(), CliError> {
    let config = load_config(&args.data)?;
    let entries = select_datasets(&args.data, config.as_ref())?;
    let mut rows = Vec::new();
    for e in &entries {
        let ds = e.load()?;
        rows.push((e.name.clone(), dataset_stats(&ds), *ds.scale()));
    }
    let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(7);
    println!(
        "{:<width$}  {:>8}  {:>8}  {:>10}  {:>9}  scale",
        "dataset", "users", "items", "ratings", "sparsity"
    );
    for (name, s, scale) in rows {
        println!(
            "{:<width$}  {:>8}  {:>8}  {:>10}  {:>8.2}%  {scale}",
            name, s.num_users, s.num_items, s.num_ratings, s.sparsity_percent
        );
    }
    Ok(())
}

fn model_kind(name: Option<&str>) -> Result<ModelKind, CliError> {
    let name = name.ok_or_else(|| CliError::Usage("--model is required".into()))?;
    name.parse().map_err(|e: cfmf::models::UnknownModel| CliError::Usage(e.to_string()))
}

fn model_config(h: &Hyperparams) -> Result<ModelConfig, CliError> {
    let mut c = ModelConfig::new(model_kind(h.model.as_deref())?);
    c.k = h.k.unwrap_or(c.k);
    c.iterations = h.iterations.unwrap_or(c.iterations);
    c.learning_rate = h.learning_rate.unwrap_or(c.learning_rate);
    c.regularization = h.regularization.unwrap_or(c.regularization);
    c.bnmf_alpha = h.alpha.unwrap_or(c.bnmf_alpha);
    c.bnmf_beta = h.beta.unwrap_or(c.bnmf_beta);
    c.seed = h.seed.unwrap_or(c.seed);
    c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(c)
}

/// Training and held-out parts of the dataset, or the whole dataset twice
/// without `--fold`.
fn split(ds: RatingDataset, s: &SplitArgs) -> Result<(RatingDataset, Vec<cfmf::data::Rating>), CliError> {
    match s.fold {
        None => {
            if s.folds.is_some() {
                return Err(CliError::Usage("--folds needs --fold".into()));
            }
            let test = ds.ratings().to_vec();
            Ok((ds, test))
        }
        Some(f) => {
            let k = s.folds.unwrap_or(4);
            if f >= k {
                return Err(CliError::Usage(format!("--fold {f} out of range for {k} folds")));
            }
            let fold = kfold_split(&ds, k, s.split_seed)?.swap_remove(f);
            Ok((fold.train, fold.test))
        }
    }
}

pub fn train(args: &TrainArgs) -> Result<(), CliError> {
    let config = model_config(&args.hyper)?;
    let (_, ds) = single_dataset(&args.data)?;
    let (train, _) = split(ds, &args.split)?;
    let start = Instant::now();
    let model = fit(&config, &train)?;
    let elapsed = start.elapsed().as_secs_f64();
    let objective = model.training_objective(&train, &config);
    ModelDump::new(config, model).save(&args.out)?;
    println!("objective {objective}");
    println!("wall time {elapsed:.3}s");
    println!("wrote {}", args.out.display());
    Ok(())
}

fn print_report(mae: f64, series: impl Fn(ListMetric) -> Vec<Option<f64>>) {
    println!("MAE {mae}");
    let cols: Vec<Vec<Option<f64>>> = ListMetric::ALL.iter().map(|&m| series(m)).collect();
    print!("{:>3}", "N");
    for m in ListMetric::ALL {
        print!("  {:>10}", m.name());
    }
    println!();
    for n in 0..cols[0].len() {
        print!("{:>3}", n + 1);
        for c in &cols {
            match c[n] {
                Some(v) => print!("  {v:>10.6}"),
                None => print!("  {:>10}", "-"),
            }
        }
        println!();
    }
}

pub fn evaluate(args: &EvaluateArgs) -> Result<(), CliError> {
    if args.n_max == 0 {
        return Err(CliError::Usage("--n-max must be at least 1".into()));
    }
    let (entry, ds) = single_dataset(&args.data)?;
    if let Some(path) = &args.model_file {
        let dump = ModelDump::load(path)?;
        let (train, test) = split(ds, &args.split)?;
        if dump.model.num_users() != train.num_users() || dump.model.num_items() != train.num_items() {
            return Err(CliError::Usage(format!(
                "model covers {} users and {} items, dataset {} has {} and {}",
                dump.model.num_users(),
                dump.model.num_items(),
                entry.name,
                train.num_users(),
                train.num_items()
            )));
        }
        let dist = ItemDistance::new(&train);
        let report: MetricReport = evaluate_model(&dump.model, &train, &test, &dist, args.n_max)
            .map_err(|e| CliError::Other(e.to_string()))?;
        print_report(report.mae, |m| report.series(m).to_vec());
        return Ok(());
    }

    if args.split.fold.is_some() {
        return Err(CliError::Usage("--fold applies to --model-file; cross-validation uses every fold".into()));
    }
    let config = model_config(&args.hyper)?;
    let grid = Grid {
        k: vec![config.k],
        iterations: vec![config.iterations],
        learning_rate: vec![config.learning_rate],
        regularization: vec![config.regularization],
        bnmf_alpha: vec![config.bnmf_alpha],
        bnmf_beta: vec![config.bnmf_beta],
    };
    let plan = ExperimentPlan {
        master_seed: args.split.split_seed,
        folds: args.split.folds.unwrap_or(4),
        n_max: args.n_max,
        ..ExperimentPlan::new(entry.name.clone(), config.kind, grid)
    };
    plan.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let folds = PreparedFolds::new(&ds, plan.folds, plan.master_seed)?;
    let options = RunOptions {
        jobs: args.jobs,
        ..RunOptions::default()
    };
    let (agg, trials) = run_experiment(&plan, &folds, &options)?;
    for t in &trials {
        if let TrialOutcome::Diverged { message } | TrialOutcome::Failed { message } = &t.outcome {
            eprintln!("fold {}: {message}", t.fold_index);
        }
    }
    let Some(mean) = agg.view(View::Best) else {
        let first = trials.iter().find_map(|t| match &t.outcome {
            TrialOutcome::Diverged { message } => Some(message.clone()),
            _ => None,
        });
        return Err(match first {
            Some(m) => CliError::Diverged(m),
            None => CliError::Other("no fold completed".into()),
        });
    };
    println!(
        "{} on {}: {} of {} folds completed",
        config.kind,
        entry.name,
        agg.trials - agg.diverged - agg.failed,
        agg.trials
    );
    print_report(mean.mae, |m| mean.series(m).to_vec());
    Ok(())
}

#[derive(Serialize)]
struct DatasetSummary {
    name: String,
    stats: Stats,
}

#[derive(Serialize)]
struct Failure {
    dataset: String,
    model: ModelKind,
    message: String,
}

#[derive(Serialize)]
struct ResultsFile<'a> {
    schema_version: u32,
    datasets: Vec<DatasetSummary>,
    failures: &'a [Failure],
    results: &'a [AggregateResult],
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    let mut config = match load_config(&args.data)? {
        Some(c) => c,
        None => RunConfig {
            schema_version: SCHEMA_VERSION,
            datasets: Vec::new(),
            plan: Default::default(),
            output: Default::default(),
        },
    };
    config.datasets = select_datasets(&args.data, args.data.config.as_ref().map(|_| &config))?;
    if !args.model.is_empty() {
        config.plan.models = args
            .model
            .iter()
            .map(|m| model_kind(Some(m)))
            .collect::<Result<_, _>>()?;
    }
    match args.grid {
        Some(GridChoice::Paper) => config.plan.grid = Grid::paper(),
        Some(GridChoice::Reduced) => config.plan.grid = Grid::reduced(),
        None => {}
    }
    if let Some(s) = args.seed {
        config.plan.master_seed = s;
    }
    if let Some(f) = args.folds {
        config.plan.folds = f;
    }
    if let Some(out) = &args.out {
        config.output.directory = out.clone();
    }
    config.validate()?;

    let out = &config.output.directory;
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let ledger = out.join(LEDGER_FILE);
    let mut summaries = Vec::new();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for entry in &config.datasets {
        let ds = entry.load()?;
        summaries.push(DatasetSummary {
            name: entry.name.clone(),
            stats: dataset_stats(&ds),
        });
        let folds = PreparedFolds::new(&ds, config.plan.folds, config.plan.master_seed)?;
        for &model in &config.plan.models {
            let plan = config.plan.experiment(&entry.name, model);
            if !args.quiet {
                eprintln!(
                    "{} {model}: {} configs x {} folds",
                    entry.name,
                    cfmf::harness::expand_grid(&plan)?.len(),
                    plan.folds
                );
            }
            let start = Instant::now();
            let options = RunOptions {
                jobs: args.jobs,
                ledger: Some(ledger.clone()),
                progress: None,
            };
            match run_experiment(&plan, &folds, &options) {
                Ok((agg, _)) => {
                    if !args.quiet {
                        let best = agg.view(View::Best).map(|m| format!("{:.4}", m.mae));
                        eprintln!(
                            "  best MAE {}, {} diverged, {} failed, {:.1}s",
                            best.as_deref().unwrap_or("-"),
                            agg.diverged,
                            agg.failed,
                            start.elapsed().as_secs_f64()
                        );
                    }
                    if agg.best_config.is_none() {
                        failures.push(Failure {
                            dataset: entry.name.clone(),
                            model,
                            message: format!(
                                "no completed trial ({} diverged, {} failed)",
                                agg.diverged, agg.failed
                            ),
                        });
                    }
                    results.push(agg);
                }
                Err(e @ cfmf::harness::HarnessError::Io { .. }) => return Err(e.into()),
                Err(e) => failures.push(Failure {
                    dataset: entry.name.clone(),
                    model,
                    message: e.to_string(),
                }),
            }
        }
    }

    let table = report_table(&results);
    for view in View::ALL {
        let path = out.join(format!("mae_{}.csv", view.name()));
        let mut w = create(&path)?;
        table.write_mae_csv(&mut w, view)?;
        finish(w, &path)?;
    }
    for (d, name) in table.datasets.iter().enumerate() {
        for metric in ListMetric::ALL {
            for view in View::ALL {
                let path = out
                    .join(SERIES_DIR)
                    .join(name)
                    .join(format!("{}_{}.csv", metric.name(), view.name()));
                let mut w = create(&path)?;
                table.write_series_csv(&mut w, d, metric, view)?;
                finish(w, &path)?;
            }
        }
    }
    let path = out.join(RESULTS_FILE);
    let mut w = create(&path)?;
    let file = ResultsFile {
        schema_version: SCHEMA_VERSION,
        datasets: summaries,
        failures: &failures,
        results: &results,
    };
    serde_json::to_writer_pretty(&mut w, &file).map_err(|e| CliError::Other(e.to_string()))?;
    w.write_all(b"\n").map_err(|e| CliError::io(&path, e))?;
    finish(w, &path)?;

    print_mae_table(&table);
    println!("wrote {}", out.display());
    if failures.is_empty() {
        return Ok(());
    }
    for f in &failures {
        eprintln!("failed: {} {}: {}", f.dataset, f.model, f.message);
    }
    Err(CliError::Partial(format!("{} of the model runs failed", failures.len())))
}

fn print_mae_table(table: &cfmf::harness::ReportTable) {
    let width = table.datasets.iter().map(|d| d.len()).max().unwrap_or(0).max(7);
    print!("{:<width$}", "MAE");
    for m in &table.models {
        print!("  {:>8}", m.name());
    }
    println!();
    for d in 0..table.datasets.len() {
        print!("{:<width$}", table.datasets[d]);
        for m in 0..table.models.len() {
            match table.mae(d, m, View::Best) {
                Some(v) => print!("  {v:>8.4}"),
                None => print!("  {:>8}", "-"),
            }
        }
        println!();
    }
}

/// Dataset directories under `series/`, sorted by name.
fn series_datasets(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let root = dir.join(SERIES_DIR);
    let listing = fs::read_dir(&root).map_err(|e| CliError::io(&root, e))?;
    let mut out = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|e| CliError::io(&root, e))?;
        if entry.path().is_dir() {
            out.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

pub fn export_plot_data(args: &ExportArgs) -> Result<(), CliError> {
    let mut rows: Vec<[String; 6]> = Vec::new();
    for (dataset, path) in series_datasets(&args.dir)? {
        for metric in ListMetric::ALL {
            for view in View::ALL {
                let file = path.join(format!("{}_{}.csv", metric.name(), view.name()));
                if !file.exists() {
                    continue;
                }
                let mut reader = csv::Reader::from_path(&file).map_err(|e| CliError::Other(format!("{}: {e}", file.display())))?;
                let header = reader
                    .headers()
                    .map_err(|e| CliError::Other(format!("{}: {e}", file.display())))?
                    .clone();
                let records: Vec<csv::StringRecord> = reader
                    .records()
                    .collect::<Result<_, _>>()
                    .map_err(|e| CliError::Other(format!("{}: {e}", file.display())))?;
                for (col, model) in header.iter().enumerate().skip(1) {
                    for rec in &records {
                        let value = rec.get(col).unwrap_or("");
                        if value.is_empty() {
                            continue;
                        }
                        rows.push([
                            dataset.clone(),
                            model.to_string(),
                            metric.name().to_string(),
                            view.name().to_string(),
                            rec.get(0).unwrap_or("").to_string(),
                            value.to_string(),
                        ]);
                    }
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(CliError::Other(format!("no series data under {}", args.dir.display())));
    }
    let sink: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let csv_err = |e: csv::Error| CliError::Other(e.to_string());
    w.write_record(["dataset", "model", "metric", "view", "N", "value"]).map_err(csv_err)?;
    for r in &rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::Other(e.to_string()))?;
    Ok(())
}
