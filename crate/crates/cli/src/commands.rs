//! Subcommands. Each writes a manifest before any result, then its artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use geoloc::dataset::{generate_synthetic, load_csv, write_csv, Environment, FingerprintDataset, SyntheticConfig};
use geoloc::metrics::{DistanceMetric, EvalReport};
use geoloc::persistence::{extract_base, load_model, save_model, SavedModel, TrainingMeta};
use geoloc::preprocess::{drop_sparse_features, fit_normalization, replace_missing, NormalizationParams};
use geoloc::Error;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, default_metric, ConvergenceComparison, LocalizerRun};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;
pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "GEOLOC_SEED";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(e) => match e {
                Error::Config(_) => EXIT_USAGE,
                Error::Numeric(_) | Error::Diverged { .. } => EXIT_NUMERIC,
                _ => EXIT_DATA,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "geoloc", version, about = "RSSI fingerprint localization: train, transfer, evaluate")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic fingerprint dataset.
    Synth(SynthArgs),
    /// Drop sparse transmitters and fit normalization on a dataset.
    Preprocess(PreprocessArgs),
    /// Train a localizer (indoor/outdoor) or the unified model.
    Train(TrainArgs),
    /// Fine-tune a target localizer from a source model's base block.
    Transfer(TransferArgs),
    /// Evaluate a saved model on a dataset.
    Eval(EvalArgs),
    /// Histograms and comparison rows from datasets and earlier runs.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EnvArg {
    Indoor,
    Outdoor,
}

impl From<EnvArg> for Environment {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Indoor => Environment::Indoor,
            EnvArg::Outdoor => Environment::Outdoor,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainEnv {
    Indoor,
    Outdoor,
    Unified,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    /// Euclidean for indoor data, Haversine for outdoor.
    Auto,
    Mde,
    Haversine,
    Both,
}

#[derive(Debug, Args)]
pub struct SeedArg {
    /// Run seed (overridden by GEOLOC_SEED).
    #[arg(long)]
    pub seed: Option<u64>,
}

impl SeedArg {
    pub fn resolve(&self) -> CliResult<u64> {
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            Err(_) => Ok(self.seed.unwrap_or(DEFAULT_SEED)),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum)]
    pub env: EnvArg,
    #[arg(long, default_value_t = 2000)]
    pub samples: usize,
    #[arg(long, default_value_t = 30)]
    pub transmitters: usize,
    #[command(flatten)]
    pub seed: SeedArg,
    /// Seed for transmitter placement; equal values share geometry.
    #[arg(long)]
    pub layout_seed: Option<u64>,
    #[arg(long)]
    pub path_loss_exponent: Option<f64>,
    #[arg(long)]
    pub noise_db: Option<f64>,
    #[arg(long)]
    pub missing_prob: Option<f64>,
    /// Output CSV file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output CSV with the kept transmitters; the normalization sidecar goes
    /// next to it as `<out>.norm.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.98)]
    pub threshold: f64,
    #[arg(long, default_value_t = -128.0, allow_negative_numbers = true)]
    pub replacement: f64,
    #[arg(long, default_value_t = 0.1)]
    pub a: f64,
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum)]
    pub env: TrainEnv,
    /// Dataset CSV; the indoor one for `--env unified`.
    #[arg(long)]
    pub data: PathBuf,
    /// Outdoor dataset CSV for `--env unified`.
    #[arg(long)]
    pub outdoor_data: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Run directory (must not already hold a run).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    #[arg(long)]
    pub source_model: PathBuf,
    #[arg(long)]
    pub target_data: PathBuf,
    /// Defaults to the source model's architecture and published training settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub seed: SeedArg,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Also train from scratch with the same seed. Early stopping is turned
    /// off so both curves share one epoch grid.
    #[arg(long)]
    pub compare_scratch: bool,
    /// Epoch whose scratch validation RMSE is the convergence threshold.
    #[arg(long, default_value_t = 50)]
    pub reference_epoch: usize,
    #[arg(long)]
    pub freeze_base: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Auto)]
    pub metric: MetricArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories produced by `train` or `transfer`.
    #[arg(long, num_args = 0..)]
    pub runs: Vec<PathBuf>,
    /// Datasets to histogram.
    #[arg(long, num_args = 0..)]
    pub data: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub bin_width: f64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Written before any result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub args: Vec<String>,
    pub config_path: Option<PathBuf>,
    pub dataset_paths: Vec<PathBuf>,
    pub seed: Option<u64>,
    pub output: PathBuf,
    pub started_unix: u64,
}

/// One evaluated model in a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub environment: Environment,
    pub method: String,
    pub report: EvalReport,
}

/// Written last, next to the artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub git_describe: Option<String>,
    pub finished_unix: u64,
    pub results: Vec<RunResult>,
    /// How the learning-curve x axis is counted.
    pub curve_unit: String,
}

fn now_unix() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

fn git_describe() -> Option<String> {
    let out = std::process::Command::new("git")
        .args(["describe", "--always", "--dirty"])
        .output()
        .ok()?;
    out.status
        .success()
        .then(|| String::from_utf8_lossy(&out.stdout).trim().to_string())
        .filter(|s| !s.is_empty())
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    write_text(path, &(text + "\n"))
}

/// Creates a fresh run directory and writes its manifest.
fn start_run(dir: &Path, mut manifest: RunManifest) -> CliResult<()> {
    if dir.join("manifest.json").exists() {
        return Err(CliError::Usage(format!(
            "{} already holds a run; choose a new --out directory",
            dir.display()
        )));
    }
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    manifest.output = dir.to_path_buf();
    write_json(&dir.join("manifest.json"), &manifest)
}

fn manifest(command: &str, config: Option<&Path>, data: &[&Path], seed: Option<u64>) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        args: std::env::args().collect(),
        config_path: config.map(Path::to_path_buf),
        dataset_paths: data.iter().map(|p| p.to_path_buf()).collect(),
        seed,
        output: PathBuf::new(),
        started_unix: now_unix(),
    }
}

/// Sidecar path for a single-file output: `<file>.<suffix>`.
fn sidecar(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn load_config(path: Option<&Path>) -> CliResult<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Preprocess(a) => cmd_preprocess(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Transfer(a) => cmd_transfer(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Report(a) => cmd_report(&a),
    }
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<()> {
    let seed = args.seed.resolve()?;
    let mut cfg = SyntheticConfig::new(args.env.into(), args.samples, args.transmitters, seed);
    cfg.layout_seed = args.layout_seed;
    cfg.path_loss_exponent = args.path_loss_exponent;
    if let Some(n) = args.noise_db {
        cfg.noise_std_db = n;
    }
    if let Some(p) = args.missing_prob {
        cfg.missing_prob = p;
    }
    let mut m = manifest("synth", None, &[], Some(seed));
    m.output = args.out.clone();
    write_json(&sidecar(&args.out, "manifest.json"), &m)?;
    let ds = generate_synthetic(&cfg)?;
    write_csv(&ds, &args.out)?;
    println!("wrote {} samples x {} transmitters to {}", ds.len(), ds.n_features(), args.out.display());
    Ok(())
}

/// Normalization sidecar written by `preprocess`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessSidecar {
    pub kept_feature_ids: Vec<String>,
    pub original_features: usize,
    pub threshold: f64,
    pub replacement_dbm: f64,
    pub normalization: NormalizationParams,
}

pub fn cmd_preprocess(args: &PreprocessArgs) -> CliResult<()> {
    if args.input == args.out {
        return Err(CliError::Usage("--out must differ from --in".into()));
    }
    let mut m = manifest("preprocess", None, &[&args.input], None);
    m.output = args.out.clone();
    write_json(&sidecar(&args.out, "manifest.json"), &m)?;

    let ds = load_csv(&args.input)?;
    let (reduced, kept) = drop_sparse_features(&ds, args.threshold)?;
    let params = fit_normalization(&replace_missing(&reduced, args.replacement)?, args.a, args.b)?;
    write_csv(&reduced, &args.out)?;
    let side = PreprocessSidecar {
        kept_feature_ids: kept.clone(),
        original_features: ds.n_features(),
        threshold: args.threshold,
        replacement_dbm: args.replacement,
        normalization: params,
    };
    write_json(&sidecar(&args.out, "norm.json"), &side)?;
    println!("kept_features={} of {}", kept.len(), ds.n_features());
    Ok(())
}

fn localizer_meta(seed: u64, run: &LocalizerRun) -> TrainingMeta {
    TrainingMeta {
        seed,
        epochs: run.curve.len(),
        final_train_rmse: run.curve.records.last().map(|r| r.train_rmse),
        final_val_rmse: run.curve.records.last().map(|r| r.val_rmse),
        label: run.curve.label.clone(),
    }
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport) -> CliResult<()> {
    write_json(&dir.join(format!("{stem}.json")), report)?;
    write_text(&dir.join(format!("{stem}_cdf.csv")), &report.cdf_csv())
}

fn finish_run(dir: &Path, command: &str, seed: u64, config: ExperimentConfig, results: Vec<RunResult>) -> CliResult<()> {
    let record = RunRecord {
        command: command.to_string(),
        seed,
        config,
        git_describe: git_describe(),
        finished_unix: now_unix(),
        results,
        curve_unit: "epochs".into(),
    };
    write_json(&dir.join("run.json"), &record)
}

fn print_report(label: &str, r: &EvalReport) {
    println!(
        "{label}: mde_m={:.4} median_m={:.4} rmse_norm={:.6}{}",
        r.mde_m,
        r.median_m,
        r.rmse_norm,
        r.cls_accuracy.map(|a| format!(" env_accuracy={a:.4}")).unwrap_or_default()
    );
}

pub fn cmd_train(args: &TrainArgs) -> CliResult<()> {
    let seed = args.seed.resolve()?;
    let mut data_paths = vec![args.data.as_path()];
    if let Some(o) = &args.outdoor_data {
        data_paths.push(o);
    }
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    start_run(&args.out, manifest("train", args.config.as_deref(), &data_paths, Some(seed)))?;

    let results = match args.env {
        TrainEnv::Indoor | TrainEnv::Outdoor => {
            if args.outdoor_data.is_some() {
                return Err(CliError::Usage("--outdoor-data is only for --env unified".into()));
            }
            let ds = load_csv(&args.data)?;
            let wanted = if args.env == TrainEnv::Indoor { Environment::Indoor } else { Environment::Outdoor };
            if ds.environment() != wanted {
                return Err(CliError::Core(Error::Validation(format!(
                    "--env {wanted} but {} holds {} data",
                    args.data.display(),
                    ds.environment()
                ))));
            }
            let run = pipeline::run_single(&ds, &cfg, seed)?;
            run.curve.write_csv(args.out.join("curve.csv"))?;
            save_model(
                &SavedModel::Localizer(run.model.clone()),
                &localizer_meta(seed, &run),
                args.out.join("model.glmodel"),
            )?;
            write_report(&args.out, "test_report", &run.test_report)?;
            print_report(&format!("{wanted} test"), &run.test_report);
            vec![RunResult {
                environment: wanted,
                method: "encoder".into(),
                report: run.test_report,
            }]
        }
        TrainEnv::Unified => {
            let outdoor = args
                .outdoor_data
                .as_ref()
                .ok_or_else(|| CliError::Usage("--env unified needs --outdoor-data".into()))?;
            let indoor_ds = load_csv(&args.data)?;
            let outdoor_ds = load_csv(outdoor)?;
            let run = pipeline::run_unified(&indoor_ds, &outdoor_ds, &cfg, seed)?;
            run.curve.write_csv(args.out.join("curve.csv"))?;
            let meta = TrainingMeta {
                seed,
                epochs: run.curve.len(),
                final_train_rmse: run.curve.records.last().map(|r| r.train_rmse),
                final_val_rmse: run.curve.records.last().map(|r| r.val_rmse),
                label: run.curve.label.clone(),
            };
            save_model(&SavedModel::Umlp(run.model.clone()), &meta, args.out.join("model.glmodel"))?;
            write_report(&args.out, "test_report_indoor", &run.indoor_report)?;
            write_report(&args.out, "test_report_outdoor", &run.outdoor_report)?;
            print_report("indoor test", &run.indoor_report);
            print_report("outdoor test", &run.outdoor_report);
            vec![
                RunResult {
                    environment: Environment::Indoor,
                    method: "U-MLP".into(),
                    report: run.indoor_report,
                },
                RunResult {
                    environment: Environment::Outdoor,
                    method: "U-MLP".into(),
                    report: run.outdoor_report,
                },
            ]
        }
    };
    finish_run(&args.out, "train", seed, cfg, results)
}

pub fn cmd_transfer(args: &TransferArgs) -> CliResult<()> {
    let seed = args.seed.resolve()?;
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => {
            let (saved, _) = load_model(&args.source_model)?;
            match saved {
                SavedModel::Localizer(m) => ExperimentConfig {
                    model: m.config,
                    ..ExperimentConfig::default()
                },
                SavedModel::Umlp(_) => {
                    return Err(CliError::Core(Error::Structure(
                        "unified-model archive has no base block".into(),
                    )))
                }
            }
        }
    };
    if let Some(e) = args.epochs {
        cfg.training.epochs = e;
    }
    if args.freeze_base {
        cfg.training.freeze_base = true;
    }
    if args.compare_scratch {
        cfg.training.early_stop = false;
    }
    start_run(
        &args.out,
        manifest(
            "transfer",
            args.config.as_deref(),
            &[&args.source_model, &args.target_data],
            Some(seed),
        ),
    )?;

    let base = extract_base(&args.source_model)?;
    let target = load_csv(&args.target_data)?;
    let env = target.environment();
    let run = pipeline::run_transfer(&base, &target, &cfg, seed, args.compare_scratch)?;

    run.transfer.curve.write_csv(args.out.join("curve_tl.csv"))?;
    save_model(
        &SavedModel::Localizer(run.transfer.model.clone()),
        &localizer_meta(seed, &run.transfer),
        args.out.join("model.glmodel"),
    )?;
    write_report(&args.out, "test_report", &run.transfer.test_report)?;
    print_report(&format!("{env} test (with TL)"), &run.transfer.test_report);
    let mut results = vec![RunResult {
        environment: env,
        method: "encoder + TL".into(),
        report: run.transfer.test_report.clone(),
    }];

    if let Some(scratch) = &run.scratch {
        scratch.curve.write_csv(args.out.join("curve_scratch.csv"))?;
        write_report(&args.out, "test_report_scratch", &scratch.test_report)?;
        print_report(&format!("{env} test (scratch)"), &scratch.test_report);
        let reference_epoch = args.reference_epoch.min(scratch.curve.len());
        let cmp = ConvergenceComparison::new(&scratch.curve, &run.transfer.curve, reference_epoch)?;
        write_json(&args.out.join("convergence.json"), &cmp)?;
        println!(
            "epochs to reach scratch epoch-{} val_rmse {:.6}: with TL {} / scratch {} (epochs)",
            cmp.reference_epoch,
            cmp.threshold,
            cmp.candidate_epochs_to_reach.map_or("never".into(), |e| e.to_string()),
            cmp.reference_epochs_to_reach.map_or("never".into(), |e| e.to_string()),
        );
        results.push(RunResult {
            environment: env,
            method: "encoder".into(),
            report: scratch.test_report.clone(),
        });
    }
    finish_run(&args.out, "transfer", seed, cfg, results)
}

pub fn cmd_eval(args: &EvalArgs) -> CliResult<()> {
    start_run(&args.out, manifest("eval", None, &[&args.model, &args.data], None))?;
    let (saved, _) = load_model(&args.model)?;
    let data = load_csv(&args.data)?;
    let metrics = match args.metric {
        MetricArg::Auto => vec![default_metric(data.environment())],
        MetricArg::Mde => vec![DistanceMetric::Euclidean],
        MetricArg::Haversine => vec![DistanceMetric::Haversine],
        MetricArg::Both => vec![DistanceMetric::Euclidean, DistanceMetric::Haversine],
    };
    let mut reports = BTreeMap::new();
    for metric in metrics {
        let report = match &saved {
            SavedModel::Localizer(m) => pipeline::evaluate_localizer(m, &data, metric)?,
            SavedModel::Umlp(m) => pipeline::evaluate_umlp(m, &data, metric)?,
        };
        let name = match metric {
            DistanceMetric::Euclidean => "mde",
            DistanceMetric::Haversine => "haversine",
        };
        print_report(name, &report);
        write_text(&args.out.join(format!("cdf_{name}.csv")), &report.cdf_csv())?;
        reports.insert(name.to_string(), report);
    }
    write_json(&args.out.join("report.json"), &reports)
}

/// Published reference results, mean distance error in meters.
pub const PUBLISHED_RESULTS: &[(Environment, &str, f64)] = &[
    (Environment::Indoor, "Baseline", 7.90),
    (Environment::Indoor, "HADNN", 14.93),
    (Environment::Indoor, "EA-CNN", 8.34),
    (Environment::Indoor, "encoder + TL", 6.65),
    (Environment::Indoor, "U-MLP", 9.61),
    (Environment::Outdoor, "Baseline", 398.40),
    (Environment::Outdoor, "NN", 357.0),
    (Environment::Outdoor, "Ex. Trees", 379.0),
    (Environment::Outdoor, "encoder + TL", 361.21),
    (Environment::Outdoor, "U-MLP", 341.94),
];

/// Counts of valid RSSI readings in `bin_width` dB bins, keyed by the bin's
/// lower edge.
pub fn rssi_histogram(ds: &FingerprintDataset, bin_width: f64) -> Vec<(f64, usize)> {
    let values: Vec<f64> = ds
        .features()
        .iter()
        .zip(ds.valid_mask().iter())
        .filter(|(_, ok)| **ok)
        .map(|(v, _)| *v)
        .collect();
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *bins.entry((v / bin_width).floor() as i64).or_default() += 1;
    }
    bins.into_iter().map(|(k, c)| (k as f64 * bin_width, c)).collect()
}

fn relative_improvement(baseline: f64, ours: f64) -> f64 {
    (baseline - ours) / baseline
}

pub fn cmd_report(args: &ReportArgs) -> CliResult<()> {
    if !(args.bin_width.is_finite() && args.bin_width > 0.0) {
        return Err(CliError::Usage("--bin-width must be positive".into()));
    }
    let data: Vec<&Path> = args.data.iter().map(PathBuf::as_path).collect();
    start_run(&args.out, manifest("report", None, &data, None))?;

    for path in &args.data {
        let ds = load_csv(path)?;
        let mut csv = String::from("rssi_dbm,count\n");
        for (edge, count) in rssi_histogram(&ds, args.bin_width) {
            csv.push_str(&format!("{edge},{count}\n"));
        }
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_text(&args.out.join(format!("histogram_{stem}.csv")), &csv)?;
    }

    let mut rows = String::from("environment,method,mde_m,source,improvement_vs_baseline\n");
    for (env, method, mde) in PUBLISHED_RESULTS {
        let baseline = PUBLISHED_RESULTS
            .iter()
            .find(|(e, m, _)| e == env && *m == "Baseline")
            .map(|r| r.2)
            .unwrap_or(*mde);
        rows.push_str(&format!(
            "{env},{method},{mde},published,{}\n",
            relative_improvement(baseline, *mde)
        ));
    }
    for dir in &args.runs {
        let path = dir.join("run.json");
        let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
        let record: RunRecord = serde_json::from_str(&text).map_err(Error::from)?;
        for r in record.results {
            let baseline = PUBLISHED_RESULTS
                .iter()
                .find(|(e, m, _)| *e == r.environment && *m == "Baseline")
                .map(|x| x.2)
                .unwrap_or(f64::NAN);
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                r.environment,
                r.method,
                r.report.mde_m,
                dir.display(),
                relative_improvement(baseline, r.report.mde_m)
            ));
        }
    }
    write_text(&args.out.join("comparison.csv"), &rows)?;
    println!("learning curves count epochs; comparison rows in {}", args.out.join("comparison.csv").display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use geoloc::dataset::SyntheticConfig;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(Error::Config("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(Error::Schema("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(Error::Diverged { epoch: 1, batch: 0 }).exit_code(), 4);
    }

    #[test]
    fn histogram_counts_only_valid_readings() {
        let mut cfg = SyntheticConfig::new(Environment::Indoor, 50, 4, 1);
        cfg.missing_prob = 0.3;
        let ds = generate_synthetic(&cfg).unwrap();
        let valid = ds.valid_mask().iter().filter(|v| **v).count();
        let hist = rssi_histogram(&ds, 2.0);
        assert_eq!(hist.iter().map(|h| h.1).sum::<usize>(), valid);
        assert!(hist.windows(2).all(|w| w[0].0 < w[1].0));
    }

    #[test]
    fn improvement_is_relative_to_baseline() {
        assert!((relative_improvement(7.90, 6.65) - 0.158_227_848).abs() < 1e-8);
    }
}
