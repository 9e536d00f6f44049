use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use cocal::calibrators::consistency::DEFAULT_PERTURBATIONS;
use cocal::calibrators::diagnose::DEFAULT_CONF_THRESHOLD;
use cocal::calibrators::{
    cc_calibrate, cc_local_report, diagnose_logit_gap, ts_apply, ts_fit, Aggregation,
    ConsistencyConfig, NoiseKind, NoiseSpec,
};
use cocal::data::{self, Format, LogitSet, ProbSet, SplitSpec};
use cocal::metrics::{ece, softmax, CalibrationReport, DEFAULT_BINS};
use cocal::synthetic::{overconfident, SyntheticConfig};
use cocal::toy::{
    eta_grid, run_toy_experiment, EstimatorError, EstimatorGrids, ToyReport, ToyWorld, TrainConfig,
};
use cocal::tuner::{tune, TuneGrid, TuneResult, DEFAULT_TUNING_PERTURBATIONS};

#[derive(Parser)]
#[command(
    name = "cocal",
    version,
    about = "Calibration metrics and consistency calibration for classifier logits"
)]
struct Cli {
    /// Worker threads; results are identical for any value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Format of written data files. Inputs are read by extension (`.csv`
    /// is text, anything else CLB1).
    #[arg(long, global = true, default_value = "clb1")]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Calibration report (ECE, AdaECE, CECE, NLL, accuracy) of softmax(logits).
    Metrics(MetricsArgs),
    /// Recalibrate a test set with temperature scaling or consistency calibration.
    #[command(subcommand)]
    Calibrate(Method),
    /// Search noise family and strength by validation ECE.
    Tune(TuneArgs),
    /// Test ECE of consistency calibration at several perturbation counts.
    Sweep(SweepArgs),
    /// Two-Gaussian experiment comparing local uncertainty estimators.
    Toy(ToyArgs),
    /// Logit-gap statistics of highly confident predictions.
    Diagnose(DiagnoseArgs),
    /// Vanilla and consistency confidence of one sample.
    Local(LocalArgs),
    /// Write a synthetic overconfident logit set.
    Synth(SynthArgs),
    /// Shuffle-split a logit file into validation and test parts.
    Split(SplitArgs),
}

#[derive(Args)]
struct MetricsArgs {
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// JSON report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Method {
    Ts(TsArgs),
    Cc(CcArgs),
}

#[derive(Args)]
struct TsArgs {
    #[arg(long)]
    val: PathBuf,
    #[arg(long)]
    test: PathBuf,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Output directory for `calibrated.*` and `report.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct NoiseArgs {
    /// Noise family; used with --eps. Tuning searches both when absent.
    #[arg(long)]
    noise: Option<NoiseKind>,
    /// Noise strength. Without it the strength is tuned on --val.
    #[arg(long)]
    eps: Option<f64>,
    /// Perturbations per grid point while tuning.
    #[arg(long, default_value_t = DEFAULT_TUNING_PERTURBATIONS)]
    tune_t: u32,
    #[arg(long, default_value = "consistency")]
    aggregation: Aggregation,
}

#[derive(Args)]
struct CcArgs {
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Perturbations per sample.
    #[arg(long = "T", default_value_t = DEFAULT_PERTURBATIONS)]
    t: u32,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    val: PathBuf,
    /// Restrict the search to one family.
    #[arg(long)]
    noise: Option<NoiseKind>,
    #[arg(long = "T", default_value_t = DEFAULT_TUNING_PERTURBATIONS)]
    t: u32,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long, default_value = "consistency")]
    aggregation: Aggregation,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    test: PathBuf,
    #[command(flatten)]
    noise: NoiseArgs,
    /// Perturbation counts, comma separated.
    #[arg(
        long = "T",
        value_delimiter = ',',
        default_value = "2,4,8,16,32,64,128,256,512,1024"
    )]
    t: Vec<u32>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ToyArgs {
    /// Training points per class.
    #[arg(long, default_value_t = 20_000)]
    n_train: usize,
    /// Test points per class.
    #[arg(long, default_value_t = 2_000)]
    n_test: usize,
    #[arg(long, default_value_t = 1000)]
    epochs: usize,
    #[arg(long, default_value_t = 1.0)]
    lr: f64,
    /// Perturbations per point for the consistency estimator.
    #[arg(long = "T", default_value_t = 10_000)]
    t: u32,
    /// Resolution of the ground-truth grid written to eta_grid.csv.
    #[arg(long, default_value_t = 81)]
    grid_steps: usize,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DiagnoseArgs {
    input: PathBuf,
    #[arg(long, default_value_t = DEFAULT_CONF_THRESHOLD)]
    threshold: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LocalArgs {
    input: PathBuf,
    #[arg(long)]
    row: usize,
    #[arg(long, default_value = "gaussian")]
    noise: NoiseKind,
    #[arg(long)]
    eps: f64,
    #[arg(long = "T", default_value_t = DEFAULT_PERTURBATIONS)]
    t: u32,
    #[arg(long, default_value = "consistency")]
    aggregation: Aggregation,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 20_000)]
    n: usize,
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 3.0)]
    sharpness: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    val_fraction: f64,
    /// Output directory for `val.*`, `test.*` and `split.json`.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.threads {
        Some(0) => bail!("--threads must be at least 1"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            pool.install(|| run(&cli))
        }
        None => run(&cli),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Metrics(a) => cmd_metrics(a),
        Command::Calibrate(Method::Ts(a)) => cmd_ts(cli, a),
        Command::Calibrate(Method::Cc(a)) => cmd_cc(cli, a),
        Command::Tune(a) => cmd_tune(cli, a),
        Command::Sweep(a) => cmd_sweep(cli, a),
        Command::Toy(a) => cmd_toy(cli, a),
        Command::Diagnose(a) => cmd_diagnose(a),
        Command::Local(a) => cmd_local(cli, a),
        Command::Synth(a) => cmd_synth(cli, a),
        Command::Split(a) => cmd_split(cli, a),
    }
}

fn read_logits(path: &Path) -> Result<LogitSet> {
    data::load(path, Format::from_path(path))
        .with_context(|| format!("cannot read logits from {}", path.display()))
}

fn extension(format: Format) -> &'static str {
    match format {
        Format::Clb1 => "clb1",
        Format::Csv => "csv",
    }
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(out, &text)
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            create_parent(path)?;
            fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).with_context(|| format!("cannot create directory {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(parent) if !parent.as_os_str().is_empty() => create_dir(parent),
        _ => Ok(()),
    }
}

fn display(path: &Path) -> String {
    path.display().to_string()
}

#[derive(Serialize)]
struct MetricsOutput<'a> {
    command: &'static str,
    input: String,
    report: &'a CalibrationReport,
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let set = read_logits(&a.input)?;
    let report = CalibrationReport::compute(&softmax(&set), a.bins)?;
    write_json(
        a.out.as_deref(),
        &MetricsOutput {
            command: "metrics",
            input: display(&a.input),
            report: &report,
        },
    )
}

#[derive(Serialize)]
struct CalibrateOutput<'a, C: Serialize> {
    command: &'static str,
    method: &'static str,
    validation: Option<String>,
    test: String,
    n_bins: usize,
    seed: u64,
    format: &'static str,
    #[serde(flatten)]
    method_config: C,
    vanilla: &'a CalibrationReport,
    calibrated: &'a CalibrationReport,
}

fn write_calibrated(cli: &Cli, out: &Path, probs: &ProbSet) -> Result<()> {
    create_dir(out)?;
    let path = out.join(format!("calibrated.{}", extension(cli.format)));
    data::save_probs(probs, &path, cli.format)
        .with_context(|| format!("cannot write {}", path.display()))
}

#[derive(Serialize)]
struct TsConfig {
    temperature: f64,
}

fn cmd_ts(cli: &Cli, a: &TsArgs) -> Result<()> {
    let val = read_logits(&a.val)?;
    let test = read_logits(&a.test)?;
    let temperature = ts_fit(&val);
    let calibrated = ts_apply(&test, temperature);
    let vanilla = CalibrationReport::compute(&softmax(&test), a.bins)?;
    let after = CalibrationReport::compute(&calibrated, a.bins)?;
    write_calibrated(cli, &a.out, &calibrated)?;
    write_json(
        Some(&a.out.join("report.json")),
        &CalibrateOutput {
            command: "calibrate",
            method: "ts",
            validation: Some(display(&a.val)),
            test: display(&a.test),
            n_bins: a.bins,
            seed: cli.seed,
            format: extension(cli.format),
            method_config: TsConfig {
                temperature: temperature.value(),
            },
            vanilla: &vanilla,
            calibrated: &after,
        },
    )
}

/// Explicit noise from `--eps`, or the tuned optimum on `--val`.
fn resolve_noise(
    cli: &Cli,
    args: &NoiseArgs,
    val: Option<&Path>,
    bins: usize,
) -> Result<(NoiseSpec, Option<TuneResult>)> {
    if let Some(eps) = args.eps {
        let kind = args.noise.unwrap_or(NoiseKind::Gaussian);
        return Ok((NoiseSpec::new(kind, eps)?, None));
    }
    let Some(val) = val else {
        bail!("missing validation set: pass --val to tune the noise, or give --eps (and --noise) explicitly");
    };
    let validation = read_logits(val)?;
    let grid = tune_grid(cli, args.noise, args.tune_t, bins, args.aggregation);
    let result = tune(&validation, &grid)?;
    Ok((result.best, Some(result)))
}

fn tune_grid(
    cli: &Cli,
    kind: Option<NoiseKind>,
    t: u32,
    bins: usize,
    aggregation: Aggregation,
) -> TuneGrid {
    let mut grid = TuneGrid {
        n_bins: bins,
        t_perturbations: t,
        seed: cli.seed,
        aggregation,
        ..TuneGrid::default()
    };
    if let Some(kind) = kind {
        grid.kinds = vec![kind];
    }
    grid
}

#[derive(Serialize)]
struct CcConfig {
    config: ConsistencyConfig,
    tuning: Option<TuneResult>,
}

fn cmd_cc(cli: &Cli, a: &CcArgs) -> Result<()> {
    let test = read_logits(&a.test)?;
    let (noise, tuning) = resolve_noise(cli, &a.noise, a.val.as_deref(), a.bins)?;
    let cfg = ConsistencyConfig::new(noise, a.t)?
        .with_seed(cli.seed)
        .with_aggregation(a.noise.aggregation);
    let calibrated = cc_calibrate(&test, &cfg);
    let vanilla = CalibrationReport::compute(&softmax(&test), a.bins)?;
    let after = CalibrationReport::compute(&calibrated, a.bins)?;
    write_calibrated(cli, &a.out, &calibrated)?;
    write_json(
        Some(&a.out.join("report.json")),
        &CalibrateOutput {
            command: "calibrate",
            method: "cc",
            validation: a.val.as_deref().map(display),
            test: display(&a.test),
            n_bins: a.bins,
            seed: cli.seed,
            format: extension(cli.format),
            method_config: CcConfig {
                config: cfg,
                tuning,
            },
            vanilla: &vanilla,
            calibrated: &after,
        },
    )
}

#[derive(Serialize)]
struct TuneOutput<'a> {
    command: &'static str,
    validation: String,
    grid: &'a TuneGrid,
    result: &'a TuneResult,
}

fn cmd_tune(cli: &Cli, a: &TuneArgs) -> Result<()> {
    let validation = read_logits(&a.val)?;
    let grid = tune_grid(cli, a.noise, a.t, a.bins, a.aggregation);
    let result = tune(&validation, &grid)?;
    write_json(
        a.out.as_deref(),
        &TuneOutput {
            command: "tune",
            validation: display(&a.val),
            grid: &grid,
            result: &result,
        },
    )
}

fn cmd_sweep(cli: &Cli, a: &SweepArgs) -> Result<()> {
    if a.t.is_empty() {
        bail!("--T needs at least one perturbation count");
    }
    let test = read_logits(&a.test)?;
    let (noise, _) = resolve_noise(cli, &a.noise, a.val.as_deref(), a.bins)?;
    let mut text = String::from("T,ece\n");
    for &t in &a.t {
        let cfg = ConsistencyConfig::new(noise, t)?
            .with_seed(cli.seed)
            .with_aggregation(a.noise.aggregation);
        let (value, _) = ece(&cc_calibrate(&test, &cfg), a.bins)?;
        text.push_str(&format!("{t},{value}\n"));
    }
    write_text(a.out.as_deref(), &text)
}

#[derive(Serialize)]
struct ToySummary<'a> {
    command: &'static str,
    grids: &'a EstimatorGrids,
    best: Vec<EstimatorError>,
    report: &'a ToyReport,
}

fn cmd_toy(cli: &Cli, a: &ToyArgs) -> Result<()> {
    let world = ToyWorld {
        n_train: a.n_train,
        n_test: a.n_test,
        seed: cli.seed,
        ..ToyWorld::default()
    };
    let train = TrainConfig {
        epochs: a.epochs,
        learning_rate: a.lr,
    };
    let grids = EstimatorGrids {
        t_perturbations: a.t,
        ks: EstimatorGrids::default()
            .ks
            .into_iter()
            .filter(|&k| k <= 2 * a.n_test)
            .collect(),
        ..EstimatorGrids::default()
    };
    let report = run_toy_experiment(&world, &train, &grids)?;
    create_dir(&a.out)?;

    let mut errors = csv::Writer::from_path(a.out.join("toy_errors.csv"))?;
    errors.write_record(["estimator", "parameter", "mean_abs_error"])?;
    for e in &report.errors {
        errors.write_record([
            e.estimator.name().to_string(),
            e.estimator.parameter().to_string(),
            e.mean_abs_error.to_string(),
        ])?;
    }
    errors.flush()?;

    let mut grid = csv::Writer::from_path(a.out.join("eta_grid.csv"))?;
    grid.write_record(["x", "y", "eta"])?;
    for [x, y, e] in eta_grid(&world, (-4.0, 4.0), (-4.0, 4.0), a.grid_steps)? {
        grid.write_record([x.to_string(), y.to_string(), e.to_string()])?;
    }
    grid.flush()?;

    let best = ["conf_gap", "topk", "consistency"]
        .iter()
        .filter_map(|f| report.best(f))
        .collect();
    write_json(
        Some(&a.out.join("toy_summary.json")),
        &ToySummary {
            command: "toy",
            grids: &grids,
            best,
            report: &report,
        },
    )
}

#[derive(Serialize)]
struct DiagnoseOutput<T: Serialize> {
    command: &'static str,
    input: String,
    report: T,
}

fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    let set = read_logits(&a.input)?;
    let report = diagnose_logit_gap(&set, a.threshold)?;
    write_json(
        a.out.as_deref(),
        &DiagnoseOutput {
            command: "diagnose",
            input: display(&a.input),
            report,
        },
    )
}

fn cmd_local(cli: &Cli, a: &LocalArgs) -> Result<()> {
    let set = read_logits(&a.input)?;
    let cfg = ConsistencyConfig::new(NoiseSpec::new(a.noise, a.eps)?, a.t)?
        .with_seed(cli.seed)
        .with_aggregation(a.aggregation);
    let report = cc_local_report(&set, &cfg, a.row)?;
    write_json(
        a.out.as_deref(),
        &DiagnoseOutput {
            command: "local",
            input: display(&a.input),
            report,
        },
    )
}

fn cmd_synth(cli: &Cli, a: &SynthArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_samples: a.n,
        n_classes: a.classes,
        sharpness: a.sharpness,
        seed: cli.seed,
        ..SyntheticConfig::default()
    };
    let set = overconfident(&cfg)?;
    create_parent(&a.out)?;
    data::save(&set.logits, &a.out, cli.format)
        .with_context(|| format!("cannot write {}", a.out.display()))
}

fn cmd_split(cli: &Cli, a: &SplitArgs) -> Result<()> {
    let set = read_logits(&a.input)?;
    let spec = SplitSpec {
        validation_fraction: a.val_fraction,
        shuffle_seed: cli.seed,
    };
    let parts = data::split(&set, &spec)?;
    create_dir(&a.out)?;
    let ext = extension(cli.format);
    data::save(
        &parts.validation,
        &a.out.join(format!("val.{ext}")),
        cli.format,
    )?;
    data::save(&parts.test, &a.out.join(format!("test.{ext}")), cli.format)?;
    write_json(Some(&a.out.join("split.json")), &parts.record(&spec))
}
