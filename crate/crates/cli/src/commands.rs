use std::path::{Path, PathBuf};

use chrono::Duration;
use clap::Args;
use evload_core::eval::{evaluate_model, write_abs_error_csv, write_reports_csv};
use evload_core::features::{build_feature_matrix, rolling_average, FeatureKind};
use evload_core::gridval::{build_fixture_case, compare_profiles, GridCase, LoadProfile};
use evload_core::ingest::{clean_csv, AnomalyBounds};
use evload_core::spectral::analyze as spectrum_of;
use evload_core::synth::generate;
use evload_core::train::{fit, forecast, prepare_samples, SavedModel};
use evload_core::{Error, FeatureMatrix, Result, TrainConfig};

use crate::config::RunConfig;
use crate::manifest::Stage;
use crate::GlobalArgs;

pub struct Context {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Context {
    pub fn new(global: &GlobalArgs) -> Result<Self> {
        let mut config = match &global.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        let seed = config.resolve_seed(global.seed);
        Ok(Self {
            config,
            config_path: global.config.clone(),
            seed,
            out_dir: global.out_dir.clone(),
        })
    }

    fn stage(&self, name: &'static str) -> Result<Stage> {
        Stage::new(name, &self.out_dir, self.config_path.as_deref(), self.seed)
    }
}

fn csv_bytes(write: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf)?;
    Ok(buf)
}

/// Open or read a file, naming it in the error.
fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| with_path(e, path))
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| with_path(e, path))
}

fn with_path(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

/// Feature files are loaded by path; make a missing one an IO error that
/// names it.
fn load_features(path: &Path) -> Result<FeatureMatrix> {
    if !path.exists() {
        return Err(with_path(std::io::ErrorKind::NotFound.into(), path));
    }
    FeatureMatrix::load(path)
}

fn kind_index(fm: &FeatureMatrix, name: &str) -> Result<usize> {
    FeatureKind::from_name(name)
        .and_then(|k| fm.index_of(k))
        .ok_or_else(|| Error::InvalidConfig(format!("feature column `{name}` not available")))
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub days: Option<usize>,
    /// Demand cycle length in days.
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    /// Fraction of interval rows to drop, leaving gaps to interpolate.
    #[arg(long)]
    pub gap_fraction: Option<f64>,
    #[arg(long, default_value = "raw.csv")]
    pub output: String,
}

pub fn synth(ctx: &Context, args: SynthArgs) -> Result<()> {
    let mut cfg = ctx.config.synth.clone();
    cfg.days = args.days.unwrap_or(cfg.days);
    cfg.period = args.period.unwrap_or(cfg.period);
    cfg.noise = args.noise.unwrap_or(cfg.noise);
    cfg.gap_fraction = args.gap_fraction.unwrap_or(cfg.gap_fraction);
    let out = generate(&cfg)?;
    let mut stage = ctx.stage("synth")?;
    stage.write(&args.output, csv_bytes(|b| out.series.write_csv(b))?)?;
    stage.finish()?;
    println!(
        "synth: {} rows over {} days, {} rows dropped",
        out.series.len(),
        cfg.days,
        out.dropped
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    /// Raw 15-minute charging CSV.
    #[arg(long)]
    pub input: PathBuf,
    /// Upper plausibility bound per interval, kWh. Overrides `ingest.max_kwh`.
    #[arg(long)]
    pub max_kwh: Option<f64>,
}

pub fn preprocess(ctx: &Context, args: PreprocessArgs) -> Result<()> {
    let ingest = &ctx.config.ingest;
    let max = args.max_kwh.or(ingest.max_kwh).ok_or_else(|| {
        Error::InvalidConfig("an anomaly ceiling is required: set ingest.max_kwh or pass --max-kwh".into())
    })?;
    let bounds = AnomalyBounds::new(ingest.min_kwh, max)?;
    let file = open(&args.input)?;
    let report = clean_csv(file, &ingest.columns, bounds)?;
    let build = build_feature_matrix(&report.series, ctx.config.features)?;

    let mut stage = ctx.stage("preprocess")?;
    stage.input(&args.input);
    stage.write("cleaned.csv", csv_bytes(|b| report.series.write_csv(b))?)?;
    stage.write("features.csv", csv_bytes(|b| build.matrix.write_csv(b))?)?;
    stage.write("features.json", build.matrix.to_json()?)?;
    stage.finish()?;
    println!(
        "preprocess: {} rows, {} rejected, {} interpolated, {} clipped, {} days",
        report.series.len(),
        report.rejected.len(),
        report.interpolated,
        report.clipped,
        build.matrix.n_days()
    );
    for rej in report.rejected.iter().take(10) {
        eprintln!("rejected line {}: {}", rej.line, rej.reason);
    }
    if !build.degenerate.is_empty() {
        eprintln!("warning: all-zero channels {:?}", build.degenerate);
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Feature CSV (with a `.json` sidecar) or feature JSON.
    #[arg(long)]
    pub features: PathBuf,
    /// Column to transform; defaults to `analyze.column`.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long)]
    pub top_k: Option<usize>,
    /// Rolling-average windows in days; defaults to `analyze.rolling_windows`.
    #[arg(long, value_delimiter = ',')]
    pub windows: Option<Vec<usize>>,
}

pub fn analyze(ctx: &Context, args: AnalyzeArgs) -> Result<()> {
    let cfg = &ctx.config.analyze;
    let fm = load_features(&args.features)?;
    let column = args.column.as_deref().unwrap_or(&cfg.column);
    let signal = &fm.columns[kind_index(&fm, column)?];
    let rolling_col = kind_index(&fm, &cfg.rolling_column)?;
    let windows = args.windows.unwrap_or_else(|| cfg.rolling_windows.clone());
    // Validate every window before writing anything.
    let rolled: Vec<(usize, Vec<f64>)> = windows
        .iter()
        .map(|&w| rolling_average(&fm.columns[rolling_col], w).map(|r| (w, r)))
        .collect::<Result<_>>()?;
    let (spectrum, report) = spectrum_of(signal, args.top_k.unwrap_or(cfg.top_k), cfg.max_period)?;

    let mut stage = ctx.stage("analyze")?;
    stage.input(&args.features);
    stage.write("spectrum.json", report.to_json()? + "\n")?;
    stage.write("periodogram.csv", csv_bytes(|b| spectrum.write_csv(b))?)?;
    for (w, values) in rolled {
        let bytes = csv_bytes(|b| {
            let mut wr = csv::Writer::from_writer(b);
            wr.write_record(["date", cfg.rolling_column.as_str(), "rolling_mean"])?;
            for ((day, raw), avg) in fm.days.iter().zip(&fm.columns[rolling_col]).zip(&values) {
                wr.write_record([day.to_string(), raw.to_string(), avg.to_string()])?;
            }
            wr.flush()?;
            Ok(())
        })?;
        stage.write(&format!("rolling_{w}.csv"), bytes)?;
    }
    stage.finish()?;
    let periods: Vec<String> = report.periods.iter().map(|p| format!("{p:.2}")).collect();
    println!("analyze: dominant periods of {column} (days): {}", periods.join(", "));
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub features: PathBuf,
    /// Start from a named horizon preset (weekly, biweekly, monthly, seasonal)
    /// instead of the config's `train` section.
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
}

fn train_config(ctx: &Context, preset: Option<&str>, epochs: Option<usize>) -> Result<TrainConfig> {
    let mut cfg = match preset {
        Some(name) => {
            TrainConfig::by_name(name).ok_or_else(|| Error::InvalidConfig(format!("unknown preset `{name}`")))?
        }
        None => ctx.config.train.clone(),
    };
    cfg.seed = ctx.seed;
    if let Some(e) = epochs {
        cfg.number_of_epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn train(ctx: &Context, args: TrainArgs) -> Result<()> {
    let fm = load_features(&args.features)?;
    let cfg = train_config(ctx, args.preset.as_deref(), args.epochs)?;
    let result = fit(&fm, &cfg)?;
    let mut stage = ctx.stage("train")?;
    stage.input(&args.features);
    stage.write("model.json", result.model.to_json()? + "\n")?;
    stage.write("loss_history.csv", csv_bytes(|b| result.outcome.write_history_csv(b))?)?;
    stage.finish()?;
    println!(
        "train: {} epochs{}, best epoch {} with validation loss {:.6}",
        result.outcome.epochs_run(),
        if result.outcome.stopped_early { " (early stop)" } else { "" },
        result.outcome.best.epoch,
        result.outcome.best.val_loss
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
}

fn load_model(path: &Path) -> Result<SavedModel> {
    SavedModel::load(path)
}

pub fn predict(ctx: &Context, args: PredictArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let fm = load_features(&args.features)?;
    let out = forecast(&model, &fm)?;
    let last = *fm.days.last().ok_or(Error::EmptySeries)?;
    let bytes = csv_bytes(|b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["date".to_string()];
        header.extend(model.kinds.iter().map(|k| k.name().to_string()));
        w.write_record(&header)?;
        for (i, row) in out.rows().into_iter().enumerate() {
            let mut rec = vec![(last + Duration::days(i as i64 + 1)).to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    let mut stage = ctx.stage("predict")?;
    stage.input(&args.model);
    stage.input(&args.features);
    stage.write("forecast.csv", bytes)?;
    stage.finish()?;
    println!("predict: {} days after {last}", out.nrows());
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, default_value = "model.json")]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
}

pub fn evaluate(ctx: &Context, args: EvaluateArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let fm = load_features(&args.features)?;
    if fm.kinds != model.kinds {
        return Err(Error::ShapeMismatch("feature columns differ from the trained model".into()));
    }
    // The stored config reproduces the exact split used during training.
    let split = prepare_samples(&fm, &model.config)?;
    let columns = ctx
        .config
        .eval
        .columns
        .iter()
        .map(|c| kind_index(&fm, c))
        .collect::<Result<Vec<_>>>()?;
    let params = &model.checkpoint.params;
    let h = model.config.prediction_steps;
    let ev = evaluate_model(params, &split.test, &columns, h.to_string())?;

    // Load profiles for the grid check: first forecast step of each test
    // window on the daily-average channel, in kWh per interval.
    let na = kind_index(&fm, "na")?;
    let na_eval = evaluate_model(params, &split.test, &[na], h.to_string())?;
    let da_max = fm.normalization_maxima.da;
    let first = |v: &[f64]| -> Vec<f64> { v.iter().step_by(h).map(|x| x * da_max).collect() };
    let grid = &ctx.config.grid;
    let bus_ids = 1..grid.n_buses;
    let actual = LoadProfile::from_daily_average(&first(&na_eval.target), bus_ids.clone(), grid.scaling);
    let predicted = LoadProfile::from_daily_average(&first(&na_eval.pred), bus_ids, grid.scaling);
    let case = build_fixture_case(grid.n_buses, LoadProfile::default())?;

    let mut stage = ctx.stage("evaluate")?;
    stage.input(&args.model);
    stage.input(&args.features);
    stage.write("metrics.csv", csv_bytes(|b| write_reports_csv(std::slice::from_ref(&ev.report), b))?)?;
    stage.write("abs_error.csv", csv_bytes(|b| write_abs_error_csv(&ev.abs_error, b))?)?;
    stage.write("case.json", case.to_json()? + "\n")?;
    stage.write("loads_actual.csv", csv_bytes(|b| actual.write_csv(b))?)?;
    stage.write("loads_predicted.csv", csv_bytes(|b| predicted.write_csv(b))?)?;
    stage.finish()?;
    let r = &ev.report;
    println!(
        "evaluate: horizon {} over {} points: R2 {:.4}, MSE {:.6}, RMSE {:.4}, MAE {:.4}",
        r.horizon, r.n_points, r.r2, r.mse, r.rmse, r.mae
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct GridcheckArgs {
    #[arg(long, default_value = "case.json")]
    pub case: PathBuf,
    #[arg(long, default_value = "loads_actual.csv")]
    pub actual: PathBuf,
    #[arg(long, default_value = "loads_predicted.csv")]
    pub predicted: PathBuf,
}

pub fn gridcheck(ctx: &Context, args: GridcheckArgs) -> Result<()> {
    let case = GridCase::from_json(&read_text(&args.case)?)?;
    let actual = LoadProfile::read_csv(open(&args.actual)?)?;
    let predicted = LoadProfile::read_csv(open(&args.predicted)?)?;
    let grid = &ctx.config.grid;
    let report = compare_profiles(&case, &actual, &predicted, grid.tol, grid.max_iter)?;
    let mut stage = ctx.stage("gridcheck")?;
    for p in [&args.case, &args.actual, &args.predicted] {
        stage.input(p);
    }
    stage.write("deviation.csv", csv_bytes(|b| report.write_csv(b))?)?;
    stage.write("deviation_summary.json", report.summary_json()? + "\n")?;
    stage.finish()?;
    println!(
        "gridcheck: max |dV| {:.3e} pu at bus {} timestep {}",
        report.max_abs_dv, report.argmax_bus, report.argmax_timestep
    );
    Ok(())
}
