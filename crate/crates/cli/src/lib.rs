//! Command implementations behind the `rgbd-calib` binary.
//!
//! Exit codes: 0 success, 2 usage or validation error, 3 I/O error,
//! 4 solver stopped without converging (results are still written),
//! 5 numerical failure.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use rgbd_calib::autoweight::{AutoWeightOptions, EstimatorMode};
use rgbd_calib::costs::{init_structure, weight_from_variances, NoiseModel, ParameterBlock};
use rgbd_calib::eval::{result_rows, run_experiment_with_progress, run_method, summarize, Method, MethodSettings};
use rgbd_calib::init::initialize_all;
use rgbd_calib::io::{
    read_dataset, read_results_csv, read_text, summary_to_json, write_dataset, write_results_csv,
    write_summary_csv, write_text, ExperimentConfigFile, PosesFile, SceneConfigFile,
};
use rgbd_calib::scene::simulate;
use rgbd_calib::solver::SolverOptions;

/// Environment variable that overrides a config file's seed (but not `--seed`).
pub const SEED_ENV: &str = "CALIB_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] rgbd_calib::Error),

    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        use rgbd_calib::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                E::Io { .. } => 3,
                E::SingularSystem
                | E::NonFiniteCost
                | E::DegenerateConfiguration { .. }
                | E::PointBehindCamera { .. }
                | E::JacobianMismatch { .. }
                | E::VisibilityExhausted { .. } => 5,
                _ => 2,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "rgbd-calib", version, about = "Extrinsic calibration of RGB-D camera rigs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a scene config.
    Simulate(SimulateArgs),
    /// Estimate camera poses for a dataset.
    Calibrate(CalibrateArgs),
    /// Run a sweep of simulated calibrations and write per-run results.
    Experiment(ExperimentArgs),
    /// Aggregate a results table into boxplot statistics.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scene config JSON (preset with overrides, or explicit rig).
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CalibrationMethod {
    Init,
    Ba,
    Icp,
    Joint,
    JointAuto,
    BaicpPlus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Estimator {
    Consistent,
    PaperLiteral,
}

impl From<Estimator> for EstimatorMode {
    fn from(e: Estimator) -> Self {
        match e {
            Estimator::Consistent => EstimatorMode::Consistent,
            Estimator::PaperLiteral => EstimatorMode::PaperLiteral,
        }
    }
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub method: CalibrationMethod,
    /// Weight of the 2D term for `joint`.
    #[arg(long, conflicts_with_all = ["sigma2d", "sigma3d"])]
    pub w: Option<f64>,
    /// 2D noise std (pixels); with `--sigma3d`, sets `w = 2σ²₃D/σ²₂D`.
    #[arg(long, requires = "sigma3d")]
    pub sigma2d: Option<f64>,
    /// 3D noise std (mm).
    #[arg(long, requires = "sigma2d")]
    pub sigma3d: Option<f64>,
    /// Balance between the 3D and 2D terms for `baicp-plus`, in [0, 1].
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long, value_enum)]
    pub estimator: Option<Estimator>,
    /// Estimated poses JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// Report JSON; defaults to the `--out` path with a `.report.json` suffix.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// Experiment config JSON.
    pub config: PathBuf,
    #[arg(long)]
    pub out_csv: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Suppress progress output.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub in_csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to JSON for a `.json` output path, CSV otherwise.
    #[arg(long, value_enum)]
    pub format: Option<ReportFormat>,
}

/// Runs a parsed command; returns the process exit code on success paths.
pub fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a, std::env::var(SEED_ENV).ok().as_deref()).map(|_| 0),
        Command::Calibrate(a) => cmd_calibrate(&a),
        Command::Experiment(a) => cmd_experiment(&a).map(|_| 0),
        Command::Report(a) => cmd_report(&a).map(|_| 0),
    }
}

/// `--seed` wins over the environment, which wins over the config file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, config: u64) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))),
        None => Ok(config),
    }
}

pub fn cmd_simulate(args: &SimulateArgs, env_seed: Option<&str>) -> Result<()> {
    let file = SceneConfigFile::from_json(&read_text(&args.config)?)?;
    let mut cfg = file.resolve()?;
    cfg.seed = resolve_seed(args.seed, env_seed, cfg.seed)?;
    let d = simulate(&cfg)?;
    write_dataset(&args.out, &d)?;
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct CalibrationReport {
    pub method: String,
    pub converged: bool,
    pub iterations: Option<usize>,
    pub outer_iterations: Option<usize>,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub w_used: Option<f64>,
    pub sigma2d_sq_est: Option<f64>,
    pub sigma3d_sq_est: Option<f64>,
    pub cost_traces: Vec<Vec<f64>>,
}

fn method_settings(args: &CalibrateArgs) -> Result<(Method, MethodSettings)> {
    let m = args.method;
    let usage = |msg: &str| Err(CliError::Usage(msg.to_string()));
    let has_weight = args.w.is_some() || args.sigma2d.is_some();
    if has_weight && m != CalibrationMethod::Joint {
        return usage("--w/--sigma2d/--sigma3d apply only to --method joint");
    }
    if args.c.is_some() && m != CalibrationMethod::BaicpPlus {
        return usage("--c applies only to --method baicp-plus");
    }
    if args.estimator.is_some() && m != CalibrationMethod::JointAuto {
        return usage("--estimator applies only to --method joint-auto");
    }
    let mut settings = MethodSettings {
        solver: SolverOptions::default(),
        autoweight: AutoWeightOptions::default(),
        known_w: None,
    };
    let method = match m {
        CalibrationMethod::Init => Method::Init,
        CalibrationMethod::Ba => Method::Ba,
        CalibrationMethod::Icp => Method::Icp,
        CalibrationMethod::Joint => {
            let w = match (args.w, args.sigma2d, args.sigma3d) {
                (Some(w), None, None) => w,
                (None, Some(s2), Some(s3)) => weight_from_variances(&NoiseModel::from_std(s2, s3)?),
                _ => return usage("--method joint needs --w or both --sigma2d and --sigma3d"),
            };
            if !(w >= 0.0 && w.is_finite()) {
                return usage("--w must be finite and >= 0");
            }
            settings.known_w = Some(w);
            Method::JointKnownW
        }
        CalibrationMethod::JointAuto => {
            if let Some(e) = args.estimator {
                settings.autoweight.estimator_mode = e.into();
            }
            Method::JointAuto
        }
        CalibrationMethod::BaicpPlus => match args.c {
            Some(c) if (0.0..=1.0).contains(&c) => Method::BaicpPlus(c),
            Some(_) => return usage("--c must lie in [0, 1]"),
            None => return usage("--method baicp-plus needs --c"),
        },
    };
    Ok((method, settings))
}

/// Default report path: `poses.json` → `poses.report.json`.
pub fn default_report_path(out: &Path) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.report.json"))
}

pub fn cmd_calibrate(args: &CalibrateArgs) -> Result<u8> {
    let (method, settings) = method_settings(args)?;
    let d = read_dataset(&args.dataset)?;
    let init = initialize_all(&d)?;
    let s0 = ParameterBlock::from_all_poses(&init, init_structure(&d, &init)?);
    let outcome = run_method(method, &d, &init, &s0, &settings)?;

    let ids = d.cameras().iter().map(|c| c.id);
    write_text(&args.out, &PosesFile::new(ids, &outcome.poses).to_json())?;
    let report = CalibrationReport {
        method: method.to_string(),
        converged: outcome.converged,
        iterations: outcome.iterations,
        outer_iterations: outcome.outer_iterations,
        initial_cost: outcome.cost_traces.first().and_then(|t| t.first().copied()),
        final_cost: outcome.final_cost,
        w_used: outcome.w_used,
        sigma2d_sq_est: outcome.sigma2d_sq_est,
        sigma3d_sq_est: outcome.sigma3d_sq_est,
        cost_traces: outcome.cost_traces,
    };
    let mut text = serde_json::to_string_pretty(&report).expect("plain data serializes");
    text.push('\n');
    let report_path = args.report.clone().unwrap_or_else(|| default_report_path(&args.out));
    write_text(&report_path, &text)?;
    Ok(if report.converged { 0 } else { 4 })
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    if args.jobs == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    let cfg = ExperimentConfigFile::from_json(&read_text(&args.config)?)?.resolve()?;
    let quiet = args.quiet;
    let progress = move |done: usize, total: usize| {
        if !quiet {
            eprintln!("[{done}/{total}] realizations done");
        }
    };
    let records = run_experiment_with_progress(&cfg, args.jobs, &progress)?;
    let mut buf = Vec::new();
    write_results_csv(&mut buf, &result_rows(&records))?;
    write_text(&args.out_csv, std::str::from_utf8(&buf).expect("csv output is UTF-8"))?;
    Ok(())
}

pub fn cmd_report(args: &ReportArgs) -> Result<()> {
    let text = read_text(&args.in_csv)?;
    let rows = read_results_csv(text.as_bytes())?;
    let summary = summarize(&rows);
    let format = args.format.unwrap_or(match args.out.extension().and_then(|e| e.to_str()) {
        Some("json") => ReportFormat::Json,
        _ => ReportFormat::Csv,
    });
    let out = match format {
        ReportFormat::Json => summary_to_json(&summary),
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            write_summary_csv(&mut buf, &summary)?;
            String::from_utf8(buf).expect("csv output is UTF-8")
        }
    };
    write_text(&args.out, &out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some("2"), 3).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some("2"), 3).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, 3).unwrap(), 3);
        assert_eq!(resolve_seed(None, Some("x"), 3).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn exit_codes() {
        use rgbd_calib::Error as E;
        assert_eq!(CliError::from(E::SingularSystem).exit_code(), 5);
        assert_eq!(
            CliError::from(E::Io {
                path: "x".into(),
                message: "y".into()
            })
            .exit_code(),
            3
        );
        assert_eq!(CliError::from(E::InvalidConfig("H".into())).exit_code(), 2);
    }

    #[test]
    fn report_path_default() {
        assert_eq!(default_report_path(Path::new("/tmp/poses.json")), Path::new("/tmp/poses.report.json"));
    }
}
