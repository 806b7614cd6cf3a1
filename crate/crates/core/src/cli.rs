//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 I/O error,
//! 4 malformed data file.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{
    build_scenario, campaign_settings, parse_config, parse_overrides, scenario_to_pairs,
    CampaignSettings, ConfigDoc, ConfigError,
};
use crate::detection::{simulate_record, Scenario, SimError};
use crate::estimators::{
    coincidence_moment, compute_stats, squeezing_covariance, squeezing_homodyne, squeezing_lo_free,
    MeasurementStats, SqueezingEstimate,
};
use crate::experiments::{
    run_attenuation_sweep, run_phase_sweep, run_sweep, snl_calibration_campaign, ExperimentError,
    SweepSpec, SweptParameter,
};
use crate::io::{
    self, fmt_num, lookup, read_calibration, read_record, read_sidecar, render_sweep_csv,
    render_xy, write_atomic, write_calibration, write_record, xy_path, FileError,
};

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "SQCORR_SEED";

#[derive(Debug, Parser)]
#[command(
    name = "sqcorr",
    version,
    about = "Squeezed-light correlation measurement toolkit"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a two-channel photocurrent record.
    Simulate(SimulateArgs),
    /// Print statistics and squeezing estimates of a record.
    Estimate(EstimateArgs),
    /// Calibrate the shot-noise level against LO power.
    Calibrate(CalibrateArgs),
    /// Run a phase, attenuation or LO-power sweep.
    Sweep(SweepArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunOptions {
    /// Seed; takes precedence over SQCORR_SEED and the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Configuration overrides, `key=value`.
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub run: RunOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Hd,
    Cov,
    Lofree,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    pub record: PathBuf,
    /// Shot-noise calibration file.
    #[arg(long)]
    pub snl: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    /// LO power at the beamsplitter; defaults to the record's sidecar.
    #[arg(long)]
    pub lo_power: Option<f64>,
    /// Also write the results as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    pub config: PathBuf,
    /// Comma-separated LO powers, ascending.
    #[arg(long, value_delimiter = ',')]
    pub powers: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub run: RunOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Phase,
    Attenuation,
    Power,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    pub config: PathBuf,
    #[arg(long = "sweep", value_enum)]
    pub kind: SweepKind,
    #[arg(long)]
    pub out: PathBuf,
    /// Shot-noise calibration for the squeezing columns.
    #[arg(long)]
    pub snl: Option<PathBuf>,
    /// Comma-separated swept values (default grid otherwise).
    #[arg(long, value_delimiter = ',')]
    pub values: Vec<f64>,
    #[arg(long)]
    pub seeds_per_point: Option<usize>,
    #[arg(long)]
    pub samples_per_run: Option<usize>,
    #[arg(value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(flatten)]
    pub run: RunOptions,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Io(String),
    #[error("data: {0}")]
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        match e {
            FileError::Io { .. } => CliError::Io(e.to_string()),
            FileError::Format { .. } => CliError::Data(e.to_string()),
        }
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Simulation(SimError::InvalidScenario { field, reason }) => {
                CliError::Config(ConfigError::Invalid {
                    key: field,
                    message: reason,
                })
            }
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// Process environment the commands depend on.
#[derive(Debug, Clone, Default)]
pub struct Context {
    /// Value of `SQCORR_SEED`, if set.
    pub env_seed: Option<String>,
}

impl Context {
    pub fn from_env() -> Self {
        Self {
            env_seed: std::env::var(SEED_ENV).ok(),
        }
    }
}

/// Runs `f` on a pool of `workers` threads, or the global pool.
fn with_workers<T: Send>(
    workers: Option<usize>,
    f: impl FnOnce() -> Result<T, CliError> + Send,
) -> Result<T, CliError> {
    match workers {
        None => f(),
        Some(0) => Err(CliError::Usage("--workers must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(e.to_string()))?
            .install(f),
    }
}

fn load_doc(path: &Path, overrides: &[String]) -> Result<ConfigDoc, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let doc = parse_config(&text)?;
    Ok(doc.with_overrides(&parse_overrides(overrides)?)?)
}

/// Seed precedence: command-line flag, then `SQCORR_SEED`, then config.
fn resolve_scenario(
    doc: &ConfigDoc,
    run: &RunOptions,
    ctx: &Context,
) -> Result<Scenario, CliError> {
    let mut s = build_scenario(doc)?;
    if let Some(seed) = run.seed {
        s.digitizer.seed = seed;
    } else if let Some(raw) = &ctx.env_seed {
        s.digitizer.seed = raw.trim().parse().map_err(|_| {
            CliError::Config(ConfigError::Invalid {
                key: SEED_ENV.into(),
                message: format!("{raw:?} is not a non-negative integer"),
            })
        })?;
    }
    Ok(s)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

pub fn cmd_simulate(args: &SimulateArgs, ctx: &Context) -> Result<String, CliError> {
    let doc = load_doc(&args.config, &args.overrides)?;
    let scenario = resolve_scenario(&doc, &args.run, ctx)?;
    let record = with_workers(args.run.workers, || {
        simulate_record(&scenario).map_err(|e| match e {
            SimError::InvalidScenario { field, reason } => CliError::Config(ConfigError::Invalid {
                key: field,
                message: reason,
            }),
            other => CliError::Usage(other.to_string()),
        })
    })?;
    let mut meta = vec![
        ("source".to_string(), "simulated".to_string()),
        ("created_unix".to_string(), unix_now().to_string()),
        ("lo_power".to_string(), scenario.lo_power().to_string()),
    ];
    meta.extend(scenario_to_pairs(&scenario));
    write_record(&args.out, &record, &meta)?;
    let size = io::HEADER_LEN + 16 * record.len();
    Ok(format!(
        "wrote {} samples (seed {}) to {} ({} bytes)",
        record.len(),
        scenario.digitizer.seed,
        args.out.display(),
        size
    ))
}

fn stats_lines(stats: &MeasurementStats) -> Vec<(String, f64)> {
    vec![
        ("n".into(), stats.n as f64),
        ("mean1".into(), stats.mean1),
        ("mean2".into(), stats.mean2),
        ("var1".into(), stats.var1),
        ("var2".into(), stats.var2),
        ("var_diff".into(), stats.var_diff),
        ("var_diff_se".into(), stats.se_var_diff),
        ("cov".into(), stats.cov),
        ("cov_se".into(), stats.se_cov),
        ("coincidence".into(), coincidence_moment(stats)),
    ]
}

pub fn cmd_estimate(args: &EstimateArgs) -> Result<String, CliError> {
    if args.method.is_some() && args.snl.is_none() {
        return Err(CliError::Usage(
            "--method needs a shot-noise calibration (--snl)".into(),
        ));
    }
    let record = read_record(&args.record)?;
    let stats = compute_stats(&record).map_err(|e| CliError::Data(e.to_string()))?;
    let mut fields = stats_lines(&stats);

    let mut estimate: Option<SqueezingEstimate> = None;
    if let Some(snl_path) = &args.snl {
        let snl = read_calibration(snl_path)?;
        let method = args.method.unwrap_or(MethodArg::Cov);
        let power = match args.lo_power {
            Some(p) => p,
            None => read_sidecar(&args.record)?
                .as_deref()
                .and_then(|kv| lookup(kv, "lo_power"))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| {
                    CliError::Usage(
                        "LO power unknown: pass --lo-power or keep the .meta sidecar".into(),
                    )
                })?,
        };
        let e = match method {
            MethodArg::Hd => squeezing_homodyne(stats.var_diff_measured(), &snl, power),
            MethodArg::Cov => squeezing_covariance(stats.cov_measured(), &snl, power),
            MethodArg::Lofree => squeezing_lo_free(stats.cov_measured(), snl.snl_at(power)),
        }
        .map_err(|e| CliError::Usage(e.to_string()))?;
        fields.push(("lo_power".into(), power));
        estimate = Some(e);
    }

    let mut out = String::new();
    for (k, v) in &fields {
        out.push_str(&format!("{k} = {v}\n"));
    }
    if let Some(e) = &estimate {
        out.push_str(&format!("method = {}\n", e.method.as_str()));
        out.push_str(&format!("s = {}\n", e.s));
        out.push_str(&format!("s_se = {}\n", e.se));
        match e.s_db {
            Some(db) => out.push_str(&format!("s_db = {db}\n")),
            None => out.push_str("s_db = undefined\n"),
        }
    }

    if let Some(csv_path) = &args.csv {
        let mut header: Vec<String> = fields.iter().map(|(k, _)| k.clone()).collect();
        let mut row: Vec<String> = fields.iter().map(|(_, v)| fmt_num(*v)).collect();
        if let Some(e) = &estimate {
            header.extend(["method", "s", "s_se", "s_db"].map(String::from));
            row.push(e.method.as_str().into());
            row.push(fmt_num(e.s));
            row.push(fmt_num(e.se));
            row.push(e.s_db.map(fmt_num).unwrap_or_default());
        }
        let text = format!("{}\n{}\n", header.join(","), row.join(","));
        write_atomic(csv_path, text.as_bytes())?;
    }
    Ok(out.trim_end().to_string())
}

pub fn cmd_calibrate(args: &CalibrateArgs, ctx: &Context) -> Result<String, CliError> {
    let doc = load_doc(&args.config, &args.overrides)?;
    let settings = campaign_settings(&doc)?;
    let scenario = resolve_scenario(&doc, &args.run, ctx)?;
    let powers = if args.powers.is_empty() {
        settings.calibration_powers.unwrap_or_default()
    } else {
        args.powers.clone()
    };
    if powers.len() < 2 {
        return Err(CliError::Usage(format!(
            "calibration needs at least 2 LO powers, got {}",
            powers.len()
        )));
    }
    let calibration = with_workers(args.run.workers, || {
        Ok(snl_calibration_campaign(&scenario, &powers)?)
    })?;
    write_calibration(&args.out, &calibration)?;
    let mut msg = format!(
        "slope = {} ± {}, en_total = {} ± {}, wrote {}",
        calibration.slope,
        calibration.slope_se,
        calibration.en_total,
        calibration.en_total_se,
        args.out.display()
    );
    if calibration.intercept_warning {
        msg.push_str("\nwarning: fitted intercept inconsistent with zero");
    }
    Ok(msg)
}

fn sweep_spec(
    args: &SweepArgs,
    scenario: Scenario,
    settings: &CampaignSettings,
) -> Result<SweepSpec, CliError> {
    let swept = match args.kind {
        SweepKind::Phase => SweptParameter::LoPhase,
        SweepKind::Attenuation => SweptParameter::Transmission,
        SweepKind::Power => SweptParameter::LoPower,
    };
    let values = if !args.values.is_empty() {
        args.values.clone()
    } else if let Some(v) = &settings.values {
        v.clone()
    } else {
        swept.default_values(&scenario)
    };
    let seeds = args
        .seeds_per_point
        .or(settings.seeds_per_point)
        .unwrap_or(20);
    if seeds == 0 {
        return Err(CliError::Usage("seeds_per_point must be at least 1".into()));
    }
    let samples = args
        .samples_per_run
        .or(settings.samples_per_run)
        .unwrap_or((scenario.digitizer.n_samples / seeds).max(2));
    let mut spec = SweepSpec::new(scenario, swept, values).with_seeds(seeds, samples);
    if let Some(path) = &args.snl {
        spec = spec.with_calibration(read_calibration(path)?);
    }
    Ok(spec)
}

pub fn cmd_sweep(args: &SweepArgs, ctx: &Context) -> Result<String, CliError> {
    let doc = load_doc(&args.config, &args.overrides)?;
    let settings = campaign_settings(&doc)?;
    let scenario = resolve_scenario(&doc, &args.run, ctx)?;
    let provenance: Vec<(String, String)> = scenario_to_pairs(&scenario);
    let spec = sweep_spec(args, scenario, &settings)?;

    let (result, footer) = with_workers(args.run.workers, || {
        Ok(match args.kind {
            SweepKind::Phase => (run_phase_sweep(&spec)?, Vec::new()),
            SweepKind::Power => (run_sweep(&spec)?, Vec::new()),
            SweepKind::Attenuation => {
                let sweep = run_attenuation_sweep(&spec)?;
                let line = match &sweep.fit {
                    Ok(fit) => format!(
                        "fitted_exponent={:.2}±{:.3} amplitude={}",
                        fit.exponent, fit.exponent_se, fit.amplitude
                    ),
                    Err(e) => format!("fitted_exponent=refused ({e})"),
                };
                (sweep.result, vec![line])
            }
        })
    })?;

    let csv = render_sweep_csv(&result, &provenance, &footer);
    write_atomic(&args.out, csv.as_bytes())?;
    write_atomic(&xy_path(&args.out), render_xy(&result).as_bytes())?;
    let mut msg = format!(
        "wrote {} rows to {} and {}",
        result.rows.len(),
        args.out.display(),
        xy_path(&args.out).display()
    );
    for line in footer {
        msg.push('\n');
        msg.push_str(&line);
    }
    Ok(msg)
}

pub fn run(cli: &Cli, ctx: &Context) -> Result<String, CliError> {
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, ctx),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Calibrate(a) => cmd_calibrate(a, ctx),
        Command::Sweep(a) => cmd_sweep(a, ctx),
    }
}
