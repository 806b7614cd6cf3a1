//! Measurement campaigns: LO phase, attenuation and LO power sweeps, the
//! homodyne-versus-covariance comparison, and shot-noise calibration.
//!
//! Every simulation run inside a campaign gets its own seed derived from
//! the base scenario's seed and the run's `(point, repetition)` index, so
//! results do not depend on how runs are scheduled across threads.

use std::f64::consts::TAU;

use rayon::prelude::*;
use thiserror::Error;

use crate::detection::{simulate_stats, Scenario, SimError};
use crate::estimators::{
    calibrate_snl_measured, fit_scaling_exponent, squeezing_covariance, squeezing_homodyne,
    CalibrationPoint, EstimateError, Measured, MeasurementStats, PowerLawFit, SnlCalibration,
};
use crate::gaussian::{GaussianState, LossChannel};
use crate::seeds;

/// Threshold, in standard errors, for calling a covariance significant.
pub const SIGNIFICANCE: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExperimentError {
    #[error("invalid sweep: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Simulation(#[from] SimError),
    #[error(transparent)]
    Estimation(#[from] EstimateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweptParameter {
    LoPhase,
    Transmission,
    LoPower,
}

impl SweptParameter {
    /// Column name used in result tables.
    pub fn column(&self) -> &'static str {
        match self {
            SweptParameter::LoPhase => "phase_rad",
            SweptParameter::Transmission => "transmission",
            SweptParameter::LoPower => "lo_power",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "phase" | "lo_phase" | "phase_rad" => Some(SweptParameter::LoPhase),
            "attenuation" | "transmission" => Some(SweptParameter::Transmission),
            "power" | "lo_power" => Some(SweptParameter::LoPower),
            _ => None,
        }
    }

    fn check(&self, v: f64) -> Result<(), ExperimentError> {
        let ok = match self {
            SweptParameter::LoPhase => v.is_finite(),
            SweptParameter::Transmission => v > 0.0 && v <= 1.0,
            SweptParameter::LoPower => v.is_finite() && v > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(ExperimentError::InvalidSpec(format!(
                "{} value {v} out of range",
                self.column()
            )))
        }
    }

    /// Default grid for the parameter given a base scenario.
    pub fn default_values(&self, base: &Scenario) -> Vec<f64> {
        match self {
            SweptParameter::LoPhase => phase_grid(64),
            SweptParameter::Transmission => log_grid(0.05, 1.0, 8),
            SweptParameter::LoPower => {
                let p = base.lo.amplitude_sq;
                log_grid(0.05 * p, p, 8)
            }
        }
    }
}

/// `n` equally spaced phases over `[0, 2π)`.
pub fn phase_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| TAU * k as f64 / n as f64).collect()
}

/// `n` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![hi];
    }
    let step = (hi / lo).ln() / (n - 1) as f64;
    (0..n)
        .map(|k| {
            if k == n - 1 {
                hi
            } else {
                lo * (step * k as f64).exp()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Scenario every point starts from; its digitizer seed is the master
    /// seed of the sweep.
    pub base: Scenario,
    pub swept: SweptParameter,
    pub values: Vec<f64>,
    pub seeds_per_point: usize,
    pub samples_per_run: usize,
    /// Calibration used for the squeezing columns. `None` uses the
    /// scenario's nominal shot-noise slope and electronic-noise level.
    pub calibration: Option<SnlCalibration>,
}

impl SweepSpec {
    pub fn new(base: Scenario, swept: SweptParameter, values: Vec<f64>) -> Self {
        let samples_per_run = base.digitizer.n_samples;
        Self {
            base,
            swept,
            values,
            seeds_per_point: 1,
            samples_per_run,
            calibration: None,
        }
    }

    pub fn with_seeds(mut self, seeds_per_point: usize, samples_per_run: usize) -> Self {
        self.seeds_per_point = seeds_per_point;
        self.samples_per_run = samples_per_run;
        self
    }

    pub fn with_calibration(mut self, calibration: SnlCalibration) -> Self {
        self.calibration = Some(calibration);
        self
    }

    pub fn master_seed(&self) -> u64 {
        self.base.digitizer.seed
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.values.is_empty() {
            return Err(ExperimentError::InvalidSpec("no swept values".into()));
        }
        if self.seeds_per_point == 0 {
            return Err(ExperimentError::InvalidSpec(
                "seeds_per_point must be at least 1".into(),
            ));
        }
        if self.samples_per_run < 2 {
            return Err(ExperimentError::InvalidSpec(
                "samples_per_run must be at least 2".into(),
            ));
        }
        for &v in &self.values {
            self.swept.check(v)?;
        }
        self.point_scenario(0).validate()?;
        Ok(())
    }

    /// Scenario at point `index` before seeding.
    pub fn point_scenario(&self, index: usize) -> Scenario {
        let mut s = self.base.clone();
        let v = self.values[index];
        match self.swept {
            SweptParameter::LoPhase => s.lo.phase = v,
            SweptParameter::Transmission => s.loss.transmission = v,
            SweptParameter::LoPower => s.lo.amplitude_sq = v,
        }
        s.digitizer.n_samples = self.samples_per_run;
        s
    }

    fn run_scenario(&self, index: usize, rep: usize) -> Scenario {
        let seed = seeds::derive(self.master_seed(), &[index as u64, rep as u64]);
        self.point_scenario(index).with_seed(seed)
    }

    fn effective_calibration(&self) -> (SnlCalibration, CalibrationSource) {
        match &self.calibration {
            Some(c) => (c.clone(), CalibrationSource::Supplied),
            None => (
                SnlCalibration::from_slope(self.base.snl_slope(), self.base.en_total()),
                CalibrationSource::Nominal,
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CalibrationSource {
    Nominal,
    Supplied,
}

impl CalibrationSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CalibrationSource::Nominal => "nominal",
            CalibrationSource::Supplied => "supplied",
        }
    }
}

/// Sign of the covariance at the significance threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Witness {
    Squeezed,
    Antisqueezed,
    Inconclusive,
}

impl Witness {
    pub fn from_cov(cov: Measured) -> Self {
        if cov.value > SIGNIFICANCE * cov.se {
            Witness::Squeezed
        } else if cov.value < -SIGNIFICANCE * cov.se {
            Witness::Antisqueezed
        } else {
            Witness::Inconclusive
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Witness::Squeezed => "squeezed",
            Witness::Antisqueezed => "antisqueezed",
            Witness::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    /// LO intensity at the beamsplitter for this point.
    pub lo_power: f64,
    pub cov: Measured,
    pub var_diff: Measured,
    pub s_cov: Measured,
    pub s_hd: Measured,
    /// Model value of the measured quadrature variance.
    pub s_true: f64,
    /// Model value of the homodyne estimate including the EN bias.
    pub s_hd_predicted: f64,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub spec: SweepSpec,
    pub calibration: SnlCalibration,
    pub calibration_source: CalibrationSource,
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn master_seed(&self) -> u64 {
        self.spec.master_seed()
    }

    pub fn witness_pattern(&self) -> Vec<Witness> {
        self.rows.iter().map(|r| r.witness).collect()
    }
}

/// Runs every `(point, repetition)` of the sweep and aggregates each point.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, ExperimentError> {
    spec.validate()?;
    let (calibration, calibration_source) = spec.effective_calibration();
    let reps = spec.seeds_per_point;
    let stats: Vec<MeasurementStats> = (0..spec.values.len() * reps)
        .into_par_iter()
        .map(|job| simulate_stats(&spec.run_scenario(job / reps, job % reps)))
        .collect::<Result<_, _>>()?;

    let rows = stats
        .chunks(reps)
        .enumerate()
        .map(|(i, runs)| {
            let scenario = spec.point_scenario(i);
            let covs: Vec<Measured> = runs.iter().map(|s| s.cov_measured()).collect();
            let vars: Vec<Measured> = runs.iter().map(|s| s.var_diff_measured()).collect();
            let cov = Measured::average(&covs);
            let var_diff = Measured::average(&vars);
            let lo_power = scenario.lo_power();
            let s_cov = squeezing_covariance(cov, &calibration, lo_power)?.measured();
            let s_hd = squeezing_homodyne(var_diff, &calibration, lo_power)?.measured();
            let s_true = scenario.expected_squeezing()?;
            let s_hd_predicted = s_true + scenario.en_total() / (scenario.snl_slope() * lo_power);
            Ok(SweepRow {
                value: spec.values[i],
                lo_power,
                cov,
                var_diff,
                s_cov,
                s_hd,
                s_true,
                s_hd_predicted,
                witness: Witness::from_cov(cov),
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;

    Ok(SweepResult {
        spec: spec.clone(),
        calibration,
        calibration_source,
        rows,
    })
}

fn require(spec: &SweepSpec, swept: SweptParameter) -> Result<(), ExperimentError> {
    if spec.swept != swept {
        return Err(ExperimentError::InvalidSpec(format!(
            "expected a {} sweep, got {}",
            swept.column(),
            spec.swept.column()
        )));
    }
    Ok(())
}

/// Covariance versus LO phase. Rows with `cov > 5 se` witness the squeezed
/// quadrature; `cov < -5 se` the antisqueezed one.
pub fn run_phase_sweep(spec: &SweepSpec) -> Result<SweepResult, ExperimentError> {
    require(spec, SweptParameter::LoPhase)?;
    run_sweep(spec)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttenuationSweep {
    pub result: SweepResult,
    /// Log-log fit of `|cov|` against transmission; refused when any point
    /// is not significantly nonzero or signs are mixed.
    pub fit: Result<PowerLawFit, EstimateError>,
}

pub fn run_attenuation_sweep(spec: &SweepSpec) -> Result<AttenuationSweep, ExperimentError> {
    require(spec, SweptParameter::Transmission)?;
    let result = run_sweep(spec)?;
    let fit = covariance_power_law(&result);
    Ok(AttenuationSweep { result, fit })
}

fn covariance_power_law(result: &SweepResult) -> Result<PowerLawFit, EstimateError> {
    if let Some(r) = result
        .rows
        .iter()
        .find(|r| r.witness == Witness::Inconclusive)
    {
        return Err(EstimateError::ZeroCovariance(r.value));
    }
    let points: Vec<(f64, f64)> = result.rows.iter().map(|r| (r.value, r.cov.value)).collect();
    fit_scaling_exponent(&points)
}

/// Homodyne and covariance squeezing estimates side by side over an LO
/// transmission or power sweep, with the model's homodyne bias curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub result: SweepResult,
}

impl ComparisonReport {
    /// Largest `|s_cov - s_true|` in units of its standard error.
    pub fn max_cov_deviation(&self) -> f64 {
        self.result
            .rows
            .iter()
            .map(|r| r.s_cov.z_score(r.s_true).abs())
            .fold(0.0, f64::max)
    }

    /// `s_hd - s_true` per row.
    pub fn hd_bias(&self) -> Vec<Measured> {
        self.result
            .rows
            .iter()
            .map(|r| Measured::new(r.s_hd.value - r.s_true, r.s_hd.se))
            .collect()
    }

    /// Predicted bias `en_total / V_SNL(P)` per row.
    pub fn predicted_bias(&self) -> Vec<f64> {
        self.result
            .rows
            .iter()
            .map(|r| r.s_hd_predicted - r.s_true)
            .collect()
    }
}

pub fn run_comparison(
    spec: &SweepSpec,
    snl: &SnlCalibration,
) -> Result<ComparisonReport, ExperimentError> {
    if spec.swept == SweptParameter::LoPhase {
        return Err(ExperimentError::InvalidSpec(
            "comparison sweeps LO transmission or power".into(),
        ));
    }
    let spec = spec.clone().with_calibration(snl.clone());
    Ok(ComparisonReport {
        result: run_sweep(&spec)?,
    })
}

/// Outcome of a calibration campaign, including the raw runs.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationCampaign {
    pub calibration: SnlCalibration,
    /// Zero-light run: only electronic noise reaches the digitizer.
    pub dark: MeasurementStats,
    /// Vacuum-signal run at each supplied power.
    pub runs: Vec<(f64, MeasurementStats)>,
    /// Number of top powers that entered the fit.
    pub fitted_points: usize,
}

/// Calibrates the shot-noise level: blocks all light to measure the
/// electronic noise, blocks the signal to measure vacuum noise at each LO
/// power, and fits the EN-corrected variances of the top half of the powers
/// through the origin.
pub fn snl_calibration_campaign(
    scenario: &Scenario,
    powers: &[f64],
) -> Result<SnlCalibration, ExperimentError> {
    Ok(snl_calibration_campaign_detailed(scenario, powers)?.calibration)
}

pub fn snl_calibration_campaign_detailed(
    scenario: &Scenario,
    powers: &[f64],
) -> Result<CalibrationCampaign, ExperimentError> {
    if powers.len() < 2 {
        return Err(EstimateError::InsufficientPoints {
            needed: 2,
            got: powers.len(),
        }
        .into());
    }
    if let Some(&p) = powers.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
        return Err(EstimateError::NonPositivePower(p).into());
    }
    if powers.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::InvalidSpec(
            "calibration powers must be strictly ascending".into(),
        ));
    }

    let master = scenario.digitizer.seed;
    let mut vacuum = scenario.clone();
    vacuum.state = GaussianState::vacuum();
    vacuum.loss = LossChannel::identity(scenario.loss.mode);

    let mut dark_scenario = vacuum.clone().with_seed(seeds::derive(master, &[u64::MAX]));
    dark_scenario.lo.amplitude_sq = 0.0;

    let mut jobs = vec![dark_scenario];
    for (i, &p) in powers.iter().enumerate() {
        let mut s = vacuum.clone().with_seed(seeds::derive(master, &[i as u64]));
        s.lo.amplitude_sq = p;
        jobs.push(s);
    }
    let stats: Vec<MeasurementStats> = jobs
        .par_iter()
        .map(simulate_stats)
        .collect::<Result<_, _>>()?;

    let dark = stats[0];
    let runs: Vec<(f64, MeasurementStats)> = powers
        .iter()
        .copied()
        .zip(stats[1..].iter().copied())
        .collect();
    let fitted_points = powers.len().div_ceil(2);
    let points: Vec<CalibrationPoint> = runs[powers.len() - fitted_points..]
        .iter()
        .map(|(p, s)| CalibrationPoint {
            power: *p,
            var_diff: s.var_diff_measured(),
        })
        .collect();
    let calibration = calibrate_snl_measured(&points, dark.var_diff_measured())?;
    Ok(CalibrationCampaign {
        calibration,
        dark,
        runs,
        fitted_points,
    })
}
