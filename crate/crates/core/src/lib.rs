//! Two-detector measurement of squeezed light.
//!
//! `sqcorr` simulates the photocurrents of a balanced homodyne setup (signal
//! and local oscillator mixed on a 50/50 beamsplitter, two analogue
//! detectors with additive electronic noise) and estimates the quadrature
//! variance of the signal in three ways:
//!
//! - from the variance of the difference current, normalised to the
//!   shot-noise level (biased by electronic noise);
//! - from the covariance of the two photocurrents, which averages the
//!   uncorrelated electronic noise away;
//! - from the covariance of a directly split beam without an LO.
//!
//! Modules, bottom up:
//!
//! - [`gaussian`]: quadrature statistics, phase rotation and linear loss.
//! - [`detection`]: scenarios, presets and the Monte-Carlo record generator.
//! - [`estimators`]: single-pass moments, shot-noise calibration and the
//!   squeezing estimators.
//! - [`experiments`]: phase, attenuation and power sweeps.
//! - [`io`], [`config`], [`cli`]: file formats and the command-line front end.

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr) => {
        assert_close!($a, $b, 1e-12)
    };
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!(
            (a - b).abs() <= $tol * (1.0 + b.abs()),
            "{} != {} (tol {})",
            a,
            b,
            $tol
        );
    }};
}

pub mod cli;
pub mod config;
pub mod detection;
pub mod estimators;
pub mod experiments;
pub mod gaussian;
pub mod io;
mod seeds;

pub use detection::{
    preset_scenario, simulate_record, simulate_stats, DetectorModel, DigitizerConfig, Preset,
    SampleRecord, Scenario, SimError,
};
pub use estimators::{
    calibrate_snl, coincidence_moment, compute_stats, fit_scaling_exponent, squeezing_covariance,
    squeezing_homodyne, squeezing_lo_free, EstimateError, Measured, MeasurementStats,
    MomentAccumulator, PowerLawFit, SnlCalibration, SqueezingEstimate, SqueezingMethod,
};
pub use gaussian::{
    apply_loss_to_variance, rotated_variance, theoretical_covariance, GaussianState,
    LocalOscillator, LossChannel, LossMode, ModelError,
};
