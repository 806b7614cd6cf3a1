//! Gaussian quadrature statistics of the signal and local-oscillator modes.
//!
//! Variances are expressed in shot-noise units: the vacuum quadrature
//! variance is exactly 1. The signal state is kept in its principal-axis
//! frame (no X-Y cross-correlation); the orientation of the squeezing
//! ellipse relative to the measurement is carried by the LO phase.

use std::f64::consts::PI;

use thiserror::Error;

/// Slack allowed on the uncertainty bound `vx * vy >= 1` so that states
/// produced by floating-point arithmetic (e.g. `0.1 * 10.0`) stay valid.
const HEISENBERG_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("{field} = {value} is invalid: {reason}")]
    InvalidParameter {
        field: &'static str,
        value: f64,
        reason: &'static str,
    },
}

fn invalid(field: &'static str, value: f64, reason: &'static str) -> ModelError {
    ModelError::InvalidParameter {
        field,
        value,
        reason,
    }
}

/// Quadrature variances `(Vx, Vy)` of a single-mode Gaussian state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianState {
    vx: f64,
    vy: f64,
}

impl GaussianState {
    pub fn new(vx: f64, vy: f64) -> Result<Self, ModelError> {
        if !(vx.is_finite() && vx > 0.0) {
            return Err(invalid("vx", vx, "must be finite and positive"));
        }
        if !(vy.is_finite() && vy > 0.0) {
            return Err(invalid("vy", vy, "must be finite and positive"));
        }
        if vx * vy < 1.0 - HEISENBERG_SLACK {
            return Err(invalid(
                "vy",
                vy,
                "violates the uncertainty bound vx * vy >= 1",
            ));
        }
        Ok(Self { vx, vy })
    }

    pub const fn vacuum() -> Self {
        Self { vx: 1.0, vy: 1.0 }
    }

    /// Minimum-uncertainty state with `vx` squeezed and `vy = 1 / vx`.
    pub fn pure_squeezed(vx: f64) -> Result<Self, ModelError> {
        Self::new(vx, 1.0 / vx)
    }

    pub fn vx(&self) -> f64 {
        self.vx
    }

    pub fn vy(&self) -> f64 {
        self.vy
    }

    /// `vx * vy`; equals 1 for pure states and grows with impurity.
    pub fn uncertainty_product(&self) -> f64 {
        self.vx * self.vy
    }

    pub fn rotated_variance(&self, phase: f64) -> f64 {
        rotated_variance(self, phase)
    }

    /// State after a beamsplitter of transmission `t` that admixes vacuum.
    pub fn attenuated(&self, t: f64) -> Result<Self, ModelError> {
        Ok(Self {
            vx: apply_loss_to_variance(self.vx, t)?,
            vy: apply_loss_to_variance(self.vy, t)?,
        })
    }
}

impl Default for GaussianState {
    fn default() -> Self {
        Self::vacuum()
    }
}

/// Bright reference beam: intensity `amplitude_sq` (α²), phase relative to
/// the signal's X axis, and amplitude-quadrature variance `v_lo`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalOscillator {
    pub amplitude_sq: f64,
    pub phase: f64,
    pub v_lo: f64,
}

impl LocalOscillator {
    pub fn new(amplitude_sq: f64, phase: f64, v_lo: f64) -> Result<Self, ModelError> {
        let lo = Self {
            amplitude_sq,
            phase,
            v_lo,
        };
        lo.validate()?;
        Ok(lo)
    }

    /// Shot-noise-limited LO (`v_lo = 1`).
    pub fn coherent(amplitude_sq: f64, phase: f64) -> Result<Self, ModelError> {
        Self::new(amplitude_sq, phase, 1.0)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.amplitude_sq.is_finite() && self.amplitude_sq >= 0.0) {
            return Err(invalid(
                "amplitude_sq",
                self.amplitude_sq,
                "must be finite and non-negative",
            ));
        }
        if !self.phase.is_finite() {
            return Err(invalid("phase_rad", self.phase, "must be finite"));
        }
        if !(self.v_lo.is_finite() && self.v_lo >= 0.0) {
            return Err(invalid(
                "v_lo",
                self.v_lo,
                "must be finite and non-negative",
            ));
        }
        Ok(())
    }
}

/// Which beams pass through the attenuator before the beamsplitter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossMode {
    SignalOnly,
    LoOnly,
    Both,
}

impl LossMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            LossMode::SignalOnly => "signal_only",
            LossMode::LoOnly => "lo_only",
            LossMode::Both => "both",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "signal_only" | "signal" => Some(LossMode::SignalOnly),
            "lo_only" | "lo" => Some(LossMode::LoOnly),
            "both" => Some(LossMode::Both),
            _ => None,
        }
    }

    fn hits_signal(&self) -> bool {
        matches!(self, LossMode::SignalOnly | LossMode::Both)
    }

    fn hits_lo(&self) -> bool {
        matches!(self, LossMode::LoOnly | LossMode::Both)
    }
}

/// Linear loss `T = 1 - η` applied to the beams selected by `mode`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossChannel {
    pub transmission: f64,
    pub mode: LossMode,
}

impl LossChannel {
    pub fn new(transmission: f64, mode: LossMode) -> Result<Self, ModelError> {
        check_transmission(transmission)?;
        Ok(Self { transmission, mode })
    }

    pub fn identity(mode: LossMode) -> Self {
        Self {
            transmission: 1.0,
            mode,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.transmission == 1.0
    }
}

fn check_transmission(t: f64) -> Result<(), ModelError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid("transmission", t, "must lie in [0, 1]"));
    }
    Ok(())
}

/// `cos²φ·Vx + sin²φ·Vy`, the variance of `δX_φ = cos φ δX + sin φ δY`.
pub fn rotated_variance(state: &GaussianState, phase: f64) -> f64 {
    // Reduce modulo π first so the result is exactly π-periodic.
    let phase = phase.rem_euclid(PI);
    let (s, c) = phase.sin_cos();
    c * c * state.vx + s * s * state.vy
}

/// Variance after a beamsplitter of transmission `t` with vacuum in the
/// open port: `T·v + (1 - T)`.
pub fn apply_loss_to_variance(v: f64, t: f64) -> Result<f64, ModelError> {
    check_transmission(t)?;
    Ok(t * v + (1.0 - t))
}

/// Mode parameters as they arrive at the 50/50 beamsplitter, after the
/// loss channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveModes {
    /// LO intensity α² reaching the beamsplitter.
    pub amplitude_sq: f64,
    /// LO amplitude-quadrature variance after loss.
    pub v_lo: f64,
    /// Variance of the measured signal quadrature `δX_φ` after loss.
    pub v_signal: f64,
}

pub fn effective_modes(
    state: &GaussianState,
    lo: &LocalOscillator,
    loss: &LossChannel,
) -> Result<EffectiveModes, ModelError> {
    let t = loss.transmission;
    check_transmission(t)?;
    let v_phi = rotated_variance(state, lo.phase);
    let (amplitude_sq, v_lo) = if loss.mode.hits_lo() {
        (t * lo.amplitude_sq, apply_loss_to_variance(lo.v_lo, t)?)
    } else {
        (lo.amplitude_sq, lo.v_lo)
    };
    let v_signal = if loss.mode.hits_signal() {
        apply_loss_to_variance(v_phi, t)?
    } else {
        v_phi
    };
    Ok(EffectiveModes {
        amplitude_sq,
        v_lo,
        v_signal,
    })
}

/// Ensemble covariance of the two photocurrents, `α²_eff·[V_LO,eff − V_φ,eff]`.
///
/// Joint attenuation gives `T²·α²·(v_lo − V_φ)`; attenuating only the LO
/// gives `T·α²·(T·v_lo + 1 − T − V_φ)`, which is `T·α²·(1 − V_φ)` for a
/// shot-noise-limited LO.
pub fn theoretical_covariance(
    state: &GaussianState,
    lo: &LocalOscillator,
    loss: &LossChannel,
) -> Result<f64, ModelError> {
    let m = effective_modes(state, lo, loss)?;
    Ok(m.amplitude_sq * (m.v_lo - m.v_signal))
}
