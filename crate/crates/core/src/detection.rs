//! Monte-Carlo generation of synchronized two-detector photocurrent records.
//!
//! Each sample pair follows the linearised photocurrent model
//!
//! ```text
//! i1 = ε1·α²/2 + α·ε1·(x_LO + x_φ) + α·√(2ε1(1-ε1))·v1 + e1
//! i2 = ε2·α²/2 + α·ε2·(x_LO - x_φ) + α·√(2ε2(1-ε2))·v2 + e2
//! ```
//!
//! where `α²`, `Var(x_LO)` and `Var(x_φ)` are taken after the loss channel,
//! `ε` is the detector efficiency (a further loss with its own vacuum input
//! `v`), and `e` is additive zero-mean Gaussian electronic noise. With unit
//! efficiency this reduces to `α²/2 + α(δX_LO ± δX_φ) + δi_el`.
//!
//! Randomness comes from ChaCha8 streams: chunk `k` of [`CHUNK_LEN`]
//! samples uses stream `k` of the generator keyed by the record seed, so
//! records are bit-identical for any number of worker threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::estimators::{EstimateError, MeasurementStats, MomentAccumulator, CHUNK_LEN};
use crate::gaussian::{
    effective_modes, EffectiveModes, GaussianState, LocalOscillator, LossChannel, LossMode,
    ModelError,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid scenario: {field}: {reason}")]
    InvalidScenario { field: String, reason: String },
    #[error("unknown preset {0:?} (expected opa or kerr)")]
    UnknownPreset(String),
    #[error("invalid record: {0}")]
    InvalidRecord(#[from] EstimateError),
}

fn scenario_err(field: impl Into<String>, reason: impl Into<String>) -> SimError {
    SimError::InvalidScenario {
        field: field.into(),
        reason: reason.into(),
    }
}

fn model_err(prefix: &str, e: ModelError) -> SimError {
    match e {
        ModelError::InvalidParameter {
            field,
            value,
            reason,
        } => scenario_err(format!("{prefix}.{field}"), format!("{value} {reason}")),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub efficiency: f64,
    /// Electronic-noise variance `<δi²_el>` in intensity² units.
    pub en_variance: f64,
    pub label: String,
}

impl DetectorModel {
    pub fn new(efficiency: f64, en_variance: f64, label: impl Into<String>) -> Self {
        Self {
            efficiency,
            en_variance,
            label: label.into(),
        }
    }

    pub fn ideal(label: impl Into<String>) -> Self {
        Self::new(1.0, 0.0, label)
    }

    fn validate(&self, prefix: &str) -> Result<(), SimError> {
        if !(self.efficiency > 0.0 && self.efficiency <= 1.0) {
            return Err(scenario_err(
                format!("{prefix}.efficiency"),
                format!("{} must lie in (0, 1]", self.efficiency),
            ));
        }
        if !(self.en_variance.is_finite() && self.en_variance >= 0.0) {
            return Err(scenario_err(
                format!("{prefix}.en_variance"),
                format!("{} must be finite and non-negative", self.en_variance),
            ));
        }
        Ok(())
    }
}

/// Acquisition settings. Sample rate and bandwidth are carried as metadata
/// only; samples are generated white.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitizerConfig {
    pub sample_rate: f64,
    pub bandwidth: f64,
    pub n_samples: usize,
    pub seed: u64,
    /// Drop the constant `ε α²/2` term from the stored samples.
    pub ac_coupled: bool,
}

impl DigitizerConfig {
    fn validate(&self) -> Result<(), SimError> {
        if self.n_samples < 2 {
            return Err(scenario_err(
                "digitizer.n_samples",
                format!("{} is below the minimum of 2", self.n_samples),
            ));
        }
        if !(self.sample_rate.is_finite() && self.sample_rate > 0.0) {
            return Err(scenario_err(
                "digitizer.sample_rate",
                format!("{} must be positive", self.sample_rate),
            ));
        }
        if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
            return Err(scenario_err(
                "digitizer.bandwidth",
                format!("{} must be positive", self.bandwidth),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Preset {
    /// Optical parametric amplifier: squeezed vacuum in its own spatial
    /// mode, only the LO attenuated.
    Opa,
    /// Fiber Kerr polarization squeezing: LO and signal share a mode and
    /// are attenuated together.
    Kerr,
    Custom,
}

impl Preset {
    pub fn as_str(&self) -> &'static str {
        match self {
            Preset::Opa => "opa",
            Preset::Kerr => "kerr",
            Preset::Custom => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opa" => Some(Preset::Opa),
            "kerr" => Some(Preset::Kerr),
            "custom" => Some(Preset::Custom),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub state: GaussianState,
    pub lo: LocalOscillator,
    pub loss: LossChannel,
    pub det1: DetectorModel,
    pub det2: DetectorModel,
    pub digitizer: DigitizerConfig,
    pub preset: Preset,
}

/// Ensemble moments of the two photocurrents implied by a scenario.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedMoments {
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    pub cov: f64,
    pub var_diff: f64,
}

impl Scenario {
    /// Ideal detectors, no loss, 10⁶ AC-coupled samples.
    pub fn custom(state: GaussianState, lo: LocalOscillator) -> Self {
        Self {
            state,
            lo,
            loss: LossChannel::identity(LossMode::LoOnly),
            det1: DetectorModel::ideal("det1"),
            det2: DetectorModel::ideal("det2"),
            digitizer: DigitizerConfig {
                sample_rate: 2e6,
                bandwidth: 150e3,
                n_samples: 1_000_000,
                seed: 1,
                ac_coupled: true,
            },
            preset: Preset::Custom,
        }
    }

    /// A bright beam split 50/50 onto the two detectors with vacuum in the
    /// other input port. `beam_variance` is the beam's amplitude-quadrature
    /// variance and `intensity` its mean intensity.
    ///
    /// This is the LO-free arrangement: the bright beam takes the place of
    /// the LO and the signal port carries vacuum.
    pub fn direct_split(beam_variance: f64, intensity: f64) -> Result<Self, SimError> {
        let lo =
            LocalOscillator::new(intensity, 0.0, beam_variance).map_err(|e| model_err("lo", e))?;
        Ok(Self::custom(GaussianState::vacuum(), lo))
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.digitizer.seed = seed;
        self
    }

    pub fn with_samples(mut self, n: usize) -> Self {
        self.digitizer.n_samples = n;
        self
    }

    pub fn with_en(mut self, en1: f64, en2: f64) -> Self {
        self.det1.en_variance = en1;
        self.det2.en_variance = en2;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        // Re-run the constructors' checks; fields are public.
        GaussianState::new(self.state.vx(), self.state.vy()).map_err(|e| model_err("state", e))?;
        self.lo.validate().map_err(|e| model_err("lo", e))?;
        LossChannel::new(self.loss.transmission, self.loss.mode)
            .map_err(|e| model_err("loss", e))?;
        self.det1.validate("det1")?;
        self.det2.validate("det2")?;
        self.digitizer.validate()?;
        match (self.preset, self.loss.mode) {
            (Preset::Opa, m) if m != LossMode::LoOnly => Err(scenario_err(
                "loss.mode",
                "the opa preset attenuates the LO only (lo_only)",
            )),
            (Preset::Kerr, m) if m != LossMode::Both => Err(scenario_err(
                "loss.mode",
                "the kerr preset attenuates LO and signal together (both)",
            )),
            _ => Ok(()),
        }
    }

    pub fn effective_modes(&self) -> Result<EffectiveModes, SimError> {
        effective_modes(&self.state, &self.lo, &self.loss).map_err(|e| model_err("loss", e))
    }

    /// LO intensity at the beamsplitter (after loss); the power at which
    /// the shot-noise level is evaluated.
    pub fn lo_power(&self) -> f64 {
        match self.loss.mode {
            LossMode::SignalOnly => self.lo.amplitude_sq,
            LossMode::LoOnly | LossMode::Both => self.lo.amplitude_sq * self.loss.transmission,
        }
    }

    pub fn en_total(&self) -> f64 {
        self.det1.en_variance + self.det2.en_variance
    }

    pub fn mean_efficiency(&self) -> f64 {
        0.5 * (self.det1.efficiency + self.det2.efficiency)
    }

    /// Slope of the shot-noise level versus LO power seen through these
    /// detectors: `4·(ε1 + ε2)/2`.
    pub fn snl_slope(&self) -> f64 {
        4.0 * self.mean_efficiency()
    }

    pub fn expected_moments(&self) -> Result<ExpectedMoments, SimError> {
        let m = self.effective_modes()?;
        let a = m.amplitude_sq;
        let (e1, e2) = (self.det1.efficiency, self.det2.efficiency);
        let light = |e: f64| a * e * e * (m.v_lo + m.v_signal) + 2.0 * a * e * (1.0 - e);
        let var1 = light(e1) + self.det1.en_variance;
        let var2 = light(e2) + self.det2.en_variance;
        let cov = a * e1 * e2 * (m.v_lo - m.v_signal);
        let (mean1, mean2) = if self.digitizer.ac_coupled {
            (0.0, 0.0)
        } else {
            (0.5 * e1 * a, 0.5 * e2 * a)
        };
        Ok(ExpectedMoments {
            mean1,
            mean2,
            var1,
            var2,
            cov,
            var_diff: var1 + var2 - 2.0 * cov,
        })
    }

    /// Quadrature variance a noise-free measurement through these detectors
    /// reports: `1 - 4 cov / V_SNL`.
    pub fn expected_squeezing(&self) -> Result<f64, SimError> {
        let moments = self.expected_moments()?;
        let power = self.lo_power();
        if power <= 0.0 {
            return Err(scenario_err(
                "lo.amplitude_sq",
                "LO power at the beamsplitter is zero",
            ));
        }
        Ok(1.0 - 4.0 * moments.cov / (self.snl_slope() * power))
    }
}

/// Scenario mirroring one of the two measurement arrangements.
///
/// Squeezing levels, LO power and electronic noise are editable defaults
/// (the OPA source is near-pure, the Kerr source strongly impure).
pub fn preset_scenario(name: &str) -> Result<Scenario, SimError> {
    let preset = Preset::parse(name).ok_or_else(|| SimError::UnknownPreset(name.to_string()))?;
    preset_for(preset)
}

pub fn preset_for(preset: Preset) -> Result<Scenario, SimError> {
    let lo = LocalOscillator::coherent(100.0, 0.0).map_err(|e| model_err("lo", e))?;
    let (state, mode, efficiency, sample_rate, bandwidth) = match preset {
        Preset::Opa => (
            GaussianState::new(0.5, 2.1),
            LossMode::LoOnly,
            1.0,
            2e6,
            150e3,
        ),
        Preset::Kerr => (
            GaussianState::new(0.5, 20.0),
            LossMode::Both,
            0.98,
            2e7,
            3e6,
        ),
        Preset::Custom => return Err(SimError::UnknownPreset("custom".into())),
    };
    let state = state.map_err(|e| model_err("state", e))?;
    Ok(Scenario {
        state,
        lo,
        loss: LossChannel::identity(mode),
        det1: DetectorModel::new(efficiency, 20.0, "det1"),
        det2: DetectorModel::new(efficiency, 20.0, "det2"),
        digitizer: DigitizerConfig {
            sample_rate,
            bandwidth,
            n_samples: 1_000_000,
            seed: 1,
            ac_coupled: true,
        },
        preset,
    })
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq)]
pub enum RecordSource {
    Simulated(Box<Scenario>),
    External,
}

/// Two equal-length channels of finite photocurrent samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    ch1: Vec<f64>,
    ch2: Vec<f64>,
    ac_coupled: bool,
    source: RecordSource,
    seed_used: Option<u64>,
}

impl SampleRecord {
    /// Wraps externally supplied samples.
    pub fn new(ch1: Vec<f64>, ch2: Vec<f64>, ac_coupled: bool) -> Result<Self, SimError> {
        if ch1.len() != ch2.len() {
            return Err(EstimateError::LengthMismatch(ch1.len(), ch2.len()).into());
        }
        if ch1.len() < 2 {
            return Err(EstimateError::TooShort(ch1.len()).into());
        }
        if let Some(i) = ch1
            .iter()
            .zip(&ch2)
            .position(|(a, b)| !(a.is_finite() && b.is_finite()))
        {
            return Err(EstimateError::NonFinite(i).into());
        }
        Ok(Self {
            ch1,
            ch2,
            ac_coupled,
            source: RecordSource::External,
            seed_used: None,
        })
    }

    pub fn ch1(&self) -> &[f64] {
        &self.ch1
    }

    pub fn ch2(&self) -> &[f64] {
        &self.ch2
    }

    pub fn len(&self) -> usize {
        self.ch1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ch1.is_empty()
    }

    pub fn ac_coupled(&self) -> bool {
        self.ac_coupled
    }

    pub fn source(&self) -> &RecordSource {
        &self.source
    }

    pub fn scenario(&self) -> Option<&Scenario> {
        match &self.source {
            RecordSource::Simulated(s) => Some(s),
            RecordSource::External => None,
        }
    }

    pub fn seed_used(&self) -> Option<u64> {
        self.seed_used
    }

    pub fn with_seed_used(mut self, seed: Option<u64>) -> Self {
        self.seed_used = seed;
        self
    }
}

/// Per-sample coefficients of the photocurrent model.
#[derive(Debug, Clone, Copy)]
struct Generator {
    seed: u64,
    offset1: f64,
    offset2: f64,
    lo1: f64,
    lo2: f64,
    sig1: f64,
    sig2: f64,
    vac1: f64,
    vac2: f64,
    el1: f64,
    el2: f64,
}

impl Generator {
    fn new(scenario: &Scenario) -> Result<Self, SimError> {
        scenario.validate()?;
        let m = scenario.effective_modes()?;
        let alpha = m.amplitude_sq.sqrt();
        let (e1, e2) = (scenario.det1.efficiency, scenario.det2.efficiency);
        let (offset1, offset2) = if scenario.digitizer.ac_coupled {
            (0.0, 0.0)
        } else {
            (0.5 * e1 * m.amplitude_sq, 0.5 * e2 * m.amplitude_sq)
        };
        let sd_lo = m.v_lo.sqrt();
        let sd_sig = m.v_signal.sqrt();
        Ok(Self {
            seed: scenario.digitizer.seed,
            offset1,
            offset2,
            lo1: alpha * e1 * sd_lo,
            lo2: alpha * e2 * sd_lo,
            sig1: alpha * e1 * sd_sig,
            sig2: alpha * e2 * sd_sig,
            vac1: alpha * (2.0 * e1 * (1.0 - e1)).sqrt(),
            vac2: alpha * (2.0 * e2 * (1.0 - e2)).sqrt(),
            el1: scenario.det1.en_variance.sqrt(),
            el2: scenario.det2.en_variance.sqrt(),
        })
    }

    /// Emits the samples of chunk `index`, `len` pairs long.
    #[inline]
    fn chunk(&self, index: usize, len: usize, mut emit: impl FnMut(f64, f64)) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let light = self.lo1 != 0.0 || self.lo2 != 0.0 || self.sig1 != 0.0 || self.sig2 != 0.0;
        let vacuum = self.vac1 != 0.0 || self.vac2 != 0.0;
        let electronic = self.el1 != 0.0 || self.el2 != 0.0;
        for _ in 0..len {
            let mut i1 = self.offset1;
            let mut i2 = self.offset2;
            if light {
                let x_lo: f64 = rng.sample(StandardNormal);
                let x_sig: f64 = rng.sample(StandardNormal);
                i1 += self.lo1 * x_lo + self.sig1 * x_sig;
                i2 += self.lo2 * x_lo - self.sig2 * x_sig;
            }
            if vacuum {
                let v1: f64 = rng.sample(StandardNormal);
                let v2: f64 = rng.sample(StandardNormal);
                i1 += self.vac1 * v1;
                i2 += self.vac2 * v2;
            }
            if electronic {
                let n1: f64 = rng.sample(StandardNormal);
                let n2: f64 = rng.sample(StandardNormal);
                i1 += self.el1 * n1;
                i2 += self.el2 * n2;
            }
            emit(i1, i2);
        }
    }
}

fn chunk_bounds(n: usize) -> impl IndexedParallelIterator<Item = (usize, usize)> {
    let chunks = n.div_ceil(CHUNK_LEN);
    (0..chunks)
        .into_par_iter()
        .map(move |k| (k, CHUNK_LEN.min(n - k * CHUNK_LEN)))
}

/// Draws a full record for `scenario`.
pub fn simulate_record(scenario: &Scenario) -> Result<SampleRecord, SimError> {
    let generator = Generator::new(scenario)?;
    let n = scenario.digitizer.n_samples;
    let mut ch1 = vec![0.0; n];
    let mut ch2 = vec![0.0; n];
    ch1.par_chunks_mut(CHUNK_LEN)
        .zip(ch2.par_chunks_mut(CHUNK_LEN))
        .enumerate()
        .for_each(|(k, (a, b))| {
            let mut j = 0;
            generator.chunk(k, a.len(), |x1, x2| {
                a[j] = x1;
                b[j] = x2;
                j += 1;
            });
        });
    Ok(SampleRecord {
        ch1,
        ch2,
        ac_coupled: scenario.digitizer.ac_coupled,
        source: RecordSource::Simulated(Box::new(scenario.clone())),
        seed_used: Some(scenario.digitizer.seed),
    })
}

/// Statistics of the record [`simulate_record`] would produce, computed
/// without storing the samples. Bit-identical to
/// `compute_stats(&simulate_record(scenario)?)`.
pub fn simulate_stats(scenario: &Scenario) -> Result<MeasurementStats, SimError> {
    let generator = Generator::new(scenario)?;
    let partials: Vec<MomentAccumulator> = chunk_bounds(scenario.digitizer.n_samples)
        .map(|(k, len)| {
            let mut acc = MomentAccumulator::new();
            generator.chunk(k, len, |x1, x2| acc.push(x1, x2));
            acc
        })
        .collect();
    let total = partials
        .iter()
        .fold(MomentAccumulator::new(), |mut acc, p| {
            acc.merge(p);
            acc
        });
    Ok(total.finish()?)
}
