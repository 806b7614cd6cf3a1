//! Statistics of two-channel photocurrent records and the squeezing
//! estimators built on them.
//!
//! Moments are accumulated in a single streaming pass (Welford updates with
//! Chan's pairwise merge), so records can be processed in fixed-size
//! chunks in parallel and merged in chunk order. All variances and the
//! covariance use the unbiased `n - 1` denominator; standard errors use
//! Gaussian sampling theory.

use rayon::prelude::*;
use thiserror::Error;

use crate::detection::SampleRecord;

/// Chunk length shared by the generator and the accumulator so that
/// streaming and stored-record statistics see identical partitions.
pub const CHUNK_LEN: usize = 1 << 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimateError {
    #[error("need at least 2 samples, got {0}")]
    TooShort(usize),
    #[error("channel lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("need at least {needed} points, got {got}")]
    InsufficientPoints { needed: usize, got: usize },
    #[error("power {0} must be finite and positive")]
    NonPositivePower(f64),
    #[error("electronic-noise level {0} must be finite and non-negative")]
    InvalidNoiseLevel(f64),
    #[error("EN-corrected variance {value} at power {power} is negative; electronic-noise level is miscalibrated")]
    NegativeCorrectedVariance { power: f64, value: f64 },
    #[error("shot-noise level {0} must be positive")]
    NonPositiveSnl(f64),
    #[error("transmission {0} must be finite and positive")]
    NonPositiveTransmission(f64),
    #[error("covariance at transmission {0} is zero; exponent undefined")]
    ZeroCovariance(f64),
    #[error("covariance points have mixed signs; exponent undefined")]
    MixedSigns,
    #[error("non-finite input value {0}")]
    NonFiniteInput(f64),
}

/// A value with its one-sigma standard error.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Measured {
    pub value: f64,
    pub se: f64,
}

impl Measured {
    pub fn new(value: f64, se: f64) -> Self {
        Self { value, se }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, se: 0.0 }
    }

    /// Number of standard errors separating `self` from `target`.
    pub fn z_score(&self, target: f64) -> f64 {
        (self.value - target) / self.se
    }

    /// Mean of independent estimates with their standard errors combined
    /// in quadrature.
    pub fn average(items: &[Measured]) -> Measured {
        let k = items.len() as f64;
        let value = items.iter().map(|m| m.value).sum::<f64>() / k;
        let se = items.iter().map(|m| m.se * m.se).sum::<f64>().sqrt() / k;
        Measured { value, se }
    }
}

/// Streaming first and second moments of a pair of channels.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MomentAccumulator {
    n: u64,
    mean1: f64,
    mean2: f64,
    mean_diff: f64,
    m2_1: f64,
    m2_2: f64,
    m2_diff: f64,
    c12: f64,
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> u64 {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn push(&mut self, x1: f64, x2: f64) {
        self.n += 1;
        let n = self.n as f64;
        let d1 = x1 - self.mean1;
        let d2 = x2 - self.mean2;
        self.mean1 += d1 / n;
        self.mean2 += d2 / n;
        let e2 = x2 - self.mean2;
        self.m2_1 += d1 * (x1 - self.mean1);
        self.m2_2 += d2 * e2;
        self.c12 += d1 * e2;
        let xd = x1 - x2;
        let dd = xd - self.mean_diff;
        self.mean_diff += dd / n;
        self.m2_diff += dd * (xd - self.mean_diff);
    }

    pub fn extend(&mut self, ch1: &[f64], ch2: &[f64]) {
        for (&a, &b) in ch1.iter().zip(ch2) {
            self.push(a, b);
        }
    }

    /// Folds `other` into `self` as if its samples had been pushed after
    /// those already seen.
    pub fn merge(&mut self, other: &MomentAccumulator) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *other;
            return;
        }
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let w = na * nb / n;
        let d1 = other.mean1 - self.mean1;
        let d2 = other.mean2 - self.mean2;
        let dd = other.mean_diff - self.mean_diff;
        self.m2_1 += other.m2_1 + d1 * d1 * w;
        self.m2_2 += other.m2_2 + d2 * d2 * w;
        self.m2_diff += other.m2_diff + dd * dd * w;
        self.c12 += other.c12 + d1 * d2 * w;
        self.mean1 += d1 * nb / n;
        self.mean2 += d2 * nb / n;
        self.mean_diff += dd * nb / n;
        self.n += other.n;
    }

    pub fn finish(&self) -> Result<MeasurementStats, EstimateError> {
        if self.n < 2 {
            return Err(EstimateError::TooShort(self.n as usize));
        }
        let dof = (self.n - 1) as f64;
        let var1 = self.m2_1 / dof;
        let var2 = self.m2_2 / dof;
        let var_diff = self.m2_diff / dof;
        let cov = self.c12 / dof;
        Ok(MeasurementStats {
            n: self.n,
            mean1: self.mean1,
            mean2: self.mean2,
            var1,
            var2,
            var_diff,
            cov,
            se_cov: ((var1 * var2 + cov * cov) / dof).sqrt(),
            se_var_diff: (2.0 / dof).sqrt() * var_diff,
        })
    }
}

/// Sufficient statistics of a two-channel record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementStats {
    pub n: u64,
    pub mean1: f64,
    pub mean2: f64,
    pub var1: f64,
    pub var2: f64,
    /// Variance of the difference current `i1 - i2`.
    pub var_diff: f64,
    pub cov: f64,
    pub se_cov: f64,
    pub se_var_diff: f64,
}

impl MeasurementStats {
    pub fn cov_measured(&self) -> Measured {
        Measured::new(self.cov, self.se_cov)
    }

    pub fn var_diff_measured(&self) -> Measured {
        Measured::new(self.var_diff, self.se_var_diff)
    }

    /// Covariance with the `n` denominator, `<i1 i2> - <i1><i2>`.
    pub fn population_cov(&self) -> f64 {
        self.cov * (self.n - 1) as f64 / self.n as f64
    }

    /// `var_diff - (var1 + var2 - 2 cov)`; zero up to rounding.
    pub fn identity_residual(&self) -> f64 {
        self.var_diff - (self.var1 + self.var2 - 2.0 * self.cov)
    }
}

fn check_channels(ch1: &[f64], ch2: &[f64]) -> Result<(), EstimateError> {
    if ch1.len() != ch2.len() {
        return Err(EstimateError::LengthMismatch(ch1.len(), ch2.len()));
    }
    if ch1.len() < 2 {
        return Err(EstimateError::TooShort(ch1.len()));
    }
    if let Some(i) = ch1
        .iter()
        .zip(ch2)
        .position(|(a, b)| !(a.is_finite() && b.is_finite()))
    {
        return Err(EstimateError::NonFinite(i));
    }
    Ok(())
}

/// Accumulates `ch1, ch2` in [`CHUNK_LEN`] partitions (in parallel) and
/// merges the partials in order.
pub fn accumulate(ch1: &[f64], ch2: &[f64]) -> MomentAccumulator {
    let partials: Vec<MomentAccumulator> = ch1
        .par_chunks(CHUNK_LEN)
        .zip(ch2.par_chunks(CHUNK_LEN))
        .map(|(a, b)| {
            let mut acc = MomentAccumulator::new();
            acc.extend(a, b);
            acc
        })
        .collect();
    partials
        .iter()
        .fold(MomentAccumulator::new(), |mut acc, p| {
            acc.merge(p);
            acc
        })
}

pub fn stats_from_channels(ch1: &[f64], ch2: &[f64]) -> Result<MeasurementStats, EstimateError> {
    check_channels(ch1, ch2)?;
    accumulate(ch1, ch2).finish()
}

pub fn compute_stats(record: &SampleRecord) -> Result<MeasurementStats, EstimateError> {
    stats_from_channels(record.ch1(), record.ch2())
}

/// Raw product moment `<i1 i2>` (n denominator) with compensated summation.
pub fn product_moment(ch1: &[f64], ch2: &[f64]) -> Result<f64, EstimateError> {
    check_channels(ch1, ch2)?;
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (&a, &b) in ch1.iter().zip(ch2) {
        let x = a * b;
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    Ok((sum + comp) / ch1.len() as f64)
}

/// Normally ordered coincidence moment `<:i1 i2:> = cov + <i1><i2>`.
pub fn coincidence_moment(stats: &MeasurementStats) -> f64 {
    stats.cov + stats.mean1 * stats.mean2
}

/// Shot-noise level as a function of LO power, `V_SNL(P) = slope * P`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnlCalibration {
    pub slope: f64,
    pub slope_se: f64,
    /// Electronic-noise variance `<δi²_el1> + <δi²_el2>`.
    pub en_total: f64,
    pub en_total_se: f64,
    /// RMS fit residual relative to the RMS corrected variance.
    pub fit_residual: f64,
    /// Intercept of an unconstrained line fit, when at least two distinct
    /// powers were supplied.
    pub intercept: Option<f64>,
    /// Set when the unconstrained intercept is inconsistent with zero.
    pub intercept_warning: bool,
    /// `(power, var_diff)` pairs as measured, before EN subtraction.
    pub power_points: Vec<(f64, f64)>,
}

impl SnlCalibration {
    /// Calibration with a known slope, e.g. the ideal `4` for unit
    /// detection efficiency.
    pub fn from_slope(slope: f64, en_total: f64) -> Self {
        Self {
            slope,
            slope_se: 0.0,
            en_total,
            en_total_se: 0.0,
            fit_residual: 0.0,
            intercept: None,
            intercept_warning: false,
            power_points: Vec::new(),
        }
    }

    pub fn snl_at(&self, power: f64) -> f64 {
        self.slope * power
    }

    fn snl_checked(&self, power: f64) -> Result<f64, EstimateError> {
        if !(power.is_finite() && power > 0.0) {
            return Err(EstimateError::NonPositivePower(power));
        }
        let snl = self.snl_at(power);
        if !(snl.is_finite() && snl > 0.0) {
            return Err(EstimateError::NonPositiveSnl(snl));
        }
        Ok(snl)
    }
}

/// A calibration point whose variance carries a standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationPoint {
    pub power: f64,
    pub var_diff: Measured,
}

/// Fits `V_SNL = slope * P` through the origin to EN-corrected
/// difference-current variances.
pub fn calibrate_snl(
    points: &[(f64, f64)],
    en_total: f64,
) -> Result<SnlCalibration, EstimateError> {
    let pts: Vec<CalibrationPoint> = points
        .iter()
        .map(|&(power, v)| CalibrationPoint {
            power,
            var_diff: Measured::exact(v),
        })
        .collect();
    calibrate_snl_measured(&pts, Measured::exact(en_total))
}

/// As [`calibrate_snl`], propagating the standard errors of the measured
/// variances and EN level into `slope_se`.
pub fn calibrate_snl_measured(
    points: &[CalibrationPoint],
    en_total: Measured,
) -> Result<SnlCalibration, EstimateError> {
    if points.is_empty() {
        return Err(EstimateError::InsufficientPoints { needed: 1, got: 0 });
    }
    if !(en_total.value.is_finite() && en_total.value >= 0.0) {
        return Err(EstimateError::InvalidNoiseLevel(en_total.value));
    }
    let mut corrected = Vec::with_capacity(points.len());
    for p in points {
        if !(p.power.is_finite() && p.power > 0.0) {
            return Err(EstimateError::NonPositivePower(p.power));
        }
        if !p.var_diff.value.is_finite() {
            return Err(EstimateError::NonFiniteInput(p.var_diff.value));
        }
        let y = p.var_diff.value - en_total.value;
        if y < 0.0 {
            return Err(EstimateError::NegativeCorrectedVariance {
                power: p.power,
                value: y,
            });
        }
        corrected.push((p.power, y));
    }

    let spp: f64 = corrected.iter().map(|(p, _)| p * p).sum();
    let spy: f64 = corrected.iter().map(|(p, y)| p * y).sum();
    let slope = spy / spp;

    let ss_res: f64 = corrected.iter().map(|(p, y)| (y - slope * p).powi(2)).sum();
    let ss_y: f64 = corrected.iter().map(|(_, y)| y * y).sum();
    let fit_residual = if ss_y > 0.0 {
        (ss_res / ss_y).sqrt()
    } else {
        0.0
    };

    let m = corrected.len();
    let has_errors = points.iter().any(|p| p.var_diff.se > 0.0) || en_total.se > 0.0;
    let slope_se = if has_errors {
        let sp: f64 = corrected.iter().map(|(p, _)| p).sum();
        let var_points: f64 = points
            .iter()
            .map(|q| q.power * q.power * q.var_diff.se * q.var_diff.se)
            .sum::<f64>()
            / (spp * spp);
        let var_en = (sp / spp).powi(2) * en_total.se * en_total.se;
        (var_points + var_en).sqrt()
    } else if m >= 2 {
        (ss_res / (m - 1) as f64 / spp).sqrt()
    } else {
        0.0
    };

    let (intercept, intercept_warning) = unconstrained_intercept(&corrected, points, slope);

    Ok(SnlCalibration {
        slope,
        slope_se,
        en_total: en_total.value,
        en_total_se: en_total.se,
        fit_residual,
        intercept,
        intercept_warning,
        power_points: points.iter().map(|p| (p.power, p.var_diff.value)).collect(),
    })
}

fn unconstrained_intercept(
    corrected: &[(f64, f64)],
    points: &[CalibrationPoint],
    slope: f64,
) -> (Option<f64>, bool) {
    let m = corrected.len() as f64;
    let mean_p = corrected.iter().map(|(p, _)| p).sum::<f64>() / m;
    let mean_y = corrected.iter().map(|(_, y)| y).sum::<f64>() / m;
    let sxx: f64 = corrected.iter().map(|(p, _)| (p - mean_p).powi(2)).sum();
    if sxx <= 0.0 {
        return (None, false);
    }
    let sxy: f64 = corrected
        .iter()
        .map(|(p, y)| (p - mean_p) * (y - mean_y))
        .sum();
    let b = sxy / sxx;
    let a = mean_y - b * mean_p;
    // Standard error of the intercept from the measurement errors when
    // available, otherwise a relative tolerance on the data scale.
    let se_y2: f64 = points.iter().map(|q| q.var_diff.se.powi(2)).sum::<f64>() / m;
    let tolerance = if se_y2 > 0.0 {
        5.0 * (se_y2 * (1.0 / m + mean_p * mean_p / sxx)).sqrt()
    } else {
        1e-6 * slope.abs() * corrected.iter().map(|(p, _)| *p).fold(0.0, f64::max)
    };
    (Some(a), a.abs() > tolerance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SqueezingMethod {
    HomodyneDiff,
    Covariance,
    LoFree,
}

impl SqueezingMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            SqueezingMethod::HomodyneDiff => "hd",
            SqueezingMethod::Covariance => "cov",
            SqueezingMethod::LoFree => "lofree",
        }
    }
}

/// Estimated quadrature variance in shot-noise units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SqueezingEstimate {
    pub s: f64,
    /// `10 log10(s)`; `None` when `s <= 0`.
    pub s_db: Option<f64>,
    pub se: f64,
    pub method: SqueezingMethod,
}

impl SqueezingEstimate {
    pub fn new(s: f64, se: f64, method: SqueezingMethod) -> Self {
        let s_db = (s > 0.0).then(|| 10.0 * s.log10());
        Self {
            s,
            s_db,
            se,
            method,
        }
    }

    pub fn measured(&self) -> Measured {
        Measured::new(self.s, self.se)
    }

    pub fn is_squeezed(&self) -> bool {
        self.s < 1.0
    }
}

/// `S = var_diff / V_SNL(P)`, without electronic-noise subtraction: the
/// result is biased upward by `en_total / V_SNL(P)`.
pub fn squeezing_homodyne(
    var_diff: Measured,
    snl: &SnlCalibration,
    lo_power: f64,
) -> Result<SqueezingEstimate, EstimateError> {
    let v = snl.snl_checked(lo_power)?;
    let s = var_diff.value / v;
    let rel_slope = snl.slope_se / snl.slope;
    let se = ((var_diff.se / v).powi(2) + (s * rel_slope).powi(2)).sqrt();
    Ok(SqueezingEstimate::new(s, se, SqueezingMethod::HomodyneDiff))
}

/// Homodyne estimate with the calibrated electronic noise subtracted.
pub fn squeezing_homodyne_en_corrected(
    var_diff: Measured,
    snl: &SnlCalibration,
    lo_power: f64,
) -> Result<SqueezingEstimate, EstimateError> {
    let corrected = Measured::new(
        var_diff.value - snl.en_total,
        var_diff.se.hypot(snl.en_total_se),
    );
    squeezing_homodyne(corrected, snl, lo_power)
}

/// `S = 1 - 4 cov / V_SNL(P)`, independent of uncorrelated electronic noise.
pub fn squeezing_covariance(
    cov: Measured,
    snl: &SnlCalibration,
    lo_power: f64,
) -> Result<SqueezingEstimate, EstimateError> {
    let v = snl.snl_checked(lo_power)?;
    let ratio = 4.0 * cov.value / v;
    let rel_slope = snl.slope_se / snl.slope;
    let se = ((4.0 * cov.se / v).powi(2) + (ratio * rel_slope).powi(2)).sqrt();
    Ok(SqueezingEstimate::new(
        1.0 - ratio,
        se,
        SqueezingMethod::Covariance,
    ))
}

/// `S = 4 cov / V_SNL - 1` for a beam split directly onto two detectors.
pub fn squeezing_lo_free(
    cov: Measured,
    snl_equivalent: f64,
) -> Result<SqueezingEstimate, EstimateError> {
    if !(snl_equivalent.is_finite() && snl_equivalent > 0.0) {
        return Err(EstimateError::NonPositiveSnl(snl_equivalent));
    }
    let s = 4.0 * cov.value / snl_equivalent - 1.0;
    let se = 4.0 * cov.se / snl_equivalent;
    Ok(SqueezingEstimate::new(s, se, SqueezingMethod::LoFree))
}

/// Result of fitting `|cov| = c * T^p` in log-log space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub exponent_se: f64,
    /// Signed amplitude `c` (negative when every covariance is negative).
    pub amplitude: f64,
    /// RMS residual of `log|cov|`.
    pub residual: f64,
}

pub fn fit_scaling_exponent(points: &[(f64, f64)]) -> Result<PowerLawFit, EstimateError> {
    if points.len() < 3 {
        return Err(EstimateError::InsufficientPoints {
            needed: 3,
            got: points.len(),
        });
    }
    for &(t, c) in points {
        if !(t.is_finite() && t > 0.0) {
            return Err(EstimateError::NonPositiveTransmission(t));
        }
        if !c.is_finite() {
            return Err(EstimateError::NonFiniteInput(c));
        }
        if c == 0.0 {
            return Err(EstimateError::ZeroCovariance(t));
        }
    }
    let sign = points[0].1.signum();
    if points.iter().any(|&(_, c)| c.signum() != sign) {
        return Err(EstimateError::MixedSigns);
    }

    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(t, c)| (t.ln(), c.abs().ln()))
        .collect();
    let m = logs.len() as f64;
    let mx = logs.iter().map(|(x, _)| x).sum::<f64>() / m;
    let my = logs.iter().map(|(_, y)| y).sum::<f64>() / m;
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(EstimateError::InsufficientPoints { needed: 2, got: 1 });
    }
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let log_c = my - exponent * mx;
    let ss_res: f64 = logs
        .iter()
        .map(|(x, y)| (y - log_c - exponent * x).powi(2))
        .sum();
    Ok(PowerLawFit {
        exponent,
        exponent_se: (ss_res / (m - 2.0) / sxx).sqrt(),
        amplitude: sign * log_c.exp(),
        residual: (ss_res / m).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats(a: &[f64], b: &[f64]) -> MeasurementStats {
        stats_from_channels(a, b).unwrap()
    }

    #[test]
    fn covariance_examples() {
        assert_close!(stats(&[0.0, 1.0], &[0.0, 1.0]).cov, 0.5);
        assert_close!(stats(&[0.0, 1.0], &[1.0, 0.0]).cov, -0.5);
        let s = stats(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]);
        assert_close!(s.cov, 10.0 / 3.0);
        assert_close!(s.var_diff, 5.0 / 3.0);
        assert_close!(s.var1, 5.0 / 3.0);
        assert_close!(s.var2, 20.0 / 3.0);
        assert_close!(s.identity_residual(), 0.0);
    }

    #[test]
    fn standard_errors_follow_gaussian_theory() {
        let s = stats(&[1.0, 2.0, 3.0, 4.0], &[2.0, 4.0, 6.0, 8.0]);
        let var1 = 5.0 / 3.0;
        let var2 = 20.0 / 3.0;
        let cov = 10.0 / 3.0;
        assert_close!(s.se_cov, ((var1 * var2 + cov * cov) / 3.0f64).sqrt());
        assert_close!(s.se_var_diff, (2.0f64 / 3.0).sqrt() * 5.0 / 3.0);
    }

    #[test]
    fn rejects_bad_records() {
        assert_eq!(
            stats_from_channels(&[1.0], &[1.0]).unwrap_err(),
            EstimateError::TooShort(1)
        );
        assert_eq!(
            stats_from_channels(&[1.0, f64::NAN, 2.0], &[1.0, 1.0, 1.0]).unwrap_err(),
            EstimateError::NonFinite(1)
        );
        assert!(matches!(
            stats_from_channels(&[1.0, 2.0], &[1.0]),
            Err(EstimateError::LengthMismatch(2, 1))
        ));
        assert!(MomentAccumulator::new().finish().is_err());
    }

    #[test]
    fn coincidence_examples() {
        let mut s = stats(&[0.0, 1.0], &[0.0, 1.0]);
        s.mean1 = 0.0;
        s.mean2 = 0.0;
        assert_eq!(coincidence_moment(&s), 0.5);
        s.cov = 0.0;
        s.mean1 = 2.0;
        s.mean2 = 3.0;
        assert_eq!(coincidence_moment(&s), 6.0);
        s.cov = 50.0;
        s.mean1 = 50.0;
        s.mean2 = 50.0;
        assert_eq!(coincidence_moment(&s), 2550.0);
    }

    #[test]
    fn product_moment_matches_population_identity() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let s = stats(&a, &b);
        let raw = product_moment(&a, &b).unwrap();
        assert_close!(raw, (2.0 + 8.0 + 18.0 + 32.0) / 4.0);
        assert_close!(raw, s.population_cov() + s.mean1 * s.mean2);
    }

    #[test]
    fn calibration_examples() {
        let c = calibrate_snl(&[(1.0, 6.0), (2.0, 10.0), (4.0, 18.0)], 2.0).unwrap();
        assert_close!(c.slope, 4.0);
        assert_close!(c.fit_residual, 0.0);
        assert_close!(c.intercept.unwrap(), 0.0, 1e-9);
        assert!(!c.intercept_warning);
        assert_close!(c.snl_at(100.0), 400.0);

        let single = calibrate_snl(&[(10.0, 40.0)], 0.0).unwrap();
        assert_close!(single.slope, 4.0);
        assert_eq!(single.intercept, None);
    }

    #[test]
    fn calibration_errors() {
        assert!(matches!(
            calibrate_snl(&[], 0.0),
            Err(EstimateError::InsufficientPoints { .. })
        ));
        assert!(matches!(
            calibrate_snl(&[(0.0, 1.0)], 0.0),
            Err(EstimateError::NonPositivePower(_))
        ));
        assert!(matches!(
            calibrate_snl(&[(1.0, 4.0), (100.0, 50.0)], 60.0),
            Err(EstimateError::NegativeCorrectedVariance { .. })
        ));
        assert!(matches!(
            calibrate_snl(&[(1.0, 4.0)], -1.0),
            Err(EstimateError::InvalidNoiseLevel(_))
        ));
    }

    #[test]
    fn calibration_flags_offset_line() {
        // Corrected points 10, 14, 22 lie on 2 + 4P rather than through 0.
        let c = calibrate_snl(&[(2.0, 10.0), (3.0, 14.0), (5.0, 22.0)], 0.0).unwrap();
        assert_close!(c.intercept.unwrap(), 2.0, 1e-9);
        assert!(c.intercept_warning);
        assert!(c.fit_residual > 0.0);
    }

    #[test]
    fn homodyne_examples() {
        let snl = SnlCalibration::from_slope(4.0, 20.0);
        let s = squeezing_homodyne(Measured::exact(200.0), &snl, 100.0).unwrap();
        assert_close!(s.s, 0.5);
        assert_eq!(s.method, SqueezingMethod::HomodyneDiff);
        let s = squeezing_homodyne(Measured::exact(220.0), &snl, 100.0).unwrap();
        assert_close!(s.s, 0.55);
        let s = squeezing_homodyne(Measured::exact(400.0), &snl, 100.0).unwrap();
        assert_close!(s.s, 1.0);
        assert_close!(s.s_db.unwrap(), 0.0);

        let s = squeezing_homodyne_en_corrected(Measured::exact(220.0), &snl, 100.0).unwrap();
        assert_close!(s.s, 0.5);
    }

    #[test]
    fn covariance_estimator_examples() {
        let snl = SnlCalibration::from_slope(4.0, 0.0);
        let s = squeezing_covariance(Measured::exact(0.0), &snl, 100.0).unwrap();
        assert_close!(s.s, 1.0);
        let s = squeezing_covariance(Measured::new(50.0, 1.0), &snl, 100.0).unwrap();
        assert_close!(s.s, 0.5);
        assert_close!(s.se, 0.01);
        assert_close!(s.s_db.unwrap(), 10.0 * 0.5f64.log10());
        assert!(s.is_squeezed());
    }

    #[test]
    fn squeezing_rejects_nonpositive_snl() {
        let zero = SnlCalibration::from_slope(0.0, 0.0);
        assert!(matches!(
            squeezing_covariance(Measured::exact(1.0), &zero, 1.0),
            Err(EstimateError::NonPositiveSnl(_))
        ));
        let snl = SnlCalibration::from_slope(4.0, 0.0);
        assert!(squeezing_homodyne(Measured::exact(1.0), &snl, 0.0).is_err());
        assert!(squeezing_lo_free(Measured::exact(1.0), 0.0).is_err());
    }

    #[test]
    fn lo_free_examples() {
        for (ratio, expected) in [(0.25, 0.0), (0.5, 1.0), (0.375, 0.5)] {
            let s = squeezing_lo_free(Measured::exact(ratio * 400.0), 400.0).unwrap();
            assert_close!(s.s, expected);
            assert_eq!(s.method, SqueezingMethod::LoFree);
        }
        let s = squeezing_lo_free(Measured::exact(100.0), 400.0).unwrap();
        assert_eq!(s.s_db, None);
    }

    #[test]
    fn power_law_examples() {
        let quad: Vec<_> = [0.25, 0.5, 1.0].iter().map(|&t| (t, 7.0 * t * t)).collect();
        let fit = fit_scaling_exponent(&quad).unwrap();
        assert_close!(fit.exponent, 2.0);
        assert_close!(fit.amplitude, 7.0);
        assert_close!(fit.residual, 0.0, 1e-12);

        let lin: Vec<_> = [0.1, 0.3, 0.6, 1.0].iter().map(|&t| (t, 3.0 * t)).collect();
        let fit = fit_scaling_exponent(&lin).unwrap();
        assert_close!(fit.exponent, 1.0);
        assert_close!(fit.amplitude, 3.0);

        let neg: Vec<_> = [0.25, 0.5, 1.0].iter().map(|&t| (t, -2.0 * t)).collect();
        let fit = fit_scaling_exponent(&neg).unwrap();
        assert_close!(fit.exponent, 1.0);
        assert_close!(fit.amplitude, -2.0);
    }

    #[test]
    fn power_law_errors() {
        assert!(matches!(
            fit_scaling_exponent(&[(0.5, 1.0), (1.0, 2.0)]),
            Err(EstimateError::InsufficientPoints { .. })
        ));
        assert_eq!(
            fit_scaling_exponent(&[(0.25, 1.0), (0.5, -1.0), (1.0, 2.0)]).unwrap_err(),
            EstimateError::MixedSigns
        );
        assert_eq!(
            fit_scaling_exponent(&[(0.25, 1.0), (0.5, 0.0), (1.0, 2.0)]).unwrap_err(),
            EstimateError::ZeroCovariance(0.5)
        );
        assert!(matches!(
            fit_scaling_exponent(&[(0.0, 1.0), (0.5, 1.0), (1.0, 2.0)]),
            Err(EstimateError::NonPositiveTransmission(_))
        ));
    }

    /// Two-pass double-loop reference, independent of the streaming path.
    fn naive(a: &[f64], b: &[f64]) -> (f64, f64, f64, f64, f64, f64) {
        let n = a.len() as f64;
        let m1 = a.iter().sum::<f64>() / n;
        let m2 = b.iter().sum::<f64>() / n;
        let mut v1 = 0.0;
        let mut v2 = 0.0;
        let mut c = 0.0;
        let mut vd = 0.0;
        let md = m1 - m2;
        for i in 0..a.len() {
            v1 += (a[i] - m1) * (a[i] - m1);
            v2 += (b[i] - m2) * (b[i] - m2);
            c += (a[i] - m1) * (b[i] - m2);
            let d = a[i] - b[i] - md;
            vd += d * d;
        }
        let dof = n - 1.0;
        (m1, m2, v1 / dof, v2 / dof, c / dof, vd / dof)
    }

    fn channels() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..400).prop_flat_map(|n| {
            (
                proptest::collection::vec(-1e3f64..1e3, n),
                proptest::collection::vec(-1e3f64..1e3, n),
                -2.0f64..2.0,
            )
                .prop_map(|(a, noise, k)| {
                    let b = a.iter().zip(&noise).map(|(x, e)| k * x + e).collect();
                    (a, b)
                })
        })
    }

    proptest! {
        #[test]
        fn streaming_matches_two_pass((a, b) in channels()) {
            let s = stats(&a, &b);
            let (m1, m2, v1, v2, c, vd) = naive(&a, &b);
            let scale = (v1 * v2).sqrt();
            let spread = v1.sqrt().max(v2.sqrt());
            prop_assert!((s.mean1 - m1).abs() <= 1e-12 * m1.abs().max(spread));
            prop_assert!((s.mean2 - m2).abs() <= 1e-12 * m2.abs().max(spread));
            prop_assert!((s.var1 - v1).abs() <= 1e-12 * v1);
            prop_assert!((s.var2 - v2).abs() <= 1e-12 * v2);
            prop_assert!((s.var_diff - vd).abs() <= 1e-12 * vd.max(scale));
            prop_assert!((s.cov - c).abs() <= 1e-12 * c.abs().max(scale));
            prop_assert!(s.identity_residual().abs() <= 1e-10 * (s.var1 + s.var2));
            prop_assert!(s.cov.abs() <= scale * (1.0 + 1e-12));
        }

        #[test]
        fn merge_is_partition_independent((a, b) in channels(), cuts in proptest::collection::vec(0.0f64..1.0, 0..6)) {
            let mut single = MomentAccumulator::new();
            single.extend(&a, &b);
            let mut bounds: Vec<usize> = cuts.iter().map(|f| (f * a.len() as f64) as usize).collect();
            bounds.push(0);
            bounds.push(a.len());
            bounds.sort_unstable();
            let mut merged = MomentAccumulator::new();
            for w in bounds.windows(2) {
                let mut part = MomentAccumulator::new();
                part.extend(&a[w[0]..w[1]], &b[w[0]..w[1]]);
                merged.merge(&part);
            }
            let s = single.finish().unwrap();
            let m = merged.finish().unwrap();
            prop_assert_eq!(s.n, m.n);
            let scale = (s.var1 * s.var2).sqrt();
            prop_assert!((s.var1 - m.var1).abs() <= 1e-12 * s.var1);
            prop_assert!((s.var2 - m.var2).abs() <= 1e-12 * s.var2);
            prop_assert!((s.cov - m.cov).abs() <= 1e-12 * s.cov.abs().max(scale));
            prop_assert!((s.var_diff - m.var_diff).abs() <= 1e-12 * s.var_diff.max(scale));
        }
    }
}
