//! `key=value` scenario configuration with dotted keys.
//!
//! A `preset` key (or override) is applied first; every other key then
//! overrides the preset, and command-line overrides win over the file.
//! Unknown keys are rejected.

use thiserror::Error;

use crate::detection::{preset_for, DetectorModel, Preset, Scenario, SimError};
use crate::gaussian::{GaussianState, LocalOscillator, LossMode};
use crate::io::{parse_key_values, FormatError};

pub const SCENARIO_KEYS: &[&str] = &[
    "preset",
    "state.vx",
    "state.vy",
    "lo.amplitude_sq",
    "lo.phase_rad",
    "lo.v_lo",
    "loss.transmission",
    "loss.mode",
    "det1.efficiency",
    "det1.en_variance",
    "det1.label",
    "det2.efficiency",
    "det2.en_variance",
    "det2.label",
    "digitizer.sample_rate",
    "digitizer.bandwidth",
    "digitizer.n_samples",
    "digitizer.seed",
    "digitizer.ac_coupled",
];

pub const CAMPAIGN_KEYS: &[&str] = &[
    "sweep.values",
    "sweep.seeds_per_point",
    "sweep.samples_per_run",
    "calibration.powers",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("key {key:?} given more than once")]
    Duplicate { key: String },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
}

impl ConfigError {
    fn invalid(key: &str, message: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// The configuration key the error refers to, if any.
    pub fn key(&self) -> Option<&str> {
        match self {
            ConfigError::UnknownKey(k) => Some(k),
            ConfigError::Duplicate { key } | ConfigError::Invalid { key, .. } => Some(key),
            ConfigError::Syntax { .. } => None,
        }
    }
}

impl From<FormatError> for ConfigError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Syntax { line, message } => ConfigError::Syntax { line, message },
            other => ConfigError::Syntax {
                line: 0,
                message: other.to_string(),
            },
        }
    }
}

fn is_known(key: &str) -> bool {
    SCENARIO_KEYS.contains(&key) || CAMPAIGN_KEYS.contains(&key)
}

/// Parsed configuration entries in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigDoc {
    entries: Vec<(String, String)>,
}

impl ConfigDoc {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    /// Returns a copy with `overrides` replacing or adding entries.
    pub fn with_overrides(&self, overrides: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut doc = self.clone();
        for (k, v) in overrides {
            if !is_known(k) {
                return Err(ConfigError::UnknownKey(k.clone()));
            }
            match doc.entries.iter_mut().find(|(ek, _)| ek == k) {
                Some(entry) => entry.1 = v.clone(),
                None => doc.entries.push((k.clone(), v.clone())),
            }
        }
        Ok(doc)
    }
}

pub fn parse_config(text: &str) -> Result<ConfigDoc, ConfigError> {
    let pairs = parse_key_values(text)?;
    let mut doc = ConfigDoc::default();
    for (k, v) in pairs {
        if !is_known(&k) {
            return Err(ConfigError::UnknownKey(k));
        }
        if doc.get(&k).is_some() {
            return Err(ConfigError::Duplicate { key: k });
        }
        doc.entries.push((k, v));
    }
    Ok(doc)
}

/// Splits `key=value` command-line overrides.
pub fn parse_overrides(items: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    items
        .iter()
        .map(|item| {
            let (k, v) = item.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: 0,
                message: format!("override {item:?} is not key=value"),
            })?;
            let k = k.trim();
            if !is_known(k) {
                return Err(ConfigError::UnknownKey(k.to_string()));
            }
            Ok((k.to_string(), v.trim().to_string()))
        })
        .collect()
}

fn parse_f64(key: &str, v: &str) -> Result<f64, ConfigError> {
    let x: f64 = v
        .parse()
        .map_err(|_| ConfigError::invalid(key, format!("{v:?} is not a number")))?;
    if !x.is_finite() {
        return Err(ConfigError::invalid(key, format!("{v:?} is not finite")));
    }
    Ok(x)
}

fn parse_uint<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse()
        .map_err(|_| ConfigError::invalid(key, format!("{v:?} is not a non-negative integer")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(ConfigError::invalid(key, format!("{v:?} is not a boolean"))),
    }
}

pub fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| parse_f64(key, s.trim()))
        .collect()
}

/// Builds and validates the scenario described by `doc`.
pub fn build_scenario(doc: &ConfigDoc) -> Result<Scenario, ConfigError> {
    let mut s = match doc.get("preset") {
        None => Scenario::custom(
            GaussianState::vacuum(),
            LocalOscillator::coherent(100.0, 0.0).expect("valid default LO"),
        ),
        Some(name) => match Preset::parse(name) {
            Some(Preset::Custom) => {
                let mut s = Scenario::custom(
                    GaussianState::vacuum(),
                    LocalOscillator::coherent(100.0, 0.0).expect("valid default LO"),
                );
                s.preset = Preset::Custom;
                s
            }
            Some(p) => preset_for(p).map_err(|e| ConfigError::invalid("preset", e.to_string()))?,
            None => {
                return Err(ConfigError::invalid(
                    "preset",
                    format!("unknown preset {name:?} (expected opa, kerr or custom)"),
                ))
            }
        },
    };
    let mut vx = s.state.vx();
    let mut vy = s.state.vy();

    for (key, v) in &doc.entries {
        let key = key.as_str();
        let v = v.as_str();
        match key {
            "preset" => {}
            "state.vx" => vx = parse_f64(key, v)?,
            "state.vy" => vy = parse_f64(key, v)?,
            "lo.amplitude_sq" => s.lo.amplitude_sq = parse_f64(key, v)?,
            "lo.phase_rad" => s.lo.phase = parse_f64(key, v)?,
            "lo.v_lo" => s.lo.v_lo = parse_f64(key, v)?,
            "loss.transmission" => s.loss.transmission = parse_f64(key, v)?,
            "loss.mode" => {
                s.loss.mode = LossMode::parse(v).ok_or_else(|| {
                    ConfigError::invalid(
                        key,
                        format!("{v:?} is not one of signal_only, lo_only, both"),
                    )
                })?
            }
            "det1.efficiency" => s.det1.efficiency = parse_f64(key, v)?,
            "det1.en_variance" => s.det1.en_variance = parse_f64(key, v)?,
            "det1.label" => s.det1.label = v.to_string(),
            "det2.efficiency" => s.det2.efficiency = parse_f64(key, v)?,
            "det2.en_variance" => s.det2.en_variance = parse_f64(key, v)?,
            "det2.label" => s.det2.label = v.to_string(),
            "digitizer.sample_rate" => s.digitizer.sample_rate = parse_f64(key, v)?,
            "digitizer.bandwidth" => s.digitizer.bandwidth = parse_f64(key, v)?,
            "digitizer.n_samples" => s.digitizer.n_samples = parse_uint(key, v)?,
            "digitizer.seed" => s.digitizer.seed = parse_uint(key, v)?,
            "digitizer.ac_coupled" => s.digitizer.ac_coupled = parse_bool(key, v)?,
            k if CAMPAIGN_KEYS.contains(&k) => {}
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
    }

    s.state = GaussianState::new(vx, vy).map_err(|e| match e {
        crate::gaussian::ModelError::InvalidParameter {
            field,
            value,
            reason,
        } => ConfigError::invalid(&format!("state.{field}"), format!("{value} {reason}")),
    })?;
    s.validate().map_err(|e| match e {
        SimError::InvalidScenario { field, reason } => ConfigError::Invalid {
            key: field,
            message: reason,
        },
        other => ConfigError::invalid("preset", other.to_string()),
    })?;
    Ok(s)
}

fn detector_pairs(prefix: &str, d: &DetectorModel, out: &mut Vec<(String, String)>) {
    out.push((format!("{prefix}.efficiency"), d.efficiency.to_string()));
    out.push((format!("{prefix}.en_variance"), d.en_variance.to_string()));
    out.push((format!("{prefix}.label"), d.label.clone()));
}

/// Every scenario parameter as configuration entries; feeding them back
/// through [`build_scenario`] reproduces the scenario.
pub fn scenario_to_pairs(s: &Scenario) -> Vec<(String, String)> {
    let mut out = vec![
        ("preset".to_string(), s.preset.as_str().to_string()),
        ("state.vx".into(), s.state.vx().to_string()),
        ("state.vy".into(), s.state.vy().to_string()),
        ("lo.amplitude_sq".into(), s.lo.amplitude_sq.to_string()),
        ("lo.phase_rad".into(), s.lo.phase.to_string()),
        ("lo.v_lo".into(), s.lo.v_lo.to_string()),
        ("loss.transmission".into(), s.loss.transmission.to_string()),
        ("loss.mode".into(), s.loss.mode.as_str().to_string()),
    ];
    detector_pairs("det1", &s.det1, &mut out);
    detector_pairs("det2", &s.det2, &mut out);
    out.extend([
        (
            "digitizer.sample_rate".into(),
            s.digitizer.sample_rate.to_string(),
        ),
        (
            "digitizer.bandwidth".into(),
            s.digitizer.bandwidth.to_string(),
        ),
        (
            "digitizer.n_samples".into(),
            s.digitizer.n_samples.to_string(),
        ),
        ("digitizer.seed".into(), s.digitizer.seed.to_string()),
        (
            "digitizer.ac_coupled".into(),
            s.digitizer.ac_coupled.to_string(),
        ),
    ]);
    out
}

pub fn render_config(s: &Scenario) -> String {
    scenario_to_pairs(s)
        .into_iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect()
}

/// Sweep and calibration settings carried in a configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CampaignSettings {
    pub values: Option<Vec<f64>>,
    pub seeds_per_point: Option<usize>,
    pub samples_per_run: Option<usize>,
    pub calibration_powers: Option<Vec<f64>>,
}

pub fn campaign_settings(doc: &ConfigDoc) -> Result<CampaignSettings, ConfigError> {
    let mut c = CampaignSettings::default();
    if let Some(v) = doc.get("sweep.values") {
        c.values = Some(parse_list("sweep.values", v)?);
    }
    if let Some(v) = doc.get("sweep.seeds_per_point") {
        c.seeds_per_point = Some(parse_uint("sweep.seeds_per_point", v)?);
    }
    if let Some(v) = doc.get("sweep.samples_per_run") {
        c.samples_per_run = Some(parse_uint("sweep.samples_per_run", v)?);
    }
    if let Some(v) = doc.get("calibration.powers") {
        c.calibration_powers = Some(parse_list("calibration.powers", v)?);
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn preset_then_overrides() {
        let doc = parse_config(
            "# OPA with a dimmer LO\nlo.amplitude_sq = 25\npreset = opa\ndigitizer.seed=7\n",
        )
        .unwrap();
        let s = build_scenario(&doc).unwrap();
        assert_eq!(s.preset, Preset::Opa);
        assert_eq!(s.lo.amplitude_sq, 25.0);
        assert_eq!(s.digitizer.seed, 7);
        assert_eq!(s.digitizer.sample_rate, 2e6);

        let over = doc
            .with_overrides(&parse_overrides(&["lo.amplitude_sq=400".into()]).unwrap())
            .unwrap();
        assert_eq!(build_scenario(&over).unwrap().lo.amplitude_sq, 400.0);
    }

    #[test]
    fn errors_name_the_key() {
        let doc = parse_config("digitizer.n_samples=1\n").unwrap();
        assert_eq!(
            build_scenario(&doc).unwrap_err().key(),
            Some("digitizer.n_samples")
        );

        let doc = parse_config("state.vx=0.5\nstate.vy=1.0\n").unwrap();
        assert_eq!(build_scenario(&doc).unwrap_err().key(), Some("state.vy"));

        let doc = parse_config("loss.mode=sideways\n").unwrap();
        assert_eq!(build_scenario(&doc).unwrap_err().key(), Some("loss.mode"));

        let doc = parse_config("preset=kerr\nloss.mode=lo_only\n").unwrap();
        assert_eq!(build_scenario(&doc).unwrap_err().key(), Some("loss.mode"));

        let doc = parse_config("det1.efficiency=abc\n").unwrap();
        assert_eq!(
            build_scenario(&doc).unwrap_err().key(),
            Some("det1.efficiency")
        );

        assert_eq!(
            parse_config("state.vz=1\n").unwrap_err(),
            ConfigError::UnknownKey("state.vz".into())
        );
        assert!(matches!(
            parse_config("lo.phase_rad=0\nlo.phase_rad=1\n"),
            Err(ConfigError::Duplicate { .. })
        ));
        assert!(matches!(
            parse_config("just words\n"),
            Err(ConfigError::Syntax { line: 1, .. })
        ));
        assert!(parse_overrides(&["nonsense".into()]).is_err());
        assert!(parse_overrides(&["x.y=1".into()]).is_err());
    }

    #[test]
    fn campaign_keys() {
        let doc = parse_config(
            "sweep.values=0.25, 0.5,1\nsweep.seeds_per_point=3\ncalibration.powers=100,400\n",
        )
        .unwrap();
        let c = campaign_settings(&doc).unwrap();
        assert_eq!(c.values, Some(vec![0.25, 0.5, 1.0]));
        assert_eq!(c.seeds_per_point, Some(3));
        assert_eq!(c.samples_per_run, None);
        assert_eq!(c.calibration_powers, Some(vec![100.0, 400.0]));
        assert!(build_scenario(&doc).is_ok());
    }

    fn any_scenario() -> impl Strategy<Value = Scenario> {
        (
            (
                0.05f64..3.0,
                1.0f64..30.0,
                0.0f64..1e4,
                -7.0f64..7.0,
                0.0f64..3.0,
            ),
            (
                0.01f64..=1.0,
                prop_oneof![
                    Just(LossMode::SignalOnly),
                    Just(LossMode::LoOnly),
                    Just(LossMode::Both)
                ],
            ),
            (0.01f64..=1.0, 0.0f64..1e3, 0.01f64..=1.0, 0.0f64..1e3),
            (
                1.0f64..1e9,
                1.0f64..1e8,
                2usize..10_000_000,
                any::<u64>(),
                any::<bool>(),
            ),
        )
            .prop_map(
                |(
                    (vx, purity, amp, phase, vlo),
                    (t, mode),
                    (e1, n1, e2, n2),
                    (rate, bw, n, seed, ac),
                )| {
                    let mut s = Scenario::custom(
                        GaussianState::new(vx, purity / vx).unwrap(),
                        LocalOscillator::new(amp, phase, vlo).unwrap(),
                    );
                    s.loss.transmission = t;
                    s.loss.mode = mode;
                    s.det1 = DetectorModel::new(e1, n1, "a");
                    s.det2 = DetectorModel::new(e2, n2, "b");
                    s.digitizer.sample_rate = rate;
                    s.digitizer.bandwidth = bw;
                    s.digitizer.n_samples = n;
                    s.digitizer.seed = seed;
                    s.digitizer.ac_coupled = ac;
                    s
                },
            )
    }

    proptest! {
        #[test]
        fn every_scenario_is_expressible(s in any_scenario()) {
            let doc = parse_config(&render_config(&s)).unwrap();
            prop_assert_eq!(build_scenario(&doc).unwrap(), s);
        }
    }
}
