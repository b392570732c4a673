//! Run configuration files.
//!
//! ```toml
//! seed = 7
//! model = "exact"          # or "first-order"
//! estimator = "fidelity"   # or "readout"
//!
//! [drive]
//! rabi_frequency = "hz:1680"
//! step_magnitude = 0.1
//!
//! [plan]
//! lengths = [0.4, 0.8, 1.2]   # L values, or `steps = [4, 8, 12]`
//! randomizations = 100
//! noise_averages = 500
//! shots = "oracle"
//!
//! [noise]
//! kind = "dephasing"
//! sigma = "hz:900"
//! correlation = "dc"
//! ```

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{BrbError, Result};
use crate::models::{DEFAULT_WINDOW, SelectOptions};
use crate::noise::{Correlation, NoiseKind, NoiseSpec};
use crate::protocol::{DrivePhysics, ExperimentPlan, PhaseSet};
use crate::readout::{DEFAULT_FOCK_CUTOFF, Shots};
use crate::sim::{EstimatorKind, RunOptions, SimModel, DEFAULT_BUDGET};

/// An angular frequency written with an explicit unit: `"hz:1680"` or
/// `"rad_s:10556"`. Hz values are converted with 2π.
#[derive(Debug, Clone, PartialEq)]
pub struct Frequency {
    rad_s: f64,
    text: String,
}

impl Frequency {
    pub fn hz(v: f64) -> Self {
        Self { rad_s: TAU * v, text: format!("hz:{v}") }
    }

    pub fn rad_per_s(&self) -> f64 {
        self.rad_s
    }
}

impl FromStr for Frequency {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let t = s.trim();
        let (unit, num) = t
            .split_once(':')
            .ok_or_else(|| format!("frequency {t:?} needs a unit tag, e.g. \"hz:1680\" or \"rad_s:10556\""))?;
        let v: f64 = num
            .trim()
            .parse()
            .map_err(|_| format!("frequency {t:?} has a non-numeric value"))?;
        if !v.is_finite() {
            return Err(format!("frequency {t:?} is not finite"));
        }
        let rad_s = match unit.trim() {
            "hz" => TAU * v,
            "rad_s" => v,
            other => return Err(format!("unknown frequency unit {other:?}; use \"hz\" or \"rad_s\"")),
        };
        Ok(Self { rad_s, text: t.to_string() })
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl Serialize for Frequency {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.text)
    }
}

impl<'de> Deserialize<'de> for Frequency {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Number(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => t.parse().map_err(serde::de::Error::custom),
            Raw::Number(v) => Err(serde::de::Error::custom(format!(
                "frequency {v} needs a unit tag, e.g. \"hz:{v}\""
            ))),
        }
    }
}

/// A noise strength: tagged frequency for dephasing, plain number otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Strength {
    Plain(f64),
    Frequency(Frequency),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveConfig {
    pub rabi_frequency: Frequency,
    pub step_magnitude: f64,
}

impl DriveConfig {
    pub fn physics(&self) -> Result<DrivePhysics> {
        DrivePhysics::new(self.rabi_frequency.rad_per_s(), self.step_magnitude)
    }
}

impl Default for DriveConfig {
    fn default() -> Self {
        Self { rabi_frequency: Frequency::hz(1680.0), step_magnitude: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanConfig {
    /// Step counts J.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<Vec<usize>>,
    /// Sequence lengths L = |α0|·J.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lengths: Option<Vec<f64>>,
    pub randomizations: usize,
    pub noise_averages: usize,
    #[serde(default)]
    pub shots: Shots,
    #[serde(default)]
    pub phase_set: PhaseSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    /// Heating rate in quanta/s.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub heating_rate: Option<f64>,
    /// Heating kick standard deviation per step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kick_sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<Strength>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlation: Option<Correlation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReadoutConfig {
    pub fock_cutoff: usize,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self { fock_cutoff: DEFAULT_FOCK_CUTOFF }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    /// Max η·L of fitted points; 0 disables the window.
    pub window: f64,
    pub weighted: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spam_scale: Option<f64>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self { window: DEFAULT_WINDOW, weighted: false, spam_scale: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub plots: bool,
    pub histogram_bins: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { plots: true, histogram_bins: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub model: SimModel,
    #[serde(default)]
    pub estimator: EstimatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<u64>,
    #[serde(default)]
    pub drive: DriveConfig,
    pub plan: PlanConfig,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub readout: ReadoutConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Everything a simulation needs, validated.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub plan: ExperimentPlan,
    pub noise: NoiseSpec,
    pub options: RunOptions,
}

/// Source text used to anchor validation errors to lines.
struct Anchor<'a> {
    name: &'a str,
    src: &'a str,
}

impl Anchor<'_> {
    fn err(&self, table: &str, key: &str, msg: impl fmt::Display) -> BrbError {
        let path = if table.is_empty() { key.to_string() } else { format!("{table}.{key}") };
        match key_line(self.src, table, key) {
            Some(line) => BrbError::Config(format!("{}:{line}: {path}: {msg}", self.name)),
            None => BrbError::Config(format!("{}: {path}: {msg}", self.name)),
        }
    }
}

fn line_of(src: &str, offset: usize) -> usize {
    src.as_bytes()[..offset.min(src.len())].iter().filter(|&&b| b == b'\n').count() + 1
}

/// 1-based line of `key` inside `[table]` (top level for an empty table).
fn key_line(src: &str, table: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    let mut fallback = None;
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(rest) = line.strip_prefix('[') {
            current = rest.trim_end_matches(']').trim().to_string();
            if current == table && fallback.is_none() {
                fallback = Some(i + 1);
            }
            continue;
        }
        let Some((k, _)) = line.split_once('=') else { continue };
        if current == table && k.trim() == key {
            return Some(i + 1);
        }
    }
    fallback
}

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| BrbError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&src, &path.display().to_string())
    }

    /// Parses and validates; errors carry `name:line:`.
    pub fn parse(src: &str, name: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| line_of(src, s.start));
            let msg = e.message().to_string();
            match line {
                Some(l) => BrbError::Config(format!("{name}:{l}: {msg}")),
                None => BrbError::Config(format!("{name}: {msg}")),
            }
        })?;
        cfg.resolve_with(&Anchor { name, src })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| BrbError::Config(e.to_string()))
    }

    pub fn drive(&self) -> Result<DrivePhysics> {
        self.drive_with(&Anchor { name: "config", src: "" })
    }

    fn drive_with(&self, a: &Anchor) -> Result<DrivePhysics> {
        let omega = self.drive.rabi_frequency.rad_per_s();
        if !(omega > 0.0) {
            return Err(a.err("drive", "rabi_frequency", "must be positive"));
        }
        DrivePhysics::new(omega, self.drive.step_magnitude)
            .map_err(|e| a.err("drive", "step_magnitude", e))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        self.resolve_with(&Anchor { name: "config", src: "" })
    }

    fn resolve_with(&self, a: &Anchor) -> Result<Resolved> {
        let drive = self.drive_with(a)?;
        let steps = self.steps(&drive, a)?;
        let plan = ExperimentPlan::new(drive, steps, self.plan.randomizations, self.plan.noise_averages, self.seed)
            .map_err(|e| {
                let key = match &e {
                    BrbError::InvalidArgument(m) if m.contains("randomizations") => "randomizations",
                    BrbError::InvalidArgument(m) if m.contains("noise averages") => "noise_averages",
                    _ => if self.plan.steps.is_some() { "steps" } else { "lengths" },
                };
                a.err("plan", key, e)
            })?
            .with_shots(self.plan.shots)
            .with_phase_set(self.plan.phase_set);
        let noise = self.noise_spec(&drive, a)?;
        if self.readout.fock_cutoff == 0 {
            return Err(a.err("readout", "fock_cutoff", "must be at least 1"));
        }
        if self.output.histogram_bins == 0 {
            return Err(a.err("output", "histogram_bins", "must be at least 1"));
        }
        if !(self.analysis.window >= 0.0) {
            return Err(a.err("analysis", "window", "must be non-negative"));
        }
        if let Some(s) = self.analysis.spam_scale.filter(|s| !(*s > 0.0 && *s <= 1.0)) {
            return Err(a.err("analysis", "spam_scale", format!("must lie in (0, 1], got {s}")));
        }
        let options = RunOptions {
            model: self.model,
            estimator: self.estimator,
            fock_cutoff: self.readout.fock_cutoff,
            budget: self.budget.unwrap_or(DEFAULT_BUDGET),
        };
        Ok(Resolved { plan, noise, options })
    }

    fn steps(&self, drive: &DrivePhysics, a: &Anchor) -> Result<Vec<usize>> {
        match (&self.plan.steps, &self.plan.lengths) {
            (Some(s), None) => Ok(s.clone()),
            (None, Some(ls)) => ls
                .iter()
                .map(|&l| {
                    let j = (l / drive.step_magnitude()).round();
                    if !(l > 0.0) || (j * drive.step_magnitude() - l).abs() > 1e-9 * l.max(1.0) {
                        Err(a.err(
                            "plan",
                            "lengths",
                            format!("L = {l} is not a positive multiple of |α0| = {}", drive.step_magnitude()),
                        ))
                    } else {
                        Ok(j as usize)
                    }
                })
                .collect(),
            (Some(_), Some(_)) => Err(a.err("plan", "steps", "give either `steps` or `lengths`, not both")),
            (None, None) => Err(a.err("plan", "lengths", "one of `steps` or `lengths` is required")),
        }
    }

    fn noise_spec(&self, drive: &DrivePhysics, a: &Anchor) -> Result<NoiseSpec> {
        let n = &self.noise;
        let corr = n.correlation.unwrap_or(Correlation::Markovian);
        let wrap = |key: &str, r: Result<NoiseSpec>| r.map_err(|e| a.err("noise", key, e));
        match n.kind {
            NoiseKind::Heating => {
                if n.sigma.is_some() {
                    return Err(a.err("noise", "sigma", "heating takes `heating_rate` (quanta/s) or `kick_sigma`"));
                }
                if !matches!(corr, Correlation::Markovian | Correlation::Steps(1)) {
                    return Err(a.err("noise", "correlation", "heating kicks are i.i.d. per step"));
                }
                match (n.heating_rate, n.kick_sigma) {
                    (Some(rate), None) => wrap("heating_rate", NoiseSpec::heating_from_rate(rate, drive.step_duration())),
                    (None, Some(s)) => wrap("kick_sigma", NoiseSpec::heating(s)),
                    (Some(_), Some(_)) => Err(a.err("noise", "kick_sigma", "give either `heating_rate` or `kick_sigma`")),
                    (None, None) => Err(a.err("noise", "kind", "heating needs `heating_rate` or `kick_sigma`")),
                }
            }
            kind => {
                if n.heating_rate.is_some() || n.kick_sigma.is_some() {
                    let key = if n.heating_rate.is_some() { "heating_rate" } else { "kick_sigma" };
                    return Err(a.err("noise", key, format!("not a parameter of {} noise", kind.as_str())));
                }
                let sigma = match (kind, &n.sigma) {
                    (_, None) => return Err(a.err("noise", "kind", format!("{} noise needs `sigma`", kind.as_str()))),
                    (NoiseKind::Dephasing, Some(Strength::Frequency(f))) => f.rad_per_s(),
                    (NoiseKind::Dephasing, Some(Strength::Plain(v))) => {
                        return Err(a.err(
                            "noise",
                            "sigma",
                            format!("dephasing strength needs a unit tag, e.g. \"hz:{v}\""),
                        ));
                    }
                    (_, Some(Strength::Plain(v))) => *v,
                    (_, Some(Strength::Frequency(f))) => {
                        return Err(a.err(
                            "noise",
                            "sigma",
                            format!("{} strength is dimensionless, got {f}", kind.as_str()),
                        ));
                    }
                };
                wrap("sigma", NoiseSpec::new(kind, sigma, corr))
            }
        }
    }

    pub fn select_options(&self) -> Result<SelectOptions> {
        Ok(SelectOptions {
            window: (self.analysis.window > 0.0).then_some(self.analysis.window),
            weighted: self.analysis.weighted,
            spam_scale: self.analysis.spam_scale,
            drive: Some(self.drive()?),
            ..SelectOptions::default()
        })
    }
}

/// The `[drive]` and `[analysis]` tables alone, for characterizing a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalysisFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveConfig>,
    #[serde(default)]
    pub analysis: AnalysisConfig,
}

impl AnalysisFile {
    /// Reads a full run config or an analysis-only file.
    pub fn from_path(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path)
            .map_err(|e| BrbError::Config(format!("{}: {e}", path.display())))?;
        let name = path.display().to_string();
        let is_run = src
            .parse::<toml::Table>()
            .is_ok_and(|t| t.contains_key("plan") || t.contains_key("noise"));
        if is_run {
            let cfg = RunConfig::parse(&src, &name)?;
            return Ok(Self { drive: Some(cfg.drive), analysis: cfg.analysis });
        }
        let file: AnalysisFile = toml::from_str(&src).map_err(|e| {
            let line = e.span().map(|s| line_of(&src, s.start));
            BrbError::Config(match line {
                Some(l) => format!("{name}:{l}: {}", e.message()),
                None => format!("{name}: {}", e.message()),
            })
        })?;
        Ok(file)
    }

    pub fn select_options(&self) -> Result<SelectOptions> {
        let drive = match &self.drive {
            Some(d) => Some(d.physics().map_err(|e| BrbError::Config(format!("drive: {e}")))?),
            None => None,
        };
        Ok(SelectOptions {
            window: (self.analysis.window > 0.0).then_some(self.analysis.window),
            weighted: self.analysis.weighted,
            spam_scale: self.analysis.spam_scale,
            drive,
            ..SelectOptions::default()
        })
    }
}
