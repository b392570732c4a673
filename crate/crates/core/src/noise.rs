//! Noise processes and per-step noise traces.
//!
//! A noise value is held constant over blocks of `M_n` consecutive
//! displacements (the correlation length). `M_n = 1` is Markovian, `M_n = J`
//! is quasi-static (DC). Heating kicks are always i.i.d. per step.

use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Deserializer, Serialize, Serializer, de};

use crate::error::{BrbError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Random phase-space kicks, complex valued.
    Heating,
    /// Oscillator frequency fluctuations ε_δ (rad/s).
    Dephasing,
    /// Fractional drive amplitude fluctuations ε_Ω.
    Amplitude,
    /// Drive phase fluctuations ε_φ (rad).
    PhaseJitter,
}

impl NoiseKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NoiseKind::Heating => "heating",
            NoiseKind::Dephasing => "dephasing",
            NoiseKind::Amplitude => "amplitude",
            NoiseKind::PhaseJitter => "phase-jitter",
        }
    }
}

/// How many consecutive steps share one noise value. Serialized as
/// `"markovian"`, `"dc"` or the block length.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correlation {
    /// `M_n = 1`.
    Markovian,
    /// `1 ≤ M_n`, clipped to J.
    Steps(usize),
    /// `M_n = J`: one value per sequence.
    Dc,
}

impl Correlation {
    /// The block length `M_n` for a sequence of `steps` displacements.
    pub fn block_length(&self, steps: usize) -> usize {
        match *self {
            Correlation::Markovian => 1,
            Correlation::Steps(n) => n.clamp(1, steps.max(1)),
            Correlation::Dc => steps.max(1),
        }
    }

    /// True for the two correlation lengths the analytical models cover.
    pub fn is_modelled(&self, steps: usize) -> bool {
        let m = self.block_length(steps);
        m == 1 || m == steps
    }
}

impl fmt::Display for Correlation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Correlation::Markovian => f.write_str("markovian"),
            Correlation::Dc => f.write_str("dc"),
            Correlation::Steps(n) => write!(f, "{n}"),
        }
    }
}

impl Serialize for Correlation {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Correlation::Steps(n) => s.serialize_u64(*n as u64),
            other => s.serialize_str(&other.to_string()),
        }
    }
}

impl<'de> Deserialize<'de> for Correlation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Int(n) if n >= 1 => Ok(Correlation::Steps(n as usize)),
            Raw::Int(n) => Err(de::Error::custom(format!("correlation length must be at least 1, got {n}"))),
            Raw::Text(t) => match t.to_ascii_lowercase().as_str() {
                "markovian" => Ok(Correlation::Markovian),
                "dc" => Ok(Correlation::Dc),
                _ => Err(de::Error::custom(format!(
                    "correlation must be \"markovian\", \"dc\" or a block length, got {t:?}"
                ))),
            },
        }
    }
}

/// A noise process. `sigma` is the standard deviation of one noise value in
/// the kind's natural unit: kick size per step for heating, rad/s for
/// dephasing, a fraction of Ω for amplitude, radians for phase jitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub correlation: Correlation,
}

impl NoiseSpec {
    pub fn new(kind: NoiseKind, sigma: f64, correlation: Correlation) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(BrbError::invalid(format!("noise strength must be non-negative, got {sigma}")));
        }
        if let Correlation::Steps(0) = correlation {
            return Err(BrbError::invalid("correlation length must be at least 1"));
        }
        if kind == NoiseKind::Heating && correlation != Correlation::Markovian {
            let ok = matches!(correlation, Correlation::Steps(1));
            if !ok {
                return Err(BrbError::invalid("heating kicks are i.i.d. per step (M_n = 1)"));
            }
        }
        Ok(Self { kind, sigma, correlation })
    }

    /// Heating with kick standard deviation σ_h per step.
    pub fn heating(kick_sigma: f64) -> Result<Self> {
        Self::new(NoiseKind::Heating, kick_sigma, Correlation::Markovian)
    }

    /// Heating from a rate γ_h in quanta/s and the step duration Δτ in s.
    pub fn heating_from_rate(rate: f64, step_duration: f64) -> Result<Self> {
        Self::heating(heating_sigma_from_rate(rate, step_duration)?.sqrt())
    }

    /// Frequency noise with standard deviation σ_δ in rad/s.
    pub fn dephasing(sigma: f64, correlation: Correlation) -> Result<Self> {
        Self::new(NoiseKind::Dephasing, sigma, correlation)
    }

    pub fn amplitude(sigma: f64, correlation: Correlation) -> Result<Self> {
        Self::new(NoiseKind::Amplitude, sigma, correlation)
    }

    pub fn phase_jitter(sigma: f64, correlation: Correlation) -> Result<Self> {
        Self::new(NoiseKind::PhaseJitter, sigma, correlation)
    }
}

/// σ_h² = γ_h·Δτ.
pub fn heating_sigma_from_rate(rate: f64, step_duration: f64) -> Result<f64> {
    if !(rate.is_finite() && rate >= 0.0) {
        return Err(BrbError::invalid(format!("heating rate must be non-negative, got {rate}")));
    }
    if !(step_duration.is_finite() && step_duration > 0.0) {
        return Err(BrbError::invalid(format!(
            "step duration must be positive, got {step_duration}"
        )));
    }
    Ok(rate * step_duration)
}

/// Per-step noise values for one realization.
#[derive(Debug, Clone, PartialEq)]
pub enum NoiseTrace {
    Real { kind: NoiseKind, values: Vec<f64> },
    Kicks(Vec<Complex64>),
}

impl NoiseTrace {
    pub fn kind(&self) -> NoiseKind {
        match self {
            NoiseTrace::Real { kind, .. } => *kind,
            NoiseTrace::Kicks(_) => NoiseKind::Heating,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            NoiseTrace::Real { values, .. } => values.len(),
            NoiseTrace::Kicks(k) => k.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The real values, failing unless the trace is of `expected` kind.
    pub fn real_values(&self, expected: NoiseKind) -> Result<&[f64]> {
        match self {
            NoiseTrace::Real { kind, values } if *kind == expected => Ok(values),
            other => Err(BrbError::invalid(format!(
                "expected a {} trace, got {}",
                expected.as_str(),
                other.kind().as_str()
            ))),
        }
    }

    pub fn kicks(&self) -> Result<&[Complex64]> {
        match self {
            NoiseTrace::Kicks(k) => Ok(k),
            other => Err(BrbError::invalid(format!(
                "expected a heating trace, got {}",
                other.kind().as_str()
            ))),
        }
    }
}

/// Draws one trace of `steps` values: ⌈J/M_n⌉ independent draws, each held
/// over its block (the last block may be short).
pub fn sample_trace<R: Rng + ?Sized>(spec: &NoiseSpec, steps: usize, stream: &mut R) -> Result<NoiseTrace> {
    if steps == 0 {
        return Err(BrbError::invalid("J must be at least 1"));
    }
    let block = spec.correlation.block_length(steps);
    Ok(match spec.kind {
        NoiseKind::Heating => {
            let mut kicks = Vec::with_capacity(steps);
            fill_kicks(spec.sigma, stream, &mut kicks, steps);
            NoiseTrace::Kicks(kicks)
        }
        kind => {
            let mut values = Vec::with_capacity(steps);
            fill_blocks(spec.sigma, block, stream, &mut values, steps);
            NoiseTrace::Real { kind, values }
        }
    })
}

pub(crate) fn fill_blocks<R: Rng + ?Sized>(
    sigma: f64,
    block: usize,
    stream: &mut R,
    out: &mut Vec<f64>,
    steps: usize,
) {
    out.clear();
    while out.len() < steps {
        let z: f64 = stream.sample(StandardNormal);
        let n = block.min(steps - out.len());
        out.extend(std::iter::repeat_n(sigma * z, n));
    }
}

/// Complex normal CN(0, σ²): each quadrature has variance σ²/2.
pub(crate) fn fill_kicks<R: Rng + ?Sized>(sigma: f64, stream: &mut R, out: &mut Vec<Complex64>, steps: usize) {
    let s = sigma * std::f64::consts::FRAC_1_SQRT_2;
    out.clear();
    out.extend((0..steps).map(|_| {
        let re: f64 = stream.sample(StandardNormal);
        let im: f64 = stream.sample(StandardNormal);
        Complex64::new(s * re, s * im)
    }));
}
