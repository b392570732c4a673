//! Red-sideband fidelity readout with finite shots.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{BrbError, Result};

pub const DEFAULT_FOCK_CUTOFF: usize = 64;
/// Truncated probability mass allowed in a Fock distribution.
pub const MASS_TOLERANCE: f64 = 1e-9;
/// Deficit above which an input distribution counts as unnormalized.
const INPUT_TOLERANCE: f64 = 1e-6;
const HARD_CUTOFF: usize = 1 << 20;

/// Shots per noise realization, or `Oracle` for the exact probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Shots {
    #[default]
    Oracle,
    Count(u32),
}

impl fmt::Display for Shots {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shots::Oracle => f.write_str("oracle"),
            Shots::Count(n) => write!(f, "{n}"),
        }
    }
}

impl FromStr for Shots {
    type Err = BrbError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("oracle") {
            return Ok(Shots::Oracle);
        }
        match s.parse::<u32>() {
            Ok(0) => Err(BrbError::invalid("shots must be at least 1")),
            Ok(n) => Ok(Shots::Count(n)),
            Err(_) => Err(BrbError::invalid(format!("shots must be a positive integer or \"oracle\", got {s:?}"))),
        }
    }
}

impl Serialize for Shots {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Shots::Oracle => s.serialize_str("oracle"),
            Shots::Count(n) => s.serialize_u32(*n),
        }
    }
}

impl<'de> Deserialize<'de> for Shots {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Int(n) if n >= 1 && n <= u32::MAX as i64 => Ok(Shots::Count(n as u32)),
            Raw::Int(n) => Err(format!("shots must be in 1..={}, got {n}", u32::MAX)),
            Raw::Text(t) => t.parse().map_err(|e: BrbError| e.to_string()),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReadoutModel {
    /// Initial Fock cutoff; raised automatically when the tail is too heavy.
    pub fock_cutoff: usize,
    pub shots: Shots,
}

impl Default for ReadoutModel {
    fn default() -> Self {
        Self { fock_cutoff: DEFAULT_FOCK_CUTOFF, shots: Shots::Oracle }
    }
}

impl ReadoutModel {
    pub fn new(fock_cutoff: usize, shots: Shots) -> Result<Self> {
        if fock_cutoff == 0 {
            return Err(BrbError::invalid("Fock cutoff must be at least 1"));
        }
        Ok(Self { fock_cutoff, shots })
    }

    pub fn oracle() -> Self {
        Self::default()
    }

    pub fn with_shots(shots: Shots) -> Self {
        Self { shots, ..Self::default() }
    }
}

/// Poisson photon-number distribution of the coherent state |α_ε⟩:
/// `P_n = e^{-x} x^n / n!` with `x = |α_ε|²`, for `n = 0..=n_max` at least.
/// The cutoff is raised until the missing mass is below [`MASS_TOLERANCE`].
pub fn displaced_fock_distribution(alpha: Complex64, n_max: usize) -> Result<Vec<f64>> {
    if n_max == 0 {
        return Err(BrbError::invalid("Fock cutoff must be at least 1"));
    }
    let x = alpha.norm_sqr();
    if !x.is_finite() {
        return Err(BrbError::invalid(format!("displacement must be finite, got {alpha}")));
    }
    let mut p = Vec::with_capacity(n_max + 1);
    if x == 0.0 {
        p.push(1.0);
        p.resize(n_max + 1, 0.0);
        return Ok(p);
    }
    let ln_x = x.ln();
    let mut ln_p = -x;
    let mut total = 0.0;
    let mut n = 0usize;
    loop {
        let pn = ln_p.exp();
        p.push(pn);
        total += pn;
        if n >= n_max && 1.0 - total < MASS_TOLERANCE && n as f64 > x {
            break;
        }
        if n >= HARD_CUTOFF {
            return Err(BrbError::invalid(format!("|α|² = {x} needs more than {HARD_CUTOFF} Fock levels")));
        }
        n += 1;
        ln_p += ln_x - (n as f64).ln();
    }
    Ok(p)
}

/// `P↓ = ½ + ½·Σ_n P_n cos(π√n)`.
pub fn rsb_probability(p: &[f64]) -> Result<f64> {
    if p.is_empty() {
        return Err(BrbError::invalid("empty Fock distribution"));
    }
    if let Some(bad) = p.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(BrbError::invalid(format!("Fock probabilities must be non-negative, got {bad}")));
    }
    let total: f64 = p.iter().sum();
    if (1.0 - total).abs() > INPUT_TOLERANCE {
        return Err(BrbError::invalid(format!(
            "Fock distribution is not normalized (mass {total})"
        )));
    }
    let s: f64 = p
        .iter()
        .enumerate()
        .map(|(n, &pn)| pn * (PI * (n as f64).sqrt()).cos())
        .sum();
    Ok(0.5 + 0.5 * s)
}

/// Exact `P↓` for a parasitic displacement.
pub fn ideal_probability(alpha: Complex64, fock_cutoff: usize) -> Result<f64> {
    rsb_probability(&displaced_fock_distribution(alpha, fock_cutoff)?)
}

/// One noise realization's readout: `P↓` in oracle mode, otherwise the mean
/// of `shots` Bernoulli(`P↓`) outcomes.
pub fn measure_fidelity<R: Rng + ?Sized>(alpha: Complex64, model: &ReadoutModel, stream: &mut R) -> Result<f64> {
    let p = ideal_probability(alpha, model.fock_cutoff)?;
    sample_shots(p, model.shots, stream)
}

/// Shot-samples a known probability.
pub fn sample_shots<R: Rng + ?Sized>(p: f64, shots: Shots, stream: &mut R) -> Result<f64> {
    match shots {
        Shots::Oracle => Ok(p),
        Shots::Count(n) => {
            let dist = Binomial::new(n as u64, p.clamp(0.0, 1.0))
                .map_err(|e| BrbError::invalid(format!("binomial sampling: {e}")))?;
            Ok(dist.sample(stream) as f64 / n as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{StreamKey, substream};
    use proptest::prelude::*;

    #[test]
    fn vacuum_distribution() {
        let p = displaced_fock_distribution(Complex64::new(0.0, 0.0), 8).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p[0], 1.0);
        assert!(p[1..].iter().all(|&v| v == 0.0));
        assert_eq!(rsb_probability(&p).unwrap(), 1.0);
    }

    #[test]
    fn unit_mean_photon() {
        let p = displaced_fock_distribution(Complex64::new(0.6, 0.8), 8).unwrap();
        assert!((p[0] - (-1.0f64).exp()).abs() < 1e-15);
        assert!((p[0] - 0.3679).abs() < 1e-4);
    }

    #[test]
    fn cutoff_extends_for_large_displacement() {
        let alpha = Complex64::new(10.0, 0.0);
        let p = displaced_fock_distribution(alpha, 4).unwrap();
        assert!(p.len() > 100);
        assert!((1.0 - p.iter().sum::<f64>()).abs() < MASS_TOLERANCE);
        // mean photon number is |α|²
        let mean: f64 = p.iter().enumerate().map(|(n, v)| n as f64 * v).sum();
        assert!((mean - 100.0).abs() < 1e-6);
    }

    #[test]
    fn very_large_displacement_does_not_underflow() {
        let p = displaced_fock_distribution(Complex64::new(40.0, 0.0), 64).unwrap();
        assert!((1.0 - p.iter().sum::<f64>()).abs() < MASS_TOLERANCE);
    }

    #[test]
    fn rsb_point_masses() {
        assert_eq!(rsb_probability(&[1.0, 0.0]).unwrap(), 1.0);
        assert!(rsb_probability(&[0.0, 1.0]).unwrap().abs() < 1e-15);
    }

    #[test]
    fn rsb_rejects_unnormalized() {
        assert!(rsb_probability(&[0.5, 0.4]).is_err());
        assert!(rsb_probability(&[]).is_err());
        assert!(rsb_probability(&[1.1, -0.1]).is_err());
        assert!(rsb_probability(&[0.5, 0.5 - 1e-7]).is_ok());
    }

    #[test]
    fn small_error_approximation() {
        let x: f64 = 0.05;
        let p = ideal_probability(Complex64::new(x.sqrt(), 0.0), 64).unwrap();
        assert!((p - 0.95).abs() < 2.0 * x * x, "{p}");
    }

    #[test]
    fn small_error_residual_bounded() {
        // |P↓ - (1 - x)| / x² stays bounded as x → 0
        let mut ratios = Vec::new();
        for k in 1..=8 {
            let x = 0.3 / 2f64.powi(k);
            let p = ideal_probability(Complex64::new(0.0, x.sqrt()), 64).unwrap();
            ratios.push((p - (1.0 - x)).abs() / (x * x));
        }
        assert!(ratios.iter().all(|&r| r < 1.0), "{ratios:?}");
        let spread = ratios.last().unwrap() / ratios[0];
        assert!(spread > 0.5 && spread < 2.0, "{ratios:?}");
    }

    #[test]
    fn oracle_mode() {
        let mut s = substream(0, StreamKey::readout(0, 0, 0));
        let v = measure_fidelity(Complex64::new(0.0, 0.0), &ReadoutModel::oracle(), &mut s).unwrap();
        assert_eq!(v, 1.0);
    }

    #[test]
    fn many_shots_binomial() {
        let mut s = substream(11, StreamKey::readout(0, 0, 0));
        let n = 1_000_000u32;
        let v = sample_shots(0.9, Shots::Count(n), &mut s).unwrap();
        let sigma = (0.9f64 * 0.1 / n as f64).sqrt();
        assert!((v - 0.9).abs() < 4.0 * sigma, "{v}");
    }

    #[test]
    fn single_shot_variance() {
        let p = 0.7;
        let reps = 40_000;
        let vals: Vec<f64> = (0..reps)
            .map(|m| sample_shots(p, Shots::Count(1), &mut substream(12, StreamKey::readout(0, 0, m))).unwrap())
            .collect();
        let mean = vals.iter().sum::<f64>() / reps as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1) as f64;
        let target = p * (1.0 - p);
        // var of a Bernoulli sample variance is about (p(1-p))(1-4p(1-p))/n
        let se = (target * (1.0 - 4.0 * target) / reps as f64).sqrt();
        assert!((var - target).abs() < 4.0 * se + 1e-4, "{var}");
    }

    #[test]
    fn shots_text_forms() {
        assert_eq!("oracle".parse::<Shots>().unwrap(), Shots::Oracle);
        assert_eq!("250".parse::<Shots>().unwrap(), Shots::Count(250));
        assert!("0".parse::<Shots>().is_err());
        assert!("many".parse::<Shots>().is_err());
        assert_eq!(Shots::Count(7).to_string(), "7");
        let j: Shots = serde_json::from_str("100").unwrap();
        assert_eq!(j, Shots::Count(100));
        let j: Shots = serde_json::from_str("\"oracle\"").unwrap();
        assert_eq!(j, Shots::Oracle);
        assert!(serde_json::from_str::<Shots>("-3").is_err());
    }

    #[test]
    fn readout_model_guard() {
        assert!(ReadoutModel::new(0, Shots::Oracle).is_err());
        assert!(displaced_fock_distribution(Complex64::new(0.1, 0.0), 0).is_err());
    }

    proptest! {
        #[test]
        fn normalized_for_any_alpha(re in -6.0f64..6.0, im in -6.0f64..6.0, n_max in 1usize..80) {
            let p = displaced_fock_distribution(Complex64::new(re, im), n_max).unwrap();
            prop_assert!(p.len() > n_max);
            prop_assert!((1.0 - p.iter().sum::<f64>()).abs() < MASS_TOLERANCE);
            let pd = rsb_probability(&p).unwrap();
            prop_assert!((-1e-12..=1.0 + 1e-12).contains(&pd));
        }
    }
}
