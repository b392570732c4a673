//! Gamma-distribution machinery, moment summaries, goodness of fit and
//! bootstrap variance curves.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Gamma};
use statrs::function::gamma::ln_gamma;

use crate::error::{BrbError, Result};
use crate::rng::{Purpose, StreamKey, substream};

/// `V ≤ DEGENERATE_RATIO·E²` is treated as a point mass.
const DEGENERATE_RATIO: f64 = 1e-15;

/// Γ(a, b) with shape `a` and scale `b`: mean `a·b`, variance `a·b²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub shape: f64,
    pub scale: f64,
}

impl GammaParams {
    pub fn new(shape: f64, scale: f64) -> Result<Self> {
        if !(shape.is_finite() && shape > 0.0 && scale.is_finite() && scale > 0.0) {
            return Err(BrbError::invalid(format!(
                "gamma parameters must be positive, got a = {shape}, b = {scale}"
            )));
        }
        Ok(Self { shape, scale })
    }

    pub fn mean(&self) -> f64 {
        self.shape * self.scale
    }

    pub fn variance(&self) -> f64 {
        self.shape * self.scale * self.scale
    }

    /// `2/√a`.
    pub fn skewness(&self) -> f64 {
        2.0 / self.shape.sqrt()
    }

    fn dist(&self) -> Gamma {
        Gamma::new(self.shape, 1.0 / self.scale).expect("validated parameters")
    }
}

/// Outcome of moment matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum GammaFit {
    Gamma(GammaParams),
    /// No spread: all mass at the mean.
    PointMass { value: f64 },
}

/// `a = E²/V`, `b = V/E`.
pub fn gamma_from_moments(mean: f64, variance: f64) -> Result<GammaFit> {
    if !(mean.is_finite() && mean > 0.0) {
        return Err(BrbError::invalid(format!("mean must be positive, got {mean}")));
    }
    if !(variance.is_finite() && variance >= 0.0) {
        return Err(BrbError::invalid(format!("variance must be non-negative, got {variance}")));
    }
    if variance <= DEGENERATE_RATIO * mean * mean {
        return Ok(GammaFit::PointMass { value: mean });
    }
    GammaParams::new(mean * mean / variance, variance / mean).map(GammaFit::Gamma)
}

/// `μ_k = b^k Γ(a+k)/Γ(a)`. Small k use the rising factorial directly,
/// which stays accurate for very large shapes.
pub fn gamma_moment(params: &GammaParams, k: u32) -> f64 {
    if k <= 32 {
        return (0..k).map(|i| params.scale * (params.shape + i as f64)).product();
    }
    let k = k as f64;
    (k * params.scale.ln() + ln_gamma(params.shape + k) - ln_gamma(params.shape)).exp()
}

pub fn gamma_pdf(params: &GammaParams, x: f64) -> f64 {
    if x < 0.0 {
        return 0.0;
    }
    if x == 0.0 {
        return match params.shape.partial_cmp(&1.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => 1.0 / params.scale,
            _ => 0.0,
        };
    }
    params.dist().pdf(x)
}

pub fn gamma_cdf(params: &GammaParams, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    params.dist().cdf(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentSummary {
    pub mean: f64,
    /// Unbiased; 0 for a single value.
    pub variance: f64,
    /// `m3/m2^{3/2}`; 0 when all values are equal.
    pub skewness: f64,
    pub count: usize,
}

pub fn moment_summary(values: &[f64]) -> Result<MomentSummary> {
    if values.is_empty() {
        return Err(BrbError::invalid("moment summary of an empty sample"));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(MomentSummary { mean: values[0], variance: 0.0, skewness: 0.0, count: values.len() });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (m2, m3) = values.iter().fold((0.0, 0.0), |(a, b), &x| {
        let d = x - mean;
        (a + d * d, b + d * d * d)
    });
    let variance = if values.len() > 1 { m2 / (n - 1.0) } else { 0.0 };
    let skewness = if m2 > 0.0 { (m3 / n) / (m2 / n).powf(1.5) } else { 0.0 };
    Ok(MomentSummary { mean, variance, skewness, count: values.len() })
}

/// One-sample Kolmogorov–Smirnov distance to `cdf`.
pub fn ks_statistic(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Asymptotic critical value with the Stephens small-sample correction.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    let c = (-(0.5 * alpha).ln() / 2.0).sqrt();
    let s = (n as f64).sqrt();
    c / (s + 0.12 + 0.11 / s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub passed: bool,
    pub fit: GammaFit,
}

/// KS comparison of a sample against Γ(E²/V, V/E) built from its own moments.
pub fn ks_gamma_test(values: &[f64], alpha: f64) -> Result<KsOutcome> {
    let m = moment_summary(values)?;
    let fit = gamma_from_moments(m.mean, m.variance)?;
    let critical = ks_critical_value(values.len(), alpha);
    let statistic = match &fit {
        GammaFit::Gamma(p) => ks_statistic(values, |x| gamma_cdf(p, x)),
        GammaFit::PointMass { .. } => 0.0,
    };
    Ok(KsOutcome { statistic, critical, passed: statistic <= critical, fit })
}

/// How bootstrap subsets are drawn from each circuit's realization pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resampling {
    /// Subsets of M distinct realizations.
    #[default]
    WithoutReplacement,
    WithReplacement,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub resamples: usize,
    pub resampling: Resampling,
    /// Subtracted from every variance, clipping at 0.
    pub baseline: Option<f64>,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self { resamples: 50, resampling: Resampling::default(), baseline: None, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapPoint {
    pub m: usize,
    /// Mean over bootstraps of the across-circuit variance of subset means.
    pub variance: f64,
    /// The per-bootstrap variances.
    pub traces: Vec<f64>,
}

/// Variance of M-realization averages across circuits, as a function of M.
///
/// `samples[c]` is the realization pool of circuit `c`.
pub fn bootstrap_variance_curve(
    samples: &[Vec<f64>],
    m_grid: &[usize],
    options: &BootstrapOptions,
) -> Result<Vec<BootstrapPoint>> {
    if samples.len() < 2 {
        return Err(BrbError::invalid("bootstrap needs at least two circuits"));
    }
    if options.resamples == 0 {
        return Err(BrbError::invalid("bootstrap needs at least one resample"));
    }
    let pool = samples.iter().map(Vec::len).min().unwrap_or(0);
    if let Some(&bad) = m_grid.iter().find(|&&m| m == 0 || m > pool) {
        return Err(BrbError::invalid(format!(
            "bootstrap subset size {bad} outside 1..={pool}"
        )));
    }
    m_grid
        .par_iter()
        .enumerate()
        .map(|(gi, &m)| {
            let traces: Vec<f64> = (0..options.resamples)
                .map(|b| {
                    let means: Vec<f64> = samples
                        .iter()
                        .enumerate()
                        .map(|(c, pool)| {
                            let key = StreamKey::new(Purpose::Bootstrap, gi, b, c);
                            subset_mean(pool, m, options.resampling, &mut substream(options.seed, key))
                        })
                        .collect();
                    let v = moment_summary(&means).map(|s| s.variance).unwrap_or(0.0);
                    match options.baseline {
                        Some(base) => (v - base).max(0.0),
                        None => v,
                    }
                })
                .collect();
            let variance = traces.iter().sum::<f64>() / traces.len() as f64;
            Ok(BootstrapPoint { m, variance, traces })
        })
        .collect()
}

fn subset_mean<R: Rng + ?Sized>(pool: &[f64], m: usize, resampling: Resampling, rng: &mut R) -> f64 {
    let sum: f64 = match resampling {
        Resampling::WithoutReplacement => index::sample(rng, pool.len(), m).iter().map(|i| pool[i]).sum(),
        Resampling::WithReplacement => (0..m).map(|_| pool[rng.random_range(0..pool.len())]).sum(),
    };
    sum / m as f64
}
