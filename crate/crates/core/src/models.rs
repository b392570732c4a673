//! Closed-form decay models, decay fitting, AIC model selection, parameter
//! inversion and calibration of the dephasing variance constant.

use serde::{Deserialize, Serialize};

use crate::error::{BrbError, Result};
use crate::noise::{Correlation, NoiseKind, NoiseSpec};
use crate::protocol::{DrivePhysics, ExperimentPlan};
use crate::sim::{self, FidelityDataset, LengthSummary, RunOptions, SimModel};
use crate::stats::GammaParams;

pub const C_MARKOVIAN: f64 = 0.071;
pub const C_DC: f64 = 0.572;
/// Default small-error fit window, max η·L.
pub const DEFAULT_WINDOW: f64 = 1.5;
/// ΔAIC below which two candidates are reported as ambiguous.
pub const AMBIGUITY_THRESHOLD: f64 = 2.0;

const C_RANGE: (f64, f64) = (0.02, 2.0);
const MAX_CLASSIFY_RESIDUAL: f64 = 0.9;
const GOLDEN_ITERATIONS: usize = 300;

/// Shape of the mean decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelFamily {
    /// `1/(1 + ηL)`: heating, amplitude and phase noise.
    Heating,
    /// `1/(1 + (ηL)³)`.
    Dephasing,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 2] = [ModelFamily::Heating, ModelFamily::Dephasing];

    pub fn of(kind: NoiseKind) -> Self {
        match kind {
            NoiseKind::Dephasing => ModelFamily::Dephasing,
            _ => ModelFamily::Heating,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            ModelFamily::Heating => "heating",
            ModelFamily::Dephasing => "dephasing",
        }
    }

    fn x(&self, eta: f64, l: f64) -> f64 {
        match self {
            ModelFamily::Heating => eta * l,
            ModelFamily::Dephasing => (eta * l).powi(3),
        }
    }

    pub fn mean(&self, eta: f64, l: f64) -> f64 {
        1.0 / (1.0 + self.x(eta, l))
    }

    /// ∂E/∂η.
    fn slope(&self, eta: f64, l: f64) -> f64 {
        let d = 1.0 + self.x(eta, l);
        match self {
            ModelFamily::Heating => -l / (d * d),
            ModelFamily::Dephasing => -3.0 * eta * eta * l.powi(3) / (d * d),
        }
    }
}

/// A Table-1 style model: decay rate and, for dephasing, the variance scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticalModel {
    pub kind: NoiseKind,
    pub eta: f64,
    pub correlation_constant: Option<f64>,
}

impl AnalyticalModel {
    pub fn new(kind: NoiseKind, eta: f64, correlation_constant: Option<f64>) -> Result<Self> {
        check_nonneg("η", eta)?;
        if let Some(c) = correlation_constant {
            if kind != NoiseKind::Dephasing {
                return Err(BrbError::invalid("a correlation constant only applies to dephasing"));
            }
            if !(c > 0.0 && c <= 1.0) {
                return Err(BrbError::invalid(format!("C must lie in (0, 1], got {c}")));
            }
        }
        Ok(Self { kind, eta, correlation_constant })
    }

    pub fn mean(&self, l: f64) -> f64 {
        mean_model(self.kind, self.eta, l)
    }

    /// Dephasing variance at `l`; `None` without a correlation constant.
    pub fn variance(&self, l: f64) -> Option<f64> {
        self.correlation_constant.map(|c| variance_model_dephasing(self.mean(l), c))
    }
}

/// Mean noise-averaged fidelity at length L.
pub fn mean_model(kind: NoiseKind, eta: f64, l: f64) -> f64 {
    ModelFamily::of(kind).mean(eta, l)
}

/// `V = C·E(1-E)²/(2-E)`.
pub fn variance_model_dephasing(e: f64, c: f64) -> f64 {
    c * e * (1.0 - e).powi(2) / (2.0 - e)
}

/// Gamma parameters of the dephasing distribution:
/// `a = E(2-E)/(C(1-E)²)`, `b = C(1-E)²/(2-E)`.
pub fn dephasing_gamma(e: f64, c: f64) -> Result<GammaParams> {
    if !(e > 0.0 && e < 1.0) {
        return Err(BrbError::invalid(format!("E must lie in (0, 1), got {e}")));
    }
    let b = c * (1.0 - e).powi(2) / (2.0 - e);
    GammaParams::new(e / b, b)
}

fn check_pos(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(BrbError::invalid(format!("{name} must be positive, got {v}")))
    }
}

fn check_nonneg(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(BrbError::invalid(format!("{name} must be non-negative, got {v}")))
    }
}

/// `η_h = 2γ_h/Ω`.
pub fn eta_heating(rate: f64, rabi_rate: f64) -> Result<f64> {
    check_nonneg("heating rate", rate)?;
    check_pos("Ω", rabi_rate)?;
    Ok(2.0 * rate / rabi_rate)
}

/// `η_d = (4|α0|σ_δ²/(3Ω²))^{1/3}`.
pub fn eta_dephasing(sigma: f64, step_magnitude: f64, rabi_rate: f64) -> Result<f64> {
    check_nonneg("σ_δ", sigma)?;
    check_pos("|α0|", step_magnitude)?;
    check_pos("Ω", rabi_rate)?;
    Ok((4.0 * step_magnitude * sigma * sigma / (3.0 * rabi_rate * rabi_rate)).cbrt())
}

/// `η = |α0|σ_Ω²`.
pub fn eta_amplitude(sigma: f64, step_magnitude: f64) -> Result<f64> {
    check_nonneg("σ_Ω", sigma)?;
    check_pos("|α0|", step_magnitude)?;
    Ok(step_magnitude * sigma * sigma)
}

/// `η = |α0|σ_φ²`.
pub fn eta_phase(sigma: f64, step_magnitude: f64) -> Result<f64> {
    check_nonneg("σ_φ", sigma)?;
    check_pos("|α0|", step_magnitude)?;
    Ok(step_magnitude * sigma * sigma)
}

/// η for a noise spec under `drive`. Heating σ is the per-step kick size.
pub fn eta_for(spec: &NoiseSpec, drive: &DrivePhysics) -> Result<f64> {
    match spec.kind {
        NoiseKind::Heating => {
            let rate = spec.sigma * spec.sigma / drive.step_duration();
            eta_heating(rate, drive.rabi_rate())
        }
        NoiseKind::Dephasing => eta_dephasing(spec.sigma, drive.step_magnitude(), drive.rabi_rate()),
        NoiseKind::Amplitude => eta_amplitude(spec.sigma, drive.step_magnitude()),
        NoiseKind::PhaseJitter => eta_phase(spec.sigma, drive.step_magnitude()),
    }
}

/// Physical noise strength for a decay rate: γ_h (quanta/s) for heating,
/// σ_δ (rad/s), σ_Ω or σ_φ otherwise.
pub fn invert_eta(kind: NoiseKind, eta: f64, drive: &DrivePhysics) -> Result<f64> {
    check_pos("η", eta)?;
    let omega = drive.rabi_rate();
    let a0 = drive.step_magnitude();
    Ok(match kind {
        NoiseKind::Heating => eta * omega / 2.0,
        NoiseKind::Dephasing => (3.0 * omega * omega * eta.powi(3) / (4.0 * a0)).sqrt(),
        NoiseKind::Amplitude | NoiseKind::PhaseJitter => (eta / a0).sqrt(),
    })
}

/// The noise spec that produces decay rate `eta` for `kind`.
pub fn noise_for_eta(kind: NoiseKind, eta: f64, correlation: Correlation, drive: &DrivePhysics) -> Result<NoiseSpec> {
    let p = invert_eta(kind, eta, drive)?;
    match kind {
        NoiseKind::Heating => NoiseSpec::heating_from_rate(p, drive.step_duration()),
        _ => NoiseSpec::new(kind, p, correlation),
    }
}

/// Result of a single-parameter decay fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub eta: f64,
    /// Linearized standard error of η̂.
    pub eta_stderr: f64,
    pub rss: f64,
    pub points: usize,
    pub iterations: usize,
}

fn rss(form: ModelFamily, eta: f64, l: &[f64], y: &[f64], w: &[f64]) -> f64 {
    l.iter()
        .zip(y)
        .zip(w)
        .map(|((&l, &y), &w)| w * (y - form.mean(eta, l)).powi(2))
        .sum()
}

/// Least-squares η for `means` against `form`: log-grid bracket, golden
/// section, then Gauss–Newton polish.
pub fn fit_decay(lengths: &[f64], means: &[f64], form: ModelFamily, weights: Option<&[f64]>) -> Result<DecayFit> {
    if lengths.len() != means.len() {
        return Err(BrbError::invalid("lengths and means differ in size"));
    }
    let mut distinct: Vec<f64> = lengths.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(BrbError::invalid(format!(
            "fitting needs at least 3 distinct lengths, got {}",
            distinct.len()
        )));
    }
    if let Some(l) = lengths.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(BrbError::invalid(format!("invalid length {l}")));
    }
    if let Some(y) = means.iter().find(|y| !(y.is_finite() && **y > 0.0 && **y <= 1.5)) {
        return Err(BrbError::invalid(format!("mean fidelity {y} outside (0, 1.5]")));
    }
    let ones = vec![1.0; lengths.len()];
    let w = match weights {
        Some(w) if w.len() != lengths.len() => return Err(BrbError::invalid("weights differ in size")),
        Some(w) if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) => {
            return Err(BrbError::invalid("weights must be non-negative"));
        }
        Some(w) => w,
        None => &ones,
    };
    let f = |eta: f64| rss(form, eta, lengths, means, w);

    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..=180).map(|i| 10f64.powf(-6.0 + i as f64 / 20.0)))
        .collect();
    let vals: Vec<f64> = grid.iter().map(|&e| f(e)).collect();
    let best = vals
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    if best == grid.len() - 1 {
        return Err(BrbError::FitFailure(format!(
            "{} fit: minimum at the bracket edge η = {} (RSS {})",
            form.as_str(),
            grid[best],
            vals[best]
        )));
    }
    let (mut a, mut b) = (grid[best.saturating_sub(1)], grid[best + 1]);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while b - a > 1e-13 * (a.abs() + b.abs()) + 1e-300 {
        if iterations == GOLDEN_ITERATIONS {
            return Err(BrbError::FitFailure(format!(
                "{} fit did not converge: bracket [{a}, {b}] after {iterations} iterations",
                form.as_str()
            )));
        }
        iterations += 1;
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    let mut eta = 0.5 * (a + b);
    let mut best_rss = f(eta);
    if vals[0] <= best_rss {
        eta = 0.0;
        best_rss = vals[0];
    }
    // Gauss–Newton polish
    for _ in 0..20 {
        if eta <= 0.0 {
            break;
        }
        let (mut num, mut den) = (0.0, 0.0);
        for ((&l, &y), &w) in lengths.iter().zip(means).zip(w) {
            let s = form.slope(eta, l);
            num += w * (y - form.mean(eta, l)) * s;
            den += w * s * s;
        }
        if den <= 0.0 {
            break;
        }
        let next = eta + num / den;
        let r = f(next);
        if !(next > 0.0 && r <= best_rss) {
            break;
        }
        let done = (next - eta).abs() <= 1e-15 * eta;
        eta = next;
        best_rss = r;
        if done {
            break;
        }
    }
    let n = lengths.len();
    let jtj: f64 = lengths
        .iter()
        .zip(w)
        .map(|(&l, &w)| w * form.slope(eta, l).powi(2))
        .sum();
    let s2 = best_rss / (n - 1) as f64;
    let eta_stderr = if jtj > 0.0 { (s2 / jtj).sqrt() } else { f64::INFINITY };
    Ok(DecayFit { eta, eta_stderr, rss: best_rss, points: n, iterations })
}

/// `AIC = n·ln(RSS/n) + 2k`. A perfect fit gives −∞.
pub fn aic(rss: f64, n: usize, k: usize) -> Result<f64> {
    if n == 0 {
        return Err(BrbError::invalid("AIC needs at least one point"));
    }
    if !(rss.is_finite() && rss >= 0.0) {
        return Err(BrbError::invalid(format!("RSS must be non-negative, got {rss}")));
    }
    if rss == 0.0 {
        log::warn!("RSS is exactly zero; AIC is -inf");
        return Ok(f64::NEG_INFINITY);
    }
    Ok(n as f64 * (rss / n as f64).ln() + 2.0 * k as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationClass {
    Dc,
    Markovian,
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFit {
    pub class: CorrelationClass,
    /// Least-squares C; `None` when there is no decay to fit.
    pub c_hat: Option<f64>,
    /// `‖V − Ĉg‖ / ‖V‖`.
    pub residual: Option<f64>,
    pub points: usize,
}

/// Fits `V = C·E(1-E)²/(2-E)` through the origin and picks the nearer of
/// the Markovian and DC constants in log space.
pub fn classify_correlation(means: &[f64], variances: &[f64]) -> Result<CorrelationFit> {
    if means.len() != variances.len() {
        return Err(BrbError::invalid("means and variances differ in size"));
    }
    let pairs: Vec<(f64, f64)> = means
        .iter()
        .zip(variances)
        .filter(|(e, _)| **e > 0.0 && **e < 1.0 - 1e-3)
        .map(|(&e, &v)| (variance_model_dephasing(e, 1.0), v))
        .collect();
    let indeterminate = |c_hat, residual, points| CorrelationFit {
        class: CorrelationClass::Indeterminate,
        c_hat,
        residual,
        points,
    };
    let gg: f64 = pairs.iter().map(|(g, _)| g * g).sum();
    let vv: f64 = pairs.iter().map(|(_, v)| v * v).sum();
    if pairs.is_empty() || gg <= 0.0 {
        return Ok(indeterminate(None, None, pairs.len()));
    }
    let c = pairs.iter().map(|(g, v)| g * v).sum::<f64>() / gg;
    let res = pairs.iter().map(|(g, v)| (v - c * g).powi(2)).sum::<f64>();
    let residual = if vv > 0.0 { Some((res / vv).sqrt()) } else { None };
    let n = pairs.len();
    if !(C_RANGE.0..=C_RANGE.1).contains(&c) || residual.is_none_or(|r| r > MAX_CLASSIFY_RESIDUAL) {
        return Ok(indeterminate(Some(c), residual, n));
    }
    let boundary = (C_MARKOVIAN * C_DC).sqrt();
    let class = if c >= boundary { CorrelationClass::Dc } else { CorrelationClass::Markovian };
    Ok(CorrelationFit { class, c_hat: Some(c), residual, points: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    pub eta: f64,
    /// ηL range covered by the length grid.
    pub eta_l_range: (f64, f64),
    pub lengths: usize,
    pub randomizations: usize,
    pub noise_averages: usize,
    pub model: SimModel,
    pub seed: u64,
    pub budget: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            eta: 0.1,
            eta_l_range: (0.15, 1.5),
            lengths: 10,
            randomizations: 100,
            noise_averages: 500,
            model: SimModel::FirstOrder,
            seed: 0,
            budget: sim::DEFAULT_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub correlation: Correlation,
    pub c_hat: f64,
    pub residual: f64,
    /// Lengths actually simulated.
    pub lengths: Vec<f64>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// True when the budget forced longer lengths to be dropped.
    pub partial: bool,
}

/// Simulates dephasing at small η across an L grid and fits C.
pub fn calibrate_c(
    kind: NoiseKind,
    correlation: Correlation,
    drive: &DrivePhysics,
    options: &CalibrationOptions,
) -> Result<Calibration> {
    if kind != NoiseKind::Dephasing {
        return Err(BrbError::invalid(format!(
            "the variance model is defined for dephasing only, not {}",
            kind.as_str()
        )));
    }
    let (lo, hi) = options.eta_l_range;
    if !(lo > 0.0 && hi > lo) || options.lengths < 3 {
        return Err(BrbError::invalid("calibration needs at least 3 lengths over a positive ηL range"));
    }
    let a0 = drive.step_magnitude();
    let mut steps: Vec<usize> = (0..options.lengths)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (options.lengths - 1) as f64;
            ((x / options.eta / a0).round() as usize).max(1)
        })
        .collect();
    steps.dedup();
    let mut plan = ExperimentPlan::new(*drive, steps, options.randomizations, options.noise_averages, options.seed)?;
    let mut partial = false;
    while plan.cost() > options.budget {
        if plan.lengths.len() <= 3 {
            return Err(BrbError::BudgetExceeded { requested: plan.cost(), budget: options.budget });
        }
        plan.lengths.pop();
        partial = true;
    }
    if partial {
        log::warn!("calibration budget allows only {} lengths", plan.lengths.len());
    }
    let noise = noise_for_eta(kind, options.eta, correlation, drive)?;
    let run = RunOptions::default().with_model(options.model).with_budget(options.budget);
    let ds = sim::run_brb(&plan, &noise, &run)?;
    let summaries = circuit_variances(&ds);
    let means: Vec<f64> = summaries.iter().map(|s| s.0.mean).collect();
    let variances: Vec<f64> = summaries.iter().map(|s| s.1).collect();
    let fit = classify_correlation(&means, &variances)?;
    let c_hat = fit
        .c_hat
        .ok_or_else(|| BrbError::FitFailure("calibration data show no decay".into()))?;
    Ok(Calibration {
        correlation,
        c_hat,
        residual: fit.residual.unwrap_or(f64::NAN),
        lengths: summaries.iter().map(|s| s.0.length).collect(),
        means,
        variances,
        partial,
    })
}

/// Per-length summaries with the across-circuit variance corrected for the
/// finite-M scatter of each F̃.
fn circuit_variances(ds: &FidelityDataset) -> Vec<(LengthSummary, f64)> {
    ds.summaries()
        .into_iter()
        .map(|s| {
            let proj = projection_variance(ds, s.length);
            (s, (s.variance - proj).max(0.0))
        })
        .collect()
}

/// Mean squared standard error of F̃ over circuits at `length`.
fn projection_variance(ds: &FidelityDataset, length: f64) -> f64 {
    let se: Vec<f64> = ds
        .records
        .iter()
        .filter(|r| r.length == length)
        .map(|r| r.fidelity_stderr * r.fidelity_stderr)
        .collect();
    if se.is_empty() { 0.0 } else { se.iter().sum::<f64>() / se.len() as f64 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectOptions {
    /// Max η̂·L of points kept in the fit; `None` fits every length.
    pub window: Option<f64>,
    /// Weight points by 1/stderr² of their mean.
    pub weighted: bool,
    /// Explicit normalization constant, used when the data have no L = 0.
    pub spam_scale: Option<f64>,
    /// Max decay `1 - E` below which the data count as flat.
    pub flat_tolerance: f64,
    /// Circuit/projection variance ratio above which a 1/(1+ηL) decay is
    /// attributed to amplitude or phase noise rather than heating.
    pub sequence_variance_ratio: f64,
    pub drive: Option<DrivePhysics>,
}

impl Default for SelectOptions {
    fn default() -> Self {
        Self {
            window: Some(DEFAULT_WINDOW),
            weighted: false,
            spam_scale: None,
            flat_tolerance: 1e-3,
            sequence_variance_ratio: 3.0,
            drive: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFit {
    pub family: ModelFamily,
    pub eta: f64,
    pub eta_stderr: f64,
    pub rss: f64,
    pub aic: f64,
    pub points: usize,
}

/// Which process a 1/(1+ηL) decay most likely comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LinearKind {
    Heating,
    AmplitudeOrPhase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalParameter {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub length: f64,
    pub circuits: usize,
    pub mean: f64,
    pub normalized_mean: f64,
    pub stderr: f64,
    pub variance: f64,
    /// Variance after removing finite-M scatter and the L = 0 baseline.
    pub offset_variance: f64,
    pub in_window: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub scale: f64,
    pub baseline_variance: f64,
    pub source: NormalizationSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormalizationSource {
    ZeroLength,
    SpamScale,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub candidates: Vec<CandidateFit>,
    /// Lowest-AIC family; `None` for flat data.
    pub selected: Option<ModelFamily>,
    pub ambiguous: bool,
    pub indeterminate: bool,
    pub linear_kind: Option<LinearKind>,
    pub physical: Vec<PhysicalParameter>,
    pub correlation: Option<CorrelationFit>,
    pub window: Option<f64>,
    pub window_lengths: Vec<f64>,
    pub weighted: bool,
    pub normalization: Normalization,
    pub points: Vec<PointSummary>,
    pub warnings: Vec<String>,
}

impl FitReport {
    pub fn candidate(&self, family: ModelFamily) -> Option<&CandidateFit> {
        self.candidates.iter().find(|c| c.family == family)
    }

    pub fn selected_fit(&self) -> Option<&CandidateFit> {
        self.selected.and_then(|f| self.candidate(f))
    }
}

fn fit_candidates(points: &[PointSummary], use_point: &[bool], weighted: bool) -> Result<Vec<CandidateFit>> {
    let chosen: Vec<&PointSummary> = points.iter().zip(use_point).filter(|(_, u)| **u).map(|(p, _)| p).collect();
    let l: Vec<f64> = chosen.iter().map(|p| p.length).collect();
    let y: Vec<f64> = chosen.iter().map(|p| p.normalized_mean).collect();
    let w: Option<Vec<f64>> = weighted.then(|| {
        chosen
            .iter()
            .map(|p| if p.stderr > 0.0 { 1.0 / (p.stderr * p.stderr) } else { 0.0 })
            .collect()
    });
    ModelFamily::ALL
        .iter()
        .map(|&family| {
            let fit = fit_decay(&l, &y, family, w.as_deref())?;
            Ok(CandidateFit {
                family,
                eta: fit.eta,
                eta_stderr: fit.eta_stderr,
                rss: fit.rss,
                aic: aic(fit.rss, fit.points, 1)?,
                points: fit.points,
            })
        })
        .collect()
}

fn best(cands: &[CandidateFit]) -> CandidateFit {
    *cands
        .iter()
        .min_by(|a, b| a.aic.total_cmp(&b.aic).then(a.rss.total_cmp(&b.rss)))
        .expect("two candidates")
}

fn window_mask(points: &[PointSummary], eta: f64, window: f64) -> Vec<bool> {
    let mut mask: Vec<bool> = points.iter().map(|p| eta * p.length <= window).collect();
    // keep at least three lengths, shortest first
    let mut i = 0;
    while mask.iter().filter(|m| **m).count() < 3 && i < points.len() {
        mask[i] = true;
        i += 1;
    }
    mask
}

/// Fits both decay families, selects by AIC, inverts η and classifies the
/// correlation when dephasing wins.
pub fn select_model(dataset: &FidelityDataset, options: &SelectOptions) -> Result<FitReport> {
    dataset.validate()?;
    let summaries = circuit_variances(dataset);
    let mut warnings = Vec::new();
    let zero = summaries.iter().find(|(s, _)| s.length == 0.0);
    let normalization = match (zero, options.spam_scale) {
        (Some((s, v)), _) if s.mean > 0.0 => Normalization {
            scale: s.mean,
            baseline_variance: *v,
            source: NormalizationSource::ZeroLength,
        },
        (_, Some(scale)) => {
            check_pos("SPAM scale", scale)?;
            Normalization { scale, baseline_variance: 0.0, source: NormalizationSource::SpamScale }
        }
        _ => Normalization { scale: 1.0, baseline_variance: 0.0, source: NormalizationSource::None },
    };
    let mut points: Vec<PointSummary> = summaries
        .iter()
        .map(|(s, v)| PointSummary {
            length: s.length,
            circuits: s.circuits,
            mean: s.mean,
            normalized_mean: s.mean / normalization.scale,
            stderr: s.stderr / normalization.scale,
            variance: s.variance,
            offset_variance: (v - normalization.baseline_variance).max(0.0),
            in_window: true,
        })
        .collect();
    if points.len() < 3 {
        return Err(BrbError::invalid(format!(
            "model selection needs at least 3 lengths, got {}",
            points.len()
        )));
    }
    let flat = points.iter().all(|p| 1.0 - p.normalized_mean < options.flat_tolerance);

    let mut mask = vec![true; points.len()];
    let mut candidates = fit_candidates(&points, &mask, options.weighted)?;
    if let Some(window) = options.window {
        for _ in 0..10 {
            let next = window_mask(&points, best(&candidates).eta, window);
            if next == mask {
                break;
            }
            mask = next;
            candidates = fit_candidates(&points, &mask, options.weighted)?;
        }
    }
    for (p, m) in points.iter_mut().zip(&mask) {
        p.in_window = *m;
    }
    let window_lengths: Vec<f64> = points.iter().filter(|p| p.in_window).map(|p| p.length).collect();

    let mut report = FitReport {
        candidates: candidates.clone(),
        selected: None,
        ambiguous: false,
        indeterminate: flat,
        linear_kind: None,
        physical: Vec::new(),
        correlation: None,
        window: options.window,
        window_lengths,
        weighted: options.weighted,
        normalization,
        points,
        warnings: Vec::new(),
    };
    if flat {
        warnings.push("no decay within tolerance; model selection is indeterminate".into());
        report.warnings = warnings;
        return Ok(report);
    }
    let chosen = best(&candidates);
    let other = candidates.iter().find(|c| c.family != chosen.family).expect("two candidates");
    report.selected = Some(chosen.family);
    report.ambiguous = (other.aic - chosen.aic).abs() < AMBIGUITY_THRESHOLD
        || (other.aic.is_infinite() && chosen.aic.is_infinite());
    if report.ambiguous {
        warnings.push(format!(
            "ΔAIC = {:.3} is below {AMBIGUITY_THRESHOLD}; both models remain plausible",
            other.aic - chosen.aic
        ));
    }

    match chosen.family {
        ModelFamily::Heating => {
            report.linear_kind = linear_kind(dataset, &report.points, options.sequence_variance_ratio);
        }
        ModelFamily::Dephasing => {
            let (e, v): (Vec<f64>, Vec<f64>) = report
                .points
                .iter()
                .filter(|p| p.in_window)
                .map(|p| (p.normalized_mean, p.offset_variance))
                .unzip();
            report.correlation = Some(classify_correlation(&e, &v)?);
        }
    }
    if let Some(drive) = options.drive.as_ref().filter(|_| chosen.eta > 0.0) {
        report.physical = physical_parameters(chosen.family, chosen.eta, drive)?;
    }
    report.warnings = warnings;
    Ok(report)
}

fn physical_parameters(family: ModelFamily, eta: f64, drive: &DrivePhysics) -> Result<Vec<PhysicalParameter>> {
    let p = |name: &str, value: f64, unit: &str| PhysicalParameter { name: name.into(), value, unit: unit.into() };
    Ok(match family {
        ModelFamily::Heating => vec![
            p("heating_rate", invert_eta(NoiseKind::Heating, eta, drive)?, "quanta/s"),
            p("sigma_amplitude", invert_eta(NoiseKind::Amplitude, eta, drive)?, "fraction"),
            p("sigma_phase", invert_eta(NoiseKind::PhaseJitter, eta, drive)?, "rad"),
        ],
        ModelFamily::Dephasing => {
            let s = invert_eta(NoiseKind::Dephasing, eta, drive)?;
            vec![
                p("sigma_dephasing", s, "rad/s"),
                p("sigma_dephasing_hz", s / std::f64::consts::TAU, "Hz"),
            ]
        }
    })
}

/// Compares the circuit-to-circuit variance with the finite-M scatter at the
/// longest windowed length.
fn linear_kind(ds: &FidelityDataset, points: &[PointSummary], ratio: f64) -> Option<LinearKind> {
    let p = points.iter().filter(|p| p.in_window && p.length > 0.0).last()?;
    let proj = projection_variance(ds, p.length);
    if proj <= 0.0 {
        return None;
    }
    Some(if p.variance / proj > ratio { LinearKind::AmplitudeOrPhase } else { LinearKind::Heating })
}
