//! Parasitic displacements, fidelities and noise-averaged datasets.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{BrbError, Result};
use crate::noise::{NoiseKind, NoiseSpec, NoiseTrace, fill_blocks, fill_kicks};
use crate::protocol::{DisplacementSequence, DrivePhysics, ExperimentPlan};
use crate::readout::{self, ReadoutModel, Shots};
use crate::rng::{StreamKey, Stream, substream};

/// Default cap on Σ J·N·M step evaluations per run.
pub const DEFAULT_BUDGET: u64 = 20_000_000_000;

/// Below this |εΔτ| the segment integral uses its Taylor series.
pub(crate) const SERIES_THRESHOLD: f64 = 0.1;

/// Dephasing dynamics used by the simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimModel {
    /// Closed-form integral of `e^{-iεt} - 1` over each step.
    #[default]
    Exact,
    /// Linearized integrand `-iεt`.
    FirstOrder,
}

/// How a realization's fidelity is read out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    /// `exp(-|α_ε|²)` directly.
    #[default]
    Fidelity,
    /// Red-sideband readout with the plan's shot count.
    Readout,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    pub model: SimModel,
    pub estimator: EstimatorKind,
    pub fock_cutoff: usize,
    pub budget: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            model: SimModel::Exact,
            estimator: EstimatorKind::Fidelity,
            fock_cutoff: readout::DEFAULT_FOCK_CUTOFF,
            budget: DEFAULT_BUDGET,
        }
    }
}

impl RunOptions {
    pub fn with_model(mut self, model: SimModel) -> Self {
        self.model = model;
        self
    }

    pub fn with_estimator(mut self, estimator: EstimatorKind) -> Self {
        self.estimator = estimator;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }
}

/// One noise realization of one circuit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryOutcome {
    pub parasitic_displacement: Complex64,
    pub exact_fidelity: f64,
    pub circuit: usize,
    pub realization: usize,
}

impl TrajectoryOutcome {
    pub fn new(alpha: Complex64, circuit: usize, realization: usize) -> Self {
        Self {
            parasitic_displacement: alpha,
            exact_fidelity: fidelity(alpha),
            circuit,
            realization,
        }
    }
}

/// `F = exp(-|α_ε|²)`.
pub fn fidelity(alpha: Complex64) -> f64 {
    (-alpha.norm_sqr()).exp()
}

/// `α_ε = Σ_j ε_j`.
pub fn parasitic_heating(trace: &NoiseTrace) -> Result<Complex64> {
    Ok(trace.kicks()?.iter().sum())
}

/// `e^{-iθ} - 1` without cancellation.
fn expm1_neg_i(theta: f64) -> Complex64 {
    let s = (0.5 * theta).sin();
    Complex64::new(-2.0 * s * s, -theta.sin())
}

/// `sin(x)/x - 1`.
pub(crate) fn sinc_minus_one(x: f64) -> f64 {
    if x.abs() < SERIES_THRESHOLD {
        sinc_minus_one_series(x)
    } else {
        x.sin() / x - 1.0
    }
}

pub(crate) fn sinc_minus_one_series(x: f64) -> f64 {
    let x2 = x * x;
    // -x²/3! + x⁴/5! - x⁶/7! + x⁸/9! - x¹⁰/11!
    let mut term = -x2 / 6.0;
    let mut sum = term;
    for k in 2..=5 {
        let n = (2 * k) as f64;
        term *= -x2 / (n * (n + 1.0));
        sum += term;
    }
    sum
}

/// `g(x) - 1` where `g(x) = (1 - e^{-ix})/(ix)` is the normalized step
/// integral of `e^{-iεt}` over one step starting at t = 0.
fn step_integral_minus_one(x: f64) -> Complex64 {
    let im = if x == 0.0 {
        0.0
    } else {
        let s = (0.5 * x).sin();
        -2.0 * s * s / x
    };
    Complex64::new(sinc_minus_one(x), im)
}

/// Exact dephasing displacement
/// `α_ε = -i|α0|·Σ_j e^{-iφ_j}·(1/Δτ)∫_{jΔτ}^{(j+1)Δτ} (e^{-iε_j t} - 1) dt`.
pub fn parasitic_dephasing_exact(
    seq: &DisplacementSequence,
    drive: &DrivePhysics,
    trace: &NoiseTrace,
) -> Result<Complex64> {
    seq.check_drive(drive)?;
    let eps = trace.real_values(NoiseKind::Dephasing)?;
    check_len(seq, eps.len())?;
    Ok(dephasing_exact_sum(seq.phase_factors().as_slice(), eps, drive))
}

fn dephasing_exact_sum(factors: &[Complex64], eps: &[f64], drive: &DrivePhysics) -> Complex64 {
    let dt = drive.step_duration();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut j = 0;
    while j < eps.len() {
        let e = eps[j];
        let end = j + eps[j..].iter().take_while(|&&v| v == e).count();
        if e == 0.0 {
            j = end;
            continue;
        }
        let x = e * dt;
        let gm1 = step_integral_minus_one(x);
        let g = gm1 + 1.0;
        let rm1 = expm1_neg_i(x);
        // d = e^{-iεt_j} - 1, advanced step by step without cancellation
        let mut d = expm1_neg_i(e * dt * j as f64);
        for f in &factors[j..end] {
            acc += f * (d * g + gm1);
            d = d * rm1 + d + rm1;
        }
        j = end;
    }
    Complex64::new(0.0, -drive.step_magnitude()) * acc
}

/// First-order dephasing displacement
/// `α_ε = -|α0|·Δτ·Σ_j e^{-iφ_j}·ε_j·(2j+1)/2`.
pub fn parasitic_dephasing_first_order(
    seq: &DisplacementSequence,
    drive: &DrivePhysics,
    trace: &NoiseTrace,
) -> Result<Complex64> {
    seq.check_drive(drive)?;
    let eps = trace.real_values(NoiseKind::Dephasing)?;
    check_len(seq, eps.len())?;
    Ok(dephasing_first_order_sum(seq.phase_factors().as_slice(), eps, drive))
}

fn dephasing_first_order_sum(factors: &[Complex64], eps: &[f64], drive: &DrivePhysics) -> Complex64 {
    let acc: Complex64 = factors
        .iter()
        .zip(eps)
        .enumerate()
        .map(|(j, (f, e))| f * (e * (j as f64 + 0.5)))
        .sum();
    acc * (-drive.step_magnitude() * drive.step_duration())
}

/// Amplitude noise: `α_ε = -i|α0|·Σ_j e^{-iφ_j} ε_{Ω,j}`.
pub fn parasitic_amplitude(seq: &DisplacementSequence, drive: &DrivePhysics, trace: &NoiseTrace) -> Result<Complex64> {
    seq.check_drive(drive)?;
    let eps = trace.real_values(NoiseKind::Amplitude)?;
    check_len(seq, eps.len())?;
    Ok(Complex64::new(0.0, -drive.step_magnitude()) * weighted_sum(&seq.phase_factors(), eps))
}

/// Phase jitter, linearized in ε_φ: `α_ε = -|α0|·Σ_j e^{-iφ_j} ε_{φ,j}`.
pub fn parasitic_phase(seq: &DisplacementSequence, drive: &DrivePhysics, trace: &NoiseTrace) -> Result<Complex64> {
    seq.check_drive(drive)?;
    let eps = trace.real_values(NoiseKind::PhaseJitter)?;
    check_len(seq, eps.len())?;
    Ok(-drive.step_magnitude() * weighted_sum(&seq.phase_factors(), eps))
}

fn weighted_sum(factors: &[Complex64], eps: &[f64]) -> Complex64 {
    factors.iter().zip(eps).map(|(f, e)| f * e).sum()
}

fn check_len(seq: &DisplacementSequence, n: usize) -> Result<()> {
    if seq.steps() != n {
        return Err(BrbError::invalid(format!(
            "noise trace has {n} steps, sequence has {}",
            seq.steps()
        )));
    }
    Ok(())
}

/// Dispatches on the trace kind.
pub fn parasitic_displacement(
    seq: &DisplacementSequence,
    drive: &DrivePhysics,
    trace: &NoiseTrace,
    model: SimModel,
) -> Result<Complex64> {
    match (trace.kind(), model) {
        (NoiseKind::Heating, _) => {
            check_len(seq, trace.len())?;
            parasitic_heating(trace)
        }
        (NoiseKind::Dephasing, SimModel::Exact) => parasitic_dephasing_exact(seq, drive, trace),
        (NoiseKind::Dephasing, SimModel::FirstOrder) => parasitic_dephasing_first_order(seq, drive, trace),
        (NoiseKind::Amplitude, _) => parasitic_amplitude(seq, drive, trace),
        (NoiseKind::PhaseJitter, _) => parasitic_phase(seq, drive, trace),
    }
}

/// How the fidelity column of a dataset was acquired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Acquisition {
    /// `exp(-|α_ε|²)` per realization.
    Exact,
    /// Red-sideband readout, exact probability or finite shots.
    Readout(Shots),
}

impl Acquisition {
    pub fn new(estimator: EstimatorKind, shots: Shots) -> Self {
        match estimator {
            EstimatorKind::Fidelity => Acquisition::Exact,
            EstimatorKind::Readout => Acquisition::Readout(shots),
        }
    }
}

impl fmt::Display for Acquisition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Acquisition::Exact => f.write_str("exact"),
            Acquisition::Readout(s) => s.fmt(f),
        }
    }
}

impl FromStr for Acquisition {
    type Err = BrbError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("exact") {
            Ok(Acquisition::Exact)
        } else {
            s.parse().map(Acquisition::Readout)
        }
    }
}

/// Noise-averaged fidelity of one circuit at one length.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircuitRecord {
    pub length: f64,
    pub circuit_index: usize,
    pub fidelity_mean: f64,
    /// Standard error of the mean over the M realizations.
    pub fidelity_stderr: f64,
    pub noise_averages: usize,
    pub acquisition: Acquisition,
}

/// Per-length statistics over circuits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LengthSummary {
    pub length: f64,
    pub circuits: usize,
    /// Mean of F̃ over circuits.
    pub mean: f64,
    /// Unbiased variance of F̃ over circuits.
    pub variance: f64,
    /// Standard error of `mean`.
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FidelityDataset {
    pub records: Vec<CircuitRecord>,
}

impl FidelityDataset {
    pub fn new(records: Vec<CircuitRecord>) -> Result<Self> {
        let ds = Self { records };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.records.first() else {
            return Ok(());
        };
        for r in &self.records {
            if !(0.0..=1.0).contains(&r.fidelity_mean) {
                return Err(BrbError::invalid(format!(
                    "fidelity {} at L = {} is outside [0, 1]",
                    r.fidelity_mean, r.length
                )));
            }
            if r.noise_averages != first.noise_averages {
                return Err(BrbError::invalid("all records must share the same M"));
            }
            if !(r.length.is_finite() && r.length >= 0.0) {
                return Err(BrbError::invalid(format!("invalid sequence length {}", r.length)));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Distinct lengths in increasing order.
    pub fn lengths(&self) -> Vec<f64> {
        let mut ls: Vec<f64> = self.records.iter().map(|r| r.length).collect();
        ls.sort_by(f64::total_cmp);
        ls.dedup();
        ls
    }

    /// F̃ values of every circuit at `length`.
    pub fn values_at(&self, length: f64) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.length == length)
            .map(|r| r.fidelity_mean)
            .collect()
    }

    pub fn summaries(&self) -> Vec<LengthSummary> {
        self.lengths()
            .into_iter()
            .map(|l| {
                let v = self.values_at(l);
                let n = v.len();
                let mean = v.iter().sum::<f64>() / n as f64;
                let variance = if n > 1 {
                    v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
                } else {
                    0.0
                };
                LengthSummary {
                    length: l,
                    circuits: n,
                    mean,
                    variance,
                    stderr: (variance / n as f64).sqrt(),
                }
            })
            .collect()
    }
}

fn simulate_into(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    options: &RunOptions,
    length_index: usize,
    circuit: usize,
    out: &mut Vec<f64>,
) -> Result<()> {
    let seq = plan.sequence(length_index, circuit)?;
    let drive = &plan.drive;
    let factors = seq.phase_factors();
    let steps = seq.steps();
    let block = noise.correlation.block_length(steps);
    let model = ReadoutModel { fock_cutoff: options.fock_cutoff, shots: plan.shots };
    let mut real = Vec::with_capacity(steps);
    let mut kicks = Vec::new();
    out.clear();
    for m in 0..plan.noise_averages {
        let mut stream: Stream = substream(plan.seed, StreamKey::noise(length_index, circuit, m));
        let alpha = match noise.kind {
            NoiseKind::Heating => {
                fill_kicks(noise.sigma, &mut stream, &mut kicks, steps);
                kicks.iter().sum()
            }
            kind => {
                fill_blocks(noise.sigma, block, &mut stream, &mut real, steps);
                match (kind, options.model) {
                    (NoiseKind::Dephasing, SimModel::Exact) => dephasing_exact_sum(&factors, &real, drive),
                    (NoiseKind::Dephasing, SimModel::FirstOrder) => dephasing_first_order_sum(&factors, &real, drive),
                    (NoiseKind::Amplitude, _) => Complex64::new(0.0, -drive.step_magnitude()) * weighted_sum(&factors, &real),
                    _ => -drive.step_magnitude() * weighted_sum(&factors, &real),
                }
            }
        };
        let value = match options.estimator {
            EstimatorKind::Fidelity => fidelity(alpha),
            EstimatorKind::Readout => {
                let mut rs = substream(plan.seed, StreamKey::readout(length_index, circuit, m));
                readout::measure_fidelity(alpha, &model, &mut rs)?
            }
        };
        out.push(value);
    }
    Ok(())
}

/// Per-realization fidelity estimates of one circuit (length M).
pub fn simulate_circuit(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    options: &RunOptions,
    length_index: usize,
    circuit: usize,
) -> Result<Vec<f64>> {
    plan.validate()?;
    let mut out = Vec::with_capacity(plan.noise_averages);
    simulate_into(plan, noise, options, length_index, circuit, &mut out)?;
    Ok(out)
}

/// Every trajectory of one circuit, with its parasitic displacement.
pub fn simulate_trajectories(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    model: SimModel,
    length_index: usize,
    circuit: usize,
) -> Result<Vec<TrajectoryOutcome>> {
    let seq = plan.sequence(length_index, circuit)?;
    (0..plan.noise_averages)
        .map(|m| {
            let mut stream = substream(plan.seed, StreamKey::noise(length_index, circuit, m));
            let trace = crate::noise::sample_trace(noise, seq.steps(), &mut stream)?;
            let alpha = parasitic_displacement(&seq, &plan.drive, &trace, model)?;
            Ok(TrajectoryOutcome::new(alpha, circuit, m))
        })
        .collect()
}

/// Per-realization samples for all N circuits at one length, circuit-major.
pub fn simulate_length(
    plan: &ExperimentPlan,
    noise: &NoiseSpec,
    options: &RunOptions,
    length_index: usize,
) -> Result<Vec<Vec<f64>>> {
    check_budget(plan, options)?;
    (0..plan.randomizations)
        .into_par_iter()
        .map(|c| simulate_circuit(plan, noise, options, length_index, c))
        .collect()
}

fn check_budget(plan: &ExperimentPlan, options: &RunOptions) -> Result<()> {
    plan.validate()?;
    let cost = plan.cost();
    if cost > options.budget {
        return Err(BrbError::BudgetExceeded { requested: cost, budget: options.budget });
    }
    Ok(())
}

/// Runs the full protocol: N circuits per length, each averaged over M noise
/// realizations. Parallel over circuits; the result does not depend on the
/// thread count.
pub fn run_brb(plan: &ExperimentPlan, noise: &NoiseSpec, options: &RunOptions) -> Result<FidelityDataset> {
    check_budget(plan, options)?;
    let acquisition = Acquisition::new(options.estimator, plan.shots);
    let m = plan.noise_averages;
    let cells: Vec<(usize, usize)> = (0..plan.lengths.len())
        .flat_map(|l| (0..plan.randomizations).map(move |c| (l, c)))
        .collect();
    let records = cells
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(m),
            |buf, (l, c)| {
                simulate_into(plan, noise, options, l, c, buf)?;
                let mean = buf.iter().sum::<f64>() / m as f64;
                let stderr = if m > 1 {
                    let var = buf.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1) as f64;
                    (var / m as f64).sqrt()
                } else {
                    0.0
                };
                Ok(CircuitRecord {
                    length: plan.drive.sequence_length(plan.lengths[l]),
                    circuit_index: c,
                    fidelity_mean: mean.clamp(0.0, 1.0),
                    fidelity_stderr: stderr,
                    noise_averages: m,
                    acquisition,
                })
            },
        )
        .collect::<Result<Vec<_>>>()?;
    Ok(FidelityDataset { records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{Correlation, sample_trace};
    use crate::protocol::PhaseSet;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI, TAU};

    fn drive() -> DrivePhysics {
        DrivePhysics::from_rabi_hz(1680.0, 0.1).unwrap()
    }

    fn seq(phases: Vec<f64>) -> DisplacementSequence {
        DisplacementSequence::new(0.1, phases, PhaseSet::DiscreteFour).unwrap()
    }

    fn dephasing_trace(values: Vec<f64>) -> NoiseTrace {
        NoiseTrace::Real { kind: NoiseKind::Dephasing, values }
    }

    fn random_seq(seed: u64, steps: usize) -> DisplacementSequence {
        let plan = ExperimentPlan::new(drive(), vec![steps], 1, 1, seed).unwrap();
        plan.sequence(0, 0).unwrap()
    }

    #[test]
    fn heating_cancellation_and_noiseless() {
        let t = NoiseTrace::Kicks(vec![Complex64::new(0.1, 0.0), Complex64::new(-0.1, 0.0)]);
        assert_eq!(parasitic_heating(&t).unwrap(), Complex64::new(0.0, 0.0));
        let zero = NoiseTrace::Kicks(vec![Complex64::new(0.0, 0.0); 5]);
        let a = parasitic_heating(&zero).unwrap();
        assert_eq!(fidelity(a), 1.0);
        assert!(parasitic_heating(&dephasing_trace(vec![0.0])).is_err());
    }

    #[test]
    fn heating_ensemble_power() {
        let s2 = 2.9e-2;
        let spec = NoiseSpec::heating(f64::sqrt(s2)).unwrap();
        let n = 20_000;
        let mean = (0..n)
            .map(|m| {
                let t = sample_trace(&spec, 32, &mut substream(21, StreamKey::noise(0, 0, m))).unwrap();
                parasitic_heating(&t).unwrap().norm_sqr()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean / (32.0 * s2) - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn dephasing_zero_noise() {
        let s = seq(vec![0.0, FRAC_PI_2, PI]);
        let t = dephasing_trace(vec![0.0; 3]);
        assert_eq!(parasitic_dephasing_exact(&s, &drive(), &t).unwrap(), Complex64::new(0.0, 0.0));
        assert_eq!(parasitic_dephasing_first_order(&s, &drive(), &t).unwrap(), Complex64::new(0.0, 0.0));
    }

    fn quadrature(eps: f64, t0: f64, t1: f64) -> Complex64 {
        // composite Gauss-Legendre, 5 points on 2000 panels
        let nodes = [
            (0.0, 128.0 / 225.0),
            (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let panels = 2000;
        let h = (t1 - t0) / panels as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for p in 0..panels {
            let mid = t0 + (p as f64 + 0.5) * h;
            for (x, w) in nodes {
                let t = mid + 0.5 * h * x;
                let half = (0.5 * eps * t).sin();
                acc += w * 0.5 * h * Complex64::new(-2.0 * half * half, -(eps * t).sin());
            }
        }
        acc
    }

    #[test]
    fn exact_single_step_matches_quadrature() {
        let d = drive();
        let dt = d.step_duration();
        for eps in [TAU * 900.0, TAU * 37.0, -TAU * 5000.0, 1e-3] {
            let s = seq(vec![0.0]);
            let a = parasitic_dephasing_exact(&s, &d, &dephasing_trace(vec![eps])).unwrap();
            let q = Complex64::new(0.0, -d.rabi_rate() / 2.0) * quadrature(eps, 0.0, dt);
            assert!((a - q).norm() <= 1e-10 * q.norm(), "{eps}: {a} vs {q}");
        }
    }

    #[test]
    fn exact_later_steps_match_quadrature() {
        let d = drive();
        let dt = d.step_duration();
        let eps = vec![TAU * 700.0, -TAU * 300.0, TAU * 1200.0, TAU * 50.0];
        let s = seq(vec![0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]);
        let a = parasitic_dephasing_exact(&s, &d, &dephasing_trace(eps.clone())).unwrap();
        let mut q = Complex64::new(0.0, 0.0);
        for (j, (&e, f)) in eps.iter().zip(s.phase_factors()).enumerate() {
            q += f * quadrature(e, j as f64 * dt, (j + 1) as f64 * dt);
        }
        q *= Complex64::new(0.0, -d.rabi_rate() / 2.0);
        assert!((a - q).norm() <= 1e-10 * q.norm(), "{a} vs {q}");
    }

    #[test]
    fn series_branch_agrees_at_threshold() {
        for x in [SERIES_THRESHOLD * 0.999, SERIES_THRESHOLD, -SERIES_THRESHOLD * 1.001, 0.5 * SERIES_THRESHOLD] {
            let direct = x.sin() / x - 1.0;
            let series = sinc_minus_one_series(x);
            assert!((direct - series).abs() <= 1e-12 * direct.abs(), "{x}: {direct} vs {series}");
        }
        assert_eq!(sinc_minus_one(0.0), 0.0);
    }

    #[test]
    fn first_order_dc_closed_form() {
        let d = drive();
        let s = random_seq(5, 32);
        let eps = TAU * 400.0;
        let a = parasitic_dephasing_first_order(&s, &d, &dephasing_trace(vec![eps; 32])).unwrap();
        let dt = d.step_duration();
        let sum: Complex64 = s
            .phase_factors()
            .iter()
            .enumerate()
            .map(|(j, f)| f * ((2 * j + 1) as f64 / 2.0))
            .sum();
        let expect = -(d.rabi_rate() / 2.0) * eps * dt * dt * sum;
        assert!((a - expect).norm() < 1e-12 * expect.norm().max(1e-300));
    }

    #[test]
    fn first_order_is_linearization_of_exact() {
        // ‖exact(sε) - first(sε)‖ = O(s²)
        let d = drive();
        let s = random_seq(7, 24);
        let base: Vec<f64> = (0..24).map(|j| TAU * 300.0 * ((j as f64 * 0.7).sin() + 0.3)).collect();
        let gap = |scale: f64| {
            let t = dephasing_trace(base.iter().map(|e| e * scale).collect());
            let e = parasitic_dephasing_exact(&s, &d, &t).unwrap();
            let f = parasitic_dephasing_first_order(&s, &d, &t).unwrap();
            (e - f).norm()
        };
        let r1 = gap(0.1) / gap(0.05);
        let r2 = gap(0.05) / gap(0.025);
        assert!((r1 - 4.0).abs() < 0.2, "{r1}");
        assert!((r2 - 4.0).abs() < 0.1, "{r2}");
    }

    #[test]
    fn amplitude_and_phase_cases() {
        let d = drive();
        let s = seq(vec![0.0; 5]);
        let amp = NoiseTrace::Real { kind: NoiseKind::Amplitude, values: vec![0.02; 5] };
        let a = parasitic_amplitude(&s, &d, &amp).unwrap();
        assert!((a - Complex64::new(0.0, -0.1 * 5.0 * 0.02)).norm() < 1e-15);
        let ph = NoiseTrace::Real { kind: NoiseKind::PhaseJitter, values: vec![0.02; 5] };
        let p = parasitic_phase(&s, &d, &ph).unwrap();
        assert!((p.norm() - 0.1 * 5.0 * 0.02).abs() < 1e-15);
        let zero = NoiseTrace::Real { kind: NoiseKind::Amplitude, values: vec![0.0; 5] };
        assert_eq!(parasitic_amplitude(&s, &d, &zero).unwrap().norm(), 0.0);
        let zero = NoiseTrace::Real { kind: NoiseKind::PhaseJitter, values: vec![0.0; 5] };
        assert_eq!(parasitic_phase(&s, &d, &zero).unwrap().norm(), 0.0);
        assert!(parasitic_amplitude(&s, &d, &ph).is_err());
        assert!(parasitic_phase(&s, &d, &amp).is_err());
    }

    fn markovian_power(kind: NoiseKind, sigma: f64) -> f64 {
        let d = drive();
        let spec = NoiseSpec::new(kind, sigma, Correlation::Markovian).unwrap();
        let s = random_seq(9, 40);
        let n = 20_000;
        (0..n)
            .map(|m| {
                let t = sample_trace(&spec, 40, &mut substream(22, StreamKey::noise(0, 0, m))).unwrap();
                parasitic_displacement(&s, &d, &t, SimModel::Exact).unwrap().norm_sqr()
            })
            .sum::<f64>()
            / n as f64
    }

    #[test]
    fn amplitude_markovian_power() {
        let p = markovian_power(NoiseKind::Amplitude, 0.05);
        let expect = 0.01 * 0.0025 * 40.0;
        assert!((p / expect - 1.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn phase_markovian_power() {
        let p = markovian_power(NoiseKind::PhaseJitter, 0.05);
        let expect = 0.01 * 0.0025 * 40.0;
        assert!((p / expect - 1.0).abs() < 0.03, "{p}");
    }

    #[test]
    fn length_mismatch_rejected() {
        let s = seq(vec![0.0; 3]);
        assert!(parasitic_dephasing_exact(&s, &drive(), &dephasing_trace(vec![0.0; 2])).is_err());
        let other = DrivePhysics::from_rabi_hz(1680.0, 0.2).unwrap();
        assert!(parasitic_dephasing_exact(&s, &other, &dephasing_trace(vec![0.0; 3])).is_err());
    }

    #[test]
    fn zero_noise_dataset_is_perfect() {
        let plan = ExperimentPlan::new(drive(), vec![2, 4, 8], 5, 3, 1).unwrap();
        for spec in [
            NoiseSpec::heating(0.0).unwrap(),
            NoiseSpec::dephasing(0.0, Correlation::Dc).unwrap(),
            NoiseSpec::amplitude(0.0, Correlation::Markovian).unwrap(),
        ] {
            let ds = run_brb(&plan, &spec, &RunOptions::default()).unwrap();
            assert_eq!(ds.len(), 15);
            assert!(ds.records.iter().all(|r| r.fidelity_mean == 1.0 && r.fidelity_stderr == 0.0));
        }
    }

    #[test]
    fn budget_refusal() {
        let plan = ExperimentPlan::new(drive(), vec![10, 20], 10, 10, 1).unwrap();
        let spec = NoiseSpec::heating(0.1).unwrap();
        let err = run_brb(&plan, &spec, &RunOptions::default().with_budget(100)).unwrap_err();
        assert!(matches!(err, BrbError::BudgetExceeded { requested: 3000, budget: 100 }));
    }

    #[test]
    fn parallel_matches_serial() {
        let plan = ExperimentPlan::new(drive(), vec![4, 12], 6, 20, 77).unwrap();
        let spec = NoiseSpec::dephasing(TAU * 600.0, Correlation::Markovian).unwrap();
        let opts = RunOptions::default();
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let a = one.install(|| run_brb(&plan, &spec, &opts)).unwrap();
        let many = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let b = many.install(|| run_brb(&plan, &spec, &opts)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fast_path_matches_trajectories() {
        let plan = ExperimentPlan::new(drive(), vec![9], 2, 6, 3).unwrap();
        for (spec, model) in [
            (NoiseSpec::dephasing(TAU * 800.0, Correlation::Steps(4)).unwrap(), SimModel::Exact),
            (NoiseSpec::dephasing(TAU * 800.0, Correlation::Dc).unwrap(), SimModel::FirstOrder),
            (NoiseSpec::heating(0.2).unwrap(), SimModel::Exact),
            (NoiseSpec::phase_jitter(0.1, Correlation::Markovian).unwrap(), SimModel::Exact),
            (NoiseSpec::amplitude(0.1, Correlation::Dc).unwrap(), SimModel::Exact),
        ] {
            let opts = RunOptions::default().with_model(model);
            let fast = simulate_circuit(&plan, &spec, &opts, 0, 1).unwrap();
            let slow = simulate_trajectories(&plan, &spec, model, 0, 1).unwrap();
            for (f, t) in fast.iter().zip(&slow) {
                assert!((f - t.exact_fidelity).abs() < 1e-13, "{f} vs {}", t.exact_fidelity);
            }
        }
    }

    fn first_order_power_ratio(corr: Correlation) -> f64 {
        let spec = NoiseSpec::dephasing(TAU * 600.0, corr).unwrap();
        let plan = ExperimentPlan::new(drive(), vec![20], 20_000, 1, 31).unwrap();
        let xs: Vec<f64> = (0..20_000)
            .map(|c| {
                let t = simulate_trajectories(&plan, &spec, SimModel::FirstOrder, 0, c).unwrap();
                t[0].parasitic_displacement.norm_sqr()
            })
            .collect();
        let m1 = xs.iter().sum::<f64>() / xs.len() as f64;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        m2 / (m1 * m1)
    }

    #[test]
    fn first_order_markovian_is_exponential() {
        // |α_ε|² ~ Γ(1, b) over circuits and noise: μ2/μ1² = 2
        let r = first_order_power_ratio(Correlation::Markovian);
        assert!((r - 2.0).abs() < 0.15, "{r}");
    }

    #[test]
    fn first_order_dc_is_chi_square_times_exponential() {
        // ε² |S|² with ε² ~ σ²χ²₁ and |S|² exponential over circuits: 3·2 = 6
        let r = first_order_power_ratio(Correlation::Dc);
        assert!((r / 6.0 - 1.0).abs() < 0.15, "{r}");
    }

    #[test]
    fn acquisition_text() {
        for a in [Acquisition::Exact, Acquisition::Readout(Shots::Oracle), Acquisition::Readout(Shots::Count(100))] {
            assert_eq!(a.to_string().parse::<Acquisition>().unwrap(), a);
        }
    }

    proptest! {
        #[test]
        fn fidelity_bounds(re in -5.0f64..5.0, im in -5.0f64..5.0) {
            let a = Complex64::new(re, im);
            let f = fidelity(a);
            prop_assert!(f >= 0.0 && f <= 1.0);
            prop_assert_eq!(f == 1.0, a.norm_sqr() == 0.0 || a.norm_sqr() < f64::EPSILON);
        }

        #[test]
        fn exact_stays_finite(seed in any::<u64>(), sigma_hz in 0.0f64..5000.0) {
            let plan = ExperimentPlan::new(drive(), vec![17], 1, 2, seed).unwrap();
            let spec = NoiseSpec::dephasing(TAU * sigma_hz, Correlation::Steps(3)).unwrap();
            for t in simulate_trajectories(&plan, &spec, SimModel::Exact, 0, 0).unwrap() {
                prop_assert!(t.exact_fidelity > 0.0 && t.exact_fidelity <= 1.0);
            }
        }
    }
}
