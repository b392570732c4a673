//! Randomized displacement sequences and their ideal trajectory.

use std::f64::consts::{FRAC_PI_2, TAU};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{BrbError, Result};
use crate::readout::Shots;
use crate::rng::{self, StreamKey};

/// Drive strength and step timing of the displacement pulses.
///
/// The step magnitude is `|α0| = Ω·Δτ/2`; any two of the three quantities fix
/// the third. Ω and `|α0|` are stored, Δτ is derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrivePhysics {
    rabi_rate: f64,
    step_magnitude: f64,
}

impl DrivePhysics {
    /// `rabi_rate` in rad/s, `step_magnitude` dimensionless.
    pub fn new(rabi_rate: f64, step_magnitude: f64) -> Result<Self> {
        if !(rabi_rate.is_finite() && rabi_rate > 0.0) {
            return Err(BrbError::invalid(format!("rabi rate must be positive, got {rabi_rate}")));
        }
        if !(step_magnitude.is_finite() && step_magnitude > 0.0) {
            return Err(BrbError::invalid(format!(
                "step magnitude must be positive, got {step_magnitude}"
            )));
        }
        Ok(Self { rabi_rate, step_magnitude })
    }

    /// Builds the drive from Ω (rad/s) and the single-step duration Δτ (s).
    pub fn from_duration(rabi_rate: f64, step_duration: f64) -> Result<Self> {
        if !(step_duration.is_finite() && step_duration > 0.0) {
            return Err(BrbError::invalid(format!(
                "step duration must be positive, got {step_duration}"
            )));
        }
        Self::new(rabi_rate, rabi_rate * step_duration / 2.0)
    }

    /// Builds the drive from Ω/2π in Hz.
    pub fn from_rabi_hz(rabi_hz: f64, step_magnitude: f64) -> Result<Self> {
        Self::new(TAU * rabi_hz, step_magnitude)
    }

    /// Ω in rad/s.
    pub fn rabi_rate(&self) -> f64 {
        self.rabi_rate
    }

    /// `|α0|`.
    pub fn step_magnitude(&self) -> f64 {
        self.step_magnitude
    }

    /// Δτ = 2|α0|/Ω in seconds.
    pub fn step_duration(&self) -> f64 {
        2.0 * self.step_magnitude / self.rabi_rate
    }

    /// Total sequence length `L = |α0|·J`, rounded to 12 decimals so that it
    /// survives a text round trip unchanged.
    pub fn sequence_length(&self, steps: usize) -> f64 {
        round_length(self.step_magnitude * steps as f64)
    }
}

pub(crate) fn round_length(l: f64) -> f64 {
    (l * 1e12).round() / 1e12
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseSet {
    /// φ ∈ {0, π/2, π, 3π/2}.
    #[default]
    DiscreteFour,
    /// φ ∈ [0, 2π).
    Continuous,
}

impl PhaseSet {
    pub fn contains(&self, phi: f64) -> bool {
        match self {
            PhaseSet::DiscreteFour => quarter_turns(phi).is_some(),
            PhaseSet::Continuous => (0.0..TAU).contains(&phi),
        }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            PhaseSet::DiscreteFour => rng.random_range(0..4u8) as f64 * FRAC_PI_2,
            PhaseSet::Continuous => rng.random_range(0.0..TAU),
        }
    }
}

/// Index k when `phi == k·π/2` for k in 0..4.
fn quarter_turns(phi: f64) -> Option<u8> {
    (0..4u8).find(|&k| phi == k as f64 * FRAC_PI_2)
}

/// One randomized circuit: J displacements of magnitude `|α0|` with phases φ_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisplacementSequence {
    step_magnitude: f64,
    phases: Vec<f64>,
    phase_set: PhaseSet,
}

impl DisplacementSequence {
    pub fn new(step_magnitude: f64, phases: Vec<f64>, phase_set: PhaseSet) -> Result<Self> {
        if phases.is_empty() {
            return Err(BrbError::invalid("a sequence needs at least one displacement"));
        }
        if !(step_magnitude.is_finite() && step_magnitude > 0.0) {
            return Err(BrbError::invalid("step magnitude must be positive"));
        }
        if let Some(bad) = phases.iter().find(|&&p| !phase_set.contains(p)) {
            return Err(BrbError::invalid(format!("phase {bad} is outside the {phase_set:?} set")));
        }
        Ok(Self { step_magnitude, phases, phase_set })
    }

    pub fn step_magnitude(&self) -> f64 {
        self.step_magnitude
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn phase_set(&self) -> PhaseSet {
        self.phase_set
    }

    /// Number of displacements J.
    pub fn steps(&self) -> usize {
        self.phases.len()
    }

    /// L = |α0|·J.
    pub fn length(&self) -> f64 {
        round_length(self.step_magnitude * self.steps() as f64)
    }

    /// The factors `e^{-iφ_j}`. Exact (no rounding residue) for the discrete set.
    pub fn phase_factors(&self) -> Vec<Complex64> {
        self.phases.iter().map(|&phi| phase_factor(phi)).collect()
    }

    pub(crate) fn check_drive(&self, drive: &DrivePhysics) -> Result<()> {
        let a = self.step_magnitude;
        let b = drive.step_magnitude();
        if (a - b).abs() > 1e-12 * a.max(b) {
            return Err(BrbError::invalid(format!(
                "sequence step magnitude {a} does not match drive step magnitude {b}"
            )));
        }
        Ok(())
    }
}

/// `e^{-iφ}`.
pub fn phase_factor(phi: f64) -> Complex64 {
    match quarter_turns(phi) {
        Some(0) => Complex64::new(1.0, 0.0),
        Some(1) => Complex64::new(0.0, -1.0),
        Some(2) => Complex64::new(-1.0, 0.0),
        Some(3) => Complex64::new(0.0, 1.0),
        _ => Complex64::from_polar(1.0, -phi),
    }
}

/// Everything needed to run the full protocol over a set of lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub drive: DrivePhysics,
    /// Step counts J, strictly increasing.
    pub lengths: Vec<usize>,
    /// Circuit randomizations N per length.
    pub randomizations: usize,
    /// Noise realizations M averaged per circuit.
    pub noise_averages: usize,
    pub shots: Shots,
    pub seed: u64,
    pub phase_set: PhaseSet,
}

impl ExperimentPlan {
    pub fn new(
        drive: DrivePhysics,
        lengths: Vec<usize>,
        randomizations: usize,
        noise_averages: usize,
        seed: u64,
    ) -> Result<Self> {
        let plan = Self {
            drive,
            lengths,
            randomizations,
            noise_averages,
            shots: Shots::Oracle,
            seed,
            phase_set: PhaseSet::DiscreteFour,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_shots(mut self, shots: Shots) -> Self {
        self.shots = shots;
        self
    }

    pub fn with_phase_set(mut self, phase_set: PhaseSet) -> Self {
        self.phase_set = phase_set;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.randomizations == 0 {
            return Err(BrbError::invalid("randomizations N must be at least 1"));
        }
        if self.noise_averages == 0 {
            return Err(BrbError::invalid("noise averages M must be at least 1"));
        }
        if self.lengths.is_empty() {
            return Err(BrbError::invalid("at least one sequence length is required"));
        }
        if self.lengths[0] == 0 {
            return Err(BrbError::invalid("sequence lengths J must be at least 1"));
        }
        if self.lengths.windows(2).any(|w| w[0] >= w[1]) {
            return Err(BrbError::invalid("sequence lengths must be strictly increasing"));
        }
        Ok(())
    }

    /// Σ_J J·N·M, the number of single-step evaluations a run performs.
    pub fn cost(&self) -> u64 {
        let per_length = self.randomizations as u64 * self.noise_averages as u64;
        self.lengths
            .iter()
            .map(|&j| j as u64)
            .sum::<u64>()
            .saturating_mul(per_length)
    }

    /// L values for every planned J.
    pub fn sequence_lengths(&self) -> Vec<f64> {
        self.lengths.iter().map(|&j| self.drive.sequence_length(j)).collect()
    }

    /// The circuit drawn for (`length_index`, `circuit`). Pure in (seed, indices).
    pub fn sequence(&self, length_index: usize, circuit: usize) -> Result<DisplacementSequence> {
        let steps = *self
            .lengths
            .get(length_index)
            .ok_or_else(|| BrbError::invalid(format!("length index {length_index} out of range")))?;
        let mut stream = rng::substream(self.seed, StreamKey::sequence(length_index, circuit));
        sample_sequence(self, steps, &mut stream)
    }
}

/// Draws J phases i.i.d. uniform from the plan's phase set.
pub fn sample_sequence<R: Rng + ?Sized>(
    plan: &ExperimentPlan,
    steps: usize,
    stream: &mut R,
) -> Result<DisplacementSequence> {
    if steps == 0 {
        return Err(BrbError::invalid("J must be at least 1"));
    }
    let phases = (0..steps).map(|_| plan.phase_set.sample(stream)).collect();
    Ok(DisplacementSequence {
        step_magnitude: plan.drive.step_magnitude(),
        phases,
        phase_set: plan.phase_set,
    })
}

/// `α_tot = -i|α0|·Σ_j e^{-iφ_j}`.
pub fn ideal_total_displacement(seq: &DisplacementSequence, drive: &DrivePhysics) -> Result<Complex64> {
    seq.check_drive(drive)?;
    let sum: Complex64 = seq.phases.iter().map(|&p| phase_factor(p)).sum();
    Ok(Complex64::new(0.0, -drive.step_magnitude()) * sum)
}

/// The final displacement returning the mode to the origin. Noise-free.
pub fn reversal_displacement(seq: &DisplacementSequence, drive: &DrivePhysics) -> Result<Complex64> {
    ideal_total_displacement(seq, drive).map(|a| -a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use std::f64::consts::PI;
    use proptest::prelude::*;

    fn drive() -> DrivePhysics {
        DrivePhysics::from_rabi_hz(1680.0, 0.1).unwrap()
    }

    fn plan(phase_set: PhaseSet) -> ExperimentPlan {
        ExperimentPlan::new(drive(), vec![4, 8], 3, 2, 17).unwrap().with_phase_set(phase_set)
    }

    fn seq(phases: &[f64]) -> DisplacementSequence {
        DisplacementSequence::new(0.1, phases.to_vec(), PhaseSet::DiscreteFour).unwrap()
    }

    #[test]
    fn drive_relations() {
        let d = drive();
        let expected_dt = 2.0 * 0.1 / (TAU * 1680.0);
        assert!((d.step_duration() - expected_dt).abs() < 1e-18);
        assert!((d.step_duration() - 18.947e-6).abs() < 1e-9);
        let back = DrivePhysics::from_duration(d.rabi_rate(), d.step_duration()).unwrap();
        assert!((back.step_magnitude() - 0.1).abs() < 1e-15);
        assert!(DrivePhysics::new(0.0, 0.1).is_err());
        assert!(DrivePhysics::new(1.0, -0.1).is_err());
    }

    #[test]
    fn discrete_phases_in_set() {
        let p = plan(PhaseSet::DiscreteFour);
        let mut s = substream(5, StreamKey::sequence(0, 0));
        let q = sample_sequence(&p, 4, &mut s).unwrap();
        assert_eq!(q.steps(), 4);
        for &phi in q.phases() {
            assert!([0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2].contains(&phi));
        }
    }

    #[test]
    fn zero_steps_rejected() {
        let p = plan(PhaseSet::DiscreteFour);
        let mut s = substream(5, StreamKey::sequence(0, 0));
        assert!(matches!(sample_sequence(&p, 0, &mut s), Err(BrbError::InvalidArgument(_))));
    }

    #[test]
    fn discrete_phase_frequencies() {
        // Each of the four phases is Binomial(J, 1/4); allow 4σ.
        let p = plan(PhaseSet::DiscreteFour);
        let j = 10_000usize;
        let mut s = substream(99, StreamKey::sequence(0, 0));
        let q = sample_sequence(&p, j, &mut s).unwrap();
        let mut counts = [0usize; 4];
        for &phi in q.phases() {
            counts[quarter_turns(phi).unwrap() as usize] += 1;
        }
        let sigma = (j as f64 * 0.25 * 0.75).sqrt();
        let mut chi2 = 0.0;
        for c in counts {
            let dev = c as f64 - j as f64 / 4.0;
            assert!(dev.abs() < 4.0 * sigma, "counts {counts:?}");
            chi2 += dev * dev / (j as f64 / 4.0);
        }
        // 3 degrees of freedom, 0.999 quantile is 16.27
        assert!(chi2 < 16.27, "chi2 = {chi2}");
    }

    #[test]
    fn deterministic_per_key() {
        let p = plan(PhaseSet::Continuous);
        let a = sample_sequence(&p, 32, &mut substream(3, StreamKey::sequence(1, 4))).unwrap();
        let b = sample_sequence(&p, 32, &mut substream(3, StreamKey::sequence(1, 4))).unwrap();
        assert_eq!(a, b);
        assert_eq!(p.sequence(1, 4).unwrap(), p.sequence(1, 4).unwrap());
        assert_ne!(p.sequence(1, 4).unwrap(), p.sequence(1, 5).unwrap());
    }

    #[test]
    fn ideal_total_examples() {
        let d = drive();
        let a = ideal_total_displacement(&seq(&[0.0]), &d).unwrap();
        assert_eq!(a, Complex64::new(0.0, -0.1));
        let a = ideal_total_displacement(&seq(&[0.0, PI]), &d).unwrap();
        assert_eq!(a, Complex64::new(0.0, 0.0));
        let a = ideal_total_displacement(&seq(&[0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2]), &d).unwrap();
        assert_eq!(a.norm(), 0.0);
    }

    #[test]
    fn reversal_examples() {
        let d = drive();
        assert_eq!(reversal_displacement(&seq(&[0.0]), &d).unwrap(), Complex64::new(0.0, 0.1));
        let r = reversal_displacement(&seq(&[0.0, 0.0, 0.0]), &d).unwrap();
        assert!((r - Complex64::new(0.0, 0.3)).norm() < 1e-15);
    }

    #[test]
    fn mismatched_drive_rejected() {
        let d = DrivePhysics::from_rabi_hz(1680.0, 0.2).unwrap();
        assert!(ideal_total_displacement(&seq(&[0.0]), &d).is_err());
    }

    #[test]
    fn plan_validation() {
        let d = drive();
        assert!(ExperimentPlan::new(d, vec![], 1, 1, 0).is_err());
        assert!(ExperimentPlan::new(d, vec![4, 4], 1, 1, 0).is_err());
        assert!(ExperimentPlan::new(d, vec![8, 4], 1, 1, 0).is_err());
        assert!(ExperimentPlan::new(d, vec![0, 4], 1, 1, 0).is_err());
        assert!(ExperimentPlan::new(d, vec![4], 0, 1, 0).is_err());
        assert!(ExperimentPlan::new(d, vec![4], 1, 0, 0).is_err());
        let p = ExperimentPlan::new(d, vec![4, 8], 10, 100, 0).unwrap();
        assert_eq!(p.cost(), 12 * 10 * 100);
        assert_eq!(p.sequence_lengths(), vec![0.4, 0.8]);
    }

    proptest! {
        #[test]
        fn reversal_cancels_and_triangle_bound(seed in any::<u64>(), steps in 1usize..200, continuous in any::<bool>()) {
            let set = if continuous { PhaseSet::Continuous } else { PhaseSet::DiscreteFour };
            let p = plan(set);
            let q = sample_sequence(&p, steps, &mut substream(seed, StreamKey::sequence(0, 0))).unwrap();
            let total = ideal_total_displacement(&q, &p.drive).unwrap();
            let rev = reversal_displacement(&q, &p.drive).unwrap();
            prop_assert_eq!(total + rev, Complex64::new(0.0, 0.0));
            prop_assert!(total.norm() <= 0.1 * steps as f64 * (1.0 + 1e-12));
            if !continuous {
                let re = total.re / 0.1;
                let im = total.im / 0.1;
                prop_assert!((re - re.round()).abs() < 1e-9);
                prop_assert!((im - im.round()).abs() < 1e-9);
            }
        }
    }
}
