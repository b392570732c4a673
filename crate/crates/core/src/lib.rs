//! Bosonic randomized benchmarking.
//!
//! A bosonic mode is driven through random sequences of equal-magnitude
//! displacements in phase space, returned to the origin by a single
//! reversal, and its overlap with the ground state is recorded. Noise during
//! the sequence leaves a parasitic displacement `α_ε` behind and the
//! fidelity is `exp(-|α_ε|²)`.
//!
//! The crate is organised the way an experiment is:
//!
//! - [`protocol`] builds the randomized sequences and their ideal trajectory.
//! - [`noise`] samples per-step noise traces with a configurable correlation
//!   length.
//! - [`sim`] turns sequences and traces into parasitic displacements and
//!   noise-averaged fidelity datasets.
//! - [`readout`] models the red-sideband fidelity measurement with finite
//!   shots.
//! - [`stats`] holds the gamma-distribution machinery, moment summaries,
//!   goodness-of-fit and bootstrap tools.
//! - [`models`] contains the closed-form decay models, fitting, AIC model
//!   selection and the correlation constant calibration.
//! - [`cli`] is the command-line front end (config, CSV/JSON bundles, plots).

pub mod cli;
pub mod error;
pub mod models;
pub mod noise;
pub mod protocol;
pub mod readout;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{BrbError, Result};
pub use num_complex::Complex64;
