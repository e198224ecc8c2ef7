//! Adaptive linear-quadratic regulation with circuit-breaking.
//!
//! The crate is organized bottom-up:
//!
//! - [`control_math`]: Lyapunov and Riccati solvers, gain synthesis,
//!   controllability and stability margins.
//! - [`plant`]: the ground-truth linear-Gaussian system and its seeded noise.
//! - [`estimator`]: online least-squares identification of `[A B]`.
//! - [`controller`]: certainty-equivalent feedback supervised by a
//!   circuit breaker, plus decaying probing noise.
//! - [`record`] and [`regret`]: per-step trial logs, regret accounting and
//!   the exact seven-term regret decomposition.
//! - [`diagnostics`]: post-hoc scans of trial logs (stabilization and
//!   last-breaker times, noise events, regret slopes).
//! - [`harness`] and [`report`]: seeded multi-trial experiments and their
//!   on-disk outputs.

pub mod control_math;
pub mod controller;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod harness;
pub mod plant;
pub mod record;
pub mod regret;
pub mod report;

pub use control_math::{
    controllability_rank, solve_dare, solve_discrete_lyapunov, spectral_radius, stability_margin,
    synthesize_gain, CostWeights, DareOptions, LyapunovCertificate, RiccatiSolution, SystemMatrices,
};
pub use controller::{ControllerConfig, ControllerState, GainSchedule, InputBreakdown};
pub use error::{Error, Result};
pub use estimator::{EstimatorState, ParameterEstimate};
pub use harness::{ExperimentConfig, ExperimentSummary, PlantSource};
pub use plant::{NoiseStream, PlantSpec, PlantState};
pub use record::{BreakerFlag, TrialRecord};
pub use regret::{DecompositionReport, RegretLedger};
