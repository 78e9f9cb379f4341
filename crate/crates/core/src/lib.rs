//! Consensus-based optimization: the interacting particle optimizer, a
//! positivity-preserving solver for its regularized mean-field equation,
//! and a checker that evaluates the analytic estimates on computed runs.

// `!(x > 0.0)` style guards are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod consensus;
pub mod envelopes;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod numerics;
pub mod objectives;
pub mod particles;
pub mod regularization;
pub mod runner;
pub mod solver;
pub mod thresholds;
pub mod verify;

pub use config::{parse_config, RunConfig};
pub use consensus::{consensus_of_density, consensus_of_particles, laplace_gap, ConsensusParams};
pub use error::{CboError, Result};
pub use grid::GridDensity;
pub use metrics::{lp_norm, moments_of_density, moments_of_particles, wasserstein2_1d, Measure1d, MomentVector};
pub use objectives::{check_assumption, quadratic, rastrigin, ObjectiveSpec};
pub use particles::{init_ensemble, run, step, CBOParams, ParticleEnsemble, Sampler};
pub use regularization::{cutoff, diffusion_coeff, drift_field, mollify_initial, RegularizationParams};
pub use solver::{solve, stable_dt, step_density, SolverConfig};
pub use verify::{Check, InvariantReport};
