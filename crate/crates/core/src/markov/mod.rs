//! Exact finite-state machinery for phase-type lifetimes.
//!
//! A state counts the alive individuals per (component, stage). On top of the
//! plain branching chain this module builds two modified chains with product
//! form stationary laws: the regeneration chain (`δ < 1`, restart with one
//! newborn at extinction) and the restricted population process `P_N`. Numeric
//! stationary solves and expected occupation times of the absorbing chain give
//! sampling-free checks of the closed forms.

mod closed_form;
mod generator;
mod solve;
mod state;
mod w;

use thiserror::Error;

use crate::lifetime::PhaseTypeSpec;

pub use closed_form::{
    closed_form_pi_subcritical, closed_form_pi_supercritical, harmonic_normaliser, subcritical_constant,
    subcritical_level_mass, supercritical_level_mass,
};
pub use generator::{
    build_branching_generator, build_population_process_generator, build_regeneration_generator,
    build_regeneration_generator_with, Boundary, GeneratorKind, GeneratorMatrix,
};
pub use solve::{
    balance_residuals, expected_occupation_exact, expected_occupation_truncated, solve_stationary, StationaryDist,
    STATIONARY_RESIDUAL_TOLERANCE,
};
pub use state::{level_size, StateSpace, StateVector, DEFAULT_STATE_BUDGET};
pub use w::{solve_w, solve_w_with, WMethod, WSolverOptions, WVector, W_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MarkovError {
    #[error("truncation level must be at least 1, got {0}")]
    InvalidTruncation(usize),
    #[error("state space of {states} states exceeds the budget of {budget}")]
    Capacity { states: u128, budget: usize },
    #[error("invalid δ = {delta}: {reason}")]
    InvalidDelta { delta: f64, reason: &'static str },
    #[error("level {level} outside 1..={max}")]
    LevelOutOfRange { level: usize, max: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("w residual {0} above tolerance")]
    WResidual(f64),
    #[error("w solver did not converge after {iterations} iterations (residual {residual})")]
    NonConvergence { iterations: usize, residual: f64 },
    #[error("singular system: {0}")]
    Singular(String),
    #[error("{what} (residual {residual})")]
    NumericalFailure { what: &'static str, residual: f64 },
    #[error("chain with killing has no stationary distribution on its live states")]
    NotRecurrent,
    #[error("K_max = {k_max} must be at least 1 and below the truncation level {n_trunc}")]
    KMaxTooLarge { k_max: usize, n_trunc: usize },
}

/// Enumerates the states of `spec` on levels `1..=n` (and the empty state).
pub fn enumerate_states(spec: &PhaseTypeSpec, n: usize, include_empty: bool) -> Result<StateSpace, MarkovError> {
    StateSpace::enumerate(&spec.stage_layout(), n, include_empty)
}
