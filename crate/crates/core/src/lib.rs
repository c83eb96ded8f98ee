//! Simulation and exact verification of occupation times in binary splitting
//! trees: individuals live i.i.d. unit-mean lifetimes and give birth at constant
//! rate `δ` while alive. The expected time `E(A_K)` spent with exactly `K`
//! individuals alive does not depend on the lifetime law beyond its mean.
//!
//! - [`lifetime`]: phase-type lifetime laws and general samplers.
//! - [`simulate`]: event-driven Monte Carlo of the population size.
//! - [`markov`]: exact finite-state chains for phase-type lifetimes.
//! - [`analysis`]: closed-form theory and estimators.

pub mod analysis;
pub mod lifetime;
pub mod markov;
pub mod report;
pub mod rng;
pub mod simulate;
