//! Desk-scale laboratory for entropy-regularized sequence prediction.
//!
//! Everything here runs on exactly enumerable sequence spaces with tabular
//! softmax models, so the usual training objectives for sequence prediction
//! (maximum likelihood, reward-augmented likelihood, soft Q-learning,
//! value-augmented likelihood, and entropy-regularized actor-critic) can be
//! cross-checked against brute-force oracles at near machine precision.
//!
//! Module map:
//! - [`seq`]: token alphabet, partial/complete sequences, and the
//!   deterministic concatenation MDP with an eos enforcement rule.
//! - [`reward`]: sequence-level pay-offs and their extension to unfinished
//!   prefixes.
//! - [`oracle`]: exact sequence-level target distributions and token-level
//!   soft value tables, built by independent routes for cross-checking.
//! - [`models`]: tabular parameter tables with analytic gradients and a
//!   finite-difference gradient checker.
//! - [`sampling`]: n-gram replacement proposals and normalized pay-off
//!   weighting.
//! - [`trainers`]: the training objectives and run drivers.
//! - [`harness`]: datasets, evaluation, metrics logs, config files, sweeps,
//!   and the invariant check battery.

pub mod harness;
pub mod models;
pub mod numerics;
pub mod oracle;
pub mod reward;
pub mod sampling;
pub mod seq;
pub mod trainers;
