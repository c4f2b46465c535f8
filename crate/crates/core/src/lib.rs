//! Differentially private first-visit Monte Carlo policy evaluation.
//!
//! This crate implements two output-perturbation mechanisms for evaluating a
//! fixed policy from batched trajectories:
//!
//! * **DP-LSW** — a weighted least-squares fit of averaged first-visit
//!   returns with data-independent weights, perturbed with Gaussian noise
//!   calibrated to a smooth upper bound of the solution's local sensitivity.
//! * **DP-LSL** — a ridge-regularized fit of per-trajectory returns, with its
//!   own smooth sensitivity bound and noise scale.
//!
//! Alongside the mechanisms the crate ships a tabular chain environment with
//! an exact value solver ([`mdp`]), brute-force verification oracles that
//! certify the calibration conditions and utility bounds numerically
//! ([`oracle`]), and a reproducible experiment harness ([`experiments`]).
//!
//! All randomness flows through seeded [`rng::SeedStream`]s, so every result
//! — including the Gaussian perturbations — is a deterministic function of
//! the configuration.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod mdp;
pub mod mechanism;
pub mod oracle;
pub mod returns;
pub mod rng;
pub mod sensitivity;

pub use error::{Error, Result};
