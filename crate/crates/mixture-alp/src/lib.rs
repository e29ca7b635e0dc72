//! Mixture-policy learning for finite MDPs via the dual approximate linear
//! program (ALP).
//!
//! The dual LP of a finite MDP optimizes over occupation measures. Restricting
//! the policy search to the convex hull of `d` known base policies turns that
//! LP into a `d`-dimensional problem whose feature matrix `Psi` stacks the base
//! policies' occupation measures as columns; the normalization and stationarity
//! constraints are absorbed by construction, leaving only nonnegativity
//! `Psi * theta >= 0` and the hyperplane `theta' * 1 = 1`.
//!
//! This crate provides:
//!
//! * [`mdp`] — exact finite-MDP primitives: policy kernels, discounted and
//!   stationary occupancies, Bellman backups, value iteration, and
//!   policy/occupancy conversions.
//! * [`features`] — feature-matrix construction (exact or from rollouts),
//!   the state-aggregation matrix, and mixture-policy assembly.
//! * [`bregman`] — Legendre moduli (Euclidean ball and hypercube) with
//!   conjugates, gradient maps, divergences, and the closed-form Bregman
//!   projection onto the hyperplane via a one-dimensional dual.
//! * [`spd`] — the projection-free stochastic primal-dual solver with clipped
//!   dual ascent, eta-weighted running averages, and policy extraction.
//! * [`penalty`] — the projected-subgradient penalty-function baseline.
//! * [`queue`] — the single-queue benchmark MDP with controlled service rate.
//! * [`experiment`] — reproducible multi-trial experiment harness: config
//!   files, trace/summary CSV artifacts, manifest hashing, grid-search
//!   oracles, and a validation suite.
//!
//! Multi-trial execution and grid enumeration run data-parallel through
//! [`parallel`] when the `parallel` feature (default) is enabled, and fall
//! back to sequential loops when it is disabled.

pub mod bregman;
pub mod error;
pub mod experiment;
pub mod features;
pub mod mdp;
pub mod parallel;
pub mod penalty;
pub mod queue;
pub mod spd;
pub mod trace;

pub use error::{Error, Result};
