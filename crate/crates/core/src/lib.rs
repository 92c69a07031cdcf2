//! Bayesian lenses, statistical open games, and their dynamical realisations.
//!
//! The crate is organised bottom-up:
//!
//! - [`prob`]: states and channels over two interchangeable backends (exact
//!   finite tables and linear-Gaussian kernels), with composition, tensor,
//!   Bayesian inversion, densities and divergences.
//! - [`lens`]: Bayesian lenses (a forward channel paired with a
//!   prior-dependent backward channel), their composition and the randomized
//!   check that exact inversions compose optically.
//! - [`games`]: contexts, optimization games over Bayesian lenses and the
//!   maximum-likelihood, inference, autoencoder and active-inference families.
//! - [`dynamics`]: discrete-time Moore systems, dynamical lenses and contexts,
//!   closure, stepping, trajectories and fixed points.
//! - [`realisation`]: gradient realisations of games, the cybernetic check and
//!   the thermostat scenario.
//!
//! All numeric tolerances live in [`TOL`].

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity, clippy::new_ret_no_self)]

pub mod config;
pub mod dynamics;
pub mod error;
pub mod games;
pub mod lens;
pub mod prob;
pub mod random;
pub mod realisation;
pub mod rng;

pub use error::{Error, Result};

/// Numeric tolerances shared by every module and by the property tests.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Row sums and total mass must be within this of one.
    pub norm: f64,
    /// Outcomes with mass at or below this are treated as unsupported.
    pub supp: f64,
    /// Slack allowed below zero for divergences.
    pub div: f64,
    /// Default threshold for almost-equality of state families.
    pub almost_eq: f64,
    /// Covariance symmetry slack.
    pub sym: f64,
    /// Eigenvalues of a covariance may dip this far below zero.
    pub psd: f64,
    /// Smallest eigenvalue accepted when a matrix must be inverted.
    pub pd: f64,
    /// Objective values within this of the minimum count as ties.
    pub tie: f64,
}

pub const TOL: Tolerances = Tolerances {
    norm: 1e-9,
    supp: 1e-12,
    div: 1e-12,
    almost_eq: 1e-9,
    sym: 1e-9,
    psd: 1e-9,
    pd: 1e-12,
    tie: 1e-9,
};
