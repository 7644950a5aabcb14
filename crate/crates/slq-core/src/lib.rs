//! Numerical toolkit for stochastic linear-quadratic (LQ) optimal control of
//! stochastic evolution equations with random coefficients.
//!
//! The state space is truncated onto the leading eigenmodes of a negative
//! self-adjoint operator A (spectral Galerkin). On that truncation the crate
//!
//! - builds the eigenbasis, weighted norms, and Galerkin matrices of
//!   multiplication operators ([`spectral`]),
//! - defines LQ problem data with deterministic or Brownian-functional
//!   coefficients and numeric surrogates for the standing assumptions
//!   ([`problem`]),
//! - simulates the controlled forward equation by an exponential Euler scheme
//!   and evaluates quadratic costs ([`forward`]),
//! - solves the backward stochastic Riccati equation in the deterministic
//!   regime (ODE) and in the random-coefficient regime (regression Monte
//!   Carlo, plus a linear-Lyapunov fixed point in the feedback parameter)
//!   ([`riccati`]),
//! - verifies the characterizing identities of the optimal feedback by Monte
//!   Carlo: transposition identities, the value formula, optimality margins,
//!   the cost decomposition, and the stationarity constraint ([`verify`]).
//!
//! All stochastic routines draw from counter-based per-path RNG streams and
//! reduce in path order, so results are bitwise reproducible at any level of
//! parallelism.

pub mod error;
pub mod forward;
pub mod presets;
pub mod problem;
pub mod quadrature;
pub mod regression;
pub mod riccati;
pub mod spectral;
pub mod verify;

pub use error::{Error, Result};
