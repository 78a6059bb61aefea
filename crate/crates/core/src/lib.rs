//! Numerical toolkit for variational problems driven by Caputo fractional
//! derivatives.
//!
//! The crate has two halves that check each other:
//!
//! * [`direct`] discretizes the cost functional with truncated
//!   Grünwald–Letnikov derivatives and solves the resulting stationarity
//!   system with a damped Newton iteration.
//! * [`indirect`] audits candidate trajectories against the fractional
//!   Euler–Lagrange equation, transversality values, the Legendre condition
//!   and sampled convexity, including isoperimetric and holonomic
//!   multiplier conditions.
//!
//! [`fracops`] supplies the shared discrete operators and [`problems`] the
//! problem model plus a small expression language for Lagrangians. [`cli`]
//! is the command-line front end used by the `fracvar` binary.

pub mod cli;
pub mod direct;
mod error;
pub mod fracops;
pub mod indirect;
pub mod problems;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
