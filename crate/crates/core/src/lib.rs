//! Numerical toolkit for variance continuity of Lorenz-like flows.
//!
//! The crate is organised bottom-up:
//!
//! - [`onedmap`]: Lorenz-like expanding interval maps, variation norms and
//!   Ulam discretisations of their transfer operators.
//! - [`skewmap`]: the two-dimensional skew-product return map, SRB orbit
//!   sampling, anisotropic seminorms and map-level variance estimators.
//! - [`suspension`]: log-singular roof functions, induced observables and the
//!   flow-level variance obtained from the map level.
//! - [`lorenzode`]: the classical Lorenz equations, section crossings and the
//!   empirical one-dimensional quotient map.
//! - [`experiments`]: parameter sweeps, modulus fits and cross-checks between
//!   independent estimators.
//! - [`cli`]: configuration parsing and command dispatch for the `lorvar`
//!   binary.

pub mod cli;
pub mod error;
pub mod experiments;
pub mod lorenzode;
pub mod onedmap;
pub mod output;
pub mod quadrature;
pub mod rng;
pub mod skewmap;
pub mod stats;
pub mod suspension;

pub use error::{Error, Result};
