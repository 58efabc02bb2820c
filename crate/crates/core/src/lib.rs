//! Numerical engine for master equations of classical systems with a
//! varying number of particles.
//!
//! The state is a truncated family of n-particle densities
//! ([`fockspace::FockDensity`]) evolved by per-level transport generators
//! ([`transport`]) and number-changing couplings ([`coupling`]). The
//! [`solver`] integrates the hierarchy directly on a grid, the [`sampler`]
//! simulates the same process with particles, and [`reduction`] provides
//! the well-mixed chemical master equation, SSA and mean-field oracles.

pub mod error;
pub mod fockspace;
pub mod transport;
pub mod coupling;
pub mod solver;
pub mod reduction;
pub mod sampler;
pub mod cli;

pub use error::{Error, Result};
