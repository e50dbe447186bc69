//! Insensitizing controls for fourth-order semilinear parabolic equations.
//!
//! The pipeline: validate a [`problem::ProblemConfig`], build the Carleman
//! weights, synthesize a control for the cascade system by penalized HUM
//! ([`hum`]), and for nonlinear `F` wrap that in a Picard loop
//! ([`semilinear`]). The sentinel probe in [`cascade`] checks the result.

// `!(x > 0.0)` is the NaN-rejecting guard used throughout
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod cascade;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod hum;
pub mod nonlinearity;
pub mod pde;
pub mod problem;
pub mod quadrature;
pub mod rng;
pub mod semilinear;
pub mod spectral;
pub mod weights;

pub use error::{Error, Result};
pub use exec::Exec;
pub use nonlinearity::Nonlinearity;
pub use pde::{SolverOptions, Trajectory};
pub use problem::{
    build_grid, build_mask, validate_problem, Grid, ProblemConfig, Region, SubdomainMask, ValidatedProblem,
};
pub use spectral::Field;
