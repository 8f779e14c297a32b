//! Asymmetric self-similar spiral solutions of the 2-D Euler equations.

pub mod cli_io;
pub mod coefficients;
pub mod error;
pub mod linear_ops;
pub mod nonlinear_solver;
pub mod params_grids;
pub mod quadrature;
pub mod reconstruction;
pub mod spectral_field;
pub mod verification;

pub use error::{Result, SpiralError};
