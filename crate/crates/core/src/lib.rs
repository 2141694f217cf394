//! Numerical laboratory for the convective nonlocal Cahn-Hilliard equation
//! with a logarithmic potential, together with its linearized and adjoint
//! systems and a projected-gradient solver for optimal velocity control.
//!
//! All operators act on cell-centered fields over a rectangular box with
//! homogeneous Neumann conditions. The discrete adjoint is the exact
//! transpose of the implemented forward scheme.

pub mod error;
pub mod field;

pub use error::{Error, Result};
pub mod kernel;
pub mod potential;
pub mod control;
pub mod leray;
pub mod state;
pub mod sensitivity;
pub mod optimizer;
