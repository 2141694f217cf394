//! Grid-sampled fields, Neumann difference operators and Poisson solves.

mod grid;
mod ops;
mod reduce;
mod solve;
mod types;

pub use grid::Grid;
pub use ops::{divergence, gradient, laplacian_neumann};
pub use reduce::{reduce, Reduction};
pub use solve::{inv_neumann_laplacian, inv_neumann_laplacian_with, CgOptions, CgReport, POISSON_TOL};
pub use types::{ScalarField, VectorField};

pub(crate) use ops::neg_laplacian_raw;
pub(crate) use solve::solve_diag_plus_laplacian;
