use super::ops::gradient;
use super::solve::inv_neumann_laplacian;
use super::types::ScalarField;
use crate::error::Result;

/// Scalar reductions of a field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Integral,
    L2,
    Linf,
    /// L2 norm of the discrete gradient.
    H1Semi,
    /// Dual norm `|| grad N f ||` of a mean-zero field.
    VStar,
}

pub fn reduce(f: &ScalarField, kind: Reduction) -> Result<f64> {
    Ok(match kind {
        Reduction::Mean => f.mean(),
        Reduction::Integral => f.integral(),
        Reduction::L2 => f.norm(),
        Reduction::Linf => f.max_abs(),
        Reduction::H1Semi => gradient(f).norm(),
        Reduction::VStar => gradient(&inv_neumann_laplacian(f)?).norm(),
    })
}
