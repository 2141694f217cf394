use std::fmt;
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Cell-centered uniform grid on the box `[0, length_0] x ... x [0, length_{d-1}]`.
///
/// Cheap to clone; clones share the cached per-axis spectral data used by
/// the Neumann solvers.
#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

struct GridInner {
    n: Vec<usize>,
    length: Vec<f64>,
    h: Vec<f64>,
    strides: Vec<usize>,
    axes: OnceLock<Vec<AxisSpectrum>>,
}

/// Eigen-decomposition of the 1D operator `G^T G` along one axis, where `G`
/// is the reflecting-ghost central difference.
pub(crate) struct AxisSpectrum {
    /// Orthonormal eigenvectors, column `k` is mode `k`.
    pub(crate) vectors: DMatrix<f64>,
    pub(crate) values: Vec<f64>,
    /// Index of the constant (null) mode.
    pub(crate) null_mode: usize,
}

impl Grid {
    /// Builds a grid with `n[d]` cells of width `length[d] / n[d]` along axis `d`.
    pub fn new(dim: usize, n: &[usize], length: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return Err(Error::Dimension(dim));
        }
        if n.len() != dim || length.len() != dim {
            return Err(Error::InvalidGrid(format!(
                "expected {dim} sizes and extents, got {} and {}",
                n.len(),
                length.len()
            )));
        }
        for (axis, &cells) in n.iter().enumerate() {
            if cells < 4 {
                return Err(Error::GridTooSmall { axis, n: cells });
            }
        }
        if let Some(bad) = length.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidGrid(format!("non-positive extent {bad}")));
        }
        let h = n.iter().zip(length).map(|(&c, &l)| l / c as f64).collect();
        let mut strides = vec![1; dim];
        for d in (0..dim - 1).rev() {
            strides[d] = strides[d + 1] * n[d + 1];
        }
        Ok(Self {
            inner: Arc::new(GridInner {
                n: n.to_vec(),
                length: length.to_vec(),
                h,
                strides,
                axes: OnceLock::new(),
            }),
        })
    }

    pub fn dim(&self) -> usize {
        self.inner.n.len()
    }

    pub fn n(&self) -> &[usize] {
        &self.inner.n
    }

    pub fn length(&self) -> &[f64] {
        &self.inner.length
    }

    pub fn h(&self) -> &[f64] {
        &self.inner.h
    }

    pub fn min_h(&self) -> f64 {
        self.inner.h.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn strides(&self) -> &[usize] {
        &self.inner.strides
    }

    pub fn len(&self) -> usize {
        self.inner.n.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.inner.h.iter().product()
    }

    pub fn volume(&self) -> f64 {
        self.inner.length.iter().product()
    }

    /// Multi-index of flat cell `idx`.
    pub fn index_of(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for (d, s) in self.inner.strides.iter().enumerate() {
            out[d] = idx / s;
            idx %= s;
        }
        out
    }

    /// Physical coordinates of the center of flat cell `idx`.
    pub fn center(&self, idx: usize) -> Vec<f64> {
        self.index_of(idx)
            .iter()
            .zip(self.h())
            .map(|(&i, &h)| (i as f64 + 0.5) * h)
            .collect()
    }

    /// Calls `f(offset, stride)` for every grid line along `axis`.
    pub(crate) fn for_each_line(&self, axis: usize, mut f: impl FnMut(usize, usize)) {
        let stride = self.inner.strides[axis];
        let block = stride * self.inner.n[axis];
        let outer = self.len() / block;
        for o in 0..outer {
            for i in 0..stride {
                f(o * block + i, stride);
            }
        }
    }

    pub(crate) fn spectra(&self) -> &[AxisSpectrum] {
        self.inner.axes.get_or_init(|| {
            (0..self.dim())
                .map(|d| AxisSpectrum::new(self.inner.n[d], self.inner.h[d]))
                .collect()
        })
    }
}

impl AxisSpectrum {
    fn new(n: usize, h: f64) -> Self {
        let g = difference_matrix(n, h);
        let t = g.transpose() * &g;
        let eig = SymmetricEigen::new(t);
        let values: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        let null_mode = values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(k, _)| k)
            .unwrap_or(0);
        let mut vectors = eig.eigenvectors;
        // pin the null mode to the exact normalized constant
        let c = 1.0 / (n as f64).sqrt();
        vectors.column_mut(null_mode).fill(c);
        let mut values = values;
        values[null_mode] = 0.0;
        Self {
            vectors,
            values,
            null_mode,
        }
    }
}

/// Dense 1D central-difference matrix with reflecting ghosts.
pub(crate) fn difference_matrix(n: usize, h: f64) -> DMatrix<f64> {
    let c = 0.5 / h;
    let mut g = DMatrix::zeros(n, n);
    for i in 0..n {
        let lo = i.saturating_sub(1);
        let hi = (i + 1).min(n - 1);
        g[(i, hi)] += c;
        g[(i, lo)] -= c;
    }
    g
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
            || (self.inner.n == other.inner.n && self.inner.length == other.inner.length)
    }
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("n", &self.inner.n)
            .field("length", &self.inner.length)
            .field("h", &self.inner.h)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_from_extent() {
        let g = Grid::new(2, &[8, 8], &[1.0, 1.0]).unwrap();
        assert_eq!(g.h(), &[0.125, 0.125]);
        let g = Grid::new(3, &[4, 4, 4], &[2.0, 1.0, 1.0]).unwrap();
        assert_eq!(g.h(), &[0.5, 0.25, 0.25]);
        assert_eq!(g.len(), 64);
    }

    #[test]
    fn rejects_small_and_bad_dims() {
        let err = Grid::new(2, &[2, 8], &[1.0, 1.0]).unwrap_err();
        assert!(err.to_string().contains("grid too small"));
        assert_eq!(Grid::new(1, &[8], &[1.0]).unwrap_err(), Error::Dimension(1));
        assert_eq!(
            Grid::new(4, &[4; 4], &[1.0; 4]).unwrap_err(),
            Error::Dimension(4)
        );
        assert!(Grid::new(2, &[8, 8], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(3, &[4, 5, 6], &[1.0, 1.0, 1.0]).unwrap();
        let idx = g.index_of(2 * 30 + 3 * 6 + 4);
        assert_eq!(idx, vec![2, 3, 4]);
    }

    #[test]
    fn axis_spectrum_diagonalizes() {
        let n = 9;
        let h = 0.3;
        let s = AxisSpectrum::new(n, h);
        let g = difference_matrix(n, h);
        let t = g.transpose() * &g;
        let q = &s.vectors;
        let lam = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(s.values.clone()));
        let err = (&t * q - q * lam).abs().max();
        assert!(err < 1e-10, "{err}");
        // only the constant mode is null
        let zeros = s.values.iter().filter(|v| v.abs() < 1e-8).count();
        assert_eq!(zeros, 1);
    }
}
