//! Linear solvers for the Neumann operators.
//!
//! `A = -laplacian_neumann` is a sum of per-axis Kronecker terms, so the
//! shifted operator `c I + s A` is diagonalized by the tensor product of
//! the 1D eigenbases cached on the [`Grid`]. That exact inverse is the
//! preconditioner for every conjugate-gradient solve in the crate.

use super::grid::Grid;
use super::ops::neg_laplacian_raw;
use super::types::{raw_dot, ScalarField};
use crate::error::{Error, Result};

/// Relative residual tolerance of the Neumann Poisson solves.
pub const POISSON_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgOptions {
    pub rel_tol: f64,
    /// `None` means `10 * N`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self {
            rel_tol: POISSON_TOL,
            max_iter: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CgReport {
    pub iterations: usize,
    pub residual: f64,
}

/// Applies `Q^T` (`transpose`) or `Q` along `axis`. Each contiguous block
/// of lines is a row-major `n x stride` matrix `M`, so the transform is the
/// product `Q^T M` or `Q M`.
fn apply_along_axis(grid: &Grid, data: &mut [f64], axis: usize, transpose: bool) {
    let q = grid.spectra()[axis].vectors.as_slice();
    let n = grid.n()[axis];
    let stride = grid.strides()[axis];
    // q is column-major: Q[j][k] = q[j + k n]
    let (rsa, csa) = if transpose { (n as isize, 1) } else { (1, n as isize) };
    let mut buf = vec![0.0; data.len()];
    if stride == 1 {
        // contiguous lines: the whole field is a row-major `lines x n`
        // matrix `X`, transformed as `X Q` or `X Q^T`
        let lines = data.len() / n;
        unsafe {
            matrixmultiply::dgemm(
                lines,
                n,
                n,
                1.0,
                data.as_ptr(),
                n as isize,
                1,
                q.as_ptr(),
                csa,
                rsa,
                0.0,
                buf.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        data.copy_from_slice(&buf);
        return;
    }
    buf.truncate(stride * n);
    for chunk in data.chunks_mut(stride * n) {
        unsafe {
            matrixmultiply::dgemm(
                n,
                n,
                stride,
                1.0,
                q.as_ptr(),
                rsa,
                csa,
                chunk.as_ptr(),
                stride as isize,
                1,
                0.0,
                buf.as_mut_ptr(),
                stride as isize,
                1,
            );
        }
        chunk.copy_from_slice(&buf);
    }
}

/// Eigenvalues of `A` in the tensor eigenbasis, flat-indexed like the grid.
fn eigen_sums(grid: &Grid) -> (Vec<f64>, usize) {
    let spectra = grid.spectra();
    let mut out = vec![0.0; grid.len()];
    let mut null = 0;
    for (d, spec) in spectra.iter().enumerate() {
        let stride = grid.strides()[d];
        let n = grid.n()[d];
        for (i, o) in out.iter_mut().enumerate() {
            *o += spec.values[(i / stride) % n];
        }
        null += spec.null_mode * stride;
    }
    (out, null)
}

/// Direct solve of `(shift I + scale A) z = r`. With `shift == 0` the
/// constant mode of `r` is discarded and `z` has zero mean.
pub(crate) fn shifted_solve(grid: &Grid, shift: f64, scale: f64, r: &[f64]) -> Vec<f64> {
    let mut z = r.to_vec();
    for axis in 0..grid.dim() {
        apply_along_axis(grid, &mut z, axis, true);
    }
    let (lam, null) = eigen_sums(grid);
    for (i, (zi, l)) in z.iter_mut().zip(&lam).enumerate() {
        let denom = shift + scale * l;
        *zi = if shift == 0.0 && i == null { 0.0 } else { *zi / denom };
    }
    for axis in 0..grid.dim() {
        apply_along_axis(grid, &mut z, axis, false);
    }
    z
}

/// Preconditioned conjugate gradients on raw vectors.
pub(crate) fn pcg(
    apply: impl Fn(&[f64], &mut [f64]),
    precond: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Option<Vec<f64>>,
    opts: CgOptions,
) -> Result<(Vec<f64>, CgReport)> {
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(10 * n);
    let bnorm = raw_dot(b, b).sqrt();
    let mut x = x0.unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok((x, CgReport { iterations: 0, residual: 0.0 }));
    }
    let mut ax = vec![0.0; n];
    apply(&x, &mut ax);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
    let mut rel = raw_dot(&r, &r).sqrt() / bnorm;
    if rel <= opts.rel_tol {
        return Ok((x, CgReport { iterations: 0, residual: rel }));
    }
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = raw_dot(&r, &z);
    let mut ap = vec![0.0; n];
    for it in 1..=max_iter {
        apply(&p, &mut ap);
        let pap = raw_dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            return Err(Error::SolverDiverged { iterations: it, residual: rel });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        rel = raw_dot(&r, &r).sqrt() / bnorm;
        if rel <= opts.rel_tol {
            return Ok((x, CgReport { iterations: it, residual: rel }));
        }
        z = precond(&r);
        let rz_new = raw_dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::SolverDiverged { iterations: max_iter, residual: rel })
}

fn remove_mean(v: &mut [f64]) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= m);
}

/// Mean-zero solution `psi` of `-laplacian_neumann(psi) = f`.
pub fn inv_neumann_laplacian(f: &ScalarField) -> Result<ScalarField> {
    inv_neumann_laplacian_with(f, CgOptions::default())
}

pub fn inv_neumann_laplacian_with(f: &ScalarField, opts: CgOptions) -> Result<ScalarField> {
    let grid = f.grid();
    let norm = f.norm();
    let mean = f.mean();
    // compare the mean contribution against the field norm, both in L2
    let tol = 1e-10 * norm.max(f64::MIN_POSITIVE);
    if (mean * grid.volume().sqrt()).abs() > tol {
        return Err(Error::IncompatibleNeumann { mean, tol });
    }
    let mut b = f.data().to_vec();
    remove_mean(&mut b);
    let apply = |x: &[f64], out: &mut [f64]| neg_laplacian_raw(grid, x, out);
    let precond = |r: &[f64]| shifted_solve(grid, 0.0, 1.0, r);
    let (mut x, _) = pcg(apply, precond, &b, None, opts)?;
    remove_mean(&mut x);
    Ok(ScalarField::from_raw(grid, x))
}

/// Solves `(diag(coef) + scale A) z = r` for positive `coef`.
pub(crate) fn solve_diag_plus_laplacian(
    grid: &Grid,
    coef: &[f64],
    scale: f64,
    r: &[f64],
    opts: CgOptions,
) -> Result<(Vec<f64>, CgReport)> {
    let shift = coef.iter().sum::<f64>() / coef.len() as f64;
    let apply = |x: &[f64], out: &mut [f64]| {
        neg_laplacian_raw(grid, x, out);
        for ((o, &c), &xi) in out.iter_mut().zip(coef).zip(x) {
            *o = c * xi + scale * *o;
        }
    };
    let precond = |r: &[f64]| shifted_solve(grid, shift, scale, r);
    pcg(apply, precond, r, None, opts)
}
