//! Helmholtz decomposition, the Leray projector onto discretely solenoidal
//! fields, and projection onto the admissible control set (box intersected
//! with the solenoidal subspace).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::{
    divergence, gradient, inv_neumann_laplacian_with, CgOptions, Grid, ScalarField, VectorField,
};

/// Relative residual of the Poisson solve inside [`leray_project`].
pub const LERAY_TOL: f64 = 1e-13;
pub const DYKSTRA_TOL: f64 = 1e-8;
pub const DYKSTRA_MAX_ITER: usize = 500;

/// Componentwise bounds of the control box.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlBounds {
    vmin: VectorField,
    vmax: VectorField,
}

impl ControlBounds {
    /// Constant bounds per component.
    pub fn uniform(grid: &Grid, vmin: &[f64], vmax: &[f64]) -> Result<Self> {
        if vmin.len() != grid.dim() || vmax.len() != grid.dim() {
            return Err(Error::Shape(format!(
                "bounds need {} components",
                grid.dim()
            )));
        }
        let build = |vals: &[f64]| {
            VectorField::from_components(
                vals.iter()
                    .map(|&v| ScalarField::constant(grid, v))
                    .collect(),
            )
        };
        Self::from_fields(build(vmin)?, build(vmax)?)
    }

    pub fn from_fields(vmin: VectorField, vmax: VectorField) -> Result<Self> {
        if vmin.grid() != vmax.grid() {
            return Err(Error::GridMismatch);
        }
        for (axis, (lo, hi)) in vmin.components().iter().zip(vmax.components()).enumerate() {
            for (&l, &h) in lo.data().iter().zip(hi.data()) {
                if l > h {
                    return Err(Error::InvalidParameter(format!(
                        "vmin > vmax on component {axis}"
                    )));
                }
                if l > 0.0 || h < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "bounds on component {axis} exclude zero"
                    )));
                }
            }
        }
        Ok(Self { vmin, vmax })
    }

    pub fn vmin(&self) -> &VectorField {
        &self.vmin
    }

    pub fn vmax(&self) -> &VectorField {
        &self.vmax
    }

    /// Pointwise clip into the box.
    pub fn project(&self, v: &VectorField) -> VectorField {
        let comps = v
            .components()
            .iter()
            .zip(self.vmin.components().iter().zip(self.vmax.components()))
            .map(|(c, (lo, hi))| {
                let data = c
                    .data()
                    .iter()
                    .zip(lo.data().iter().zip(hi.data()))
                    .map(|(&x, (&l, &h))| x.clamp(l, h))
                    .collect();
                ScalarField::from_vec(c.grid(), data).expect("clip keeps values finite")
            })
            .collect();
        VectorField::from_components(comps).expect("same grid")
    }

    /// Largest amount by which `v` leaves the box.
    pub fn violation(&self, v: &VectorField) -> f64 {
        let mut worst: f64 = 0.0;
        for (c, (lo, hi)) in v
            .components()
            .iter()
            .zip(self.vmin.components().iter().zip(self.vmax.components()))
        {
            for (&x, (&l, &h)) in c.data().iter().zip(lo.data().iter().zip(hi.data())) {
                worst = worst.max(l - x).max(x - h);
            }
        }
        worst
    }
}

/// Mean-zero `psi` with `laplacian_neumann(psi) = rhs`.
pub fn poisson_neumann(rhs: &ScalarField) -> Result<ScalarField> {
    poisson_neumann_with(rhs, CgOptions::default())
}

fn poisson_neumann_with(rhs: &ScalarField, opts: CgOptions) -> Result<ScalarField> {
    inv_neumann_laplacian_with(&rhs.scale(-1.0), opts)
}

/// `P v = v - grad psi` with `laplacian_neumann(psi) = div v`.
pub fn leray_project(v: &VectorField) -> Result<VectorField> {
    let opts = CgOptions {
        rel_tol: LERAY_TOL,
        max_iter: None,
    };
    let div = divergence(v);
    if div.max_abs() == 0.0 {
        return Ok(v.clone());
    }
    let psi = poisson_neumann_with(&div.centered(), opts)?;
    Ok(v.sub(&gradient(&psi)))
}

/// Outcome of a Dykstra projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DykstraReport {
    pub iterations: usize,
    pub converged: bool,
    /// L2 change of the last cycle.
    pub change: f64,
    pub box_violation: f64,
    /// Max norm of the divergence of the result.
    pub divergence: f64,
}

/// Metric projection onto `{v : vmin <= v <= vmax, div v = 0}` by Dykstra's
/// alternating scheme. Non-convergence is reported, not raised.
pub fn project_to_admissible(
    v: &VectorField,
    bounds: &ControlBounds,
    tol: f64,
    max_iter: usize,
) -> Result<(VectorField, DykstraReport)> {
    let mut x = v.clone();
    let mut p = VectorField::zeros(v.grid());
    let mut q = VectorField::zeros(v.grid());
    let mut report = DykstraReport {
        iterations: 0,
        converged: false,
        change: f64::INFINITY,
        box_violation: bounds.violation(v),
        divergence: divergence(v).max_abs(),
    };
    for it in 1..=max_iter {
        let y = bounds.project(&x.add(&p));
        p = x.add(&p).sub(&y);
        let x_new = leray_project(&y.add(&q))?;
        q = y.add(&q).sub(&x_new);
        let change = x_new.sub(&x).norm();
        x = x_new;
        report.iterations = it;
        report.change = change;
        report.box_violation = bounds.violation(&x);
        if change <= tol && report.box_violation <= tol {
            report.converged = true;
            break;
        }
    }
    report.divergence = divergence(&x).max_abs();
    Ok((x, report))
}

/// Slice-by-slice admissible projection of a time-dependent control.
pub fn project_control(
    v: &ControlField,
    bounds: &ControlBounds,
    tol: f64,
    max_iter: usize,
) -> Result<(ControlField, Vec<DykstraReport>)> {
    let out: Vec<(VectorField, DykstraReport)> = v
        .slices()
        .par_iter()
        .map(|s| project_to_admissible(s, bounds, tol, max_iter))
        .collect::<Result<_>>()?;
    let (slices, reports): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    Ok((ControlField::from_slices(v.grid(), slices)?, reports))
}

/// Slice-by-slice Leray projection.
pub fn leray_project_control(v: &ControlField) -> Result<ControlField> {
    let slices = v
        .slices()
        .par_iter()
        .map(leray_project)
        .collect::<Result<Vec<_>>>()?;
    ControlField::from_slices(v.grid(), slices)
}

/// Smooth window on one axis, exactly zero on the three outermost cells.
fn window(grid: &Grid, axis: usize, x: f64) -> f64 {
    let n = grid.n()[axis];
    let h = grid.h()[axis];
    let lo = 2.5 * h;
    let hi = (n as f64 - 2.5) * h;
    if hi <= lo || x <= lo || x >= hi {
        return 0.0;
    }
    (PI * (x - lo) / (hi - lo)).sin().powi(2)
}

fn random_potential(grid: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
    const MODES: usize = 3;
    let dim = grid.dim();
    let count = MODES.pow(dim as u32);
    let coef: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let phase: Vec<f64> = (0..count * dim).map(|_| rng.gen_range(0.0..PI)).collect();
    ScalarField::from_fn(grid, |x| {
        let w: f64 = (0..dim).map(|d| window(grid, d, x[d])).product();
        if w == 0.0 {
            return 0.0;
        }
        let mut s = 0.0;
        for (k, c) in coef.iter().enumerate() {
            let mut term = *c;
            let mut rem = k;
            for d in 0..dim {
                let m = (rem % MODES + 1) as f64;
                rem /= MODES;
                term *= (m * PI * x[d] / grid.length()[d] + phase[k * dim + d]).cos();
            }
            s += term;
        }
        w * s
    })
}

/// Deterministic random solenoidal field supported away from the boundary,
/// scaled so that its largest pointwise magnitude equals `amplitude`.
///
/// In 2D it is the discrete rotated gradient of a stream function, in 3D the
/// discrete curl of a vector potential. Both potentials vanish on a layer of
/// three cells, so only interior stencils are involved and the discrete
/// divergence vanishes to rounding.
pub fn random_solenoidal(grid: &Grid, seed: u64, amplitude: f64) -> VectorField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = match grid.dim() {
        2 => {
            let s = random_potential(grid, &mut rng);
            let g = gradient(&s);
            VectorField::from_components(vec![g.component(1).clone(), g.component(0).scale(-1.0)])
                .expect("same grid")
        }
        _ => {
            let a: Vec<VectorField> = (0..3)
                .map(|_| gradient(&random_potential(grid, &mut rng)))
                .collect();
            // d_i A_j is a[j].component(i)
            let curl = |_i: usize, j: usize, k: usize| {
                a[k].component(j).sub(a[j].component(k))
            };
            VectorField::from_components(vec![curl(0, 1, 2), curl(1, 2, 0), curl(2, 0, 1)])
                .expect("same grid")
        }
    };
    let m = v.max_magnitude();
    if m == 0.0 || amplitude == 0.0 {
        return VectorField::zeros(grid);
    }
    v.scale(amplitude / m)
}
