//! Time integration of the convective nonlocal Cahn-Hilliard equation
//!
//! ```text
//! phi_t + div(phi v) - lap mu = 0,   mu = -K*phi + F'(phi),   d_n mu = 0
//! ```
//!
//! by convex splitting: `F'` implicit, the kernel term and the convection
//! explicit. With `A = -laplacian_neumann` one step solves
//!
//! ```text
//! phi' + dt A F'(phi') = phi - dt div(phi v) + dt A (K*phi)
//! ```
//!
//! by damped Newton. The Jacobian `I + dt A D` with `D = diag F''(phi')`
//! factors as `(D^-1 + dt A) D`, an SPD solve followed by a diagonal scale.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::{
    divergence, gradient, neg_laplacian_raw, solve_diag_plus_laplacian, CgOptions, Grid,
    ScalarField, VectorField,
};
use crate::kernel::KernelTable;
use crate::potential::{PotentialParams, NEWTON_GUARD};

/// Relative tolerance of the linear solves inside Newton and the sensitivity sweeps.
pub const INNER_CG_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StateParams {
    pub dt: f64,
    pub n_steps: usize,
    /// Max-norm residual at which Newton stops.
    pub newton_tol: f64,
    pub newton_max: usize,
    /// Distance to +-1 that Newton iterates must keep.
    pub guard: f64,
}

impl StateParams {
    pub fn new(dt: f64, n_steps: usize) -> Self {
        Self {
            dt,
            n_steps,
            ..Self::default()
        }
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.n_steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.newton_tol > 0.0) || self.newton_max == 0 {
            return Err(Error::InvalidParameter("Newton tolerance and iteration cap must be positive".into()));
        }
        if !(self.guard > 0.0 && self.guard < 0.5) {
            return Err(Error::InvalidParameter(format!("guard {} out of range", self.guard)));
        }
        Ok(())
    }
}

impl Default for StateParams {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            n_steps: 10,
            newton_tol: 1e-10,
            newton_max: 50,
            guard: NEWTON_GUARD,
        }
    }
}

/// Every time slice of the state and per-slice diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StateTrajectory {
    pub phi: Vec<ScalarField>,
    /// `mu[n]` for `n >= 1` is the chemical potential of step `n - 1 -> n`;
    /// `mu[0]` is `F'(phi0) - K*phi0`.
    pub mu: Vec<ScalarField>,
    /// Spatial mean of each slice.
    pub mass: Vec<f64>,
    pub energy: Vec<f64>,
    /// `1 - max |phi|` of each slice.
    pub separation: Vec<f64>,
    pub dt: f64,
}

impl StateTrajectory {
    pub fn n_steps(&self) -> usize {
        self.phi.len() - 1
    }

    pub fn final_state(&self) -> &ScalarField {
        self.phi.last().expect("trajectory holds at least the initial datum")
    }

    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.mass[0];
        self.mass.iter().fold(0.0, |m, v| m.max((v - m0).abs()))
    }

    pub fn min_separation(&self) -> f64 {
        self.separation.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `-1/2 <K*phi, phi> + integral F(phi)`.
pub fn energy(phi: &ScalarField, kernel: &KernelTable, pot: &PotentialParams) -> Result<f64> {
    let f = pot.eval_field(phi, 0)?;
    Ok(-0.5 * kernel.convolve(phi)?.dot(phi) + f.integral())
}

/// Advective Courant number `dt * max|v| / h`.
pub fn courant(v: &VectorField, dt: f64) -> f64 {
    dt * v.max_magnitude() / v.grid().min_h()
}

fn check_cfl(v: &VectorField, dt: f64) -> Result<()> {
    let c = courant(v, dt);
    if c > 0.9 {
        return Err(Error::Cfl { courant: c });
    }
    Ok(())
}

fn max_abs_raw(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn mean_raw(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One convex-splitting step. Returns `(phi^{n+1}, mu^{n+1})` with
/// `mu^{n+1} = F'(phi^{n+1}) - K*phi^n`.
pub fn state_step(
    phi_n: &ScalarField,
    v: &VectorField,
    kernel: &KernelTable,
    pot: &PotentialParams,
    params: &StateParams,
) -> Result<(ScalarField, ScalarField)> {
    let grid = phi_n.grid();
    if v.grid() != grid || kernel.grid() != grid {
        return Err(Error::GridMismatch);
    }
    check_cfl(v, params.dt)?;
    let dt = params.dt;
    let hi = 1.0 - params.guard;
    if phi_n.max_abs() >= hi {
        return Err(Error::InvalidParameter(format!(
            "state leaves (-1 + guard, 1 - guard): max |phi| = {}",
            phi_n.max_abs()
        )));
    }
    let n = grid.len();
    let kphi = kernel.convolve(phi_n)?;
    let mut a_kphi = vec![0.0; n];
    neg_laplacian_raw(grid, kphi.data(), &mut a_kphi);
    let conv = divergence(&v.times_scalar(phi_n));
    let b: Vec<f64> = (0..n)
        .map(|i| phi_n.data()[i] - dt * conv.data()[i] + dt * a_kphi[i])
        .collect();
    let target_mean = phi_n.mean();

    let mut phi = phi_n.data().to_vec();
    let mut fp = vec![0.0; n];
    let mut a_fp = vec![0.0; n];
    let residual = |phi: &[f64], fp: &mut [f64], a_fp: &mut [f64]| -> Result<Vec<f64>> {
        for (f, &p) in fp.iter_mut().zip(phi) {
            *f = pot.eval(p, 1)?;
        }
        neg_laplacian_raw(grid, fp, a_fp);
        Ok((0..n).map(|i| phi[i] + dt * a_fp[i] - b[i]).collect())
    };
    let cg = CgOptions {
        rel_tol: INNER_CG_TOL,
        max_iter: None,
    };
    let mut r = residual(&phi, &mut fp, &mut a_fp)?;
    let mut res = max_abs_raw(&r);
    let mut iterations = 0;
    while res > params.newton_tol {
        if iterations == params.newton_max {
            return Err(Error::NewtonFailed { iterations, residual: res });
        }
        iterations += 1;
        let inv_d: Vec<f64> = phi
            .iter()
            .map(|&p| pot.eval(p, 2).map(|d| 1.0 / d))
            .collect::<Result<_>>()?;
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let (z, _) = solve_diag_plus_laplacian(grid, &inv_d, dt, &rhs, cg)?;
        let mut delta: Vec<f64> = z.iter().zip(&inv_d).map(|(z, c)| z * c).collect();
        // keep every iterate on the exact mass of phi_n
        let shift = target_mean - mean_raw(&phi) - mean_raw(&delta);
        delta.iter_mut().for_each(|d| *d += shift);
        let mut alpha = 1.0;
        let mut halvings = 0;
        loop {
            let trial: Vec<f64> = phi.iter().zip(&delta).map(|(p, d)| p + alpha * d).collect();
            if max_abs_raw(&trial) < hi {
                let r_trial = residual(&trial, &mut fp, &mut a_fp)?;
                let res_trial = max_abs_raw(&r_trial);
                if res_trial < res || halvings >= 10 {
                    phi = trial;
                    r = r_trial;
                    res = res_trial;
                    break;
                }
            }
            alpha *= 0.5;
            halvings += 1;
            if halvings > 60 {
                return Err(Error::NewtonFailed { iterations, residual: res });
            }
        }
    }
    let mu: Vec<f64> = fp.iter().zip(kphi.data()).map(|(f, k)| f - k).collect();
    Ok((
        ScalarField::from_vec(grid, phi)?,
        ScalarField::from_vec(grid, mu)?,
    ))
}

fn chemical_potential(phi: &ScalarField, kernel: &KernelTable, pot: &PotentialParams) -> Result<ScalarField> {
    Ok(pot.eval_field(phi, 1)?.sub(&kernel.convolve(phi)?))
}

/// Runs `v.n_steps()` steps from `phi0` and stores every slice.
pub fn simulate(
    phi0: &ScalarField,
    v: &ControlField,
    kernel: &KernelTable,
    pot: &PotentialParams,
    params: &StateParams,
) -> Result<StateTrajectory> {
    params.validate()?;
    if v.n_steps() != params.n_steps {
        return Err(Error::Shape(format!(
            "control has {} slices, expected {}",
            v.n_steps(),
            params.n_steps
        )));
    }
    if v.grid() != phi0.grid() {
        return Err(Error::GridMismatch);
    }
    if phi0.max_abs() >= 1.0 - params.guard {
        return Err(Error::InvalidParameter(format!(
            "initial datum not separated: max |phi0| = {}",
            phi0.max_abs()
        )));
    }
    let mut traj = StateTrajectory {
        phi: Vec::with_capacity(params.n_steps + 1),
        mu: Vec::with_capacity(params.n_steps + 1),
        mass: Vec::with_capacity(params.n_steps + 1),
        energy: Vec::with_capacity(params.n_steps + 1),
        separation: Vec::with_capacity(params.n_steps + 1),
        dt: params.dt,
    };
    let push = |traj: &mut StateTrajectory, phi: ScalarField, mu: ScalarField| -> Result<()> {
        traj.mass.push(phi.mean());
        traj.energy.push(energy(&phi, kernel, pot)?);
        traj.separation.push(1.0 - phi.max_abs());
        traj.phi.push(phi);
        traj.mu.push(mu);
        Ok(())
    };
    push(&mut traj, phi0.clone(), chemical_potential(phi0, kernel, pot)?)?;
    for (n, vn) in v.slices().iter().enumerate() {
        let (phi, mu) = state_step(&traj.phi[n], vn, kernel, pot, params).map_err(|e| Error::Step {
            step: n,
            source: Box::new(e),
        })?;
        push(&mut traj, phi, mu)?;
    }
    Ok(traj)
}

/// Discrete energy balance residual at every time level:
///
/// ```text
/// r_m = E(phi^m) - E(phi^0) + sum_{n<m} dt [ |grad mu^{n+1}|^2 - <phi^n v^n, grad mu^{n+1}> ]
/// ```
///
/// The convective work enters with a minus sign, since testing
/// `phi_t = -div(phi v) + lap mu` with `mu` gives
/// `dE/dt = <phi v, grad mu> - |grad mu|^2`.
pub fn energy_identity_residual(traj: &StateTrajectory, v: &ControlField) -> Result<Vec<f64>> {
    if v.n_steps() != traj.n_steps() {
        return Err(Error::Shape("control and trajectory lengths differ".into()));
    }
    let e0 = traj.energy[0];
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(traj.phi.len());
    out.push(traj.energy[0] - e0);
    for n in 0..traj.n_steps() {
        let gmu = gradient(&traj.mu[n + 1]);
        let work = v.slices()[n].times_scalar(&traj.phi[n]).dot(&gmu);
        acc += traj.dt * (gmu.dot(&gmu) - work);
        out.push(traj.energy[n + 1] - e0 + acc);
    }
    Ok(out)
}

/// Smooth Neumann-compatible random field `mean + amplitude * s` with
/// `max |s| = 1` and `s` of zero mean, built from low cosine modes.
pub fn smooth_random_field(grid: &Grid, seed: u64, mean: f64, amplitude: f64) -> ScalarField {
    const MODES: usize = 4;
    let dim = grid.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = (MODES + 1).pow(dim as u32);
    let coef: Vec<f64> = (0..count).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let s = ScalarField::from_fn(grid, |x| {
        let mut acc = 0.0;
        for (k, c) in coef.iter().enumerate().skip(1) {
            let mut term = *c;
            let mut rem = k;
            for d in 0..dim {
                let m = (rem % (MODES + 1)) as f64;
                rem /= MODES + 1;
                term *= (m * PI * x[d] / grid.length()[d]).cos();
            }
            acc += term;
        }
        acc
    })
    .centered();
    let m = s.max_abs();
    s.map(|v| mean + amplitude * v / m)
}
