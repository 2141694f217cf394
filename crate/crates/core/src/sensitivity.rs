//! Linearized and adjoint systems of the discrete state map.
//!
//! Writing one state step as `phi' = Phi(phi, v)` with Jacobian
//! `J = I + dt A D'` (`A = -laplacian`, `D' = diag F''(phi')`), the
//! linearized step in direction `w` is
//!
//! ```text
//! J xi' = B xi - dt div(phi w),   B xi = xi - dt div(xi v) + dt A (K*xi)
//! ```
//!
//! The adjoint sweep is its exact transpose. With `p^N` the terminal datum,
//! going backward:
//!
//! ```text
//! J^T p*^{n+1} = p^{n+1}
//! p^n = B_n^T p*^{n+1} + dt gamma1 (phi^n - phi_Q^n),
//! B_n^T p* = p* + dt v^n . grad p* + dt K*(A p*)
//! ```
//!
//! The running source at `n` is paired with `xi^n`, the convective and
//! kernel transposes land on `p*^{n+1}` while the tracking source lands on
//! `p^n`. The control enters through `dt <phi^n grad p*^{n+1}, w^n>`.

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::{
    divergence, gradient, neg_laplacian_raw, solve_diag_plus_laplacian, CgOptions, Grid,
    ScalarField, VectorField,
};
use crate::kernel::KernelTable;
use crate::leray::leray_project;
use crate::potential::PotentialParams;
use crate::state::{StateParams, StateTrajectory, INNER_CG_TOL};

/// Tracking targets and weights of the cost functional.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetData {
    /// Either a single slice used at every time, or one slice per time level.
    pub phi_q: Vec<ScalarField>,
    pub phi_omega: ScalarField,
    pub gamma: [f64; 3],
}

impl TargetData {
    pub fn new(phi_q: Vec<ScalarField>, phi_omega: ScalarField, gamma: [f64; 3]) -> Result<Self> {
        let t = Self {
            phi_q,
            phi_omega,
            gamma,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.gamma.iter().any(|g| !(*g >= 0.0 && g.is_finite())) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        if self.gamma.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidParameter(
                "C3 violated: not all zero required".into(),
            ));
        }
        if self.phi_q.is_empty() {
            return Err(Error::Shape("phi_q needs at least one slice".into()));
        }
        let grid = self.phi_omega.grid();
        if self.phi_q.iter().any(|f| f.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    /// Target at time level `n`.
    pub fn phi_q_at(&self, n: usize) -> &ScalarField {
        if self.phi_q.len() == 1 {
            &self.phi_q[0]
        } else {
            &self.phi_q[n.min(self.phi_q.len() - 1)]
        }
    }

    pub(crate) fn check_len(&self, n_steps: usize) -> Result<()> {
        if self.phi_q.len() != 1 && self.phi_q.len() < n_steps {
            return Err(Error::Shape(format!(
                "phi_q has {} slices, need 1 or at least {n_steps}",
                self.phi_q.len()
            )));
        }
        Ok(())
    }

    /// Same data with weights multiplied by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            gamma: self.gamma.map(|g| g * lambda),
            ..self.clone()
        }
    }

    pub fn with_gamma(self, gamma: [f64; 3]) -> Result<Self> {
        Self::new(self.phi_q, self.phi_omega, gamma)
    }
}

/// Solution of the backward sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointTrajectory {
    /// `p[N]` is the terminal datum `gamma2 (phi^N - phi_Omega)`.
    pub p: Vec<ScalarField>,
    /// `q[n] = -laplacian(p_star[n])` for `n >= 1`; `q[0]` is zero.
    pub q: Vec<ScalarField>,
    /// `p_star[n] = J_n^{-T} p[n]` for `n >= 1`; `p_star[0]` is zero.
    pub p_star: Vec<ScalarField>,
}

/// Linearized variables `(xi, eta)` at every time level.
#[derive(Clone, Debug, PartialEq)]
pub struct Linearized {
    pub xi: Vec<ScalarField>,
    pub eta: Vec<ScalarField>,
}

fn cg() -> CgOptions {
    CgOptions {
        rel_tol: INNER_CG_TOL,
        max_iter: None,
    }
}

fn neg_lap(f: &ScalarField) -> ScalarField {
    let mut out = vec![0.0; f.grid().len()];
    neg_laplacian_raw(f.grid(), f.data(), &mut out);
    ScalarField::from_vec(f.grid(), out).expect("finite")
}

fn inv_second_derivative(phi: &ScalarField, pot: &PotentialParams) -> Result<Vec<f64>> {
    phi.data()
        .iter()
        .map(|&s| pot.eval(s, 2).map(|d| 1.0 / d))
        .collect()
}

fn check_shapes(traj: &StateTrajectory, v: &ControlField) -> Result<()> {
    if v.n_steps() != traj.n_steps() {
        return Err(Error::Shape(format!(
            "control has {} slices, trajectory {} steps",
            v.n_steps(),
            traj.n_steps()
        )));
    }
    Ok(())
}

/// Directional derivative of the state map along `w` at the control `v`
/// that produced `traj`.
pub fn linearized_solve(
    traj: &StateTrajectory,
    v: &ControlField,
    w: &ControlField,
    kernel: &KernelTable,
    pot: &PotentialParams,
    params: &StateParams,
) -> Result<Linearized> {
    check_shapes(traj, v)?;
    check_shapes(traj, w)?;
    let grid = traj.phi[0].grid();
    let dt = params.dt;
    let mut xi = vec![ScalarField::zeros(grid)];
    let mut eta = vec![ScalarField::zeros(grid)];
    for n in 0..traj.n_steps() {
        let x = &xi[n];
        let kx = kernel.convolve(x)?;
        let rhs = x
            .sub(&divergence(&v.slices()[n].times_scalar(x)).scale(dt))
            .add(&neg_lap(&kx).scale(dt))
            .sub(&divergence(&w.slices()[n].times_scalar(&traj.phi[n])).scale(dt));
        let inv_d = inv_second_derivative(&traj.phi[n + 1], pot)?;
        let (z, _) = solve_diag_plus_laplacian(grid, &inv_d, dt, rhs.data(), cg())
            .map_err(|e| step_err(n, e))?;
        let next: Vec<f64> = z.iter().zip(&inv_d).map(|(z, c)| z * c).collect();
        let next = ScalarField::from_vec(grid, next)?;
        let d = pot.eval_field(&traj.phi[n + 1], 2)?;
        eta.push(d.mul(&next).sub(&kx));
        xi.push(next);
    }
    Ok(Linearized { xi, eta })
}

fn step_err(step: usize, e: Error) -> Error {
    Error::Step {
        step,
        source: Box::new(e),
    }
}

/// Transpose sweep for arbitrary running sources `running[n]` (paired with
/// `dt <., xi^n>`, `n < N`) and terminal datum (paired with `<., xi^N>`).
pub fn adjoint_sweep(
    traj: &StateTrajectory,
    v: &ControlField,
    running: &[ScalarField],
    terminal: ScalarField,
    kernel: &KernelTable,
    pot: &PotentialParams,
    params: &StateParams,
) -> Result<AdjointTrajectory> {
    check_shapes(traj, v)?;
    let n_steps = traj.n_steps();
    if running.len() < n_steps {
        return Err(Error::Shape("running sources shorter than the trajectory".into()));
    }
    let grid = traj.phi[0].grid();
    let dt = params.dt;
    let zero = ScalarField::zeros(grid);
    let mut p = vec![zero.clone(); n_steps + 1];
    let mut q = vec![zero.clone(); n_steps + 1];
    let mut p_star = vec![zero; n_steps + 1];
    p[n_steps] = terminal;
    for n in (0..n_steps).rev() {
        let inv_d = inv_second_derivative(&traj.phi[n + 1], pot)?;
        let rhs: Vec<f64> = p[n + 1]
            .data()
            .iter()
            .zip(&inv_d)
            .map(|(l, c)| l * c)
            .collect();
        let (ps, _) = solve_diag_plus_laplacian(grid, &inv_d, dt, &rhs, cg())
            .map_err(|e| step_err(n, e))?;
        let ps = ScalarField::from_vec(grid, ps)?;
        let qn = neg_lap(&ps);
        let transport = v.slices()[n].pointwise_dot(&gradient(&ps));
        let mut pn = ps.add(&transport.scale(dt)).add(&kernel.convolve(&qn)?.scale(dt));
        pn.axpy(dt, &running[n]);
        p[n] = pn;
        q[n + 1] = qn;
        p_star[n + 1] = ps;
    }
    Ok(AdjointTrajectory { p, q, p_star })
}

/// Adjoint of the tracking part of the cost at the state `traj`.
pub fn adjoint_solve(
    traj: &StateTrajectory,
    v: &ControlField,
    targets: &TargetData,
    kernel: &KernelTable,
    pot: &PotentialParams,
    params: &StateParams,
) -> Result<AdjointTrajectory> {
    targets.validate()?;
    targets.check_len(traj.n_steps())?;
    let [g1, g2, _] = targets.gamma;
    let n_steps = traj.n_steps();
    let running: Vec<ScalarField> = (0..n_steps)
        .map(|n| traj.phi[n].sub(targets.phi_q_at(n)).scale(g1))
        .collect();
    let terminal = traj.phi[n_steps].sub(&targets.phi_omega).scale(g2);
    adjoint_sweep(traj, v, &running, terminal, kernel, pot, params)
}

/// Unprojected control sensitivity `phi^n grad p*^{n+1}` per step.
///
/// Its pairing `sum_n dt <., w^n>` equals the derivative of the tracking
/// terms along `w`.
pub fn control_sensitivity(traj: &StateTrajectory, adj: &AdjointTrajectory) -> Result<ControlField> {
    let grid = traj.phi[0].grid();
    let slices: Vec<VectorField> = (0..traj.n_steps())
        .map(|n| gradient(&adj.p_star[n + 1]).times_scalar(&traj.phi[n]))
        .collect();
    ControlField::from_slices(grid, slices)
}

/// Both sides of the duality identity:
///
/// ```text
/// lhs = sum_n dt < P(phi^n grad p*^{n+1}), w^n >
/// rhs = gamma1 sum_{n<N} dt <phi^n - phi_Q^n, xi^n> + gamma2 <phi^N - phi_Omega, xi^N>
/// ```
pub fn duality_sides(
    traj: &StateTrajectory,
    lin: &Linearized,
    adj: &AdjointTrajectory,
    w: &ControlField,
    targets: &TargetData,
) -> Result<(f64, f64)> {
    check_shapes(traj, w)?;
    let dt = traj.dt;
    let n_steps = traj.n_steps();
    let sens = control_sensitivity(traj, adj)?;
    let mut lhs = 0.0;
    for (s, wn) in sens.slices().iter().zip(w.slices()) {
        lhs += dt * leray_project(s)?.dot(wn);
    }
    let [g1, g2, _] = targets.gamma;
    let mut rhs = 0.0;
    for n in 0..n_steps {
        rhs += g1 * dt * traj.phi[n].sub(targets.phi_q_at(n)).dot(&lin.xi[n]);
    }
    rhs += g2 * traj.phi[n_steps].sub(&targets.phi_omega).dot(&lin.xi[n_steps]);
    Ok((lhs, rhs))
}

/// `|lhs - rhs|` of [`duality_sides`].
pub fn duality_residual(
    traj: &StateTrajectory,
    lin: &Linearized,
    adj: &AdjointTrajectory,
    w: &ControlField,
    targets: &TargetData,
) -> Result<f64> {
    let (l, r) = duality_sides(traj, lin, adj, w, targets)?;
    Ok((l - r).abs())
}

/// Zero field helper for callers building sources.
pub fn zero_sources(grid: &Grid, n: usize) -> Vec<ScalarField> {
    vec![ScalarField::zeros(grid); n]
}
