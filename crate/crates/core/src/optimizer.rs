//! Reduced cost, adjoint gradient and projected-gradient descent over the
//! admissible controls.

use crate::control::ControlField;
use crate::error::{Error, Result};
use crate::field::ScalarField;
use crate::kernel::KernelTable;
use crate::leray::{leray_project_control, project_control, ControlBounds, DYKSTRA_MAX_ITER, DYKSTRA_TOL};
use crate::potential::PotentialParams;
use crate::sensitivity::{adjoint_solve, control_sensitivity, AdjointTrajectory, TargetData};
use crate::state::{simulate, StateParams, StateTrajectory};

/// The three terms of the cost and their sum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CostBreakdown {
    pub tracking_q: f64,
    pub tracking_t: f64,
    pub control_energy: f64,
    pub total: f64,
}

/// Tolerances of the admissible-set projection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            tol: DYKSTRA_TOL,
            max_iter: DYKSTRA_MAX_ITER,
        }
    }
}

/// Everything that defines the reduced functional `v -> J(v, S(v))`.
#[derive(Clone, Debug)]
pub struct ControlProblem {
    pub phi0: ScalarField,
    pub kernel: KernelTable,
    pub potential: PotentialParams,
    pub state: StateParams,
    pub targets: TargetData,
    pub bounds: ControlBounds,
    pub projection: ProjectionOptions,
}

/// Rectangle rule with left endpoints for the running terms:
///
/// ```text
/// J = g1/2 sum_{n<N} dt |phi^n - phi_Q^n|^2 + g2/2 |phi^N - phi_Omega|^2 + g3/2 sum_{n<N} dt |v^n|^2
/// ```
pub fn evaluate_cost(traj: &StateTrajectory, v: &ControlField, targets: &TargetData) -> Result<CostBreakdown> {
    if v.n_steps() != traj.n_steps() {
        return Err(Error::Shape("control and trajectory lengths differ".into()));
    }
    targets.check_len(traj.n_steps())?;
    let dt = traj.dt;
    let [g1, g2, g3] = targets.gamma;
    let n_steps = traj.n_steps();
    let mut tracking_q = 0.0;
    for n in 0..n_steps {
        let d = traj.phi[n].sub(targets.phi_q_at(n));
        tracking_q += dt * d.dot(&d);
    }
    let tracking_q = 0.5 * g1 * tracking_q;
    let d = traj.phi[n_steps].sub(&targets.phi_omega);
    let tracking_t = 0.5 * g2 * d.dot(&d);
    let control_energy = 0.5 * g3 * v.dot(v, dt);
    Ok(CostBreakdown {
        tracking_q,
        tracking_t,
        control_energy,
        total: tracking_q + tracking_t + control_energy,
    })
}

/// `g^n = gamma3 v^n + P(phi^n grad p*^{n+1})`, the Riesz representative of
/// the reduced derivative on solenoidal directions in the space-time inner
/// product.
pub fn reduced_gradient(
    traj: &StateTrajectory,
    adj: &AdjointTrajectory,
    v: &ControlField,
    targets: &TargetData,
) -> Result<ControlField> {
    let sens = leray_project_control(&control_sensitivity(traj, adj)?)?;
    Ok(sens.plus_scaled(targets.gamma[2], v))
}

/// `|| v - Proj(v - g) ||` in the space-time norm.
pub fn stationarity_residual(
    v: &ControlField,
    g: &ControlField,
    bounds: &ControlBounds,
    dt: f64,
    opts: ProjectionOptions,
) -> Result<f64> {
    if v.n_steps() != g.n_steps() {
        return Err(Error::Shape("control and gradient lengths differ".into()));
    }
    let (proj, _) = project_control(&v.sub(g), bounds, opts.tol, opts.max_iter)?;
    Ok(v.sub(&proj).norm(dt))
}

/// State, cost, adjoint and gradient at one control.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub traj: StateTrajectory,
    pub cost: CostBreakdown,
    pub adjoint: AdjointTrajectory,
    pub gradient: ControlField,
}

impl ControlProblem {
    pub fn dt(&self) -> f64 {
        self.state.dt
    }

    pub fn solve_state(&self, v: &ControlField) -> Result<StateTrajectory> {
        simulate(&self.phi0, v, &self.kernel, &self.potential, &self.state)
    }

    /// `J_red(v)`; `v` only needs to be solenoidal, not admissible.
    pub fn reduced_cost(&self, v: &ControlField) -> Result<CostBreakdown> {
        let traj = self.solve_state(v)?;
        evaluate_cost(&traj, v, &self.targets)
    }

    pub fn adjoint(&self, traj: &StateTrajectory, v: &ControlField) -> Result<AdjointTrajectory> {
        adjoint_solve(traj, v, &self.targets, &self.kernel, &self.potential, &self.state)
    }

    pub fn evaluate(&self, v: &ControlField) -> Result<Evaluation> {
        let traj = self.solve_state(v)?;
        let cost = evaluate_cost(&traj, v, &self.targets)?;
        let adjoint = self.adjoint(&traj, v)?;
        let gradient = reduced_gradient(&traj, &adjoint, v, &self.targets)?;
        Ok(Evaluation {
            traj,
            cost,
            adjoint,
            gradient,
        })
    }

    pub fn project(&self, v: &ControlField) -> Result<ControlField> {
        Ok(project_control(v, &self.bounds, self.projection.tol, self.projection.max_iter)?.0)
    }

    /// Residual of `v = Proj(P(p grad phi) / gamma3)`; `None` when `gamma3 = 0`.
    pub fn fixed_point_residual(&self, v: &ControlField, eval: &Evaluation) -> Result<Option<f64>> {
        let g3 = self.targets.gamma[2];
        if g3 == 0.0 {
            return Ok(None);
        }
        let sens = leray_project_control(&control_sensitivity(&eval.traj, &eval.adjoint)?)?;
        let target = self.project(&sens.scale(-1.0 / g3))?;
        Ok(Some(v.sub(&target).norm(self.dt())))
    }

    pub fn with_targets(&self, targets: TargetData) -> Self {
        Self {
            targets,
            ..self.clone()
        }
    }
}

/// Central difference `[J(v + h w) - J(v - h w)] / 2h` of the reduced cost.
pub fn fd_directional_derivative(
    problem: &ControlProblem,
    v: &ControlField,
    w: &ControlField,
    h: f64,
) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::InvalidParameter(format!("FD step must be positive, got {h}")));
    }
    if w.max_abs() == 0.0 {
        return Ok(0.0);
    }
    let (plus, minus) = rayon::join(
        || problem.reduced_cost(&v.plus_scaled(h, w)),
        || problem.reduced_cost(&v.plus_scaled(-h, w)),
    );
    Ok((plus?.total - minus?.total) / (2.0 * h))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PgdOptions {
    pub step0: f64,
    pub armijo_c: f64,
    pub shrink: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub tol: f64,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            step0: 1.0,
            armijo_c: 1e-4,
            shrink: 0.5,
            max_iter: 100,
            max_backtracks: 30,
            tol: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Termination {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

/// Diagnostics of the final time slice for one iterate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FinalDiagnostics {
    pub mass: f64,
    pub energy: f64,
    pub separation: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizationResult {
    pub v_opt: ControlField,
    pub cost_history: Vec<f64>,
    pub stationarity_history: Vec<f64>,
    pub diagnostics_history: Vec<FinalDiagnostics>,
    pub iterations: usize,
    pub converged: bool,
    pub termination: Termination,
    /// `None` when `gamma3 = 0` or not converged.
    pub fixed_point_residual: Option<f64>,
    /// Worst box violation and divergence over every accepted iterate.
    pub max_box_violation: f64,
    pub max_divergence: f64,
    pub final_cost: CostBreakdown,
}

fn admissibility(v: &ControlField, bounds: &ControlBounds) -> (f64, f64) {
    v.slices().iter().fold((0.0f64, 0.0f64), |(b, d), s| {
        (
            b.max(bounds.violation(s)),
            d.max(crate::field::divergence(s).max_abs()),
        )
    })
}

fn final_diagnostics(traj: &StateTrajectory) -> FinalDiagnostics {
    let n = traj.n_steps();
    FinalDiagnostics {
        mass: traj.mass[n],
        energy: traj.energy[n],
        separation: traj.separation[n],
    }
}

/// Projected gradient descent `v <- Proj(v - tau g)` with Armijo
/// backtracking on `J(v_new) <= J(v) - c |v_new - v|^2 / tau`.
///
/// The first trial step is `step0 / (gamma1 + gamma2 + gamma3)`, later
/// trials use the Barzilai-Borwein length. Both scale inversely with the
/// weights, so multiplying all weights by a constant leaves the iterates
/// unchanged.
pub fn projected_gradient_descent(
    v0: &ControlField,
    problem: &ControlProblem,
    opts: PgdOptions,
) -> Result<OptimizationResult> {
    problem.targets.validate()?;
    let dt = problem.dt();
    let gamma_sum: f64 = problem.targets.gamma.iter().sum();
    let base_step = opts.step0 / gamma_sum;
    let mut v = problem.project(v0)?;
    let mut eval = problem.evaluate(&v)?;
    let stat = |v: &ControlField, g: &ControlField| {
        stationarity_residual(v, g, &problem.bounds, dt, problem.projection)
    };
    let (mut max_box, mut max_div) = admissibility(&v, &problem.bounds);
    let mut cost_history = vec![eval.cost.total];
    let mut stationarity_history = vec![stat(&v, &eval.gradient)?];
    let mut diagnostics_history = vec![final_diagnostics(&eval.traj)];
    let mut tau = base_step;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    loop {
        if *stationarity_history.last().unwrap() <= opts.tol {
            termination = Termination::Converged;
            break;
        }
        if iterations == opts.max_iter {
            break;
        }
        iterations += 1;
        let mut accepted = None;
        let mut trial_tau = tau;
        for _ in 0..=opts.max_backtracks {
            let candidate = problem.project(&v.plus_scaled(-trial_tau, &eval.gradient))?;
            let step = candidate.sub(&v);
            let step_sq = step.dot(&step, dt);
            if step_sq == 0.0 {
                break;
            }
            // the state solve may fail far from the current iterate; treat it as a rejected step
            let trial = match problem.evaluate(&candidate) {
                Ok(e) => e,
                Err(Error::Step { .. }) => {
                    trial_tau *= opts.shrink;
                    continue;
                }
                Err(e) => return Err(e),
            };
            if trial.cost.total <= eval.cost.total - opts.armijo_c * step_sq / trial_tau {
                accepted = Some((candidate, trial, step));
                break;
            }
            trial_tau *= opts.shrink;
        }
        let Some((candidate, trial, step)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        let y = trial.gradient.sub(&eval.gradient);
        let sy = step.dot(&y, dt);
        tau = if sy > 0.0 {
            step.dot(&step, dt) / sy
        } else {
            base_step
        };
        let (b, d) = admissibility(&candidate, &problem.bounds);
        max_box = max_box.max(b);
        max_div = max_div.max(d);
        v = candidate;
        eval = trial;
        cost_history.push(eval.cost.total);
        stationarity_history.push(stat(&v, &eval.gradient)?);
        diagnostics_history.push(final_diagnostics(&eval.traj));
    }
    let converged = termination == Termination::Converged;
    let fixed_point_residual = if converged {
        problem.fixed_point_residual(&v, &eval)?
    } else {
        None
    };
    Ok(OptimizationResult {
        v_opt: v,
        cost_history,
        stationarity_history,
        diagnostics_history,
        iterations,
        converged,
        termination,
        fixed_point_residual,
        max_box_violation: max_box,
        max_divergence: max_div,
        final_cost: eval.cost,
    })
}
