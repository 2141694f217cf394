use crate::config::{InitialControl, InitialState, KernelChoice, ProblemConfig, TargetSource};
use crate::io::{emit_timeseries, read_field, read_targets, write_field, write_targets, SeriesRow};
use crate::verify;
use anyhow::{bail, Context, Result};
use nlch_core::control::ControlField;
use nlch_core::field::{Grid, ScalarField};
use nlch_core::kernel::{build_kernel, KernelSpec};
use nlch_core::leray::{project_control, random_solenoidal, ControlBounds};
use nlch_core::optimizer::{
    fd_directional_derivative, projected_gradient_descent, ControlProblem, OptimizationResult, Termination,
};
use nlch_core::sensitivity::TargetData;
use nlch_core::state::{simulate, smooth_random_field, StateParams, StateTrajectory};
use serde_json::json;
use std::fs;
use std::path::{Path, PathBuf};

/// A failed check in the machine-readable report.
#[derive(Clone, Debug, PartialEq)]
pub struct Failure {
    pub check: String,
    pub value: f64,
    pub threshold: f64,
}

impl Failure {
    pub fn new(check: &str, value: f64, threshold: f64) -> Self {
        Self {
            check: check.into(),
            value,
            threshold,
        }
    }

    pub fn to_json(&self) -> String {
        json!({"check": self.check, "value": self.value, "threshold": self.threshold}).to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Optimize,
    GradCheck,
    Verify,
    MakeTargets,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Replaces the adjoint part of the gradient by its negative; exists to
    /// prove that grad-check catches a wrong adjoint.
    pub flip_adjoint_sign: bool,
}

/// Gradient-check threshold on the minimum relative error of the h-sweep.
pub const GRAD_CHECK_TOL: f64 = 1e-5;

pub fn grid_of(cfg: &ProblemConfig) -> Result<Grid> {
    Ok(Grid::new(cfg.grid.dim, &cfg.grid.n, &cfg.grid.length)?)
}

pub fn kernel_spec(cfg: &ProblemConfig, grid: &Grid) -> KernelSpec {
    let hmax = grid.h().iter().copied().fold(0.0, f64::max);
    match cfg.kernel {
        KernelChoice::Gaussian { sigma, amplitude } => {
            let sigma = sigma.unwrap_or(4.0 * hmax);
            match amplitude {
                Some(a) => KernelSpec::gaussian(sigma, a),
                None => KernelSpec::unit_gaussian(sigma, grid.dim()),
            }
        }
        KernelChoice::Newtonian { r0, amplitude } => KernelSpec::mollified_newtonian(r0.unwrap_or(2.0 * hmax), amplitude),
    }
}

pub fn state_params(cfg: &ProblemConfig) -> StateParams {
    StateParams {
        newton_tol: cfg.state.newton_tol,
        newton_max: cfg.state.newton_max,
        ..StateParams::new(cfg.state.dt, cfg.state.steps)
    }
}

fn initial_state(cfg: &ProblemConfig, grid: &Grid) -> Result<ScalarField> {
    match &cfg.state.phi0 {
        InitialState::Random { mean, amplitude } => Ok(smooth_random_field(grid, cfg.seed, *mean, *amplitude)),
        InitialState::File(p) => {
            let f = read_field(p)?;
            if f.grid() != grid {
                bail!("initial state {} does not match the configured grid", p.display());
            }
            Ok(f)
        }
    }
}

/// Builds the optimal-control problem. Synthetic targets come from a run
/// with the admissible reference control of [`reference_control`].
pub fn build_problem(cfg: &ProblemConfig) -> Result<ControlProblem> {
    let grid = grid_of(cfg)?;
    let kernel = build_kernel(kernel_spec(cfg, &grid), &grid)?;
    let bounds = ControlBounds::uniform(&grid, &cfg.control.vmin, &cfg.control.vmax)?;
    let phi0 = initial_state(cfg, &grid)?;
    let mut problem = ControlProblem {
        phi0,
        kernel,
        potential: cfg.potential,
        state: state_params(cfg),
        targets: TargetData::new(vec![ScalarField::zeros(&grid)], ScalarField::zeros(&grid), cfg.targets.gamma)?,
        bounds,
        projection: cfg.optimizer.projection,
    };
    let (phi_q, phi_omega) = match &cfg.targets.source {
        TargetSource::Synthetic => {
            let traj = problem.solve_state(&reference_control(cfg, &grid)?)?;
            let n = traj.n_steps();
            (traj.phi[..n.max(1)].to_vec(), traj.final_state().clone())
        }
        TargetSource::Files(manifest) => {
            let (q, w) = read_targets(manifest)?;
            if q.iter().chain([&w]).any(|f| f.grid() != &grid) {
                bail!("targets in {} do not match the configured grid", manifest.display());
            }
            (q, w)
        }
    };
    problem.targets = TargetData::new(phi_q, phi_omega, cfg.targets.gamma)?;
    Ok(problem)
}

fn admissible(cfg: &ProblemConfig, grid: &Grid, v: ControlField) -> Result<ControlField> {
    let bounds = ControlBounds::uniform(grid, &cfg.control.vmin, &cfg.control.vmax)?;
    let p = cfg.optimizer.projection;
    Ok(project_control(&v, &bounds, p.tol, p.max_iter)?.0)
}

/// Steady admissible control used to synthesize targets.
pub fn reference_control(cfg: &ProblemConfig, grid: &Grid) -> Result<ControlField> {
    let v = random_solenoidal(grid, cfg.seed.wrapping_add(1), cfg.control.reference_amplitude);
    admissible(cfg, grid, ControlField::steady(&v, cfg.state.steps))
}

pub fn initial_control(cfg: &ProblemConfig, grid: &Grid) -> Result<ControlField> {
    match cfg.control.initial {
        InitialControl::Zero => Ok(ControlField::zeros(grid, cfg.state.steps)),
        InitialControl::Random { amplitude } => {
            let v = random_solenoidal(grid, cfg.seed.wrapping_add(2), amplitude);
            admissible(cfg, grid, ControlField::steady(&v, cfg.state.steps))
        }
    }
}

fn trajectory_rows(traj: &StateTrajectory) -> Vec<SeriesRow> {
    (0..traj.phi.len())
        .map(|n| SeriesRow {
            step: n,
            time: n as f64 * traj.dt,
            mass: traj.mass[n],
            energy: traj.energy[n],
            separation: traj.separation[n],
            cost: None,
        })
        .collect()
}

fn write_trajectory(dir: &Path, traj: &StateTrajectory) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (n, f) in traj.phi.iter().enumerate() {
        write_field(&dir.join(format!("phi_{n:04}.nlchf")), f)?;
    }
    Ok(())
}

fn write_control(dir: &Path, v: &ControlField) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (n, s) in v.slices().iter().enumerate() {
        for (axis, c) in s.components().iter().enumerate() {
            write_field(&dir.join(format!("v_{n:04}_{axis}.nlchf")), c)?;
        }
    }
    Ok(())
}

fn simulate_cmd(cfg: &ProblemConfig, opts: &RunOptions) -> Result<Vec<Failure>> {
    let grid = grid_of(cfg)?;
    let kernel = build_kernel(kernel_spec(cfg, &grid), &grid)?;
    let phi0 = initial_state(cfg, &grid)?;
    let v = initial_control(cfg, &grid)?;
    let traj = simulate(&phi0, &v, &kernel, &cfg.potential, &state_params(cfg))?;
    write_trajectory(&opts.out.join("trajectory"), &traj)?;
    emit_timeseries(&opts.out.join("timeseries.csv"), &trajectory_rows(&traj))?;
    Ok(Vec::new())
}

fn optimization_rows(problem: &ControlProblem, res: &OptimizationResult) -> Vec<SeriesRow> {
    let t = problem.state.final_time();
    res.diagnostics_history
        .iter()
        .enumerate()
        .map(|(k, d)| SeriesRow {
            step: k,
            time: t,
            mass: d.mass,
            energy: d.energy,
            separation: d.separation,
            cost: Some((res.cost_history[k], res.stationarity_history[k])),
        })
        .collect()
}

/// Below this control weight the fixed-point residual is not bounded by a
/// small multiple of the stationarity residual, so it is reported only.
pub const FIXED_POINT_MIN_GAMMA3: f64 = 0.1;

fn optimize_cmd(cfg: &ProblemConfig, opts: &RunOptions) -> Result<Vec<Failure>> {
    let problem = build_problem(cfg)?;
    let v0 = initial_control(cfg, problem.phi0.grid())?;
    let pgd = cfg.optimizer.pgd;
    let res = projected_gradient_descent(&v0, &problem, pgd)?;
    fs::create_dir_all(&opts.out)?;
    emit_timeseries(&opts.out.join("optimize.csv"), &optimization_rows(&problem, &res))?;
    write_control(&opts.out.join("v_opt"), &res.v_opt)?;
    let traj = problem.solve_state(&res.v_opt)?;
    write_trajectory(&opts.out.join("trajectory"), &traj)?;
    emit_timeseries(&opts.out.join("timeseries.csv"), &trajectory_rows(&traj))?;
    let c = res.final_cost;
    let summary = json!({
        "iterations": res.iterations,
        "converged": res.converged,
        "termination": format!("{:?}", res.termination),
        "initial_cost": res.cost_history[0],
        "final_cost": {"tracking_q": c.tracking_q, "tracking_t": c.tracking_t, "control_energy": c.control_energy, "total": c.total},
        "stationarity": res.stationarity_history.last(),
        "fixed_point_residual": res.fixed_point_residual,
        "max_box_violation": res.max_box_violation,
        "max_divergence": res.max_divergence,
    });
    fs::write(opts.out.join("summary.json"), format!("{summary:#}\n"))?;

    let mut failures = Vec::new();
    let last_stat = *res.stationarity_history.last().unwrap();
    if res.termination == Termination::LineSearchFailed {
        failures.push(Failure::new("line-search", last_stat, pgd.tol));
    }
    if problem.targets.gamma[2] >= FIXED_POINT_MIN_GAMMA3 {
        if let Some(fp) = res.fixed_point_residual {
            if fp > 10.0 * pgd.tol {
                failures.push(Failure::new("fixed-point-residual", fp, 10.0 * pgd.tol));
            }
        }
    }
    let adm = res.max_box_violation.max(res.max_divergence);
    if adm > 1e-8 {
        failures.push(Failure::new("iterate-admissibility", adm, 1e-8));
    }
    Ok(failures)
}

/// Per direction, the relative FD error at every step of the h-sweep.
pub struct GradCheckReport {
    pub errors: Vec<Vec<(f64, f64)>>,
}

impl GradCheckReport {
    /// Worst over directions of the best error over h.
    pub fn worst_min_error(&self) -> f64 {
        self.errors
            .iter()
            .map(|d| d.iter().map(|e| e.1).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    }
}

pub fn grad_check(problem: &ControlProblem, v: &ControlField, seed: u64, flip: bool) -> Result<GradCheckReport> {
    let eval = problem.evaluate(v)?;
    let mut g = eval.gradient;
    if flip {
        // gamma3 v - s  ->  gamma3 v + s
        g = v.scale(2.0 * problem.targets.gamma[2]).sub(&g);
    }
    let grid = problem.phi0.grid();
    let n = v.n_steps();
    let mut errors = Vec::new();
    for d in 0..3u64 {
        let slices = (0..n as u64)
            .map(|k| random_solenoidal(grid, seed.wrapping_add(1000 + 97 * d + k), 1.0))
            .collect();
        let w = ControlField::from_slices(grid, slices)?;
        let adj = g.dot(&w, problem.dt());
        let sweep = (1..=6)
            .map(|e| {
                let h = 10f64.powi(-e);
                let fd = fd_directional_derivative(problem, v, &w, h)?;
                Ok((h, (fd - adj).abs() / adj.abs().max(f64::MIN_POSITIVE)))
            })
            .collect::<Result<Vec<_>>>()?;
        errors.push(sweep);
    }
    Ok(GradCheckReport { errors })
}

fn grad_check_cmd(cfg: &ProblemConfig, opts: &RunOptions) -> Result<Vec<Failure>> {
    let problem = build_problem(cfg)?;
    let v = initial_control(cfg, problem.phi0.grid())?;
    let report = grad_check(&problem, &v, cfg.seed, opts.flip_adjoint_sign)?;
    fs::create_dir_all(&opts.out)?;
    let mut w = csv::Writer::from_path(opts.out.join("grad_check.csv"))?;
    w.write_record(["direction", "h", "rel_error"])?;
    for (d, sweep) in report.errors.iter().enumerate() {
        for (h, e) in sweep {
            w.write_record([d.to_string(), format!("{h:.16e}"), format!("{e:.16e}")])?;
        }
    }
    w.flush()?;
    let worst = report.worst_min_error();
    eprintln!("grad-check: worst min relative error {worst:.3e} (threshold {GRAD_CHECK_TOL:e})");
    Ok(if worst <= GRAD_CHECK_TOL {
        Vec::new()
    } else {
        vec![Failure::new("gradient-fd-mismatch", worst, GRAD_CHECK_TOL)]
    })
}

fn make_targets_cmd(cfg: &ProblemConfig, opts: &RunOptions) -> Result<Vec<Failure>> {
    let mut synthetic = cfg.clone();
    synthetic.targets.source = TargetSource::Synthetic;
    let problem = build_problem(&synthetic)?;
    let v_ref = reference_control(cfg, problem.phi0.grid())?;
    let traj = problem.solve_state(&v_ref)?;
    let n = traj.n_steps();
    let manifest = write_targets(&opts.out.join("targets"), &traj.phi[..n.max(1)], traj.final_state())?;
    write_control(&opts.out.join("v_reference"), &v_ref)?;
    emit_timeseries(&opts.out.join("reference_timeseries.csv"), &trajectory_rows(&traj))?;
    eprintln!("make-targets: wrote {}", manifest.display());
    Ok(Vec::new())
}

fn verify_cmd(cfg: &ProblemConfig, opts: &RunOptions) -> Result<Vec<Failure>> {
    let results = verify::run_all(cfg);
    fs::create_dir_all(&opts.out)?;
    let mut lines = String::new();
    for r in &results {
        eprintln!(
            "{} {:<16} {:<34} {:.3e} <= {:.1e}",
            if r.pass { "PASS" } else { "FAIL" },
            r.module,
            r.check,
            r.value,
            r.threshold
        );
        lines.push_str(
            &json!({"check": r.check, "module": r.module, "value": r.value, "threshold": r.threshold, "pass": r.pass})
                .to_string(),
        );
        lines.push('\n');
    }
    fs::write(opts.out.join("verify.jsonl"), lines)?;
    Ok(results
        .iter()
        .filter(|r| !r.pass)
        .map(|r| Failure::new(r.check, r.value, r.threshold))
        .collect())
}

/// Runs one command; the returned failures decide the exit status.
pub fn run_command(cmd: Command, cfg: &ProblemConfig, opts: &RunOptions) -> Result<Vec<Failure>> {
    fs::create_dir_all(&opts.out).with_context(|| format!("creating {}", opts.out.display()))?;
    match cmd {
        Command::Simulate => simulate_cmd(cfg, opts),
        Command::Optimize => optimize_cmd(cfg, opts),
        Command::GradCheck => grad_check_cmd(cfg, opts),
        Command::Verify => verify_cmd(cfg, opts),
        Command::MakeTargets => make_targets_cmd(cfg, opts),
    }
}
