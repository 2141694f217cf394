//! Invariant checks run by `nlch verify`, grouped by module. Every check
//! yields a value that passes when `value <= threshold`.

use crate::commands::{build_problem, grid_of, initial_control, kernel_spec, state_params};
use crate::config::{parse_config, ProblemConfig};
use crate::io::{decode_field, emit_timeseries, encode_field, read_timeseries, SeriesRow};
use anyhow::Result;
use nlch_core::control::ControlField;
use nlch_core::field::{divergence, gradient, inv_neumann_laplacian, laplacian_neumann, Grid, VectorField};
use nlch_core::kernel::{build_kernel, KernelSpec};
use nlch_core::leray::{leray_project, project_to_admissible, random_solenoidal, ControlBounds};
use nlch_core::optimizer::{fd_directional_derivative, projected_gradient_descent, PgdOptions};
use nlch_core::sensitivity::{adjoint_solve, duality_sides, linearized_solve};
use nlch_core::state::{simulate, smooth_random_field, StateParams};

pub const MODULES: [&str; 8] = [
    "field-core",
    "potential",
    "nonlocal-kernel",
    "leray",
    "state-solver",
    "sensitivity",
    "optimizer",
    "harness-cli",
];

pub struct Check {
    pub name: &'static str,
    pub module: &'static str,
    pub threshold: f64,
    run: fn(&ProblemConfig) -> Result<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub check: &'static str,
    pub module: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

fn vector(g: &Grid, seed: u64, mean: f64) -> VectorField {
    let comps = (0..g.dim() as u64)
        .map(|d| smooth_random_field(g, seed + d, mean, 1.0))
        .collect();
    VectorField::from_components(comps).unwrap()
}

fn grad_div_adjoint(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let f = smooth_random_field(&g, cfg.seed, 0.2, 1.0);
    let u = vector(&g, cfg.seed + 10, 0.3);
    let gf = gradient(&f);
    Ok((gf.dot(&u) + f.dot(&divergence(&u))).abs() / (gf.norm() * u.norm()))
}

fn poisson_roundtrip(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let psi = smooth_random_field(&g, cfg.seed + 1, 0.0, 1.0);
    let back = inv_neumann_laplacian(&laplacian_neumann(&psi).scale(-1.0))?;
    Ok(back.sub(&psi).norm() / psi.norm())
}

fn potential_fd(cfg: &ProblemConfig) -> Result<f64> {
    let p = cfg.potential;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..=180 {
        let s = -0.9 + 0.01 * i as f64;
        for order in 0..3u8 {
            let fd = (p.eval(s + h, order)? - p.eval(s - h, order)?) / (2.0 * h);
            let exact = p.eval(s, order + 1)?;
            worst = worst.max((fd - exact).abs() / exact.abs().max(1.0));
        }
    }
    Ok(worst)
}

fn potential_convexity(cfg: &ProblemConfig) -> Result<f64> {
    let p = cfg.potential;
    let mut worst = f64::NEG_INFINITY;
    for i in 1..10_000 {
        let s = -1.0 + 2.0 * i as f64 / 10_000.0;
        worst = worst.max(p.theta - p.eval(s, 2)?);
    }
    Ok(worst.max(0.0))
}

fn convolution_direct(cfg: &ProblemConfig) -> Result<f64> {
    let g = Grid::new(2, &[8, 10], &[1.0, 1.25])?;
    let spec = KernelSpec::gaussian(0.3, 1.5);
    let k = build_kernel(spec, &g)?;
    let f = smooth_random_field(&g, cfg.seed + 2, 0.1, 0.8);
    let fast = k.convolve(&f)?;
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for i in 0..g.len() {
        let xi = g.center(i);
        let mut acc = 0.0;
        for j in 0..g.len() {
            let xj = g.center(j);
            acc += spec.value(&[xi[0] - xj[0], xi[1] - xj[1]]) * f.data()[j];
        }
        acc *= g.cell_volume();
        err = err.max((fast.data()[i] - acc).abs());
        scale = scale.max(acc.abs());
    }
    Ok(err / scale)
}

fn kernel_symmetry(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let k = build_kernel(kernel_spec(cfg, &g), &g)?;
    let a = smooth_random_field(&g, cfg.seed + 3, 0.1, 1.0);
    let b = smooth_random_field(&g, cfg.seed + 4, -0.2, 1.0);
    let l = k.convolve(&a)?.dot(&b);
    let r = a.dot(&k.convolve(&b)?);
    Ok((l - r).abs() / l.abs().max(r.abs()))
}

fn leray_idempotent(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let p = leray_project(&vector(&g, cfg.seed + 5, 0.1))?;
    Ok(leray_project(&p)?.sub(&p).norm() / p.norm())
}

fn leray_gradients(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let grad = gradient(&smooth_random_field(&g, cfg.seed + 6, 0.0, 1.0));
    Ok(leray_project(&grad)?.norm() / grad.norm())
}

fn dykstra_admissible(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let bounds = ControlBounds::uniform(&g, &cfg.control.vmin, &cfg.control.vmax)?;
    let big = vector(&g, cfg.seed + 7, 0.5).scale(5.0);
    let p = cfg.optimizer.projection;
    let (x, rep) = project_to_admissible(&big, &bounds, p.tol, p.max_iter)?;
    if !rep.converged {
        return Ok(f64::INFINITY);
    }
    Ok(bounds.violation(&x).max(divergence(&x).max_abs()))
}

fn flow(cfg: &ProblemConfig, g: &Grid) -> Result<ControlField> {
    let v = initial_control(cfg, g)?;
    if v.max_abs() > 0.0 || cfg.state.steps == 0 {
        return Ok(v);
    }
    let amp = cfg.control.vmax.iter().chain(&cfg.control.vmin).fold(f64::INFINITY, |m, b| m.min(b.abs()));
    Ok(ControlField::steady(&random_solenoidal(g, cfg.seed + 8, 0.5 * amp), cfg.state.steps))
}

fn mass_conservation(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let traj = p.solve_state(&flow(cfg, p.phi0.grid())?)?;
    Ok(traj.max_mass_drift())
}

fn energy_dissipation(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let h = p.phi0.grid().min_h();
    let params = StateParams {
        dt: cfg.state.dt.min(h * h),
        n_steps: 10,
        ..state_params(cfg)
    };
    let traj = simulate(&p.phi0, &ControlField::zeros(p.phi0.grid(), 10), &p.kernel, &p.potential, &params)?;
    Ok(traj.energy.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
}

fn separation(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let traj = p.solve_state(&flow(cfg, p.phi0.grid())?)?;
    Ok(1.0 - traj.min_separation())
}

fn duality(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let g = p.phi0.grid();
    let v = flow(cfg, g)?;
    let w = ControlField::steady(&random_solenoidal(g, cfg.seed + 9, 1.0), cfg.state.steps);
    let traj = p.solve_state(&v)?;
    let lin = linearized_solve(&traj, &v, &w, &p.kernel, &p.potential, &p.state)?;
    let adj = adjoint_solve(&traj, &v, &p.targets, &p.kernel, &p.potential, &p.state)?;
    let (l, r) = duality_sides(&traj, &lin, &adj, &w, &p.targets)?;
    let scale = l.abs().max(r.abs());
    Ok(if scale == 0.0 { 0.0 } else { (l - r).abs() / scale })
}

fn linearity(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let g = p.phi0.grid();
    let v = flow(cfg, g)?;
    let w = ControlField::steady(&random_solenoidal(g, cfg.seed + 11, 1.0), cfg.state.steps);
    let traj = p.solve_state(&v)?;
    let a = linearized_solve(&traj, &v, &w, &p.kernel, &p.potential, &p.state)?;
    let b = linearized_solve(&traj, &v, &w.scale(2.0), &p.kernel, &p.potential, &p.state)?;
    let mut worst = 0.0f64;
    for (x, y) in a.xi.iter().zip(&b.xi) {
        let n = x.norm();
        if n > 0.0 {
            worst = worst.max(y.sub(&x.scale(2.0)).norm() / (2.0 * n));
        }
    }
    Ok(worst)
}

fn gradient_fd(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let g = p.phi0.grid();
    let v = flow(cfg, g)?;
    let grad = p.evaluate(&v)?.gradient;
    let slices = (0..cfg.state.steps as u64)
        .map(|n| random_solenoidal(g, cfg.seed + 20 + n, 1.0))
        .collect();
    let w = ControlField::from_slices(g, slices)?;
    let adj = grad.dot(&w, p.dt());
    if adj == 0.0 {
        return Ok(0.0);
    }
    let mut best = f64::INFINITY;
    for e in 1..=6 {
        let fd = fd_directional_derivative(&p, &v, &w, 10f64.powi(-e))?;
        best = best.min((fd - adj).abs() / adj.abs());
    }
    Ok(best)
}

fn pgd_monotone(cfg: &ProblemConfig) -> Result<f64> {
    let p = build_problem(cfg)?;
    let v0 = initial_control(cfg, p.phi0.grid())?;
    let opts = PgdOptions {
        max_iter: 3,
        ..cfg.optimizer.pgd
    };
    let res = projected_gradient_descent(&v0, &p, opts)?;
    Ok(res.cost_history.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max))
}

fn field_roundtrip(cfg: &ProblemConfig) -> Result<f64> {
    let g = grid_of(cfg)?;
    let f = smooth_random_field(&g, cfg.seed + 12, 0.0, 0.9);
    let back = decode_field(&encode_field(&f)?)?;
    Ok(back.data().iter().zip(f.data()).filter(|(a, b)| a.to_bits() != b.to_bits()).count() as f64)
}

fn csv_roundtrip(cfg: &ProblemConfig) -> Result<f64> {
    let dir = std::env::temp_dir().join(format!("nlch-verify-{}-{}", std::process::id(), cfg.seed));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("roundtrip.csv");
    let rows: Vec<SeriesRow> = (0..5)
        .map(|k| {
            let x = (k as f64 + 0.1).sqrt() / 3.0;
            SeriesRow {
                step: k,
                time: x / 7.0,
                mass: x.sin(),
                energy: -x.exp(),
                separation: 1.0 / (3.0 + x),
                cost: Some((x.ln(), x * 1e-9)),
            }
        })
        .collect();
    emit_timeseries(&path, &rows)?;
    let (_, back) = read_timeseries(&path)?;
    std::fs::remove_dir_all(&dir)?;
    let mismatches = rows
        .iter()
        .zip(&back)
        .filter(|(r, b)| {
            let (c, s) = r.cost.unwrap();
            [r.time, r.mass, r.energy, r.separation, c, s]
                .iter()
                .zip(&b[1..])
                .any(|(x, y)| x.to_bits() != y.to_bits())
        })
        .count();
    Ok(mismatches as f64)
}

fn config_rejects_zero_weights(_: &ProblemConfig) -> Result<f64> {
    let err = parse_config("[grid]\nn = 8\n[targets]\ngamma = 0, 0, 0\n", None);
    Ok(match err {
        Err(e) if e.to_string().contains("C3 violated: not all zero required") => 0.0,
        _ => 1.0,
    })
}

pub fn registry() -> Vec<Check> {
    macro_rules! check {
        ($module:expr, $name:expr, $threshold:expr, $run:expr) => {
            Check {
                name: $name,
                module: $module,
                threshold: $threshold,
                run: $run,
            }
        };
    }
    vec![
        check!("field-core", "grad-div-adjointness", 1e-12, grad_div_adjoint),
        check!("field-core", "poisson-roundtrip", 1e-8, poisson_roundtrip),
        check!("potential", "potential-fd-consistency", 1e-6, potential_fd),
        check!("potential", "potential-convexity", 0.0, potential_convexity),
        check!("nonlocal-kernel", "convolution-direct-sum", 1e-12, convolution_direct),
        check!("nonlocal-kernel", "convolution-self-adjoint", 1e-12, kernel_symmetry),
        check!("leray", "leray-idempotent", 1e-8, leray_idempotent),
        check!("leray", "leray-annihilates-gradients", 1e-8, leray_gradients),
        check!("leray", "dykstra-admissible", 1e-8, dykstra_admissible),
        check!("state-solver", "mass-conservation", 1e-11, mass_conservation),
        check!("state-solver", "energy-dissipation", 1e-10, energy_dissipation),
        check!("state-solver", "separation-max-abs-phi", 1.0 - 1e-9, separation),
        check!("sensitivity", "duality-identity", 1e-8, duality),
        check!("sensitivity", "linearized-linearity", 1e-10, linearity),
        check!("optimizer", "gradient-fd-match", 1e-6, gradient_fd),
        check!("optimizer", "pgd-cost-monotone", 0.0, pgd_monotone),
        check!("harness-cli", "field-io-roundtrip", 0.0, field_roundtrip),
        check!("harness-cli", "csv-roundtrip", 0.0, csv_roundtrip),
        check!("harness-cli", "config-rejects-zero-weights", 0.0, config_rejects_zero_weights),
    ]
}

pub fn run_check(check: &Check, cfg: &ProblemConfig) -> CheckResult {
    let value = (check.run)(cfg).unwrap_or(f64::NAN);
    CheckResult {
        check: check.name,
        module: check.module,
        value,
        threshold: check.threshold,
        pass: value <= check.threshold,
    }
}

pub fn run_all(cfg: &ProblemConfig) -> Vec<CheckResult> {
    registry().iter().map(|c| run_check(c, cfg)).collect()
}
