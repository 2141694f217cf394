//! Acceptance suite. Each test prints one PASS/FAIL line; run with
//! `cargo test -p nlch-core --test acceptance -- --nocapture`.

use nalgebra::{DMatrix, DVector};
use nlch_core::control::ControlField;
use nlch_core::field::{divergence, gradient, Grid, ScalarField, VectorField};
use nlch_core::kernel::{build_kernel, KernelSpec, KernelTable};
use nlch_core::leray::{leray_project, project_control, project_to_admissible, random_solenoidal, ControlBounds};
use nlch_core::optimizer::{projected_gradient_descent, ControlProblem, PgdOptions, ProjectionOptions};
use nlch_core::potential::PotentialParams;
use nlch_core::sensitivity::{adjoint_solve, duality_sides, linearized_solve, TargetData};
use nlch_core::state::{energy, energy_identity_residual, simulate, smooth_random_field, StateParams};
use std::time::Instant;

fn report(id: u32, name: &str, pass: bool, detail: String, start: Instant) {
    println!(
        "criterion {id:2} {name:<28} {} {detail} ({:.1} s)",
        if pass { "PASS" } else { "FAIL" },
        start.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {id} failed: {detail}");
}

fn unit_square(n: usize) -> Grid {
    Grid::new(2, &[n, n], &[1.0, 1.0]).unwrap()
}

fn default_kernel(grid: &Grid) -> KernelTable {
    build_kernel(KernelSpec::default_for(grid), grid).unwrap()
}

fn sci(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn orders(errors: &[f64], ratio: f64) -> Vec<f64> {
    errors.windows(2).map(|w| (w[0] / w[1]).ln() / ratio.ln()).collect()
}

#[test]
fn c01_mass_conservation() {
    let t = Instant::now();
    let g = unit_square(64);
    let k = default_kernel(&g);
    let pot = PotentialParams::default();
    let phi0 = smooth_random_field(&g, 11, 0.1, 0.6);
    let v = ControlField::steady(&random_solenoidal(&g, 12, 1.0), 100);
    let traj = simulate(&phi0, &v, &k, &pot, &StateParams::new(1e-3, 100)).unwrap();
    let m0 = phi0.mean();
    let drift = traj.phi.iter().map(|p| (p.mean() - m0).abs()).fold(0.0, f64::max);
    report(1, "mass conservation", drift <= 1e-11, format!("max drift {drift:.3e} <= 1e-11"), t);
}

#[test]
fn c02_energy_identity_order() {
    let t = Instant::now();
    let g = unit_square(32);
    let k = default_kernel(&g);
    let pot = PotentialParams::default();
    let phi0 = smooth_random_field(&g, 21, 0.0, 0.6);
    let field = random_solenoidal(&g, 22, 1.0);
    let final_time = 0.01;
    let mut errs = Vec::new();
    for level in 0..4 {
        let n = 5 << level;
        let v = ControlField::steady(&field, n);
        let traj = simulate(&phi0, &v, &k, &pot, &StateParams::new(final_time / n as f64, n)).unwrap();
        let r = energy_identity_residual(&traj, &v).unwrap();
        errs.push(r.iter().fold(0.0f64, |m, x| m.max(x.abs())));
    }
    let ord = orders(&errs, 2.0);
    let pass = ord.iter().all(|&o| o >= 0.9);
    report(2, "energy identity order", pass, format!("residuals {} orders {ord:.3?} >= 0.9", sci(&errs)), t);
}

#[test]
fn c03_energy_dissipation() {
    let t = Instant::now();
    let g = unit_square(32);
    let k = default_kernel(&g);
    let pot = PotentialParams::default();
    let h = g.min_h();
    let params = StateParams::new(h * h, 10);
    let v = ControlField::zeros(&g, params.n_steps);
    let mut worst = f64::NEG_INFINITY;
    for seed in 0..50 {
        let phi0 = smooth_random_field(&g, 300 + seed, 0.05 * (seed % 5) as f64 - 0.1, 0.7);
        let traj = simulate(&phi0, &v, &k, &pot, &params).unwrap();
        for w in traj.energy.windows(2) {
            worst = worst.max(w[1] - w[0]);
        }
    }
    report(3, "energy dissipation", worst <= 1e-10, format!("max increase {worst:.3e} <= 1e-10 over 50 runs"), t);
}

#[test]
fn c04_separation() {
    let t = Instant::now();
    let g = unit_square(32);
    let k = default_kernel(&g);
    let pot = PotentialParams::default();
    let phi0 = smooth_random_field(&g, 41, 0.0, 0.8);
    let v = ControlField::steady(&random_solenoidal(&g, 42, 2.0), 50);
    let traj = simulate(&phi0, &v, &k, &pot, &StateParams::new(2e-3, 50)).unwrap();
    let sep = traj.min_separation();
    report(4, "separation", sep > 0.0, format!("min separation {sep:.4} > 0"), t);
}

fn flory_huggins(theta: f64, s: f64) -> f64 {
    0.5 * theta * ((1.0 + s) * (1.0 + s).ln() + (1.0 - s) * (1.0 - s).ln())
}

#[test]
fn c05_convolution_and_energy_oracles() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    let cases: [(&[usize], &[f64], KernelSpec); 5] = [
        (&[8, 8], &[1.0, 1.0], KernelSpec::gaussian(0.3, 1.0)),
        (&[10, 10], &[1.0, 1.0], KernelSpec::gaussian(0.2, 2.0)),
        (&[12, 12], &[1.0, 1.0], KernelSpec::mollified_newtonian(0.05, 1.0)),
        (&[8, 12], &[0.8, 1.2], KernelSpec::gaussian(0.25, 1.0)),
        (&[8, 8, 8], &[1.0, 1.0, 1.0], KernelSpec::gaussian(0.3, 1.0)),
    ];
    let pot = PotentialParams::default();
    for (i, (n, len, spec)) in cases.into_iter().enumerate() {
        let g = Grid::new(n.len(), n, len).unwrap();
        let k = build_kernel(spec, &g).unwrap();
        let phi = smooth_random_field(&g, 50 + i as u64, 0.1, 0.7);
        let fast = k.convolve(&phi).unwrap();
        let vol = g.cell_volume();
        let centers: Vec<Vec<f64>> = (0..g.len()).map(|j| g.center(j)).collect();
        let mut direct = vec![0.0; g.len()];
        for (a, xa) in centers.iter().enumerate() {
            let mut acc = 0.0;
            for (b, xb) in centers.iter().enumerate() {
                let d: Vec<f64> = xa.iter().zip(xb).map(|(p, q)| p - q).collect();
                acc += spec.value(&d) * phi.data()[b];
            }
            direct[a] = acc * vol;
        }
        let dnorm = direct.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff = fast.data().iter().zip(&direct).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(diff / dnorm);
        let e_direct = -0.5 * vol * direct.iter().zip(phi.data()).map(|(c, p)| c * p).sum::<f64>()
            + vol * phi.data().iter().map(|&s| flory_huggins(pot.theta, s)).sum::<f64>();
        let e_fast = energy(&phi, &k, &pot).unwrap();
        worst = worst.max((e_fast - e_direct).abs() / e_direct.abs());
    }
    report(5, "convolution/energy oracles", worst <= 1e-12, format!("max rel error {worst:.3e} <= 1e-12"), t);
}

#[test]
fn c06_leray_projector() {
    let t = Instant::now();
    let g = unit_square(32);
    let psi = smooth_random_field(&g, 61, 0.0, 1.0);
    let grad = gradient(&psi);
    let annihilate = leray_project(&grad).unwrap().norm() / grad.norm();
    let sol = random_solenoidal(&g, 62, 1.0);
    let fixes = leray_project(&sol).unwrap().sub(&sol).norm() / sol.norm();
    let noise = |seed: u64| {
        let c: Vec<ScalarField> = (0..2).map(|d| smooth_random_field(&g, seed + d, 0.2, 1.0)).collect();
        VectorField::from_components(c).unwrap()
    };
    let u = noise(63);
    let w = noise(65);
    let pu = leray_project(&u).unwrap();
    let ppu = leray_project(&pu).unwrap();
    let idem = ppu.sub(&pu).norm() / pu.norm();
    let pw = leray_project(&w).unwrap();
    let adj = (pu.dot(&w) - u.dot(&pw)).abs() / (u.norm() * w.norm());
    let worst = annihilate.max(fixes).max(idem).max(adj);
    report(
        6,
        "Leray projector",
        worst <= 1e-8,
        format!("grad {annihilate:.1e} solenoidal {fixes:.1e} idempotent {idem:.1e} self-adjoint {adj:.1e} <= 1e-8"),
        t,
    );
}

/// Dense matrix of the discrete divergence, one column per velocity unknown.
fn divergence_matrix(g: &Grid) -> DMatrix<f64> {
    let n = g.len();
    let dim = g.dim();
    let mut e = DMatrix::zeros(n, dim * n);
    for col in 0..dim * n {
        let mut comps = vec![ScalarField::zeros(g); dim];
        comps[col / n].data_mut()[col % n] = 1.0;
        let d = divergence(&VectorField::from_components(comps).unwrap());
        for (row, x) in d.data().iter().enumerate() {
            e[(row, col)] = *x;
        }
    }
    e
}

fn block_diag(a: &DMatrix<f64>, copies: usize) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(r * copies, c * copies);
    for k in 0..copies {
        out.view_mut((k * r, k * c), (r, c)).copy_from(a);
    }
    out
}

/// Primal active-set solution of `min 1/2 |x - v|^2` subject to `E x = 0`
/// and `lo <= x <= hi`, started from the feasible point `x = 0`.
fn qp_oracle(e: &DMatrix<f64>, v: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> DVector<f64> {
    #[derive(Clone, Copy, PartialEq)]
    enum Act {
        Free,
        Lower,
        Upper,
    }
    let m = v.len();
    let mut x = DVector::zeros(m);
    let mut act = vec![Act::Free; m];
    for _ in 0..10_000 {
        let free: Vec<usize> = (0..m).filter(|&i| act[i] == Act::Free).collect();
        let fixed: Vec<usize> = (0..m).filter(|&i| act[i] != Act::Free).collect();
        let ef = e.select_columns(&free);
        let mut rhs = &ef * v.select_rows(&free);
        for &i in &fixed {
            rhs += e.column(i) * x[i];
        }
        let gram = &ef * ef.transpose();
        let y = gram.svd(true, true).solve(&rhs, 1e-12).unwrap();
        let ety = e.transpose() * &y;
        let mut target = x.clone();
        for &i in &free {
            target[i] = v[i] - ety[i];
        }
        let step = &target - &x;
        if step.amax() <= 1e-14 {
            // multipliers of the active bounds: r = x - v + E^T y
            let r = &x - v + &ety;
            let mut worst = (0.0, None);
            for &i in &fixed {
                let mult = if act[i] == Act::Lower { r[i] } else { -r[i] };
                if mult < worst.0 {
                    worst = (mult, Some(i));
                }
            }
            match worst.1 {
                Some(i) if worst.0 < -1e-12 => act[i] = Act::Free,
                _ => return x,
            }
            continue;
        }
        let mut alpha = 1.0;
        let mut block = None;
        for &i in &free {
            let (bound, kind) = if step[i] > 0.0 { (hi[i], Act::Upper) } else { (lo[i], Act::Lower) };
            if step[i] != 0.0 {
                let a = (bound - x[i]) / step[i];
                if a < alpha {
                    alpha = a.max(0.0);
                    block = Some((i, kind, bound));
                }
            }
        }
        x += alpha * &step;
        if let Some((i, kind, bound)) = block {
            x[i] = bound;
            act[i] = kind;
        }
    }
    panic!("active-set oracle did not terminate");
}

fn flatten(v: &VectorField) -> Vec<f64> {
    v.components().iter().flat_map(|c| c.data().to_vec()).collect()
}

#[test]
fn c07_dykstra_vs_qp_oracle() {
    let t = Instant::now();
    let g = unit_square(8);
    let bounds = ControlBounds::uniform(&g, &[-0.6, -0.4], &[0.5, 0.7]).unwrap();
    let raw = |seed: u64| {
        let mut s = random_solenoidal(&g, seed, 2.0);
        s.axpy(1.0, &VectorField::from_components(vec![
            smooth_random_field(&g, seed + 1, 0.1, 0.5),
            smooth_random_field(&g, seed + 2, -0.1, 0.5),
        ]).unwrap());
        s
    };
    let e1 = divergence_matrix(&g);
    let vol = g.cell_volume();
    let mut worst_gap = 0.0f64;
    let mut worst_dist = 0.0f64;
    for slices in [1usize, 2] {
        let v = ControlField::from_slices(&g, (0..slices).map(|s| raw(70 + 5 * s as u64)).collect()).unwrap();
        let (x_d, reports) = project_control(&v, &bounds, 1e-8, 500).unwrap();
        assert!(reports.iter().all(|r| r.converged));
        let e = block_diag(&e1, slices);
        let vflat = DVector::from_vec(v.slices().iter().flat_map(flatten).collect());
        let lo = DVector::from_vec(std::iter::repeat(flatten(bounds.vmin())).take(slices).flatten().collect());
        let hi = DVector::from_vec(std::iter::repeat(flatten(bounds.vmax())).take(slices).flatten().collect());
        let x_qp = qp_oracle(&e, &vflat, &lo, &hi);
        let xd = DVector::from_vec(x_d.slices().iter().flat_map(flatten).collect());
        let d_qp = (&x_qp - &vflat).norm() * vol.sqrt();
        let d_dy = (&xd - &vflat).norm() * vol.sqrt();
        worst_gap = worst_gap.max((d_dy - d_qp).abs());
        worst_dist = worst_dist.max((&xd - &x_qp).norm() * vol.sqrt());
    }
    let single = project_to_admissible(&raw(90), &bounds, 1e-8, 500).unwrap().1;
    report(
        7,
        "Dykstra vs QP oracle",
        worst_gap <= 1e-6 && single.converged,
        format!("distance gap {worst_gap:.3e} <= 1e-6 (iterate distance {worst_dist:.3e})"),
        t,
    );
}

struct Instance {
    k: KernelTable,
    pot: PotentialParams,
    params: StateParams,
    phi0: ScalarField,
    v: ControlField,
    w: ControlField,
}

fn instance16(n_steps: usize, seed: u64) -> Instance {
    let g = unit_square(16);
    Instance {
        k: default_kernel(&g),
        pot: PotentialParams::default(),
        params: StateParams::new(2e-3, n_steps),
        phi0: smooth_random_field(&g, seed, 0.0, 0.6),
        v: ControlField::steady(&random_solenoidal(&g, seed + 1, 1.0), n_steps),
        w: ControlField::from_slices(
            &g,
            (0..n_steps as u64).map(|n| random_solenoidal(&g, seed + 10 + n, 1.0)).collect(),
        )
        .unwrap(),
    }
}

#[test]
fn c08_frechet_remainder() {
    let t = Instant::now();
    let s = instance16(20, 80);
    let base = simulate(&s.phi0, &s.v, &s.k, &s.pot, &s.params).unwrap();
    let lin = linearized_solve(&base, &s.v, &s.w, &s.k, &s.pot, &s.params).unwrap();
    let hs = [0.2, 0.1, 0.05, 0.025];
    let rem: Vec<f64> = hs
        .iter()
        .map(|&h| {
            let traj = simulate(&s.phi0, &s.v.plus_scaled(h, &s.w), &s.k, &s.pot, &s.params).unwrap();
            let sq: f64 = (0..traj.phi.len())
                .map(|n| {
                    let mut r = traj.phi[n].sub(&base.phi[n]);
                    r.axpy(-h, &lin.xi[n]);
                    r.dot(&r)
                })
                .sum();
            (s.params.dt * sq).sqrt()
        })
        .collect();
    let ord = orders(&rem, 2.0);
    report(
        8,
        "Frechet remainder order",
        ord.iter().all(|&o| o >= 1.9),
        format!("remainders {} orders {ord:.3?} >= 1.9", sci(&rem)),
        t,
    );
}

fn targets16(g: &Grid, n_steps: usize, seed: u64, gamma: [f64; 3]) -> TargetData {
    TargetData::new(
        (0..n_steps as u64).map(|n| smooth_random_field(g, seed + n, 0.0, 0.5)).collect(),
        smooth_random_field(g, seed + 99, 0.0, 0.5),
        gamma,
    )
    .unwrap()
}

#[test]
fn c09_duality_identity() {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in [90u64, 190, 290] {
        let s = instance16(10, seed);
        let tg = targets16(s.phi0.grid(), 10, seed + 50, [1.0, 0.7, 0.0]);
        let traj = simulate(&s.phi0, &s.v, &s.k, &s.pot, &s.params).unwrap();
        let lin = linearized_solve(&traj, &s.v, &s.w, &s.k, &s.pot, &s.params).unwrap();
        let adj = adjoint_solve(&traj, &s.v, &tg, &s.k, &s.pot, &s.params).unwrap();
        let (l, r) = duality_sides(&traj, &lin, &adj, &s.w, &tg).unwrap();
        worst = worst.max((l - r).abs() / l.abs().max(r.abs()));
    }
    report(9, "duality identity", worst <= 1e-8, format!("max rel residual {worst:.3e} <= 1e-8"), t);
}

fn problem16(s: &Instance, targets: TargetData, bound: f64) -> ControlProblem {
    let g = s.phi0.grid();
    ControlProblem {
        phi0: s.phi0.clone(),
        kernel: s.k.clone(),
        potential: s.pot,
        state: s.params,
        targets,
        bounds: ControlBounds::uniform(g, &[-bound, -bound], &[bound, bound]).unwrap(),
        projection: ProjectionOptions::default(),
    }
}

#[test]
fn c10_adjoint_gradient_vs_fd() {
    let t = Instant::now();
    let s = instance16(10, 100);
    let g = s.phi0.grid();
    let p = problem16(&s, targets16(g, 10, 150, [1.0, 1.0, 0.1]), 3.0);
    let grad = p.evaluate(&s.v).unwrap().gradient;
    let mut worst = 0.0f64;
    for dir in 0..3u64 {
        let w = ControlField::from_slices(g, (0..10).map(|n| random_solenoidal(g, 400 + 20 * dir + n, 1.0)).collect()).unwrap();
        let adj = grad.dot(&w, p.dt());
        let best = (1..=6)
            .map(|e| {
                let h = 10f64.powi(-e);
                let fd = nlch_core::optimizer::fd_directional_derivative(&p, &s.v, &w, h).unwrap();
                (fd - adj).abs() / adj.abs()
            })
            .fold(f64::INFINITY, f64::min);
        worst = worst.max(best);
    }
    report(10, "adjoint gradient vs FD", worst <= 1e-6, format!("worst min rel error {worst:.3e} <= 1e-6 (3 directions)"), t);
}

#[test]
fn c11_continuous_dependence() {
    let t = Instant::now();
    let s = instance16(20, 110);
    let g = s.phi0.grid();
    let dphi = smooth_random_field(g, 111, 0.0, 1.0);
    let base = simulate(&s.phi0, &s.v, &s.k, &s.pot, &s.params).unwrap();
    let dt = s.params.dt;
    let ratios: Vec<f64> = [1e-1, 1e-2, 1e-3]
        .iter()
        .map(|&eps| {
            let v2 = s.v.plus_scaled(eps, &s.w);
            let mut phi2 = s.phi0.clone();
            phi2.axpy(0.1 * eps, &dphi);
            let traj = simulate(&phi2, &v2, &s.k, &s.pot, &s.params).unwrap();
            let diffs: Vec<ScalarField> = traj.phi.iter().zip(&base.phi).map(|(a, b)| a.sub(b)).collect();
            let sup = diffs.iter().map(|d| d.norm()).fold(0.0, f64::max);
            let h1 = (dt * diffs.iter().map(|d| gradient(d).dot(&gradient(d))).sum::<f64>()).sqrt();
            let den = v2.sub(&s.v).norm(dt) + phi2.sub(&s.phi0).norm();
            (sup + h1) / den
        })
        .collect();
    let max = ratios.iter().copied().fold(0.0, f64::max);
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let pass = max / min <= 2.0 && ratios[2] / ratios[0] <= 1.5;
    report(
        11,
        "continuous dependence",
        pass,
        format!("ratios {ratios:.4?} max/min {:.3} <= 2, last/first {:.3} <= 1.5", max / min, ratios[2] / ratios[0]),
        t,
    );
}

#[test]
fn c12_optimality() {
    let t = Instant::now();
    let n_steps = 20;
    let g = unit_square(16);
    let k = default_kernel(&g);
    let pot = PotentialParams::default();
    let params = StateParams::new(2.5e-3, n_steps);
    let phi0 = smooth_random_field(&g, 120, 0.0, 0.6);
    let v_true = ControlField::steady(&random_solenoidal(&g, 121, 2.0), n_steps);
    let reference = simulate(&phi0, &v_true, &k, &pot, &params).unwrap();
    let recovery = ControlProblem {
        phi0: phi0.clone(),
        kernel: k.clone(),
        potential: pot,
        state: params,
        targets: TargetData::new(
            reference.phi[..n_steps].to_vec(),
            reference.final_state().clone(),
            [1.0, 1.0, 1e-4],
        )
        .unwrap(),
        bounds: ControlBounds::uniform(&g, &[-3.0, -3.0], &[3.0, 3.0]).unwrap(),
        projection: ProjectionOptions::default(),
    };
    let v0 = ControlField::zeros(&g, n_steps);
    let rec = projected_gradient_descent(
        &v0,
        &recovery,
        PgdOptions {
            max_iter: 60,
            tol: 1e-9,
            ..PgdOptions::default()
        },
    )
    .unwrap();
    let j0 = rec.cost_history[0];
    let j_final = *rec.cost_history.last().unwrap();
    let recovered = j_final <= 0.1 * j0;

    // fixed-point certificate at a converged run with gamma3 > 0
    let tol = 1e-7;
    let fixed = recovery.with_targets(recovery.targets.clone().with_gamma([1.0, 1.0, 0.1]).unwrap());
    let conv = projected_gradient_descent(
        &v0,
        &fixed,
        PgdOptions {
            max_iter: 200,
            tol,
            ..PgdOptions::default()
        },
    )
    .unwrap();
    let fp = conv.fixed_point_residual.unwrap_or(f64::INFINITY);
    let monotone = [&rec, &conv]
        .iter()
        .all(|r| r.cost_history.windows(2).all(|w| w[1] <= w[0]));
    let admissible = [&rec, &conv]
        .iter()
        .all(|r| r.max_box_violation <= 1e-8 && r.max_divergence <= 1e-8);
    let pass = recovered && conv.converged && fp <= 10.0 * tol && monotone && admissible;
    report(
        12,
        "optimality",
        pass,
        format!(
            "J/J0 {:.3e} <= 0.1 ({} its); fixed point {fp:.3e} <= {:.1e} ({} its, converged {}); monotone {monotone}; admissible {admissible}",
            j_final / j0,
            rec.iterations,
            10.0 * tol,
            conv.iterations,
            conv.converged
        ),
        t,
    );
}
