//! Neumann-consistent difference operators.
//!
//! The gradient is the central difference with even (reflecting) ghost
//! cells. The divergence is its exact negative transpose under the
//! cell-volume inner product, which amounts to central differences with
//! odd ghosts, i.e. zero normal flux. The Laplacian is their composition.

use super::grid::Grid;
use super::types::{ScalarField, VectorField};

/// Partial derivative along `axis` with reflecting ghosts.
pub(crate) fn diff_axis(grid: &Grid, src: &[f64], axis: usize, out: &mut [f64]) {
    let n = grid.n()[axis];
    let c = 0.5 / grid.h()[axis];
    grid.for_each_line(axis, |off, s| {
        let at = |j: usize| src[off + j * s];
        out[off] = c * (at(1) - at(0));
        for j in 1..n - 1 {
            out[off + j * s] = c * (at(j + 1) - at(j - 1));
        }
        out[off + (n - 1) * s] = c * (at(n - 1) - at(n - 2));
    });
}

/// Negative transpose of [`diff_axis`], i.e. the axis contribution to the divergence.
/// Accumulates into `out`.
pub(crate) fn div_axis_add(grid: &Grid, src: &[f64], axis: usize, out: &mut [f64]) {
    let n = grid.n()[axis];
    let c = 0.5 / grid.h()[axis];
    grid.for_each_line(axis, |off, s| {
        let at = |j: usize| src[off + j * s];
        out[off] += c * (at(1) + at(0));
        for j in 1..n - 1 {
            out[off + j * s] += c * (at(j + 1) - at(j - 1));
        }
        out[off + (n - 1) * s] += c * (-at(n - 1) - at(n - 2));
    });
}

pub fn gradient(f: &ScalarField) -> VectorField {
    let grid = f.grid();
    let comps = (0..grid.dim())
        .map(|axis| {
            let mut out = vec![0.0; grid.len()];
            diff_axis(grid, f.data(), axis, &mut out);
            ScalarField::from_raw(grid, out)
        })
        .collect();
    VectorField::from_components(comps).expect("components share the grid")
}

pub fn divergence(v: &VectorField) -> ScalarField {
    let grid = v.grid();
    let mut out = vec![0.0; grid.len()];
    for (axis, c) in v.components().iter().enumerate() {
        div_axis_add(grid, c.data(), axis, &mut out);
    }
    ScalarField::from_raw(grid, out)
}

/// `divergence(gradient(f))`: symmetric, negative semidefinite, kernel = constants.
pub fn laplacian_neumann(f: &ScalarField) -> ScalarField {
    let grid = f.grid();
    let mut out = vec![0.0; grid.len()];
    let mut tmp = vec![0.0; grid.len()];
    for axis in 0..grid.dim() {
        diff_axis(grid, f.data(), axis, &mut tmp);
        div_axis_add(grid, &tmp, axis, &mut out);
    }
    ScalarField::from_raw(grid, out)
}

/// `-laplacian_neumann(f)` on raw data, the positive semidefinite operator.
pub(crate) fn neg_laplacian_raw(grid: &Grid, f: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut tmp = vec![0.0; grid.len()];
    for axis in 0..grid.dim() {
        diff_axis(grid, f, axis, &mut tmp);
        div_axis_add(grid, &tmp, axis, out);
    }
    out.iter_mut().for_each(|v| *v = -*v);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_field(grid: &Grid, rng: &mut ChaCha8Rng) -> ScalarField {
        ScalarField::from_vec(grid, (0..grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .unwrap()
    }

    fn random_vector(grid: &Grid, rng: &mut ChaCha8Rng) -> VectorField {
        VectorField::from_components((0..grid.dim()).map(|_| random_field(grid, rng)).collect())
            .unwrap()
    }

    #[test]
    fn constants_are_annihilated() {
        let g = Grid::new(2, &[8, 6], &[1.0, 2.0]).unwrap();
        let c = ScalarField::constant(&g, 3.5);
        assert_eq!(gradient(&c).max_abs(), 0.0);
        assert_eq!(laplacian_neumann(&c).max_abs(), 0.0);
        let mut v = VectorField::zeros(&g);
        for comp in v.components_mut() {
            *comp = ScalarField::constant(&g, -2.0);
        }
        // a constant vector field has nonzero normal flux, so its divergence
        // is supported on the boundary layer only
        let d = divergence(&v);
        assert!(d.data()[g.strides()[0] * 3 + 3].abs() < 1e-14);
    }

    #[test]
    fn hand_stencil_with_reflected_ghosts() {
        // 1D data embedded along axis 0 of a 4x4 grid with h = 1
        let g = Grid::new(2, &[4, 4], &[4.0, 4.0]).unwrap();
        let f = ScalarField::from_fn(&g, |x| x[0] + 0.5);
        let gx = gradient(&f);
        // ghosts: f[-1] = f[0] = 1, f[4] = f[3] = 4
        let expected = [0.5, 1.0, 1.0, 0.5];
        for (i, e) in expected.iter().enumerate() {
            assert_eq!(gx.component(0).data()[i * 4 + 2], *e);
        }
        assert_eq!(gx.component(1).max_abs(), 0.0);
    }

    #[test]
    fn adjointness_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for k in 0..100 {
            let g = if k % 2 == 0 {
                Grid::new(2, &[16, 16], &[1.0, 1.0]).unwrap()
            } else {
                Grid::new(3, &[5, 4, 6], &[1.0, 0.5, 2.0]).unwrap()
            };
            let f = random_field(&g, &mut rng);
            let v = random_vector(&g, &mut rng);
            let lhs = gradient(&f).dot(&v) + f.dot(&divergence(&v));
            assert!(lhs.abs() <= 1e-12 * f.norm() * v.norm(), "{lhs}");
        }
    }

    #[test]
    fn laplacian_symmetric_and_conservative() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = Grid::new(2, &[12, 9], &[1.0, 0.7]).unwrap();
        for _ in 0..20 {
            let f = random_field(&g, &mut rng);
            let h = random_field(&g, &mut rng);
            let a = laplacian_neumann(&f).dot(&h);
            let b = f.dot(&laplacian_neumann(&h));
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            assert!(laplacian_neumann(&f).integral().abs() < 1e-11);
        }
    }

    #[test]
    fn laplacian_is_div_of_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Grid::new(3, &[6, 5, 4], &[1.0, 1.0, 1.0]).unwrap();
        let f = random_field(&g, &mut rng);
        assert_eq!(divergence(&gradient(&f)), laplacian_neumann(&f));
    }

    fn cos_errors(n: usize) -> (f64, f64) {
        let l = 1.0;
        let g = Grid::new(2, &[n, n], &[l, l]).unwrap();
        let k = PI / l;
        let f = ScalarField::from_fn(&g, |x| (k * x[0]).cos());
        let dx = ScalarField::from_fn(&g, |x| -k * (k * x[0]).sin());
        let lap = ScalarField::from_fn(&g, |x| -k * k * (k * x[0]).cos());
        let ge = gradient(&f).component(0).sub(&dx).max_abs();
        let le = laplacian_neumann(&f).sub(&lap).norm() / lap.norm();
        (ge, le)
    }

    #[test]
    fn second_order_convergence() {
        let (g32, l32) = cos_errors(32);
        let (g64, l64) = cos_errors(64);
        let (g128, l128) = cos_errors(128);
        for (a, b) in [(g32, g64), (g64, g128), (l32, l64), (l64, l128)] {
            let order = (a / b).log2();
            assert!(order >= 1.9, "order {order}");
        }
        assert!(l64 <= 1e-2);
    }
}
