//! Symmetric interaction kernels and domain-restricted convolutions.
//!
//! `(K * f)(x_i) = sum_j K(x_i - x_j) f_j |cell|` with `f` extended by zero
//! outside the box. The kernel is sampled on every lattice offset between
//! two cells and the sum is evaluated by zero-padded FFTs of length
//! `>= 2n - 1` per axis, so there is no periodic wraparound.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::field::{Grid, ScalarField, VectorField};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelFamily {
    /// `K(x) = a exp(-|x|^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `K(x) = a / (4 pi max(|x|, r0))`
    MollifiedNewtonian { r0: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub amplitude: f64,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64, amplitude: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian { sigma },
            amplitude,
        }
    }

    /// Gaussian of unit mass with `sigma` set to four cell widths.
    pub fn default_for(grid: &Grid) -> Self {
        let h = grid.h().iter().copied().fold(0.0, f64::max);
        Self::unit_gaussian(4.0 * h, grid.dim())
    }

    /// Gaussian with `amplitude * (2 pi sigma^2)^(d/2) = 1`.
    pub fn unit_gaussian(sigma: f64, dim: usize) -> Self {
        Self::gaussian(sigma, (2.0 * PI * sigma * sigma).powf(-(dim as f64) / 2.0))
    }

    pub fn mollified_newtonian(r0: f64, amplitude: f64) -> Self {
        Self {
            family: KernelFamily::MollifiedNewtonian { r0 },
            amplitude,
        }
    }

    fn validate(&self) -> Result<()> {
        let width = match self.family {
            KernelFamily::Gaussian { sigma } => sigma,
            KernelFamily::MollifiedNewtonian { r0 } => r0,
        };
        if !(width > 0.0 && width.is_finite()) {
            return Err(Error::KernelConfig(format!("width must be positive, got {width}")));
        }
        if !(self.amplitude >= 0.0 && self.amplitude.is_finite()) {
            return Err(Error::KernelConfig(format!(
                "amplitude must be nonnegative, got {}",
                self.amplitude
            )));
        }
        Ok(())
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match self.family {
            KernelFamily::Gaussian { sigma } => self.amplitude * (-r2 / (2.0 * sigma * sigma)).exp(),
            KernelFamily::MollifiedNewtonian { r0 } => {
                self.amplitude / (4.0 * PI * r2.sqrt().max(r0))
            }
        }
    }

    /// Analytic partial derivative along `axis`.
    pub fn partial(&self, x: &[f64], axis: usize) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        match self.family {
            KernelFamily::Gaussian { sigma } => -x[axis] / (sigma * sigma) * self.value(x),
            KernelFamily::MollifiedNewtonian { r0 } => {
                let r = r2.sqrt();
                if r > r0 {
                    -self.amplitude * x[axis] / (4.0 * PI * r * r2)
                } else {
                    0.0
                }
            }
        }
    }
}

/// Sampled kernel, its gradient, and their cached transforms for one grid.
#[derive(Clone)]
pub struct KernelTable {
    spec: KernelSpec,
    grid: Grid,
    pad: Vec<usize>,
    samples: Vec<f64>,
    grad_samples: Vec<Vec<f64>>,
    transform: Vec<Complex64>,
    grad_transforms: Vec<Vec<Complex64>>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl fmt::Debug for KernelTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelTable")
            .field("spec", &self.spec)
            .field("grid", &self.grid)
            .field("pad", &self.pad)
            .finish()
    }
}

pub fn build_kernel(spec: KernelSpec, grid: &Grid) -> Result<KernelTable> {
    let pad: Vec<usize> = grid.n().iter().map(|n| 2 * n).collect();
    build_kernel_padded(spec, grid, &pad)
}

/// As [`build_kernel`] with explicit FFT lengths per axis.
pub fn build_kernel_padded(spec: KernelSpec, grid: &Grid, pad: &[usize]) -> Result<KernelTable> {
    spec.validate()?;
    if pad.len() != grid.dim() {
        return Err(Error::KernelConfig("padding needs one length per axis".into()));
    }
    for (d, (&p, &n)) in pad.iter().zip(grid.n()).enumerate() {
        if p < 2 * n - 1 {
            return Err(Error::KernelConfig(format!(
                "padding insufficient on axis {d}: {p} < {}",
                2 * n - 1
            )));
        }
    }
    let total: usize = pad.iter().product();
    let dim = grid.dim();
    let mut samples = vec![0.0; total];
    let mut grad_samples = vec![vec![0.0; total]; dim];
    let mut pstrides = vec![1; dim];
    for d in (0..dim - 1).rev() {
        pstrides[d] = pstrides[d + 1] * pad[d + 1];
    }
    // lattice offsets m in [-(n-1), n-1], stored at m mod pad
    let mut x = vec![0.0; dim];
    for idx in 0..total {
        let mut rem = idx;
        let mut inside = true;
        for d in 0..dim {
            let i = rem / pstrides[d];
            rem %= pstrides[d];
            let m = if i < grid.n()[d] {
                i as i64
            } else {
                i as i64 - pad[d] as i64
            };
            if m.unsigned_abs() as usize >= grid.n()[d] {
                inside = false;
            }
            x[d] = m as f64 * grid.h()[d];
        }
        if !inside {
            continue;
        }
        samples[idx] = spec.value(&x);
        for (d, g) in grad_samples.iter_mut().enumerate() {
            g[idx] = spec.partial(&x, d);
        }
    }
    let mut planner = FftPlanner::new();
    let forward: Vec<_> = pad.iter().map(|&p| planner.plan_fft_forward(p)).collect();
    let inverse: Vec<_> = pad.iter().map(|&p| planner.plan_fft_inverse(p)).collect();
    let mut table = KernelTable {
        spec,
        grid: grid.clone(),
        pad: pad.to_vec(),
        samples,
        grad_samples,
        transform: Vec::new(),
        grad_transforms: Vec::new(),
        forward,
        inverse,
    };
    table.transform = table.fft_real(&table.samples);
    table.grad_transforms = table
        .grad_samples
        .iter()
        .map(|g| table.fft_real(g))
        .collect();
    Ok(table)
}

impl KernelTable {
    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn padding(&self) -> &[usize] {
        &self.pad
    }

    /// Kernel samples on the padded lattice, offset `m` stored at `m mod pad`.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn grad_samples(&self) -> &[Vec<f64>] {
        &self.grad_samples
    }

    /// Flat padded index of lattice offset `m`.
    pub fn padded_index(&self, m: &[i64]) -> usize {
        let mut idx = 0;
        for (d, &mi) in m.iter().enumerate() {
            let p = self.pad[d] as i64;
            idx = idx * self.pad[d] + mi.rem_euclid(p) as usize;
        }
        idx
    }

    fn fft_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_nd(&mut buf, false);
        buf
    }

    fn fft_nd(&self, buf: &mut [Complex64], inverse: bool) {
        let dim = self.pad.len();
        let plans = if inverse { &self.inverse } else { &self.forward };
        let mut stride = 1;
        for d in (0..dim).rev() {
            let p = self.pad[d];
            let block = stride * p;
            let plan = &plans[d];
            let mut line = vec![Complex64::new(0.0, 0.0); p];
            let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
            for o in 0..buf.len() / block {
                for i in 0..stride {
                    let off = o * block + i;
                    for (j, l) in line.iter_mut().enumerate() {
                        *l = buf[off + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, l) in line.iter().enumerate() {
                        buf[off + j * stride] = *l;
                    }
                }
            }
            stride = block;
        }
    }

    fn check_grid(&self, f: &ScalarField) -> Result<()> {
        if f.grid() != &self.grid {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }

    fn apply(&self, transform: &[Complex64], f: &ScalarField) -> ScalarField {
        let grid = &self.grid;
        let dim = grid.dim();
        let total = transform.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); total];
        for (i, &v) in f.data().iter().enumerate() {
            buf[self.embed(i, dim)] = Complex64::new(v, 0.0);
        }
        self.fft_nd(&mut buf, false);
        for (b, k) in buf.iter_mut().zip(transform) {
            *b *= k;
        }
        self.fft_nd(&mut buf, true);
        let scale = grid.cell_volume() / total as f64;
        let out = (0..grid.len())
            .map(|i| buf[self.embed(i, dim)].re * scale)
            .collect();
        ScalarField::from_vec(grid, out).expect("finite convolution")
    }

    fn embed(&self, i: usize, dim: usize) -> usize {
        let strides = self.grid.strides();
        let mut rem = i;
        let mut idx = 0;
        for d in 0..dim {
            idx = idx * self.pad[d] + rem / strides[d];
            rem %= strides[d];
        }
        idx
    }

    /// `K * f` restricted to the box.
    pub fn convolve(&self, f: &ScalarField) -> Result<ScalarField> {
        self.check_grid(f)?;
        Ok(self.apply(&self.transform, f))
    }

    /// `(grad K) * f` with the analytic kernel gradient.
    pub fn grad_convolve(&self, f: &ScalarField) -> Result<VectorField> {
        self.check_grid(f)?;
        VectorField::from_components(
            self.grad_transforms
                .iter()
                .map(|t| self.apply(t, f))
                .collect(),
        )
    }
}
