use crate::error::{Error, Result};
use crate::field::{Grid, VectorField};

/// Velocity control, piecewise constant in time: `slices[n]` acts on the
/// step from `t_n` to `t_{n+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    grid: Grid,
    slices: Vec<VectorField>,
}

impl ControlField {
    pub fn zeros(grid: &Grid, n_steps: usize) -> Self {
        Self {
            grid: grid.clone(),
            slices: vec![VectorField::zeros(grid); n_steps],
        }
    }

    /// The same field on every step.
    pub fn steady(v: &VectorField, n_steps: usize) -> Self {
        Self {
            grid: v.grid().clone(),
            slices: vec![v.clone(); n_steps],
        }
    }

    pub fn from_slices(grid: &Grid, slices: Vec<VectorField>) -> Result<Self> {
        if slices.iter().any(|s| s.grid() != grid) {
            return Err(Error::GridMismatch);
        }
        Ok(Self {
            grid: grid.clone(),
            slices,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn slices(&self) -> &[VectorField] {
        &self.slices
    }

    pub fn slices_mut(&mut self) -> &mut [VectorField] {
        &mut self.slices
    }

    pub fn into_slices(self) -> Vec<VectorField> {
        self.slices
    }

    pub fn n_steps(&self) -> usize {
        self.slices.len()
    }

    pub fn map(&self, f: impl Fn(&VectorField) -> VectorField) -> Self {
        Self {
            grid: self.grid.clone(),
            slices: self.slices.iter().map(f).collect(),
        }
    }

    pub fn zip_map(
        &self,
        other: &Self,
        f: impl Fn(&VectorField, &VectorField) -> VectorField,
    ) -> Self {
        Self {
            grid: self.grid.clone(),
            slices: self
                .slices
                .iter()
                .zip(&other.slices)
                .map(|(a, b)| f(a, b))
                .collect(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|s| s.scale(a))
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_map(other, VectorField::add)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_map(other, VectorField::sub)
    }

    /// `self + a * x`
    pub fn plus_scaled(&self, a: f64, x: &Self) -> Self {
        self.zip_map(x, |s, xs| {
            let mut out = s.clone();
            out.axpy(a, xs);
            out
        })
    }

    /// Space-time inner product with rectangle rule in time.
    pub fn dot(&self, other: &Self, dt: f64) -> f64 {
        dt * self
            .slices
            .iter()
            .zip(&other.slices)
            .map(|(a, b)| a.dot(b))
            .sum::<f64>()
    }

    pub fn norm(&self, dt: f64) -> f64 {
        self.dot(self, dt).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices.iter().fold(0.0, |m, s| m.max(s.max_abs()))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.slices.iter().fold(0.0, |m, s| m.max(s.max_magnitude()))
    }
}
