//! Convex logarithmic (Flory-Huggins) entropy
//! `F(s) = theta/2 [(1+s) ln(1+s) + (1-s) ln(1-s)]` and its derivatives.

use crate::error::{Error, Result};
use crate::field::ScalarField;

/// Default entropy temperature.
pub const DEFAULT_THETA: f64 = 0.2;
/// Default guard for evaluation clipping.
pub const EVAL_GUARD: f64 = 1e-9;
/// Default guard for Newton iterates.
pub const NEWTON_GUARD: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PotentialParams {
    pub theta: f64,
    pub guard: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self {
            theta: DEFAULT_THETA,
            guard: EVAL_GUARD,
        }
    }
}

impl PotentialParams {
    pub fn new(theta: f64, guard: f64) -> Result<Self> {
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(Error::InvalidParameter(format!("theta must be > 0, got {theta}")));
        }
        check_guard(guard)?;
        Ok(Self { theta, guard })
    }

    /// Lower bound of `F''`.
    pub fn alpha(&self) -> f64 {
        self.theta
    }

    /// Derivative of order `order` (0..=3) at `s`.
    pub fn eval(&self, s: f64, order: u8) -> Result<f64> {
        if !(s.abs() < 1.0) {
            return Err(Error::SingularPotential(s));
        }
        let t = self.theta;
        Ok(match order {
            0 => 0.5 * t * ((1.0 + s) * s.ln_1p() + (1.0 - s) * (-s).ln_1p()),
            1 => 0.5 * t * (s.ln_1p() - (-s).ln_1p()),
            2 => t / ((1.0 - s) * (1.0 + s)),
            3 => {
                let d = (1.0 - s) * (1.0 + s);
                2.0 * t * s / (d * d)
            }
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "potential derivative order {order} not in 0..=3"
                )))
            }
        })
    }

    /// Elementwise [`PotentialParams::eval`] over a field.
    pub fn eval_field(&self, f: &ScalarField, order: u8) -> Result<ScalarField> {
        let data = f
            .data()
            .iter()
            .map(|&s| self.eval(s, order))
            .collect::<Result<Vec<_>>>()?;
        ScalarField::from_vec(f.grid(), data)
    }
}

fn check_guard(guard: f64) -> Result<()> {
    if !(guard > 0.0 && guard <= 1e-2) {
        return Err(Error::InvalidParameter(format!(
            "guard must lie in (0, 1e-2], got {guard}"
        )));
    }
    Ok(())
}

/// Maps values into `[-1 + guard, 1 - guard]`; returns the clipped field and
/// the number of cells that moved.
pub fn clip_to_domain(f: &ScalarField, guard: f64) -> Result<(ScalarField, usize)> {
    check_guard(guard)?;
    let hi = 1.0 - guard;
    let count = f.data().iter().filter(|v| v.abs() > hi).count();
    Ok((f.map(|v| v.clamp(-hi, hi)), count))
}
