use nalgebra::{DMatrix, DVector};

use super::{inv_normal_cdf, ConstraintSet};
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Inner products `g_xᵀ Σ g_x` in `[−NEG_TOL, 0)` are rounding noise.
const NEG_TOL: f64 = 1e-12;

/// Constraint set with a margin per time index:
/// `g̃_k(x, u) = g(x, u) + margin_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct TightenedConstraintSet {
    pub set: ConstraintSet,
    /// Indexed by state time `k = 0..=N`, one entry per constraint.
    pub margins: Vec<DVector<f64>>,
}

impl TightenedConstraintSet {
    /// Zero margins over `steps` time indices.
    pub fn untightened(set: ConstraintSet, steps: usize) -> Self {
        let c = set.len();
        Self {
            set,
            margins: vec![DVector::zeros(c); steps],
        }
    }

    pub fn margin(&self, k: usize, j: usize) -> f64 {
        self.margins.get(k).map_or(0.0, |m| m[j])
    }

    /// `g̃` values at time `k`.
    pub fn evaluate(&self, k: usize, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        let mut g = self.set.evaluate(x, u)?;
        for j in 0..g.len() {
            g[j] += self.margin(k, j);
        }
        Ok(g)
    }

    /// Largest tightened value along state times `1..=N` of `traj`; the
    /// first state is measured, not planned.
    pub fn max_violation(&self, traj: &Trajectory) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for k in 1..traj.xs.len() {
            let u = &traj.us[k - 1];
            for j in 0..self.set.len() {
                worst = worst.max(self.set.value(j, &traj.xs[k], u) + self.margin(k, j));
            }
        }
        worst
    }

    /// Sum of positive tightened values over `k = 1..=N`.
    pub fn total_violation(&self, traj: &Trajectory) -> f64 {
        let mut total = 0.0;
        for k in 1..traj.xs.len() {
            let u = &traj.us[k - 1];
            for j in 0..self.set.len() {
                total += (self.set.value(j, &traj.xs[k], u) + self.margin(k, j)).max(0.0);
            }
        }
        total
    }

    /// Drop time index 0 to follow a trajectory shift.
    pub fn shift(&mut self) {
        if !self.margins.is_empty() {
            self.margins.remove(0);
        }
    }

    /// Repeat the last margin after a horizon-preserving shift.
    pub fn shift_keep_horizon(&mut self) {
        self.shift();
        if let Some(last) = self.margins.last().cloned() {
            self.margins.push(last);
        }
    }
}

/// Margins `φ⁻¹(β)·√(g_xᵀ Σ^x_k g_x)` with `g_x` taken on the nominal states.
pub fn tighten(
    set: &ConstraintSet,
    nominal: &Trajectory,
    covariances: &[DMatrix<f64>],
) -> Result<TightenedConstraintSet> {
    if covariances.len() != nominal.xs.len() {
        return Err(Error::contract(format!(
            "{} covariances for {} nominal states",
            covariances.len(),
            nominal.xs.len()
        )));
    }
    let quantiles = set
        .beta
        .iter()
        .map(|b| inv_normal_cdf(*b))
        .collect::<Result<Vec<_>>>()?;
    let mut margins = Vec::with_capacity(covariances.len());
    for (x, sigma) in nominal.xs.iter().zip(covariances) {
        let mut row = DVector::zeros(set.len());
        for j in 0..set.len() {
            if quantiles[j] == 0.0 {
                continue;
            }
            let (gx, degenerate) = set.state_gradient(j, x);
            if degenerate {
                continue;
            }
            let mut inner = (sigma * &gx).dot(&gx);
            if inner < -NEG_TOL {
                return Err(Error::Numerical(format!(
                    "g_xᵀ Σ g_x = {inner:.3e} is negative; covariance is not PSD"
                )));
            }
            if inner < 0.0 {
                inner = 0.0;
            }
            row[j] = quantiles[j] * inner.sqrt();
        }
        margins.push(row);
    }
    Ok(TightenedConstraintSet {
        set: set.clone(),
        margins,
    })
}
