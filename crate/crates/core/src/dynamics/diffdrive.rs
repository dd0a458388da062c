use nalgebra::{DMatrix, DVector};

use super::{diag_covariance, Dynamics, Params};
use crate::error::Result;

/// Differential-drive (unicycle) robot with midpoint heading integration:
///
/// ```text
/// x⁺ = x + dt·v·cos(θ + ½·dt·ω)
/// y⁺ = y + dt·v·sin(θ + ½·dt·ω)
/// θ⁺ = θ + dt·ω
/// ```
///
/// State `(x, y, θ)`, control `(v, ω)`.
#[derive(Debug, Clone)]
pub struct DiffDrive {
    dt: f64,
    sigma_w: DMatrix<f64>,
}

impl DiffDrive {
    pub fn new(dt: f64, sigma_pos: f64, sigma_theta: f64) -> Self {
        Self {
            dt,
            sigma_w: diag_covariance(&[sigma_pos, sigma_pos, sigma_theta]),
        }
    }

    pub(super) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let dt = p.positive("dt", 0.1)?;
        let sp = p.non_negative("sigma_pos", 0.001)?;
        let st = p.non_negative("sigma_theta", 0.001)?;
        Ok(Self::new(dt, sp, st))
    }
}

impl Dynamics for DiffDrive {
    fn state_dim(&self) -> usize {
        3
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        let heading = x[2] + 0.5 * dt * u[1];
        DVector::from_vec(vec![
            x[0] + dt * u[0] * heading.cos(),
            x[1] + dt * u[0] * heading.sin(),
            x[2] + dt * u[1],
        ])
    }
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let heading = x[2] + 0.5 * dt * u[1];
        let (s, c) = heading.sin_cos();
        let mut fx = DMatrix::identity(3, 3);
        fx[(0, 2)] = -dt * u[0] * s;
        fx[(1, 2)] = dt * u[0] * c;
        let mut fu = DMatrix::zeros(3, 2);
        fu[(0, 0)] = dt * c;
        fu[(1, 0)] = dt * s;
        fu[(0, 1)] = -0.5 * dt * dt * u[0] * s;
        fu[(1, 1)] = 0.5 * dt * dt * u[0] * c;
        fu[(2, 1)] = dt;
        (fx, fu)
    }
    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }
    fn position_indices(&self) -> &[usize] {
        &[0, 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn straight_line_step() {
        let m = DiffDrive::new(0.1, 0.0, 0.0);
        let x = m.step(&DVector::zeros(3), &DVector::from_vec(vec![1.0, 0.0]));
        assert!((x[0] - 0.1).abs() < 1e-15 && x[1] == 0.0 && x[2] == 0.0);
    }

    #[test]
    fn turning_step_matches_closed_form() {
        let m = DiffDrive::new(0.1, 0.0, 0.0);
        let x = m.step(&DVector::zeros(3), &DVector::from_vec(vec![1.0, PI]));
        assert!((x[0] - 0.1 * (0.05 * PI).cos()).abs() < 1e-15);
        assert!((x[1] - 0.1 * (0.05 * PI).sin()).abs() < 1e-15);
        assert!((x[2] - 0.1 * PI).abs() < 1e-15);
    }

    #[test]
    fn heading_column_at_zero_heading() {
        let m = DiffDrive::new(0.1, 0.0, 0.0);
        let (fx, _) = m.jacobians(&DVector::zeros(3), &DVector::from_vec(vec![0.7, 0.0]));
        assert_eq!(fx[(0, 2)], 0.0);
        assert!((fx[(1, 2)] - 0.1 * 0.7).abs() < 1e-15);
        assert_eq!(fx[(2, 2)], 1.0);
    }
}
