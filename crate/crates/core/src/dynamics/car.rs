use nalgebra::{DMatrix, DVector};

use super::{diag_covariance, Dynamics, Params};
use crate::error::Result;

/// Kinematic car, state `(x, y, θ, v)`, control `(a, κ)` with longitudinal
/// acceleration `a` and a steering input `κ` acting as curvature scaled by
/// the wheelbase. Explicit Euler:
///
/// ```text
/// x⁺ = x + dt·v·cos θ
/// y⁺ = y + dt·v·sin θ
/// θ⁺ = θ + dt·v·κ / L
/// v⁺ = v + dt·a
/// ```
#[derive(Debug, Clone)]
pub struct Car2d {
    dt: f64,
    wheelbase: f64,
    sigma_w: DMatrix<f64>,
}

impl Car2d {
    pub fn new(dt: f64, wheelbase: f64, sigma_pos: f64, sigma_theta: f64, sigma_v: f64) -> Self {
        Self {
            dt,
            wheelbase,
            sigma_w: diag_covariance(&[sigma_pos, sigma_pos, sigma_theta, sigma_v]),
        }
    }

    pub(super) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let dt = p.positive("dt", 0.02)?;
        let l = p.positive("wheelbase", 1.0)?;
        let sp = p.non_negative("sigma_pos", 0.001)?;
        let st = p.non_negative("sigma_theta", 0.02)?;
        let sv = p.non_negative("sigma_v", 0.02)?;
        Ok(Self::new(dt, l, sp, st, sv))
    }
}

impl Dynamics for Car2d {
    fn state_dim(&self) -> usize {
        4
    }
    fn control_dim(&self) -> usize {
        2
    }
    fn dt(&self) -> f64 {
        self.dt
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let dt = self.dt;
        let (s, c) = x[2].sin_cos();
        DVector::from_vec(vec![
            x[0] + dt * x[3] * c,
            x[1] + dt * x[3] * s,
            x[2] + dt * x[3] * u[1] / self.wheelbase,
            x[3] + dt * u[0],
        ])
    }
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let (s, c) = x[2].sin_cos();
        let mut fx = DMatrix::identity(4, 4);
        fx[(0, 2)] = -dt * x[3] * s;
        fx[(0, 3)] = dt * c;
        fx[(1, 2)] = dt * x[3] * c;
        fx[(1, 3)] = dt * s;
        fx[(2, 3)] = dt * u[1] / self.wheelbase;
        let mut fu = DMatrix::zeros(4, 2);
        fu[(2, 1)] = dt * x[3] / self.wheelbase;
        fu[(3, 0)] = dt;
        (fx, fu)
    }
    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }
    fn position_indices(&self) -> &[usize] {
        &[0, 1]
    }
}
