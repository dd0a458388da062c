use nalgebra::{DMatrix, DVector};

use super::{diag_covariance, Dynamics, Params};
use crate::error::Result;

/// Planar double integrator, state `(x, y, vx, vy)`, control `(ax, ay)`,
/// discretized exactly under zero-order hold.
#[derive(Debug, Clone)]
pub struct Point2d {
    dt: f64,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    sigma_w: DMatrix<f64>,
}

impl Point2d {
    pub fn new(dt: f64, sigma_pos: f64, sigma_vel: f64) -> Self {
        let mut a = DMatrix::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let mut b = DMatrix::zeros(4, 2);
        b[(0, 0)] = 0.5 * dt * dt;
        b[(1, 1)] = 0.5 * dt * dt;
        b[(2, 0)] = dt;
        b[(3, 1)] = dt;
        Self {
            dt,
            a,
            b,
            sigma_w: diag_covariance(&[sigma_pos, sigma_pos, sigma_vel, sigma_vel]),
        }
    }

    pub(super) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        let dt = p.positive("dt", 0.05)?;
        let sp = p.non_negative("sigma_pos", 0.005)?;
        let sv = p.non_negative("sigma_vel", 0.01)?;
        Ok(Self::new(dt, sp, sv))
    }
}

impl Dynamics for Point2d {
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
        &self.a * x + &self.b * u
    }
    fn jacobians(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (self.a.clone(), self.b.clone())
    }
    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }
    fn position_indices(&self) -> &[usize] {
        &[0, 1]
    }
}
