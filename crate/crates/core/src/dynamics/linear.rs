use nalgebra::{DMatrix, DVector};

use super::Dynamics;
use crate::error::{Error, Result};

/// `x⁺ = A x + B u`. Handy for LQ checks and custom plants.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub dt: f64,
    sigma_w: DMatrix<f64>,
    position: Vec<usize>,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, sigma_w: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || sigma_w.shape() != (n, n) {
            return Err(Error::contract("inconsistent linear model shapes"));
        }
        Ok(Self {
            a,
            b,
            dt: 1.0,
            sigma_w,
            position: (0..n.min(2)).collect(),
        })
    }

    pub fn with_position_indices(mut self, idx: Vec<usize>) -> Self {
        self.position = idx;
        self
    }
}

impl Dynamics for LinearModel {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }
    fn control_dim(&self) -> usize {
        self.b.ncols()
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
        &self.position
    }
}
