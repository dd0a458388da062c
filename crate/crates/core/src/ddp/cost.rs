use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadratic tracking objective
///
/// ```text
/// ℓ(x, u)  = ½(x − x_ref)ᵀ Q (x − x_ref) + ½(u − u_ref)ᵀ R (u − u_ref)
/// ℓ^f(x)   = ½(x − x_ref)ᵀ Q_f (x − x_ref)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub qf: DMatrix<f64>,
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
}

/// `ℓ_x, ℓ_u, ℓ_xx, ℓ_uu, ℓ_ux` at one point.
#[derive(Debug, Clone)]
pub struct CostDerivatives {
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub luu: DMatrix<f64>,
    /// `m × n`.
    pub lux: DMatrix<f64>,
}

impl CostModel {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        qf: DMatrix<f64>,
        x_ref: DVector<f64>,
        u_ref: DVector<f64>,
    ) -> Result<Self> {
        let n = x_ref.len();
        let m = u_ref.len();
        if q.shape() != (n, n) || qf.shape() != (n, n) || r.shape() != (m, m) {
            return Err(Error::contract("cost weight shapes do not match x_ref/u_ref"));
        }
        let sym = |a: &DMatrix<f64>| (a + a.transpose()) * 0.5;
        let (q, r, qf) = (sym(&q), sym(&r), sym(&qf));
        if min_eigenvalue(&q) < -1e-12 {
            return Err(Error::config("cost.state_weights", "must be positive semidefinite"));
        }
        if min_eigenvalue(&qf) < -1e-12 {
            return Err(Error::config("cost.final_weights", "must be positive semidefinite"));
        }
        if min_eigenvalue(&r) <= 0.0 {
            return Err(Error::config("cost.control_weights", "must be positive definite"));
        }
        Ok(Self {
            q,
            r,
            qf,
            x_ref,
            u_ref,
        })
    }

    /// Diagonal weights.
    pub fn diagonal(
        state: &[f64],
        control: &[f64],
        terminal: &[f64],
        x_ref: DVector<f64>,
        u_ref: DVector<f64>,
    ) -> Result<Self> {
        let d = |v: &[f64]| DMatrix::from_diagonal(&DVector::from_column_slice(v));
        Self::new(d(state), d(control), d(terminal), x_ref, u_ref)
    }

    pub fn with_target(&self, x_ref: DVector<f64>) -> Self {
        Self {
            x_ref,
            ..self.clone()
        }
    }

    pub fn running(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        let du = u - &self.u_ref;
        0.5 * dx.dot(&(&self.q * &dx)) + 0.5 * du.dot(&(&self.r * &du))
    }

    pub fn terminal(&self, x: &DVector<f64>) -> f64 {
        let dx = x - &self.x_ref;
        0.5 * dx.dot(&(&self.qf * &dx))
    }

    /// Total objective over a state/control sequence.
    pub fn total(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> f64 {
        let running: f64 = us.iter().zip(xs).map(|(u, x)| self.running(x, u)).sum();
        running + self.terminal(xs.last().expect("empty state sequence"))
    }

    pub fn running_derivatives(&self, x: &DVector<f64>, u: &DVector<f64>) -> CostDerivatives {
        CostDerivatives {
            lx: &self.q * (x - &self.x_ref),
            lu: &self.r * (u - &self.u_ref),
            lxx: self.q.clone(),
            luu: self.r.clone(),
            lux: DMatrix::zeros(u.len(), x.len()),
        }
    }

    /// `(ℓ^f_x, ℓ^f_xx)`.
    pub fn terminal_derivatives(&self, x: &DVector<f64>) -> (DVector<f64>, DMatrix<f64>) {
        (&self.qf * (x - &self.x_ref), self.qf.clone())
    }
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}
