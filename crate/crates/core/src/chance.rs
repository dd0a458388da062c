//! Closed-loop covariance propagation and the resulting margins.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{tighten, ConstraintSet, TightenedConstraintSet};
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Negative eigenvalues down to this size are rounding noise.
pub const PSD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropagationMode {
    /// `A = f_x + f_u K` with the plan's feedback gains.
    #[default]
    ClosedLoop,
    /// `A = f_x`, gains ignored.
    OpenLoop,
}

/// `Σ^x_k` for `k = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSequence {
    pub sigmas: Vec<DMatrix<f64>>,
    pub mode: PropagationMode,
}

/// `Σ_{k+1} = A_k Σ_k A_kᵀ + Σ^ω` along the nominal of `traj`.
pub fn propagate(
    model: &dyn Dynamics,
    traj: &Trajectory,
    sigma0: &DMatrix<f64>,
    mode: PropagationMode,
) -> Result<CovarianceSequence> {
    traj.validate()?;
    let n = model.state_dim();
    if sigma0.shape() != (n, n) {
        return Err(Error::contract(format!(
            "initial covariance is {}x{}, expected {n}x{n}",
            sigma0.nrows(),
            sigma0.ncols()
        )));
    }
    let mut sigma = clamp_psd(sigma0)?;
    let noise = model.noise_covariance();
    let mut sigmas = Vec::with_capacity(traj.xs.len());
    sigmas.push(sigma.clone());
    for k in 0..traj.horizon() {
        let (fx, fu) = model.jacobians(&traj.xs[k], &traj.us[k]);
        let a = match mode {
            PropagationMode::ClosedLoop => fx + fu * &traj.ks[k],
            PropagationMode::OpenLoop => fx,
        };
        sigma = clamp_psd(&(&a * &sigma * a.transpose() + noise))?;
        if !sigma.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("covariance diverged at step {}", k + 1)));
        }
        sigmas.push(sigma.clone());
    }
    Ok(CovarianceSequence { sigmas, mode })
}

/// Symmetrize and zero eigenvalues in `[−PSD_TOL, 0)`.
pub fn clamp_psd(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let s = (sigma + sigma.transpose()) * 0.5;
    if s.is_empty() || s.clone().cholesky().is_some() {
        return Ok(s);
    }
    let eig = s.symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|l| *l < -PSD_TOL * scale) {
        return Err(Error::Numerical(
            "covariance has a significantly negative eigenvalue".into(),
        ));
    }
    let clamped = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| l.max(0.0)),
    );
    let v = &eig.eigenvectors;
    let r = v * DMatrix::from_diagonal(&clamped) * v.transpose();
    Ok((&r + r.transpose()) * 0.5)
}

/// Propagate the plan's covariance and recompute the margins.
pub fn retighten(
    model: &dyn Dynamics,
    set: &ConstraintSet,
    traj: &Trajectory,
    sigma0: &DMatrix<f64>,
    mode: PropagationMode,
) -> Result<TightenedConstraintSet> {
    let cov = propagate(model, traj, sigma0, mode)?;
    tighten(set, traj, &cov.sigmas)
}
