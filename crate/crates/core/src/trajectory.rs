use nalgebra::{DMatrix, DVector};

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};

/// Nominal state/control sequence with the local feedback policy
/// `δu = K δx + d` attached to every step.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `N + 1` states.
    pub xs: Vec<DVector<f64>>,
    /// `N` controls.
    pub us: Vec<DVector<f64>>,
    /// `N` gains, `m × n` each.
    pub ks: Vec<DMatrix<f64>>,
    /// `N` affine terms.
    pub ds: Vec<DVector<f64>>,
    pub cost: f64,
}

impl Trajectory {
    /// Roll `us` out from `x0` and attach zero gains.
    pub fn rollout(model: &dyn Dynamics, x0: DVector<f64>, us: Vec<DVector<f64>>) -> Self {
        let (n, m) = (model.state_dim(), model.control_dim());
        let mut xs = Vec::with_capacity(us.len() + 1);
        xs.push(x0);
        for u in &us {
            let next = model.step(xs.last().unwrap(), u);
            xs.push(next);
        }
        let len = us.len();
        Self {
            xs,
            us,
            ks: vec![DMatrix::zeros(m, n); len],
            ds: vec![DVector::zeros(m); len],
            cost: f64::NAN,
        }
    }

    pub fn horizon(&self) -> usize {
        self.us.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.us.len();
        if self.xs.len() != n + 1 || self.ks.len() != n || self.ds.len() != n {
            return Err(Error::contract(format!(
                "trajectory lengths inconsistent: {} states, {} controls, {} gains, {} affine terms",
                self.xs.len(),
                self.us.len(),
                self.ks.len(),
                self.ds.len()
            )));
        }
        Ok(())
    }

    /// Largest `‖x_{k+1} − f(x_k, u_k)‖∞`.
    pub fn defect(&self, model: &dyn Dynamics) -> f64 {
        self.us
            .iter()
            .enumerate()
            .map(|(k, u)| (model.step(&self.xs[k], u) - &self.xs[k + 1]).amax())
            .fold(0.0, f64::max)
    }

    /// Drop the first step. The new horizon is one shorter.
    pub fn shift(&mut self) {
        if self.us.is_empty() {
            return;
        }
        self.xs.remove(0);
        self.us.remove(0);
        self.ks.remove(0);
        self.ds.remove(0);
    }

    /// Drop the first step and keep the horizon by repeating the last
    /// control and gain; the appended state is the repeated last state.
    pub fn shift_keep_horizon(&mut self) {
        if self.us.is_empty() {
            return;
        }
        self.shift();
        if let (Some(u), Some(k), Some(d), Some(x)) = (
            self.us.last().cloned(),
            self.ks.last().cloned(),
            self.ds.last().cloned(),
            self.xs.last().cloned(),
        ) {
            self.us.push(u);
            self.ks.push(k);
            self.ds.push(d);
            self.xs.push(x);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{make_model, ModelKind, ModelOverrides};

    #[test]
    fn shift_moves_every_entry_forward() {
        let model = make_model(ModelKind::Point2d, &ModelOverrides::new()).unwrap();
        let us: Vec<_> = (0..5).map(|k| DVector::from_element(2, k as f64)).collect();
        let t0 = Trajectory::rollout(&model, DVector::zeros(4), us);
        let mut t = t0.clone();
        t.shift();
        assert_eq!(t.horizon(), 4);
        for k in 0..4 {
            assert_eq!(t.us[k], t0.us[k + 1]);
        }
        for k in 0..5 {
            assert_eq!(t.xs[k], t0.xs[k + 1]);
        }
        t.validate().unwrap();
    }

    #[test]
    fn keep_horizon_duplicates_tail() {
        let model = make_model(ModelKind::Point2d, &ModelOverrides::new()).unwrap();
        let us: Vec<_> = (0..3).map(|k| DVector::from_element(2, k as f64)).collect();
        let t0 = Trajectory::rollout(&model, DVector::zeros(4), us);
        let mut t = t0.clone();
        t.shift_keep_horizon();
        assert_eq!(t.horizon(), 3);
        assert_eq!(t.us[2], t0.us[2]);
        assert_eq!(t.xs[3], t0.xs[3]);
        t.validate().unwrap();
    }
}
