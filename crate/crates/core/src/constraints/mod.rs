//! Inequality constraints `g(x, u) ≤ 0`, their linearizations, and
//! chance-constraint tightening.

mod quantile;
mod tighten;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use quantile::{erf, erfc, inv_normal_cdf, normal_cdf};
pub use tighten::{tighten, TightenedConstraintSet};

/// Obstacle gradients shorter than this are treated as undefined.
pub const DEGENERATE_GRADIENT: f64 = 1e-9;

/// A scalar differentiable constraint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Constraint {
    /// `g = r − ‖p − c‖` on the first two position coordinates.
    Circle { center: [f64; 2], radius: f64 },
    /// `g = r − dist(p, axis line)` on the three position coordinates.
    Cylinder {
        point: [f64; 3],
        axis: [f64; 3],
        radius: f64,
    },
    /// `g = sᵀx + cᵀu + offset`.
    Affine {
        state: Vec<f64>,
        control: Vec<f64>,
        offset: f64,
    },
}

impl Constraint {
    fn validate(&self, n: usize, m: usize, position: &[usize]) -> Result<()> {
        match self {
            Constraint::Circle { radius, center } => {
                if !(*radius > 0.0) {
                    return Err(Error::config("obstacles.radius", "radius must be > 0"));
                }
                if center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::config("obstacles.center", "must be finite"));
                }
                if position.len() < 2 {
                    return Err(Error::config("obstacles.kind", "circle needs a planar position"));
                }
            }
            Constraint::Cylinder { radius, axis, .. } => {
                if !(*radius > 0.0) {
                    return Err(Error::config("obstacles.radius", "radius must be > 0"));
                }
                if axis.iter().map(|a| a * a).sum::<f64>().sqrt() < 1e-12 {
                    return Err(Error::config("obstacles.axis", "axis must be nonzero"));
                }
                if position.len() < 3 {
                    return Err(Error::config("obstacles.kind", "cylinder needs a 3D position"));
                }
            }
            Constraint::Affine { state, control, .. } => {
                if state.len() != n || control.len() != m {
                    return Err(Error::config(
                        "constraints.affine",
                        format!("expects {n} state and {m} control coefficients"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Obstacle radius, if this is an obstacle.
    pub fn radius(&self) -> Option<f64> {
        match self {
            Constraint::Circle { radius, .. } | Constraint::Cylinder { radius, .. } => Some(*radius),
            Constraint::Affine { .. } => None,
        }
    }

    /// Copy with the obstacle radius grown by `by`.
    pub fn inflated(&self, by: f64) -> Self {
        let mut c = self.clone();
        match &mut c {
            Constraint::Circle { radius, .. } | Constraint::Cylinder { radius, .. } => *radius += by,
            Constraint::Affine { .. } => {}
        }
        c
    }
}

/// Constraint values and first derivatives at one point, with `D = −g_x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub values: DVector<f64>,
    /// `C = g_u`, `c × m`.
    pub c: DMatrix<f64>,
    /// `D = −g_x`, `c × n`.
    pub d: DMatrix<f64>,
    /// Rows whose gradient is undefined (evaluation at an obstacle center).
    pub degenerate: Vec<bool>,
}

/// The constraint list plus control box and per-constraint satisfaction
/// probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    pub items: Vec<Constraint>,
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    pub beta: Vec<f64>,
    n: usize,
    position: Vec<usize>,
}

impl ConstraintSet {
    /// `position` names the state coordinates obstacles act on. `beta` is
    /// applied uniformly.
    pub fn new(
        items: Vec<Constraint>,
        u_min: DVector<f64>,
        u_max: DVector<f64>,
        beta: f64,
        state_dim: usize,
        position: &[usize],
    ) -> Result<Self> {
        let m = u_min.len();
        if u_max.len() != m {
            return Err(Error::config("bounds", "u_min and u_max lengths differ"));
        }
        if u_min.iter().zip(u_max.iter()).any(|(l, u)| l > u) {
            return Err(Error::config("bounds", "u_min must not exceed u_max"));
        }
        if position.iter().any(|&p| p >= state_dim) {
            return Err(Error::contract("position index out of range"));
        }
        for c in &items {
            c.validate(state_dim, m, position)?;
        }
        let mut set = Self {
            beta: vec![0.5; items.len()],
            items,
            u_min,
            u_max,
            n: state_dim,
            position: position.to_vec(),
        };
        set.set_beta(beta)?;
        Ok(set)
    }

    /// Same `β` for every constraint.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        check_beta(beta)?;
        self.beta = vec![beta; self.items.len()];
        Ok(())
    }

    pub fn set_beta_per_constraint(&mut self, beta: Vec<f64>) -> Result<()> {
        if beta.len() != self.items.len() {
            return Err(Error::contract("one beta per constraint required"));
        }
        for b in &beta {
            check_beta(*b)?;
        }
        self.beta = beta;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.n
    }

    pub fn control_dim(&self) -> usize {
        self.u_min.len()
    }

    fn check(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
        if x.len() != self.n || u.len() != self.control_dim() {
            return Err(Error::contract(format!(
                "constraint set expects x in R^{} and u in R^{}",
                self.n,
                self.control_dim()
            )));
        }
        Ok(())
    }

    /// `g(x, u)`; entries ≤ 0 are satisfied.
    pub fn evaluate(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.check(x, u)?;
        Ok(DVector::from_iterator(
            self.items.len(),
            (0..self.items.len()).map(|j| self.value(j, x, u)),
        ))
    }

    /// Largest raw constraint value, `-∞` for an empty set.
    pub fn max_value(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (0..self.items.len())
            .map(|j| self.value(j, x, u))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub(crate) fn value(&self, j: usize, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        match &self.items[j] {
            Constraint::Circle { center, radius } => {
                let dx = x[self.position[0]] - center[0];
                let dy = x[self.position[1]] - center[1];
                radius - dx.hypot(dy)
            }
            Constraint::Cylinder {
                point,
                axis,
                radius,
            } => radius - cylinder_offset(&self.position, x, point, axis).norm(),
            Constraint::Affine {
                state,
                control,
                offset,
            } => {
                let s: f64 = state.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
                let c: f64 = control.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                s + c + offset
            }
        }
    }

    /// Row `j` of `g_x` (length `n`) and whether it is degenerate.
    pub(crate) fn state_gradient(&self, j: usize, x: &DVector<f64>) -> (DVector<f64>, bool) {
        let mut g = DVector::zeros(self.n);
        match &self.items[j] {
            Constraint::Circle { center, .. } => {
                let dx = x[self.position[0]] - center[0];
                let dy = x[self.position[1]] - center[1];
                let r = dx.hypot(dy);
                if r < DEGENERATE_GRADIENT {
                    return (g, true);
                }
                g[self.position[0]] = -dx / r;
                g[self.position[1]] = -dy / r;
            }
            Constraint::Cylinder { point, axis, .. } => {
                let w = cylinder_offset(&self.position, x, point, axis);
                let r = w.norm();
                if r < DEGENERATE_GRADIENT {
                    return (g, true);
                }
                for i in 0..3 {
                    g[self.position[i]] = -w[i] / r;
                }
            }
            Constraint::Affine { state, .. } => {
                for (i, s) in state.iter().enumerate() {
                    g[i] = *s;
                }
            }
        }
        (g, false)
    }

    /// Row `j` of `g_u` (length `m`).
    pub(crate) fn control_gradient(&self, j: usize) -> Option<DVector<f64>> {
        match &self.items[j] {
            Constraint::Affine { control, .. } if control.iter().any(|c| *c != 0.0) => {
                Some(DVector::from_column_slice(control))
            }
            _ => None,
        }
    }

    /// First-order model `g(x+δx, u+δu) ≈ g + C δu − D δx`.
    pub fn linearize(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<Linearization> {
        self.check(x, u)?;
        let c_rows = self.items.len();
        let m = self.control_dim();
        let mut values = DVector::zeros(c_rows);
        let mut c = DMatrix::zeros(c_rows, m);
        let mut d = DMatrix::zeros(c_rows, self.n);
        let mut degenerate = vec![false; c_rows];
        for j in 0..c_rows {
            values[j] = self.value(j, x, u);
            let (gx, degen) = self.state_gradient(j, x);
            degenerate[j] = degen;
            d.set_row(j, &(-gx).transpose());
            if let Some(gu) = self.control_gradient(j) {
                c.set_row(j, &gu.transpose());
            }
        }
        Ok(Linearization {
            values,
            c,
            d,
            degenerate,
        })
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if !(0.5..1.0).contains(&beta) {
        return Err(Error::config(
            "beta",
            format!("satisfaction probability must lie in [0.5, 1), got {beta}"),
        ));
    }
    Ok(())
}

/// Component of `p − point` orthogonal to the unit axis.
fn cylinder_offset(
    position: &[usize],
    x: &DVector<f64>,
    point: &[f64; 3],
    axis: &[f64; 3],
) -> nalgebra::Vector3<f64> {
    let a = nalgebra::Vector3::from_column_slice(axis).normalize();
    let d = nalgebra::Vector3::new(
        x[position[0]] - point[0],
        x[position[1]] - point[1],
        x[position[2]] - point[2],
    );
    d - a * a.dot(&d)
}
