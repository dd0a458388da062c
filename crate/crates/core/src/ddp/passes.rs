//! Backward (gain) and forward (rollout) sweeps.

use nalgebra::{DMatrix, DVector};

use super::cost::CostModel;
use super::gains::{
    q_derivatives, select_active, value_recursion, CandidateRow, DynamicsCurvature, Gains,
    QModel, ValueModel,
};
use crate::constraints::{ConstraintSet, TightenedConstraintSet};
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::qp::{solve_qp, QpProblem};
use crate::trajectory::Trajectory;

/// Options shared by both sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct PassOptions {
    /// Added to the diagonal of `Q_uu`.
    pub regularization: f64,
    /// Second-order dynamics terms through finite differences.
    pub full_second_order: bool,
    /// Rows with tightened value above `-activation_tol` join the active set.
    pub activation_tol: f64,
    /// Steer violated rows back to zero inside the equality model.
    pub restore: bool,
    /// Forward QP rows aim this far inside the allowed region.
    pub backoff: f64,
    /// Re-linearizations of the constraint rows per forward step.
    pub corrections: usize,
    /// Line-search factor on `Q_u` in the forward QP; `1` is the full step.
    pub step_scale: f64,
    /// Deepest look-ahead row allowed into the backward active set. Exact
    /// enforcement of deep rows inverts the zero dynamics and can make the
    /// closed loop unstable.
    pub kkt_lead: usize,
}

impl Default for PassOptions {
    fn default() -> Self {
        Self {
            regularization: 0.0,
            full_second_order: false,
            activation_tol: 1e-6,
            restore: true,
            backoff: 1e-8,
            corrections: 5,
            step_scale: 1.0,
            kkt_lead: 1,
        }
    }
}

/// Per-step output of the backward sweep.
#[derive(Debug, Clone)]
pub struct StepModel {
    /// `Q_uu` includes the regularization.
    pub q: QModel,
    pub gains: Gains,
    /// Row ids: constraint `j` is `j`, input `i` upper is `c + 2i`, lower `c + 2i + 1`.
    pub active: Vec<usize>,
    pub multipliers: DVector<f64>,
    /// Per constraint, its look-ahead rows at `x̄_{k+1}, …, x̄_{k+MAX_LEAD}`.
    pub preview: Vec<Vec<PreviewRow>>,
}

/// Constraint `j` seen from step `k` at `x̄_{k+lead}`, with the gradient
/// pulled back onto `x_{k+1}` through the closed loop `f_x + f_u K` of the
/// intermediate steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PreviewRow {
    pub lead: usize,
    /// `(A_{k+lead−1} ⋯ A_{k+1})ᵀ ∇g(x̄_{k+lead})`.
    pub weight: DVector<f64>,
    /// Tightened nominal value.
    pub value: f64,
    /// `u_k` moves this value.
    pub reachable: bool,
}

impl PreviewRow {
    /// `C` of the row at step `k`.
    fn control_row(&self, set: &ConstraintSet, j: usize, fu: &DMatrix<f64>) -> DVector<f64> {
        let mut row = fu.transpose() * &self.weight;
        if self.lead == 1 {
            if let Some(gu) = set.control_gradient(j) {
                row += gu;
            }
        }
        row
    }
}

#[derive(Debug, Clone)]
pub struct BackwardPass {
    pub steps: Vec<StepModel>,
    pub value0: ValueModel,
}

impl BackwardPass {
    pub fn gains(&self) -> (Vec<DMatrix<f64>>, Vec<DVector<f64>>) {
        (
            self.steps.iter().map(|s| s.gains.k.clone()).collect(),
            self.steps.iter().map(|s| s.gains.d.clone()).collect(),
        )
    }

    pub fn active_sets(&self) -> Vec<Vec<usize>> {
        self.steps.iter().map(|s| s.active.clone()).collect()
    }
}

/// Furthest look-ahead for a state constraint.
pub const MAX_LEAD: usize = 6;
/// Rows with a smaller control sensitivity are treated as unreachable.
const LEAD_TOL: f64 = 1e-9;

/// Rows of constraint `j` at step `k`. Leads above one reuse step `k + 1`'s
/// rows (`later`) through `A_{k+1}`.
#[allow(clippy::too_many_arguments)]
fn preview_rows(
    tight: &TightenedConstraintSet,
    nominal: &Trajectory,
    fu: &DMatrix<f64>,
    next_closed: Option<&DMatrix<f64>>,
    later: &[PreviewRow],
    k: usize,
    j: usize,
) -> Vec<PreviewRow> {
    let set = &tight.set;
    let mut rows = Vec::with_capacity(MAX_LEAD);
    let x = &nominal.xs[k + 1];
    let (gx, degenerate) = set.state_gradient(j, x);
    if !degenerate {
        rows.push(PreviewRow {
            lead: 1,
            weight: gx,
            value: set.value(j, x, &nominal.us[k]) + tight.margin(k + 1, j),
            reachable: false,
        });
    }
    if let Some(a) = next_closed {
        for r in later.iter().filter(|r| r.lead < MAX_LEAD) {
            rows.push(PreviewRow {
                lead: r.lead + 1,
                weight: a.tr_mul(&r.weight),
                value: r.value,
                reachable: false,
            });
        }
    }
    for row in &mut rows {
        row.reachable = row.control_row(set, j, fu).norm() > LEAD_TOL;
    }
    rows
}

/// Sweep from `N − 1` down to `0`. `previous` holds last sweep's active
/// rows; these stay active until they fall below `−2·activation_tol`.
pub fn backward_pass(
    model: &dyn Dynamics,
    cost: &CostModel,
    tight: &TightenedConstraintSet,
    nominal: &Trajectory,
    previous: Option<&[Vec<usize>]>,
    opts: &PassOptions,
) -> Result<BackwardPass> {
    nominal.validate()?;
    let horizon = nominal.horizon();
    let (n, m) = (model.state_dim(), model.control_dim());
    let set = &tight.set;
    let c = set.len();

    let (vx, vxx) = cost.terminal_derivatives(&nominal.xs[horizon]);
    let mut value = ValueModel { vx, vxx };
    let mut steps = Vec::with_capacity(horizon);
    let mut next_closed: Option<DMatrix<f64>> = None;

    for k in (0..horizon).rev() {
        let x = &nominal.xs[k];
        let u = &nominal.us[k];
        let (fx, fu) = model.jacobians(x, u);
        let derivs = cost.running_derivatives(x, u);
        let curvature = opts
            .full_second_order
            .then(|| DynamicsCurvature::finite_difference(model, x, u, &value.vx, 1e-5));
        let mut q = q_derivatives(&derivs, &fx, &fu, &value, curvature.as_ref());
        if opts.regularization > 0.0 {
            for i in 0..m {
                q.quu[(i, i)] += opts.regularization;
            }
        }

        let was_active = |id: usize| previous.and_then(|p| p.get(k)).is_some_and(|a| a.contains(&id));
        let threshold = |id: usize| {
            if was_active(id) {
                -2.0 * opts.activation_tol
            } else {
                -opts.activation_tol
            }
        };

        let later = steps.last().map(|s: &StepModel| &s.preview);
        let preview: Vec<_> = (0..c)
            .map(|j| {
                let rows = later.map_or(&[][..], |l| &l[j][..]);
                preview_rows(tight, nominal, &fu, next_closed.as_ref(), rows, k, j)
            })
            .collect();
        let mut candidates = Vec::new();
        for (j, rows) in preview.iter().enumerate() {
            // The first state `u_k` can move carries the row.
            let Some(row) = rows.iter().find(|r| r.reachable) else { continue };
            if row.lead > opts.kkt_lead {
                continue;
            }
            if row.value < threshold(j) {
                continue;
            }
            candidates.push(CandidateRow {
                id: j,
                value: row.value,
                c: row.control_row(set, j, &fu),
                d: -(fx.transpose() * &row.weight),
            });
        }
        for i in 0..m {
            let up = u[i] - set.u_max[i];
            let lo = set.u_min[i] - u[i];
            for (id, h, sign) in [(c + 2 * i, up, 1.0), (c + 2 * i + 1, lo, -1.0)] {
                if h.is_finite() && h >= threshold(id) {
                    let mut crow = DVector::zeros(m);
                    crow[i] = sign;
                    candidates.push(CandidateRow {
                        id,
                        value: h,
                        c: crow,
                        d: DVector::zeros(n),
                    });
                }
            }
        }

        let sel = select_active(&q, candidates, opts.restore).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite { step: k },
            other => other,
        })?;
        value = value_recursion(&q, &sel.gains);
        next_closed = Some(&fx + &fu * &sel.gains.k);
        if !value.vx.iter().chain(value.vxx.iter()).all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite value model at step {k}")));
        }
        steps.push(StepModel {
            q,
            active: sel.ids(),
            gains: sel.gains,
            multipliers: sel.multipliers,
            preview,
        });
    }
    steps.reverse();
    Ok(BackwardPass {
        steps,
        value0: value,
    })
}

/// Result of one forward sweep.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub traj: Trajectory,
    /// Largest tightened value over `k = 1..=N`.
    pub max_violation: f64,
    /// Largest `|δu|` component.
    pub max_step: f64,
    /// First step whose QP could not meet every row; the rollout continues
    /// with its best available step.
    pub infeasible_at: Option<usize>,
}

/// `ū + δu` can land an ulp outside the box when a bound is active.
fn clamp_box(mut u: DVector<f64>, set: &ConstraintSet) -> DVector<f64> {
    for i in 0..u.len() {
        u[i] = u[i].clamp(set.u_min[i], set.u_max[i]);
    }
    u
}

/// Roll the policy out from `nominal.xs[0]`, solving a box/row QP for `δu`
/// at each step. A row the nominal violates by `h > 0` must come down to
/// `(1 − step_scale)·h`; satisfied rows must stay satisfied.
pub fn forward_pass(
    model: &dyn Dynamics,
    cost: &CostModel,
    tight: &TightenedConstraintSet,
    nominal: &Trajectory,
    bp: &BackwardPass,
    trust_radius: f64,
    opts: &PassOptions,
) -> Result<ForwardPass> {
    let horizon = nominal.horizon();
    let m = model.control_dim();
    let set = &tight.set;
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut us = Vec::with_capacity(horizon);
    xs.push(nominal.xs[0].clone());
    let mut max_step: f64 = 0.0;
    let mut infeasible_at = None;

    for k in 0..horizon {
        let step = &bp.steps[k];
        let x = xs[k].clone();
        let ubar = &nominal.us[k];
        let dx = &x - &nominal.xs[k];
        let qlin = &step.q.qu * opts.step_scale + &step.q.qux * &dx;

        let lower = DVector::from_fn(m, |i, _| {
            (set.u_min[i] - ubar[i]).max(-trust_radius).min(0.0)
        });
        let upper = DVector::from_fn(m, |i, _| {
            (set.u_max[i] - ubar[i]).min(trust_radius).max(0.0)
        });
        let rows: Vec<(usize, &PreviewRow)> = step
            .preview
            .iter()
            .enumerate()
            .flat_map(|(j, rs)| rs.iter().filter(|r| r.reachable).map(move |r| (j, r)))
            .collect();
        let mut du = DVector::zeros(m);
        let mut base_u = ubar.clone();
        let mut solved = false;
        let mut improved = false;
        for pass in 0..=opts.corrections {
            // Rows linearized at the current guess `base_u`.
            let (_, fu) = model.jacobians(&x, &base_u);
            let x_hat = model.step(&x, &base_u);
            let base_du = &base_u - ubar;
            let mut a = DMatrix::zeros(rows.len(), m);
            let mut b = DVector::zeros(rows.len());
            let mut worst: f64 = f64::NEG_INFINITY;
            let shift = &x_hat - &nominal.xs[k + 1];
            for (i, &(j, row)) in rows.iter().enumerate() {
                // The next state is re-linearized exactly; later ones are
                // predicted with the remaining controls held at nominal.
                let (v, gx) = match (row.lead, set.state_gradient(j, &x_hat)) {
                    (1, (gx, false)) => (set.value(j, &x_hat, &base_u) + tight.margin(k + 1, j), gx),
                    _ => (row.value + row.weight.dot(&shift), row.weight.clone()),
                };
                let allowance = row.value.max(0.0) * (1.0 - opts.step_scale);
                worst = worst.max(v - allowance);
                let mut crow = fu.transpose() * &gx;
                if row.lead == 1 {
                    if let Some(gu) = set.control_gradient(j) {
                        crow += gu;
                    }
                }
                b[i] = allowance - opts.backoff - v + crow.dot(&base_du);
                a.set_row(i, &crow.transpose());
            }
            if pass > 0 && worst <= 0.0 {
                solved = true;
                break;
            }
            if pass == opts.corrections {
                break;
            }
            let problem = QpProblem::new(
                step.q.quu.clone(),
                qlin.clone(),
                a,
                b,
                lower.clone(),
                upper.clone(),
            )?;
            let sol = solve_qp(&problem)?;
            if !sol.is_optimal() {
                break;
            }
            du = sol.z;
            base_u = clamp_box(ubar + &du, set);
            improved = true;
            if rows.is_empty() {
                solved = true;
                break;
            }
        }
        if !solved {
            infeasible_at.get_or_insert(k);
            if !improved {
                // No row-feasible step; take the box-constrained one and
                // leave the verdict to the step filter.
                let problem = QpProblem::new(
                    step.q.quu.clone(),
                    qlin.clone(),
                    DMatrix::zeros(0, m),
                    DVector::zeros(0),
                    lower.clone(),
                    upper.clone(),
                )?;
                du = solve_qp(&problem)?.z;
                base_u = clamp_box(ubar + &du, set);
            }
        }
        max_step = max_step.max(du.amax());
        let x_next = model.step(&x, &base_u);
        if !x_next.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite state at step {}", k + 1)));
        }
        xs.push(x_next);
        us.push(base_u);
    }

    let (ks, ds) = bp.gains();
    let cost_value = cost.total(&xs, &us);
    let traj = Trajectory {
        xs,
        us,
        ks,
        ds,
        cost: cost_value,
    };
    let max_violation = tight.max_violation(&traj);
    Ok(ForwardPass {
        traj,
        max_violation,
        max_step,
        infeasible_at,
    })
}
