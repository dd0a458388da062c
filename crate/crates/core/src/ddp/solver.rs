use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cost::CostModel;
use super::passes::{backward_pass, forward_pass, BackwardPass, PassOptions, MAX_LEAD};
use crate::chance::{retighten, PropagationMode};
use crate::constraints::TightenedConstraintSet;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::trajectory::Trajectory;

/// Iteration schedule and globalization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// DDP iterations per call.
    pub iterations: usize,
    /// Re-tighten after every `retighten_every` iterations; 0 disables.
    pub retighten_every: usize,
    /// Extra iterations without re-tightening while the plan still violates
    /// the tightened set.
    pub polish_iterations: usize,
    pub full_second_order: bool,
    pub regularization_min: f64,
    pub regularization_max: f64,
    /// Backward/forward retries per iteration before giving up.
    pub max_retries: usize,
    /// `None` means a quarter of the widest input range.
    pub trust_radius: Option<f64>,
    pub activation_tol: f64,
    pub feasibility_tol: f64,
    pub propagation: PropagationMode,
    /// Stop once the step is this small and no re-tightening is pending.
    pub step_tol: f64,
    /// See [`PassOptions::kkt_lead`].
    pub kkt_lead: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            iterations: 10,
            retighten_every: 5,
            polish_iterations: 0,
            full_second_order: false,
            regularization_min: 1e-6,
            regularization_max: 1e8,
            max_retries: 8,
            trust_radius: None,
            activation_tol: 1e-6,
            feasibility_tol: 1e-6,
            propagation: PropagationMode::ClosedLoop,
            step_tol: 1e-9,
            kkt_lead: 1,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("solver.iterations", "must be at least 1"));
        }
        if !(self.regularization_min > 0.0 && self.regularization_max >= self.regularization_min) {
            return Err(Error::config(
                "solver.regularization_min",
                "need 0 < regularization_min <= regularization_max",
            ));
        }
        if let Some(r) = self.trust_radius {
            if !(r > 0.0) {
                return Err(Error::config("solver.trust_radius", "must be positive"));
            }
        }
        if !(1..=MAX_LEAD).contains(&self.kkt_lead) {
            return Err(Error::config("solver.kkt_lead", "must lie in 1..=6"));
        }
        if !(self.activation_tol > 0.0 && self.feasibility_tol > 0.0) {
            return Err(Error::config("solver.activation_tol", "tolerances must be positive"));
        }
        Ok(())
    }
}

/// One outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub max_violation: f64,
    pub regularization: f64,
    pub trust_radius: f64,
    pub attempts: usize,
    pub accepted: bool,
    pub retightened: bool,
    pub active_rows: usize,
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub iterations: Vec<IterationRecord>,
    /// Final plan satisfies the tightened set within `feasibility_tol`.
    pub feasible: bool,
    pub max_violation: f64,
    /// The last iteration could not find an acceptable step.
    pub stalled: bool,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub traj: Trajectory,
    pub tightened: TightenedConstraintSet,
    pub report: SolveReport,
}

/// Constrained DDP on `initial`, starting from the margins in `tight`.
///
/// Every `retighten_every` iterations the margins are recomputed from the
/// closed-loop covariance of the current plan; the first update happens
/// after the first block so the early iterations treat the constraints as
/// deterministic. `sigma0` is the covariance of `initial.xs[0]`.
pub fn solve(
    model: &dyn Dynamics,
    cost: &CostModel,
    mut tight: TightenedConstraintSet,
    initial: Trajectory,
    sigma0: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<SolveOutcome> {
    opts.validate()?;
    initial.validate()?;
    if tight.margins.len() < initial.xs.len() {
        return Err(Error::contract("margins do not cover the horizon"));
    }
    if !initial
        .xs
        .iter()
        .chain(&initial.us)
        .all(|v| v.iter().all(|e| e.is_finite()))
    {
        return Err(Error::Numerical("initial trajectory is not finite".into()));
    }
    let set = &tight.set;
    let radius0 = opts.trust_radius.unwrap_or_else(|| {
        let w = (&set.u_max - &set.u_min).amax();
        if w.is_finite() {
            w / 4.0
        } else {
            f64::INFINITY
        }
    });

    let mut traj = initial;
    traj.cost = cost.total(&traj.xs, &traj.us);
    let mut violation = tight.max_violation(&traj);
    let mut excess = tight.total_violation(&traj);
    let mut reg = 0.0;
    let mut radius = radius0;
    let mut previous: Option<Vec<Vec<usize>>> = None;
    let mut last_bp: Option<BackwardPass> = None;
    let mut records = Vec::new();
    let mut stalled = false;
    // Regularization of the backward pass that produced `traj.ks`.
    let mut gains_reg = f64::INFINITY;
    let last_tightening = if opts.retighten_every == 0 {
        0
    } else {
        (opts.iterations - 1) / opts.retighten_every * opts.retighten_every
    };
    let total = opts.iterations + opts.polish_iterations;

    for iteration in 1..=total {
        if iteration > opts.iterations && violation <= opts.feasibility_tol {
            break;
        }
        let mut attempts = 0;
        let mut accepted = false;
        let mut small_step = false;
        let mut latest: Option<BackwardPass> = None;
        while attempts <= opts.max_retries {
            attempts += 1;
            let pass = PassOptions {
                regularization: reg,
                full_second_order: opts.full_second_order,
                activation_tol: opts.activation_tol,
                kkt_lead: opts.kkt_lead,
                ..PassOptions::default()
            };
            let bp = match backward_pass(model, cost, &tight, &traj, previous.as_deref(), &pass) {
                Ok(bp) => bp,
                Err(Error::NotPositiveDefinite { .. }) | Err(Error::Numerical(_)) => {
                    reg = (reg * 10.0).max(opts.regularization_min).min(opts.regularization_max);
                    radius *= 0.5;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let mut found = None;
            for &alpha in LINE_SEARCH {
                let pass = PassOptions {
                    step_scale: alpha,
                    ..pass.clone()
                };
                let fp = match forward_pass(model, cost, &tight, &traj, &bp, radius, &pass) {
                    Ok(fp) => fp,
                    Err(Error::Numerical(_)) => continue,
                    Err(e) => return Err(e),
                };
                let ok = fp.traj.cost.is_finite()
                    && acceptable(
                        traj.cost,
                        (violation, excess),
                        fp.traj.cost,
                        (fp.max_violation, tight.total_violation(&fp.traj)),
                        opts.feasibility_tol,
                    );
                if ok {
                    found = Some(fp);
                    break;
                }
            }
            if let Some(fp) = found {
                small_step = fp.max_step <= opts.step_tol;
                previous = Some(bp.active_sets());
                violation = fp.max_violation;
                excess = tight.total_violation(&fp.traj);
                traj = fp.traj;
                gains_reg = reg;
                last_bp = Some(bp);
                accepted = true;
                reg *= 0.5;
                if reg < opts.regularization_min {
                    reg = 0.0;
                }
                radius = (radius * 2.0).min(radius0);
                break;
            }
            if latest.is_none() {
                latest = Some(bp);
            }
            reg = (reg * 10.0).max(opts.regularization_min).min(opts.regularization_max);
            radius *= 0.5;
        }
        if !accepted {
            // The nominal is unchanged; give it the least regularized gains
            // computed on it.
            if let Some(bp) = latest {
                let (ks, ds) = bp.gains();
                traj.ks = ks;
                traj.ds = ds;
                previous = Some(bp.active_sets());
                last_bp = Some(bp);
            }
            stalled = true;
            radius = radius0;
            // Escalated regularization says nothing about the next nominal.
            gains_reg = f64::INFINITY;
            reg = 0.0;
        } else {
            stalled = false;
        }

        let mut retightened = false;
        if opts.retighten_every > 0
            && iteration % opts.retighten_every == 0
            && iteration < opts.iterations
        {
            if gains_reg > 0.0 {
                set_policy_gains(model, cost, &tight, &mut traj, previous.as_deref(), opts);
                gains_reg = 0.0;
            }
            tight = retighten(model, &tight.set, &traj, sigma0, opts.propagation)?;
            violation = tight.max_violation(&traj);
            excess = tight.total_violation(&traj);
            retightened = true;
        }
        records.push(IterationRecord {
            iteration,
            cost: traj.cost,
            max_violation: violation,
            regularization: reg,
            trust_radius: radius,
            attempts,
            accepted,
            retightened,
            active_rows: last_bp
                .as_ref()
                .map_or(0, |bp| bp.steps.iter().map(|s| s.active.len()).sum()),
        });
        let converged = accepted && small_step;
        if (converged || !accepted) && iteration >= last_tightening && !retightened {
            break;
        }
    }

    if gains_reg > 0.0 {
        set_policy_gains(model, cost, &tight, &mut traj, previous.as_deref(), opts);
    }
    let feasible = violation <= opts.feasibility_tol;
    Ok(SolveOutcome {
        traj,
        tightened: tight,
        report: SolveReport {
            iterations: records,
            feasible,
            max_violation: violation,
            stalled,
        },
    })
}

/// Replace the gains on `traj` with those of the least regularized backward
/// pass that succeeds on it. Heavily damped gains are close to zero and
/// would make the propagated covariance nearly open-loop.
fn set_policy_gains(
    model: &dyn Dynamics,
    cost: &CostModel,
    tight: &TightenedConstraintSet,
    traj: &mut Trajectory,
    previous: Option<&[Vec<usize>]>,
    opts: &SolverOptions,
) {
    let mut reg = 0.0;
    while reg <= opts.regularization_max {
        let pass = PassOptions {
            regularization: reg,
            full_second_order: opts.full_second_order,
            activation_tol: opts.activation_tol,
            kkt_lead: opts.kkt_lead,
            ..PassOptions::default()
        };
        if let Ok(bp) = backward_pass(model, cost, tight, traj, previous, &pass) {
            let (ks, ds) = bp.gains();
            traj.ks = ks;
            traj.ds = ds;
            return;
        }
        reg = (reg * 10.0).max(opts.regularization_min);
    }
}

/// Scales tried on the feedforward term before raising the regularization.
const LINE_SEARCH: &[f64] = &[1.0, 0.5, 0.25, 0.1];

/// Step filter on `(max, summed)` violation. From a feasible plan a step
/// must stay feasible and not raise the cost; from an infeasible plan it
/// must reduce the summed violation or, at equal violation, the cost.
fn acceptable(
    cost_old: f64,
    (viol_old, sum_old): (f64, f64),
    cost_new: f64,
    (viol_new, sum_new): (f64, f64),
    tol: f64,
) -> bool {
    let slack = 1e-8 * (1.0 + cost_old.abs());
    if viol_old <= tol {
        viol_new <= tol && cost_new <= cost_old + slack
    } else {
        viol_new <= tol
            || sum_new < sum_old * (1.0 - 1e-9) - 1e-12
            || (sum_new <= sum_old && cost_new <= cost_old + slack)
    }
}
