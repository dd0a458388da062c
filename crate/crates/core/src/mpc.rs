//! Receding-horizon loop around the constrained solver.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::constraints::TightenedConstraintSet;
use crate::ddp::{solve, SolveOutcome, SolveReport, SolverOptions};
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::scenario::Problem;
use crate::trajectory::Trajectory;

/// The current plan and the margins it was optimized against.
#[derive(Debug, Clone)]
pub struct Plan {
    pub traj: Trajectory,
    pub tight: TightenedConstraintSet,
}

impl Plan {
    pub fn horizon(&self) -> usize {
        self.traj.horizon()
    }

    /// Re-anchor the plan at the measured state by rolling out
    /// `u = clamp(ū + K(x − x̄))`.
    pub fn rebase(&self, problem: &Problem, x0: &DVector<f64>) -> Trajectory {
        let t = &self.traj;
        let set = &problem.set;
        let mut xs = Vec::with_capacity(t.xs.len());
        let mut us = Vec::with_capacity(t.us.len());
        xs.push(x0.clone());
        for k in 0..t.horizon() {
            let dx = &xs[k] - &t.xs[k];
            let mut u = &t.us[k] + &t.ks[k] * dx;
            for i in 0..u.len() {
                u[i] = u[i].clamp(set.u_min[i], set.u_max[i]);
            }
            xs.push(problem.model.step(&xs[k], &u));
            us.push(u);
        }
        Trajectory {
            xs,
            us,
            ks: t.ks.clone(),
            ds: t.ds.clone(),
            cost: f64::NAN,
        }
    }

    fn advance(&mut self, keep_horizon: bool) {
        if keep_horizon {
            self.traj.shift_keep_horizon();
            self.tight.shift_keep_horizon();
        } else {
            self.traj.shift();
            self.tight.shift();
        }
    }
}

/// Outcome of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct MpcStep {
    pub control: DVector<f64>,
    /// Shifted plan for the next step.
    pub plan: Plan,
    pub report: Option<SolveReport>,
    /// The solver failed and the previous plan's control was used.
    pub fallback: bool,
}

/// Solve from the measured state, take `u₀`, shift the plan.
pub fn mpc_step(problem: &Problem, x: &DVector<f64>, plan: &Plan) -> Result<MpcStep> {
    if plan.horizon() < 2 {
        return Err(Error::contract("MPC step needs a horizon of at least 2"));
    }
    let nominal = plan.rebase(problem, x);
    let keep = problem.scenario.fixed_horizon;
    match solve(
        &problem.model,
        &problem.cost,
        plan.tight.clone(),
        nominal,
        &problem.sigma0,
        &problem.scenario.solver,
    ) {
        Ok(out) => {
            let control = out.traj.us[0].clone();
            let mut next = Plan {
                traj: out.traj,
                tight: out.tightened,
            };
            next.advance(keep);
            Ok(MpcStep {
                control,
                plan: next,
                report: Some(out.report),
                fallback: false,
            })
        }
        Err(Error::Numerical(_)) | Err(Error::NotPositiveDefinite { .. }) | Err(Error::Solver(_)) => {
            let control = plan.traj.us[0].clone();
            let mut next = plan.clone();
            next.advance(keep);
            Ok(MpcStep {
                control,
                plan: next,
                report: None,
                fallback: true,
            })
        }
        Err(e) => Err(e),
    }
}

/// Noiseless offline optimization from `x0` at the given β, with the
/// scenario's `solve_iterations` and polishing until feasible.
pub fn plan(problem: &Problem, beta: f64) -> Result<SolveOutcome> {
    let mut set = problem.set.clone();
    set.set_beta(beta)?;
    let problem = Problem {
        set,
        ..problem.clone()
    };
    let init = problem.initialize()?;
    let horizon = init.horizon();
    let opts = SolverOptions {
        iterations: problem.scenario.solve_iterations,
        polish_iterations: problem
            .scenario
            .solver
            .polish_iterations
            .max(problem.scenario.solve_iterations),
        ..problem.scenario.solver.clone()
    };
    solve(
        &problem.model,
        &problem.cost,
        TightenedConstraintSet::untightened(problem.set.clone(), horizon + 1),
        init,
        &problem.sigma0,
        &opts,
    )
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub horizon: usize,
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub solve_iterations: usize,
    /// Largest tightened value along the solved plan.
    pub max_violation: f64,
    pub fallback: bool,
}

/// One closed-loop run. Equality ignores wall-clock timings.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub beta: f64,
    pub seed: u64,
    /// Executed (noisy) states, starting with `x0`.
    pub states: Vec<DVector<f64>>,
    pub controls: Vec<DVector<f64>>,
    /// Largest raw constraint value at each executed state.
    pub constraint_values: Vec<f64>,
    /// Steps whose state lies inside an obstacle.
    pub violations: usize,
    pub reached_goal: bool,
    /// Two solver failures in a row ended the run.
    pub aborted: bool,
    pub records: Vec<StepRecord>,
    pub step_wall_ms: Vec<f64>,
}

impl PartialEq for EpisodeResult {
    fn eq(&self, other: &Self) -> bool {
        self.beta.to_bits() == other.beta.to_bits()
            && self.seed == other.seed
            && self.states == other.states
            && self.controls == other.controls
            && self
                .constraint_values
                .iter()
                .map(|v| v.to_bits())
                .eq(other.constraint_values.iter().map(|v| v.to_bits()))
            && self.violations == other.violations
            && self.reached_goal == other.reached_goal
            && self.aborted == other.aborted
            && self.records == other.records
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOptions {
    pub beta: f64,
    pub seed: u64,
    /// Draw process noise; when false the plant is the nominal model.
    pub noise: bool,
}

/// A factor `L` with `L Lᵀ = Σ` for a PSD `Σ`.
fn noise_factor(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(ch) = sigma.clone().cholesky() {
        return ch.l();
    }
    let eig = sigma.clone().symmetric_eigen();
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt)
}

/// Run the receding-horizon loop until the goal region is reached or the
/// horizon runs out.
pub fn run_episode(problem: &Problem, opts: &EpisodeOptions) -> Result<EpisodeResult> {
    let mut set = problem.set.clone();
    set.set_beta(opts.beta)?;
    let problem = Problem {
        set,
        ..problem.clone()
    };
    let model = &problem.model;
    let n = model.state_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let factor = noise_factor(model.noise_covariance());

    let init = problem.initialize()?;
    let horizon = init.horizon();
    let mut plan = Plan {
        tight: TightenedConstraintSet::untightened(problem.set.clone(), horizon + 1),
        traj: init,
    };
    let max_steps = if problem.scenario.fixed_horizon {
        problem.scenario.max_steps.unwrap_or(horizon)
    } else {
        horizon
    };

    let mut x = problem.x0.clone();
    let zero_u = DVector::zeros(model.control_dim());
    let mut states = vec![x.clone()];
    let mut controls = Vec::new();
    let mut constraint_values = vec![problem.set.max_value(&x, &zero_u)];
    let mut records = Vec::new();
    let mut step_wall_ms = Vec::new();
    let mut failures = 0;
    let mut aborted = false;

    let mut step = 0;
    while !problem.at_goal(&x) && plan.horizon() >= 2 && step < max_steps {
        let t0 = Instant::now();
        let current_horizon = plan.horizon();
        let out = mpc_step(&problem, &x, &plan)?;
        step_wall_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        if out.fallback {
            failures += 1;
        } else {
            failures = 0;
        }
        let u = out.control;
        debug_assert!((0..u.len()).all(|i| u[i] >= problem.set.u_min[i] && u[i] <= problem.set.u_max[i]));
        let noise = if opts.noise {
            let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            &factor * z
        } else {
            DVector::zeros(n)
        };
        let max_violation = out.report.as_ref().map_or(f64::NAN, |r| r.max_violation);
        let iterations = out.report.as_ref().map_or(0, |r| r.iterations.len());
        x = model.step(&x, &u) + noise;

        records.push(StepRecord {
            step,
            horizon: current_horizon,
            state: x.iter().copied().collect(),
            control: u.iter().copied().collect(),
            solve_iterations: iterations,
            max_violation,
            fallback: out.fallback,
        });
        constraint_values.push(problem.set.max_value(&x, &u));
        controls.push(u);
        states.push(x.clone());
        plan = out.plan;
        step += 1;
        if failures >= 2 {
            aborted = true;
            break;
        }
    }

    let violations = constraint_values.iter().skip(1).filter(|g| **g > 0.0).count();
    Ok(EpisodeResult {
        beta: opts.beta,
        seed: opts.seed,
        reached_goal: problem.at_goal(&x),
        states,
        controls,
        constraint_values,
        violations,
        aborted,
        records,
        step_wall_ms,
    })
}
