//! Scenario files (TOML) and the solver objects built from them.
//!
//! ```toml
//! name = "point2d"
//! model = "point2d"
//! horizon = 100
//! x0 = [0.0, 0.0, 0.0, 0.0]
//! goal = [3.0, 3.0, 0.0, 0.0]
//! init_goal = [0.0, 3.0, 0.0, 0.0]
//! beta = 0.9
//!
//! [model_params]
//! dt = 0.05
//!
//! [bounds]
//! u_min = [-10.0, -10.0]
//! u_max = [10.0, 10.0]
//!
//! [cost]
//! state = [0.0, 0.0, 0.1, 0.1]
//! control = [0.01, 0.01]
//! terminal = [500.0, 500.0, 50.0, 50.0]
//!
//! [[obstacles]]
//! kind = "circle"
//! center = [1.0, 1.0]
//! radius = 0.5
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::{Constraint, ConstraintSet};
use crate::ddp::{solve, CostModel, SolverOptions};
use crate::dynamics::{make_model, Dynamics, DynamicsModel, ModelKind, ModelOverrides};
use crate::error::{Error, Result};
use crate::constraints::TightenedConstraintSet;
use crate::trajectory::Trajectory;

const BUILTINS: [(&str, &str); 4] = [
    ("point2d", include_str!("../scenarios/point2d.toml")),
    ("car2d", include_str!("../scenarios/car2d.toml")),
    ("quadrotor3d", include_str!("../scenarios/quadrotor3d.toml")),
    ("diffdrive", include_str!("../scenarios/diffdrive.toml")),
];

pub fn builtin_names() -> Vec<&'static str> {
    BUILTINS.iter().map(|(n, _)| *n).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
}

/// Diagonal cost weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub state: Vec<f64>,
    pub control: Vec<f64>,
    pub terminal: Vec<f64>,
    /// Control reference; zero when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_ref: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitOptions {
    /// Unconstrained DDP iterations toward `init_goal`.
    pub iterations: usize,
    /// Cost weights for the warm start; the main weights when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost: Option<CostWeights>,
}

impl Default for InitOptions {
    fn default() -> Self {
        Self {
            iterations: 50,
            cost: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model: ModelKind,
    pub horizon: usize,
    pub x0: Vec<f64>,
    pub goal: Vec<f64>,
    /// Temporary goal of the unconstrained warm start.
    pub init_goal: Vec<f64>,
    #[serde(default = "default_goal_radius")]
    pub goal_radius: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
    /// Keep `N` constant instead of shrinking it every step.
    #[serde(default)]
    pub fixed_horizon: bool,
    /// Step cap for fixed-horizon runs; `horizon` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    /// Standard deviations of the measured initial state (diagonal `Σ^x_0`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_std: Option<Vec<f64>>,
    /// Grown onto every obstacle radius.
    #[serde(default)]
    pub robot_radius: f64,
    /// Iterations for an offline (`solve`) run.
    #[serde(default = "default_solve_iterations")]
    pub solve_iterations: usize,
    #[serde(default)]
    pub model_params: ModelOverrides,
    pub bounds: Bounds,
    pub cost: CostWeights,
    #[serde(default)]
    pub init: InitOptions,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub obstacles: Vec<Constraint>,
}

fn default_goal_radius() -> f64 {
    0.1
}
fn default_beta() -> f64 {
    0.5
}
fn default_solve_iterations() -> usize {
    60
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| {
            let field = e
                .message()
                .split('`')
                .nth(1)
                .unwrap_or("scenario")
                .to_string();
            Error::config(field, e.to_string())
        })?;
        s.problem()?;
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config("scenario", e.to_string()))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTINS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| {
                Error::config(
                    "scenario",
                    format!("no built-in scenario `{name}` (have {})", builtin_names().join(", ")),
                )
            })?;
        Self::from_toml(text)
    }

    /// Validated model, costs and constraint set.
    pub fn problem(&self) -> Result<Problem> {
        let model = make_model(self.model, &self.model_params)?;
        let (n, m) = (model.state_dim(), model.control_dim());
        if self.horizon < 2 {
            return Err(Error::config("horizon", "must be at least 2"));
        }
        if !(self.goal_radius > 0.0) {
            return Err(Error::config("goal_radius", "must be > 0"));
        }
        if !(0.5..1.0).contains(&self.beta) {
            return Err(Error::config("beta", "must lie in [0.5, 1)"));
        }
        if !(self.robot_radius >= 0.0) {
            return Err(Error::config("robot_radius", "must be >= 0"));
        }
        if self.solve_iterations == 0 {
            return Err(Error::config("solve_iterations", "must be at least 1"));
        }
        for (field, v) in [("x0", &self.x0), ("goal", &self.goal), ("init_goal", &self.init_goal)] {
            vector(field, v, n)?;
        }
        let u_min = vector("bounds.u_min", &self.bounds.u_min, m)?;
        let u_max = vector("bounds.u_max", &self.bounds.u_max, m)?;
        self.solver.validate()?;

        let items: Vec<Constraint> = self
            .obstacles
            .iter()
            .map(|c| c.inflated(self.robot_radius))
            .collect();
        let set = ConstraintSet::new(items, u_min, u_max, self.beta, n, model.position_indices())?;
        let goal = DVector::from_column_slice(&self.goal);
        let cost = cost_model("cost", &self.cost, goal, n, m)?;
        let init_weights = self.init.cost.as_ref().unwrap_or(&self.cost);
        let init_cost = cost_model(
            "init.cost",
            init_weights,
            DVector::from_column_slice(&self.init_goal),
            n,
            m,
        )?;
        let sigma0 = match &self.initial_std {
            None => DMatrix::zeros(n, n),
            Some(s) => {
                let s = vector("initial_std", s, n)?;
                if s.iter().any(|v| *v < 0.0) {
                    return Err(Error::config("initial_std", "must be >= 0"));
                }
                DMatrix::from_diagonal(&s.map(|v| v * v))
            }
        };
        Ok(Problem {
            x0: DVector::from_column_slice(&self.x0),
            model,
            cost,
            init_cost,
            set,
            sigma0,
            scenario: self.clone(),
        })
    }
}

fn vector(field: &str, v: &[f64], len: usize) -> Result<DVector<f64>> {
    if v.len() != len {
        return Err(Error::config(field, format!("expected {len} entries, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::config(field, "entries must be finite numbers"));
    }
    Ok(DVector::from_column_slice(v))
}

fn cost_model(
    field: &str,
    w: &CostWeights,
    x_ref: DVector<f64>,
    n: usize,
    m: usize,
) -> Result<CostModel> {
    let state = vector(&format!("{field}.state"), &w.state, n)?;
    let control = vector(&format!("{field}.control"), &w.control, m)?;
    let terminal = vector(&format!("{field}.terminal"), &w.terminal, n)?;
    let u_ref = match &w.u_ref {
        Some(u) => vector(&format!("{field}.u_ref"), u, m)?,
        None => DVector::zeros(m),
    };
    CostModel::diagonal(
        state.as_slice(),
        control.as_slice(),
        terminal.as_slice(),
        x_ref,
        u_ref,
    )
    .map_err(|e| match e {
        Error::Config { field: f, message } => Error::config(f.replace("cost", field), message),
        other => other,
    })
}

/// Everything a run needs, built from a validated [`Scenario`].
#[derive(Debug, Clone)]
pub struct Problem {
    pub scenario: Scenario,
    pub model: DynamicsModel,
    pub cost: CostModel,
    pub init_cost: CostModel,
    pub set: ConstraintSet,
    pub x0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
}

impl Problem {
    pub fn horizon(&self) -> usize {
        self.scenario.horizon
    }

    /// Distance from the goal position.
    pub fn goal_distance(&self, x: &DVector<f64>) -> f64 {
        self.model
            .position_indices()
            .iter()
            .map(|&i| (x[i] - self.scenario.goal[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn at_goal(&self, x: &DVector<f64>) -> bool {
        self.goal_distance(x) <= self.scenario.goal_radius
    }

    /// Warm start: unconstrained DDP toward `init_goal` with the input box
    /// enforced, then checked against the raw constraints.
    pub fn initialize(&self) -> Result<Trajectory> {
        self.initialize_from(&self.x0, self.horizon())
    }

    pub fn initialize_from(&self, x0: &DVector<f64>, horizon: usize) -> Result<Trajectory> {
        let m = self.model.control_dim();
        let u0 = DVector::from_fn(m, |i, _| {
            self.init_cost.u_ref[i].clamp(self.set.u_min[i], self.set.u_max[i])
        });
        let start = Trajectory::rollout(&self.model, x0.clone(), vec![u0; horizon]);
        let free = ConstraintSet::new(
            Vec::new(),
            self.set.u_min.clone(),
            self.set.u_max.clone(),
            0.5,
            self.model.state_dim(),
            self.model.position_indices(),
        )?;
        let opts = SolverOptions {
            iterations: self.scenario.init.iterations.max(1),
            retighten_every: 0,
            ..self.scenario.solver.clone()
        };
        let out = solve(
            &self.model,
            &self.init_cost,
            TightenedConstraintSet::untightened(free, horizon + 1),
            start,
            &self.sigma0,
            &opts,
        )?;
        let traj = out.traj;
        for (k, x) in traj.xs.iter().enumerate() {
            let u = &traj.us[k.min(horizon - 1)];
            let g = self.set.evaluate(x, u)?;
            if let Some((j, v)) = g.iter().enumerate().find(|(_, v)| **v > 0.0) {
                return Err(Error::InfeasibleInit {
                    step: k,
                    constraint: j,
                    value: *v,
                });
            }
        }
        Ok(traj)
    }
}

/// Parse a scenario from a file path, or a built-in by name.
pub fn load_scenario(path_or_name: &str) -> Result<Scenario> {
    let p = Path::new(path_or_name);
    if p.exists() {
        let text = std::fs::read_to_string(p)?;
        Scenario::from_toml(&text)
    } else if builtin_names().contains(&path_or_name) {
        Scenario::builtin(path_or_name)
    } else {
        Err(Error::config(
            "scenario",
            format!("`{path_or_name}` is neither a file nor a built-in scenario"),
        ))
    }
}
