//! Constrained differential dynamic programming.

mod cost;
mod gains;
mod passes;
mod solver;

pub use cost::{CostDerivatives, CostModel};
pub use gains::{
    constrained_gains, constrained_gains_with_offset, q_derivatives, select_active,
    unconstrained_gains, value_recursion, ActiveSelection, CandidateRow, DynamicsCurvature, Gains,
    QModel, ValueModel, MIN_ROW_NORM, RANK_TOL,
};
pub use passes::{backward_pass, forward_pass, BackwardPass, ForwardPass, PassOptions, StepModel};
pub use solver::{solve, IterationRecord, SolveOutcome, SolveReport, SolverOptions};
