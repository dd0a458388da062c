//! Dense primal active-set solver for small strictly convex QPs.
//!
//! Solves
//!
//! ```text
//! min ½ zᵀHz + qᵀz   s.t.   A z ≤ b,   lower ≤ z ≤ upper
//! ```
//!
//! with `H` positive definite. Infinite bounds are allowed. A feasible
//! starting point is found by a phase-1 solve over an elastic slack; a
//! positive optimal slack certifies infeasibility.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Quadratic program data. `H` is symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub q: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        h: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
        lower: DVector<f64>,
        upper: DVector<f64>,
    ) -> Result<Self> {
        let m = q.len();
        if h.nrows() != m || h.ncols() != m {
            return Err(Error::contract(format!(
                "H is {}x{}, expected {m}x{m}",
                h.nrows(),
                h.ncols()
            )));
        }
        if a.ncols() != m && a.nrows() > 0 {
            return Err(Error::contract(format!(
                "A has {} columns, expected {m}",
                a.ncols()
            )));
        }
        if a.nrows() != b.len() {
            return Err(Error::contract(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        if lower.len() != m || upper.len() != m {
            return Err(Error::contract("bound vectors must match the variable count"));
        }
        if lower.iter().zip(upper.iter()).any(|(l, u)| l > u) {
            return Err(Error::contract("lower bound exceeds upper bound"));
        }
        let a = if a.nrows() == 0 {
            DMatrix::zeros(0, m)
        } else {
            a
        };
        let h = (&h + h.transpose()) * 0.5;
        Ok(Self {
            h,
            q,
            a,
            b,
            lower,
            upper,
        })
    }

    /// Problem with no general rows and free variables.
    pub fn unconstrained(h: DMatrix<f64>, q: DVector<f64>) -> Result<Self> {
        let m = q.len();
        Self::new(
            h,
            q,
            DMatrix::zeros(0, m),
            DVector::zeros(0),
            DVector::from_element(m, f64::NEG_INFINITY),
            DVector::from_element(m, f64::INFINITY),
        )
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * z.dot(&(&self.h * z)) + self.q.dot(z)
    }

    /// Largest violation over general rows and bounds (0 when feasible).
    pub fn max_violation(&self, z: &DVector<f64>) -> f64 {
        let mut worst = 0.0f64;
        if self.a.nrows() > 0 {
            let az = &self.a * z;
            for (v, b) in az.iter().zip(self.b.iter()) {
                worst = worst.max(v - b);
            }
        }
        for i in 0..z.len() {
            worst = worst.max(self.lower[i] - z[i]).max(z[i] - self.upper[i]);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// General rows (indices into `A`) in the final working set, ascending.
    pub active: Vec<usize>,
    /// Multipliers of `active`, same order.
    pub multipliers: DVector<f64>,
    /// Signed bound multipliers: positive on an active upper bound, negative
    /// on an active lower bound, zero otherwise.
    pub bound_multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }

    /// `‖H z + q + A_actᵀ λ + ν‖∞`.
    pub fn stationarity_residual(&self, problem: &QpProblem) -> f64 {
        let mut r = &problem.h * &self.z + &problem.q + &self.bound_multipliers;
        for (j, &row) in self.active.iter().enumerate() {
            r += problem.a.row(row).transpose() * self.multipliers[j];
        }
        r.amax()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSettings {
    pub feasibility_tol: f64,
    pub stationarity_tol: f64,
    /// Defaults to `100 (m + c)`.
    pub max_iterations: Option<usize>,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            stationarity_tol: 1e-7,
            max_iterations: None,
        }
    }
}

/// Solve with default settings.
pub fn solve_qp(problem: &QpProblem) -> Result<QpSolution> {
    ActiveSetSolver::default().solve(problem)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ActiveSetSolver {
    pub settings: QpSettings,
}

/// One inequality `aᵀz ≤ rhs` of the internal row list. General rows come
/// first, then bounds, so "lowest index" tie-breaking prefers general rows.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Row {
    General(usize),
    Upper(usize),
    Lower(usize),
    /// Phase-1 only: `-t ≤ 0` on the slack variable.
    SlackSign,
}

struct Rows<'a> {
    a: &'a DMatrix<f64>,
    b: &'a DVector<f64>,
    lower: &'a DVector<f64>,
    upper: &'a DVector<f64>,
    list: Vec<Row>,
    /// Phase-1: general rows get a `-t` column at index `slack`.
    slack: Option<usize>,
}

impl<'a> Rows<'a> {
    fn new(problem: &'a QpProblem, slack: Option<usize>) -> Self {
        let mut list: Vec<Row> = (0..problem.num_rows()).map(Row::General).collect();
        for i in 0..problem.dim() {
            if problem.upper[i].is_finite() {
                list.push(Row::Upper(i));
            }
            if problem.lower[i].is_finite() {
                list.push(Row::Lower(i));
            }
        }
        if slack.is_some() {
            list.push(Row::SlackSign);
        }
        Self {
            a: &problem.a,
            b: &problem.b,
            lower: &problem.lower,
            upper: &problem.upper,
            list,
            slack,
        }
    }

    fn dot(&self, row: Row, v: &DVector<f64>) -> f64 {
        match row {
            Row::General(r) => {
                let mut s = self.a.row(r).transpose().dot(&v.rows(0, self.a.ncols()));
                if let Some(t) = self.slack {
                    s -= v[t];
                }
                s
            }
            Row::Upper(i) => v[i],
            Row::Lower(i) => -v[i],
            Row::SlackSign => -v[self.slack.expect("slack row without slack")],
        }
    }

    fn rhs(&self, row: Row) -> f64 {
        match row {
            Row::General(r) => self.b[r],
            Row::Upper(i) => self.upper[i],
            Row::Lower(i) => -self.lower[i],
            Row::SlackSign => 0.0,
        }
    }

    fn add_to(&self, row: Row, out: &mut DVector<f64>, scale: f64) {
        match row {
            Row::General(r) => {
                for j in 0..self.a.ncols() {
                    out[j] += scale * self.a[(r, j)];
                }
                if let Some(t) = self.slack {
                    out[t] -= scale;
                }
            }
            Row::Upper(i) => out[i] += scale,
            Row::Lower(i) => out[i] -= scale,
            Row::SlackSign => out[self.slack.expect("slack row without slack")] -= scale,
        }
    }

    fn dense(&self, row: Row, n: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        self.add_to(row, &mut v, 1.0);
        v
    }
}

struct Outcome {
    z: DVector<f64>,
    working: Vec<usize>,
    lambda: Vec<f64>,
    converged: bool,
    iterations: usize,
}

impl ActiveSetSolver {
    pub fn new(settings: QpSettings) -> Self {
        Self { settings }
    }

    pub fn solve(&self, problem: &QpProblem) -> Result<QpSolution> {
        let m = problem.dim();
        let c = problem.num_rows();
        let max_iter = self.settings.max_iterations.unwrap_or(100 * (m + c).max(1));
        let tol = self.settings.feasibility_tol;

        let z0 = DVector::from_fn(m, |i, _| 0.0f64.clamp(problem.lower[i], problem.upper[i]));
        let mut iterations = 0;

        let start = if problem.max_violation(&z0) <= tol {
            z0
        } else {
            // Phase 1: min ½μ‖z − z0‖² + t + ½μt²  s.t. Az − t ≤ b, bounds, t ≥ 0.
            let mu = 1e-6;
            let mut h1 = DMatrix::identity(m + 1, m + 1) * mu;
            h1[(m, m)] = mu;
            let mut q1 = DVector::zeros(m + 1);
            for i in 0..m {
                q1[i] = -mu * z0[i];
            }
            q1[m] = 1.0;
            let rows = Rows::new(problem, Some(m));
            let mut start = DVector::zeros(m + 1);
            start.rows_mut(0, m).copy_from(&z0);
            start[m] = problem.max_violation(&z0).max(0.0);
            let out = primal_active_set(&h1, &q1, &rows, start, max_iter)?;
            iterations += out.iterations;
            let z = out.z.rows(0, m).into_owned();
            if out.z[m] > tol || !out.converged {
                let status = if out.converged {
                    QpStatus::Infeasible
                } else {
                    QpStatus::MaxIterations
                };
                return Ok(QpSolution {
                    z,
                    active: Vec::new(),
                    multipliers: DVector::zeros(0),
                    bound_multipliers: DVector::zeros(m),
                    status,
                    iterations,
                });
            }
            z
        };

        let rows = Rows::new(problem, None);
        let out = primal_active_set(&problem.h, &problem.q, &rows, start, max_iter)?;
        iterations += out.iterations;

        let mut active = Vec::new();
        let mut multipliers = Vec::new();
        let mut bound_multipliers = DVector::zeros(m);
        let mut order: Vec<(usize, f64)> = out
            .working
            .iter()
            .zip(out.lambda.iter())
            .map(|(&w, &l)| (w, l))
            .collect();
        order.sort_by_key(|(w, _)| *w);
        for (w, l) in order {
            match rows.list[w] {
                Row::General(r) => {
                    active.push(r);
                    multipliers.push(l);
                }
                Row::Upper(i) => bound_multipliers[i] += l,
                Row::Lower(i) => bound_multipliers[i] -= l,
                Row::SlackSign => unreachable!(),
            }
        }
        Ok(QpSolution {
            z: out.z,
            active,
            multipliers: DVector::from_vec(multipliers),
            bound_multipliers,
            status: if out.converged {
                QpStatus::Optimal
            } else {
                QpStatus::MaxIterations
            },
            iterations,
        })
    }
}

/// Primal active-set iterations from a feasible `z`.
fn primal_active_set(
    h: &DMatrix<f64>,
    q: &DVector<f64>,
    rows: &Rows<'_>,
    mut z: DVector<f64>,
    max_iter: usize,
) -> Result<Outcome> {
    let n = z.len();
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("QP Hessian is not positive definite".into()))?;

    let mut working: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let dual_tol = 1e-12;

    for iter in 0..max_iter {
        let g = h * &z + q;

        let (p, lam) = if working.is_empty() {
            (-chol.solve(&g), Vec::new())
        } else {
            let k = working.len();
            let aw: Vec<DVector<f64>> = working
                .iter()
                .map(|&w| rows.dense(rows.list[w], n))
                .collect();
            // Full KKT system; the residual term pulls `z` back onto
            // working rows that drifted through rounding.
            let mut kkt = DMatrix::zeros(n + k, n + k);
            kkt.view_mut((0, 0), (n, n)).copy_from(h);
            let mut rhs = DVector::zeros(n + k);
            rhs.rows_mut(0, n).copy_from(&(-&g));
            for (i, a) in aw.iter().enumerate() {
                for j in 0..n {
                    kkt[(n + i, j)] = a[j];
                    kkt[(j, n + i)] = a[j];
                }
                let row = rows.list[working[i]];
                rhs[n + i] = rows.rhs(row) - rows.dot(row, &z);
            }
            let sol = kkt
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("dependent working set".into()))?;
            let p = sol.rows(0, n).into_owned();
            let lam: Vec<f64> = sol.rows(n, k).iter().copied().collect();
            (p, lam)
        };
        lambda = lam;

        let p_scale = 1e-11 * (1.0 + z.amax());
        if p.amax() <= p_scale {
            // Stationary on the working set: check multiplier signs.
            let mut worst: Option<(usize, f64)> = None;
            for (j, &l) in lambda.iter().enumerate() {
                if l < -dual_tol {
                    let better = match worst {
                        None => true,
                        Some((wj, wl)) => {
                            l < wl || (l == wl && working[j] < working[wj])
                        }
                    };
                    if better {
                        worst = Some((j, l));
                    }
                }
            }
            match worst {
                None => {
                    for l in lambda.iter_mut() {
                        *l = l.max(0.0);
                    }
                    return Ok(Outcome {
                        z,
                        working,
                        lambda,
                        converged: true,
                        iterations: iter + 1,
                    });
                }
                Some((j, _)) => {
                    working.remove(j);
                    continue;
                }
            }
        }

        // Ratio test over rows outside the working set; lowest index wins ties.
        let mut alpha = 1.0;
        let mut blocking = None;
        for (idx, &row) in rows.list.iter().enumerate() {
            if working.contains(&idx) {
                continue;
            }
            let ap = rows.dot(row, &p);
            if ap <= 1e-14 * (1.0 + p.amax()) {
                continue;
            }
            let slack = (rows.rhs(row) - rows.dot(row, &z)).max(0.0);
            let step = slack / ap;
            if step < alpha {
                alpha = step;
                blocking = Some(idx);
            }
        }
        z += &p * alpha;
        if let Some(idx) = blocking {
            // Keep it sorted so later tie-breaks scan rows deterministically.
            let pos = working.partition_point(|&w| w < idx);
            working.insert(pos, idx);
        }
    }

    Ok(Outcome {
        z,
        working,
        lambda,
        converged: false,
        iterations: max_iter,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inf(m: usize) -> (DVector<f64>, DVector<f64>) {
        (
            DVector::from_element(m, f64::NEG_INFINITY),
            DVector::from_element(m, f64::INFINITY),
        )
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem::unconstrained(DMatrix::identity(2, 2), DVector::from_vec(vec![-1.0, -1.0]))
            .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 1.0).abs() < 1e-12 && (s.z[1] - 1.0).abs() < 1e-12);
        assert!(s.active.is_empty());
    }

    #[test]
    fn single_row_multiplier() {
        // z ≥ 2 written as -z ≤ -2.
        let (l, u) = inf(1);
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_element(1, 1, -1.0),
            DVector::from_element(1, -2.0),
            l,
            u,
        )
        .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 2.0).abs() < 1e-10);
        assert_eq!(s.active, vec![0]);
        assert!((s.multipliers[0] - 2.0).abs() < 1e-10);
        assert!(s.stationarity_residual(&p) < 1e-10);
    }

    #[test]
    fn upper_bound_clips() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-3.0, -3.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::from_element(2, f64::NEG_INFINITY),
            DVector::from_vec(vec![1.0, 5.0]),
        )
        .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!((s.z[0] - 1.0).abs() < 1e-12);
        assert!((s.z[1] - 3.0).abs() < 1e-12);
        assert!((s.bound_multipliers[0] - 2.0).abs() < 1e-12);
        assert_eq!(s.bound_multipliers[1], 0.0);
    }

    #[test]
    fn infeasible_rows_detected() {
        // z ≤ -1 and z ≥ 1.
        let (l, u) = inf(1);
        let p = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::from_column_slice(2, 1, &[1.0, -1.0]),
            DVector::from_vec(vec![-1.0, -1.0]),
            l,
            u,
        )
        .unwrap();
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn row_conflicting_with_bounds_is_infeasible() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            DVector::from_element(1, -5.0),
            DVector::from_element(2, -1.0),
            DVector::from_element(2, 1.0),
        )
        .unwrap();
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn infeasible_start_recovered_by_phase_one() {
        // Origin violates z1 + z2 ≥ 3; optimum of ½‖z‖² on that half-plane is (1.5, 1.5).
        let (l, u) = inf(2);
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(2),
            DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]),
            DVector::from_element(1, -3.0),
            l,
            u,
        )
        .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 1.5).abs() < 1e-9 && (s.z[1] - 1.5).abs() < 1e-9);
        assert!((s.multipliers[0] - 1.5).abs() < 1e-9);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let r = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::zeros(3),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
            DVector::zeros(3),
            DVector::zeros(3),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
        let r = QpProblem::new(
            DMatrix::identity(1, 1),
            DVector::zeros(1),
            DMatrix::zeros(2, 1),
            DVector::zeros(1),
            DVector::zeros(1),
            DVector::zeros(1),
        );
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn equal_bounds_fix_variable() {
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-4.0, 1.0]),
            DMatrix::zeros(0, 2),
            DVector::zeros(0),
            DVector::from_vec(vec![0.5, -10.0]),
            DVector::from_vec(vec![0.5, 10.0]),
        )
        .unwrap();
        let s = solve_qp(&p).unwrap();
        assert!(s.is_optimal());
        assert!((s.z[0] - 0.5).abs() < 1e-12 && (s.z[1] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn iteration_cap_reports_status() {
        let (l, u) = inf(2);
        let p = QpProblem::new(
            DMatrix::identity(2, 2),
            DVector::from_vec(vec![-5.0, -5.0]),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
            l,
            u,
        )
        .unwrap();
        let solver = ActiveSetSolver::new(QpSettings {
            max_iterations: Some(1),
            ..QpSettings::default()
        });
        assert_eq!(solver.solve(&p).unwrap().status, QpStatus::MaxIterations);
    }
}
