//! Local quadratic models and feedback gains for one backward step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cost::CostDerivatives;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};

/// Row gradients shorter than this cannot be enforced through `δu`.
pub const MIN_ROW_NORM: f64 = 1e-9;
/// Relative residual below which a row counts as dependent on the kept rows.
pub const RANK_TOL: f64 = 1e-9;

/// Expansion of `Q(δx, δu)` around the nominal step.
#[derive(Debug, Clone, PartialEq)]
pub struct QModel {
    pub qx: DVector<f64>,
    pub qu: DVector<f64>,
    pub qxx: DMatrix<f64>,
    pub quu: DMatrix<f64>,
    /// `m × n`; `Q_xu` is its transpose.
    pub qux: DMatrix<f64>,
}

/// Quadratic value model at one time index.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    pub vx: DVector<f64>,
    pub vxx: DMatrix<f64>,
}

/// Local policy `δu = K δx + d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gains {
    pub k: DMatrix<f64>,
    pub d: DVector<f64>,
}

/// Second-order dynamics terms contracted with `V'_x`.
#[derive(Debug, Clone)]
pub struct DynamicsCurvature {
    pub xx: DMatrix<f64>,
    pub uu: DMatrix<f64>,
    /// `m × n`.
    pub ux: DMatrix<f64>,
}

impl DynamicsCurvature {
    /// Central differences of the Jacobians.
    pub fn finite_difference(
        model: &dyn Dynamics,
        x: &DVector<f64>,
        u: &DVector<f64>,
        vx: &DVector<f64>,
        h: f64,
    ) -> Self {
        let (n, m) = (x.len(), u.len());
        let mut xx = DMatrix::zeros(n, n);
        let mut ux = DMatrix::zeros(m, n);
        let mut uu = DMatrix::zeros(m, m);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let (fxp, fup) = model.jacobians(&xp, u);
            let (fxm, fum) = model.jacobians(&xm, u);
            xx.set_column(j, &(((fxp - fxm) / (2.0 * h)).transpose() * vx));
            ux.set_column(j, &(((fup - fum) / (2.0 * h)).transpose() * vx));
        }
        for j in 0..m {
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += h;
            um[j] -= h;
            let (_, fup) = model.jacobians(x, &up);
            let (_, fum) = model.jacobians(x, &um);
            uu.set_column(j, &(((fup - fum) / (2.0 * h)).transpose() * vx));
        }
        Self {
            xx: symmetrize(&xx),
            uu: symmetrize(&uu),
            ux,
        }
    }
}

/// `Q` terms from the cost expansion, the dynamics Jacobians and the
/// successor value model. `curvature = None` gives the Gauss–Newton model.
pub fn q_derivatives(
    cost: &CostDerivatives,
    fx: &DMatrix<f64>,
    fu: &DMatrix<f64>,
    next: &ValueModel,
    curvature: Option<&DynamicsCurvature>,
) -> QModel {
    let fxt = fx.transpose();
    let fut = fu.transpose();
    let vxx_fx = &next.vxx * fx;
    let vxx_fu = &next.vxx * fu;
    let mut qxx = &cost.lxx + &fxt * &vxx_fx;
    let mut quu = &cost.luu + &fut * &vxx_fu;
    let mut qux = &cost.lux + &fut * &vxx_fx;
    if let Some(c) = curvature {
        qxx += &c.xx;
        quu += &c.uu;
        qux += &c.ux;
    }
    QModel {
        qx: &cost.lx + &fxt * &next.vx,
        qu: &cost.lu + &fut * &next.vx,
        qxx: symmetrize(&qxx),
        quu: symmetrize(&quu),
        qux,
    }
}

fn factor(quu: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    quu.clone()
        .cholesky()
        .ok_or(Error::NotPositiveDefinite { step: 0 })
}

/// `K = −Q_uu⁻¹ Q_ux`, `d = −Q_uu⁻¹ Q_u`.
pub fn unconstrained_gains(q: &QModel) -> Result<Gains> {
    let chol = factor(&q.quu)?;
    Ok(Gains {
        k: -chol.solve(&q.qux),
        d: -chol.solve(&q.qu),
    })
}

/// Gains under the equality model `C̃ δu = D̃ δx` of the active rows.
pub fn constrained_gains(q: &QModel, c: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<Gains> {
    let offset = DVector::zeros(c.nrows());
    Ok(constrained_gains_with_offset(q, c, d, &offset)?.0)
}

/// Gains under `C̃ δu = D̃ δx + r` together with the multipliers at `δx = 0`.
///
/// ```text
/// S = C̃ Q_uu⁻¹ C̃ᵀ
/// K = −Q_uu⁻¹Q_ux + Q_uu⁻¹C̃ᵀS⁻¹D̃ + Q_uu⁻¹C̃ᵀS⁻¹C̃Q_uu⁻¹Q_ux
/// d = −Q_uu⁻¹Q_u + Q_uu⁻¹C̃ᵀS⁻¹(C̃Q_uu⁻¹Q_u + r)
/// λ = −S⁻¹(C̃Q_uu⁻¹Q_u + r)
/// ```
pub fn constrained_gains_with_offset(
    q: &QModel,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
    r: &DVector<f64>,
) -> Result<(Gains, DVector<f64>)> {
    let m = q.qu.len();
    let n = q.qx.len();
    if c.ncols() != m || d.ncols() != n || d.nrows() != c.nrows() || r.len() != c.nrows() {
        return Err(Error::contract("active-row matrices have inconsistent shapes"));
    }
    let chol = factor(&q.quu)?;
    let hk = chol.solve(&q.qux);
    let hd = chol.solve(&q.qu);
    if c.nrows() == 0 {
        return Ok((Gains { k: -hk, d: -hd }, DVector::zeros(0)));
    }
    let hct = chol.solve(&c.transpose());
    let s = c * &hct;
    let s_chol = s
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("active rows are linearly dependent".into()))?;
    let k = -&hk + &hct * s_chol.solve(&(d + c * &hk));
    let rhs = c * &hd + r;
    let d_ff = -&hd + &hct * s_chol.solve(&rhs);
    let lambda = -s_chol.solve(&rhs);
    Ok((Gains { k, d: d_ff }, lambda))
}

/// `V_x = Q_x + KᵀQ_u + KᵀQ_uu d + Q_uxᵀ d`,
/// `V_xx = Q_xx + KᵀQ_uu K + KᵀQ_ux + Q_uxᵀ K`.
pub fn value_recursion(q: &QModel, g: &Gains) -> ValueModel {
    let kt = g.k.transpose();
    let quxt = q.qux.transpose();
    let vx = &q.qx + &kt * &q.qu + &kt * (&q.quu * &g.d) + &quxt * &g.d;
    let vxx = &q.qxx + &kt * &q.quu * &g.k + &kt * &q.qux + &quxt * &g.k;
    ValueModel {
        vx,
        vxx: symmetrize(&vxx),
    }
}

/// A linearized row `value + c·δu − d·δx ≤ 0` competing for the active set.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateRow {
    pub id: usize,
    pub value: f64,
    pub c: DVector<f64>,
    pub d: DVector<f64>,
}

/// Rows kept for the equality model and the gains they produce.
#[derive(Debug, Clone)]
pub struct ActiveSelection {
    pub rows: Vec<CandidateRow>,
    pub gains: Gains,
    pub multipliers: DVector<f64>,
    /// Candidates dropped by the rank test.
    pub dependent: Vec<usize>,
    /// Candidates dropped for a negative multiplier.
    pub pruned: Vec<usize>,
}

impl ActiveSelection {
    pub fn ids(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.id).collect()
    }
}

/// Choose the active rows for one step.
///
/// Rows are ranked by value (most violated first, then by id) and kept
/// while linearly independent, so at most `m` survive. Rows with a
/// negative multiplier are then removed one at a time, most negative
/// first. With `restore`, violated rows aim at `C̃δu = D̃δx − h⁺`.
pub fn select_active(
    q: &QModel,
    mut candidates: Vec<CandidateRow>,
    restore: bool,
) -> Result<ActiveSelection> {
    let m = q.qu.len();
    candidates.retain(|r| r.c.norm() >= MIN_ROW_NORM);
    candidates.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.id.cmp(&b.id)));

    let mut rows: Vec<CandidateRow> = Vec::new();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut dependent = Vec::new();
    for row in candidates {
        let mut w = row.c.clone();
        for b in &basis {
            w -= b * b.dot(&w);
        }
        let res = w.norm();
        if rows.len() < m && res > RANK_TOL * row.c.norm() {
            basis.push(w / res);
            rows.push(row);
        } else {
            dependent.push(row.id);
        }
    }

    let mut pruned = Vec::new();
    loop {
        let (c, d, r) = stack(&rows, m, q.qx.len(), restore);
        let (gains, lambda) = constrained_gains_with_offset(q, &c, &d, &r)?;
        let worst = lambda
            .iter()
            .enumerate()
            .filter(|(_, l)| **l < 0.0)
            .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)));
        match worst {
            Some((i, _)) => {
                pruned.push(rows.remove(i).id);
            }
            None => {
                return Ok(ActiveSelection {
                    rows,
                    gains,
                    multipliers: lambda,
                    dependent,
                    pruned,
                })
            }
        }
    }
}

fn stack(
    rows: &[CandidateRow],
    m: usize,
    n: usize,
    restore: bool,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let mut c = DMatrix::zeros(rows.len(), m);
    let mut d = DMatrix::zeros(rows.len(), n);
    let mut r = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        c.set_row(i, &row.c.transpose());
        d.set_row(i, &row.d.transpose());
        if restore {
            r[i] = -row.value.max(0.0);
        }
    }
    (c, d, r)
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;
    use nalgebra::dvector;

    fn scalar_q() -> QModel {
        QModel {
            qx: dvector![0.0],
            qu: dvector![3.0],
            qxx: dmatrix![1.0],
            quu: dmatrix![2.0],
            qux: dmatrix![1.0],
        }
    }

    #[test]
    fn scalar_unconstrained_gains() {
        let g = unconstrained_gains(&scalar_q()).unwrap();
        assert!((g.k[(0, 0)] + 0.5).abs() < 1e-12);
        assert!((g.d[0] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn scalar_constrained_gains() {
        // Active row c̃ = 1, d̃ = 0.5 pins δu = 0.5 δx.
        let g = constrained_gains(&scalar_q(), &dmatrix![1.0], &dmatrix![0.5]).unwrap();
        assert!((g.k[(0, 0)] - 0.5).abs() < 1e-12);
        assert!(g.d[0].abs() < 1e-12);
    }

    #[test]
    fn empty_active_set_matches_unconstrained() {
        let q = scalar_q();
        let a = unconstrained_gains(&q).unwrap();
        let b = constrained_gains(&q, &DMatrix::zeros(0, 1), &DMatrix::zeros(0, 1)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn indefinite_quu_reported() {
        let mut q = scalar_q();
        q.quu = dmatrix![-1.0];
        assert!(matches!(
            unconstrained_gains(&q),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn negative_multiplier_rows_are_pruned() {
        // Qu = 3 pushes δu negative; a row that only blocks positive δu
        // must be released.
        let q = scalar_q();
        let row = |c: f64| CandidateRow {
            id: 0,
            value: 0.0,
            c: dvector![c],
            d: dvector![0.0],
        };
        let keep = select_active(&q, vec![row(-1.0)], false).unwrap();
        assert_eq!(keep.ids(), vec![0]);
        assert!(keep.multipliers[0] > 0.0);
        let drop = select_active(&q, vec![row(1.0)], false).unwrap();
        assert!(drop.rows.is_empty());
        assert_eq!(drop.pruned, vec![0]);
    }

    #[test]
    fn at_most_m_independent_rows_kept() {
        let q = QModel {
            qx: dvector![0.0],
            qu: dvector![-1.0, -1.0],
            qxx: dmatrix![1.0],
            quu: DMatrix::identity(2, 2),
            qux: DMatrix::zeros(2, 1),
        };
        let rows = vec![
            CandidateRow { id: 0, value: 0.0, c: dvector![1.0, 0.0], d: dvector![0.0] },
            CandidateRow { id: 1, value: 0.2, c: dvector![2.0, 0.0], d: dvector![0.0] },
            CandidateRow { id: 2, value: 0.1, c: dvector![0.0, 1.0], d: dvector![0.0] },
            CandidateRow { id: 3, value: 0.0, c: dvector![1.0, 1.0], d: dvector![0.0] },
        ];
        let sel = select_active(&q, rows, false).unwrap();
        assert_eq!(sel.ids(), vec![1, 2]);
        assert_eq!(sel.dependent, vec![0, 3]);
    }

    #[test]
    fn restoration_offset_reduces_violation() {
        // h = 0.4 violated; the row must move δu by −0.4 through c = 1.
        let q = QModel {
            qx: dvector![0.0],
            qu: dvector![0.0],
            qxx: dmatrix![1.0],
            quu: dmatrix![1.0],
            qux: dmatrix![0.0],
        };
        let row = CandidateRow {
            id: 0,
            value: 0.4,
            c: dvector![1.0],
            d: dvector![0.0],
        };
        let sel = select_active(&q, vec![row], true).unwrap();
        assert!((sel.gains.d[0] + 0.4).abs() < 1e-12);
        assert!(sel.multipliers[0] > 0.0);
    }
}
