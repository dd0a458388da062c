#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use safe_cddp::constraints::ConstraintSet;
use safe_cddp::dynamics::LinearModel;

/// Planar double integrator `[p; v]`, zero-order hold.
pub fn double_integrator(dt: f64, noise_var: f64) -> LinearModel {
    let mut a = DMatrix::identity(4, 4);
    a[(0, 2)] = dt;
    a[(1, 3)] = dt;
    let mut b = DMatrix::zeros(4, 2);
    b[(0, 0)] = 0.5 * dt * dt;
    b[(1, 1)] = 0.5 * dt * dt;
    b[(2, 0)] = dt;
    b[(3, 1)] = dt;
    LinearModel::new(a, b, DMatrix::identity(4, 4) * noise_var).unwrap()
}

/// Backward Riccati recursion for `min Σ ½xᵀQx + ½uᵀRu + ½x_NᵀQ_f x_N`.
/// Returns `K_k` (with `u = K x`) and `P_k`, `k = 0..N` (`P` has `N + 1`).
pub fn riccati(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    qf: &DMatrix<f64>,
    horizon: usize,
) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
    let mut p = qf.clone();
    let mut ks = Vec::with_capacity(horizon);
    let mut ps = vec![p.clone()];
    for _ in 0..horizon {
        let s = r + b.transpose() * &p * b;
        let k = -s.lu().solve(&(b.transpose() * &p * a)).unwrap();
        p = q + a.transpose() * &p * a + a.transpose() * &p * b * &k;
        p = (&p + p.transpose()) * 0.5;
        ks.push(k);
        ps.push(p.clone());
    }
    ks.reverse();
    ps.reverse();
    (ks, ps)
}

/// No constraints and an unbounded input box.
pub fn free_set(n: usize, m: usize) -> ConstraintSet {
    ConstraintSet::new(
        Vec::new(),
        DVector::from_element(m, f64::NEG_INFINITY),
        DVector::from_element(m, f64::INFINITY),
        0.5,
        n,
        &[0, 1],
    )
    .unwrap()
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn normal_cdf_oracle(z: f64) -> f64 {
    let steps = 20_000;
    let h = z.abs() / steps as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(z.abs());
    for i in 1..steps {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    let half = s * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

/// Quantile by bisection on [`normal_cdf_oracle`].
pub fn quantile_oracle(beta: f64) -> f64 {
    let (mut lo, mut hi) = (-8.0, 8.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if normal_cdf_oracle(mid) < beta {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    0.5 * (lo + hi)
}
