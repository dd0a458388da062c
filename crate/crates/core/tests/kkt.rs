use std::time::Instant;

use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_cddp::ddp::{
    constrained_gains, constrained_gains_with_offset, select_active, unconstrained_gains,
    CandidateRow, QModel,
};

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn random_q(rng: &mut ChaCha8Rng, n: usize, m: usize) -> QModel {
    let l = random_matrix(rng, m, m);
    let quu = &l * l.transpose() + DMatrix::identity(m, m) * 0.2;
    let lx = random_matrix(rng, n, n);
    QModel {
        qx: random_matrix(rng, n, 1).column(0).into(),
        qu: random_matrix(rng, m, 1).column(0).into(),
        qxx: &lx * lx.transpose(),
        quu,
        qux: random_matrix(rng, m, n),
    }
}

/// Solve `[Quu Cᵀ; C 0] [δu; ν] = [−Qu − Qux δx; D δx + r]` for every unit
/// `δx` and for `δx = 0`.
fn kkt_oracle(q: &QModel, c: &DMatrix<f64>, d: &DMatrix<f64>, r: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let (m, n, p) = (q.qu.len(), q.qx.len(), c.nrows());
    let mut kkt = DMatrix::zeros(m + p, m + p);
    kkt.view_mut((0, 0), (m, m)).copy_from(&q.quu);
    kkt.view_mut((0, m), (m, p)).copy_from(&c.transpose());
    kkt.view_mut((m, 0), (p, m)).copy_from(c);
    let lu = kkt.lu();
    let mut rhs0 = DVector::zeros(m + p);
    rhs0.rows_mut(0, m).copy_from(&(-&q.qu));
    rhs0.rows_mut(m, p).copy_from(r);
    let ff = lu.solve(&rhs0).unwrap().rows(0, m).into_owned();
    let mut k = DMatrix::zeros(m, n);
    for i in 0..n {
        let mut rhs = DVector::zeros(m + p);
        rhs.rows_mut(0, m).copy_from(&(-q.qux.column(i)));
        rhs.rows_mut(m, p).copy_from(&d.column(i));
        let z = lu.solve(&rhs).unwrap();
        k.set_column(i, &z.rows(0, m));
    }
    (k, ff)
}

#[test]
fn gains_match_kkt_system_on_random_instances() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let p = rng.random_range(0..=m);
        let q = random_q(&mut rng, n, m);
        let c = random_matrix(&mut rng, p, m);
        let d = random_matrix(&mut rng, p, n);
        let r = random_matrix(&mut rng, p, 1).column(0).into_owned();
        let (g, _) = constrained_gains_with_offset(&q, &c, &d, &r).unwrap();
        let (k, ff) = kkt_oracle(&q, &c, &d, &r);
        let scale = 1.0 + k.amax().max(ff.amax());
        worst = worst.max((&g.k - &k).amax() / scale).max((&g.d - &ff).amax() / scale);

        // The policy lies on the constraint manifold for any δx.
        for _ in 0..100 {
            let dx: DVector<f64> = random_matrix(&mut rng, n, 1).column(0).into();
            let du = &g.k * &dx + &g.d;
            let res = (&c * du - &d * &dx - &r).amax();
            assert!(res <= 1e-9, "manifold residual {res:e}");
        }
    }
    assert!(worst <= 1e-10, "largest gap {worst:e}");
    assert!(t0.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn empty_rows_reduce_to_unconstrained_gains() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let q = random_q(&mut rng, n, m);
        let free = unconstrained_gains(&q).unwrap();
        let empty = constrained_gains(&q, &DMatrix::zeros(0, m), &DMatrix::zeros(0, n)).unwrap();
        assert!((&free.k - &empty.k).amax() <= 1e-12);
        assert!((&free.d - &empty.d).amax() <= 1e-12);
        // Direct −Quu⁻¹[Qux Qu] as an oracle.
        let lu = q.quu.clone().lu();
        let k = -lu.solve(&q.qux).unwrap();
        let d = -lu.solve(&q.qu).unwrap();
        assert!((&free.k - k).amax() <= 1e-12 * (1.0 + free.k.amax()));
        assert!((&free.d - d).amax() <= 1e-12 * (1.0 + free.d.amax()));
    }
}

#[test]
fn single_row_hand_example() {
    // Quu = 2, Qux = 1, Qu = 3, C̃ = 1, D̃ = 0.5 forces δu = 0.5 δx.
    let q = QModel {
        qx: dvector![0.0],
        qu: dvector![3.0],
        qxx: dmatrix![1.0],
        quu: dmatrix![2.0],
        qux: dmatrix![1.0],
    };
    let g = constrained_gains(&q, &dmatrix![1.0], &dmatrix![0.5]).unwrap();
    assert!((g.k[(0, 0)] - 0.5).abs() < 1e-15);
    assert!(g.d[0].abs() < 1e-15);
}

#[test]
fn kept_multipliers_are_nonnegative() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..1000 {
        let n = rng.random_range(1..=4);
        let m = rng.random_range(1..=3);
        let q = random_q(&mut rng, n, m);
        let rows = (0..rng.random_range(0..=4))
            .map(|id| CandidateRow {
                id,
                value: rng.random_range(-1e-7..0.1),
                c: random_matrix(&mut rng, m, 1).column(0).into(),
                d: random_matrix(&mut rng, n, 1).column(0).into(),
            })
            .collect();
        let sel = select_active(&q, rows, false).unwrap();
        assert!(sel.rows.len() <= m);
        assert!(sel.multipliers.iter().all(|l| *l >= -1e-10), "{:?}", sel.multipliers);
    }
}
