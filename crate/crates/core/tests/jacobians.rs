use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use safe_cddp::dynamics::{make_model, Dynamics, ModelKind, ModelOverrides};

const H: f64 = 1e-5;
const REL: f64 = 1e-4;

fn central_differences(model: &dyn Dynamics, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let column = |dir: &dyn Fn(f64) -> DVector<f64>| (dir(H) - dir(-H)) / (2.0 * H);
    let fx = DMatrix::from_columns(
        &(0..x.len())
            .map(|i| {
                column(&|h| {
                    let mut xp = x.clone();
                    xp[i] += h;
                    model.step(&xp, u)
                })
            })
            .collect::<Vec<_>>(),
    );
    let fu = DMatrix::from_columns(
        &(0..u.len())
            .map(|i| {
                column(&|h| {
                    let mut up = u.clone();
                    up[i] += h;
                    model.step(x, &up)
                })
            })
            .collect::<Vec<_>>(),
    );
    (fx, fu)
}

fn check(kind: ModelKind, u_range: (f64, f64), seed: u64) {
    let model = make_model(kind, &ModelOverrides::new()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for sample in 0..50 {
        let x = DVector::from_fn(model.state_dim(), |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(model.control_dim(), |_, _| rng.random_range(u_range.0..u_range.1));
        let (fx, fu) = model.jacobians(&x, &u);
        let (nx, nu) = central_differences(&model, &x, &u);
        for (got, want) in fx.iter().zip(nx.iter()).chain(fu.iter().zip(nu.iter())) {
            assert!(
                (got - want).abs() <= REL * want.abs().max(1.0),
                "{kind} sample {sample}: analytic {got} vs differenced {want}"
            );
        }
    }
}

#[test]
fn point_robot() {
    check(ModelKind::Point2d, (-10.0, 10.0), 1);
}

#[test]
fn car_like_robot() {
    check(ModelKind::Car2d, (-3.0, 3.0), 2);
}

#[test]
fn quadrotor() {
    check(ModelKind::Quadrotor3d, (0.0, 8.0), 3);
}

#[test]
fn differential_drive() {
    check(ModelKind::Diffdrive, (-2.0, 2.0), 4);
}
