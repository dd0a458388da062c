//! Discrete-time robot models `x⁺ = f(x, u) + ω` with analytic Jacobians.
//!
//! Every model carries its additive process-noise covariance `Σ^ω`; `step`
//! never injects noise (the simulation harness does).

mod car;
mod diffdrive;
mod linear;
mod point;
mod quadrotor;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use car::Car2d;
pub use diffdrive::DiffDrive;
pub use linear::LinearModel;
pub use point::Point2d;
pub use quadrotor::Quadrotor3d;

/// Discrete transition with first-order derivatives.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn dt(&self) -> f64;

    /// Deterministic part `f(x, u)`.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// `(f_x, f_u)` at `(x, u)`.
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>);

    /// Process-noise covariance `Σ^ω`.
    fn noise_covariance(&self) -> &DMatrix<f64>;

    /// State indices holding the Cartesian position.
    fn position_indices(&self) -> &[usize];
}

/// Shape-checked `step`.
pub fn step(model: &dyn Dynamics, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
    check_dims(model, x, u)?;
    Ok(model.step(x, u))
}

/// Shape-checked `jacobians`.
pub fn jacobians(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_dims(model, x, u)?;
    Ok(model.jacobians(x, u))
}

fn check_dims(model: &dyn Dynamics, x: &DVector<f64>, u: &DVector<f64>) -> Result<()> {
    if x.len() != model.state_dim() || u.len() != model.control_dim() {
        return Err(Error::contract(format!(
            "model expects x in R^{} and u in R^{}, got {} and {}",
            model.state_dim(),
            model.control_dim(),
            x.len(),
            u.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Point2d,
    Car2d,
    Quadrotor3d,
    Diffdrive,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Point2d => "point2d",
            ModelKind::Car2d => "car2d",
            ModelKind::Quadrotor3d => "quadrotor3d",
            ModelKind::Diffdrive => "diffdrive",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point2d" => Ok(ModelKind::Point2d),
            "car2d" => Ok(ModelKind::Car2d),
            "quadrotor3d" => Ok(ModelKind::Quadrotor3d),
            "diffdrive" => Ok(ModelKind::Diffdrive),
            other => Err(Error::config(
                "model.kind",
                format!("unknown model `{other}` (expected point2d, car2d, quadrotor3d or diffdrive)"),
            )),
        }
    }
}

/// One of the built-in robots.
#[derive(Debug, Clone)]
pub enum DynamicsModel {
    Point2d(Point2d),
    Car2d(Car2d),
    Quadrotor3d(Quadrotor3d),
    DiffDrive(DiffDrive),
}

impl DynamicsModel {
    pub fn kind(&self) -> ModelKind {
        match self {
            DynamicsModel::Point2d(_) => ModelKind::Point2d,
            DynamicsModel::Car2d(_) => ModelKind::Car2d,
            DynamicsModel::Quadrotor3d(_) => ModelKind::Quadrotor3d,
            DynamicsModel::DiffDrive(_) => ModelKind::Diffdrive,
        }
    }

    fn inner(&self) -> &dyn Dynamics {
        match self {
            DynamicsModel::Point2d(m) => m,
            DynamicsModel::Car2d(m) => m,
            DynamicsModel::Quadrotor3d(m) => m,
            DynamicsModel::DiffDrive(m) => m,
        }
    }
}

impl Dynamics for DynamicsModel {
    fn state_dim(&self) -> usize {
        self.inner().state_dim()
    }
    fn control_dim(&self) -> usize {
        self.inner().control_dim()
    }
    fn dt(&self) -> f64 {
        self.inner().dt()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.inner().step(x, u)
    }
    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        self.inner().jacobians(x, u)
    }
    fn noise_covariance(&self) -> &DMatrix<f64> {
        self.inner().noise_covariance()
    }
    fn position_indices(&self) -> &[usize] {
        self.inner().position_indices()
    }
}

/// Parameter overrides keyed by name, e.g. `{"dt": 0.05, "mass": 1.2}`.
pub type ModelOverrides = BTreeMap<String, f64>;

/// Build a model with its default parameters, then apply `overrides`.
///
/// Noise parameters are standard deviations per state group; the covariance
/// is diagonal with their squares.
pub fn make_model(kind: ModelKind, overrides: &ModelOverrides) -> Result<DynamicsModel> {
    let mut params = Params::new(kind, overrides)?;
    let model = match kind {
        ModelKind::Point2d => DynamicsModel::Point2d(Point2d::from_params(&mut params)?),
        ModelKind::Car2d => DynamicsModel::Car2d(Car2d::from_params(&mut params)?),
        ModelKind::Quadrotor3d => {
            DynamicsModel::Quadrotor3d(Quadrotor3d::from_params(&mut params)?)
        }
        ModelKind::Diffdrive => DynamicsModel::DiffDrive(DiffDrive::from_params(&mut params)?),
    };
    params.finish()?;
    Ok(model)
}

/// Override lookup that rejects unknown or unused keys.
pub(crate) struct Params<'a> {
    kind: ModelKind,
    overrides: &'a ModelOverrides,
    used: Vec<&'static str>,
}

impl<'a> Params<'a> {
    fn new(kind: ModelKind, overrides: &'a ModelOverrides) -> Result<Self> {
        for (k, v) in overrides {
            if !v.is_finite() {
                return Err(Error::config(format!("model.params.{k}"), "must be finite"));
            }
        }
        Ok(Self {
            kind,
            overrides,
            used: Vec::new(),
        })
    }

    pub(crate) fn get(&mut self, key: &'static str, default: f64) -> f64 {
        self.used.push(key);
        self.overrides.get(key).copied().unwrap_or(default)
    }

    pub(crate) fn positive(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = self.get(key, default);
        if v <= 0.0 {
            return Err(Error::config(format!("model.params.{key}"), "must be > 0"));
        }
        Ok(v)
    }

    pub(crate) fn non_negative(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v = self.get(key, default);
        if v < 0.0 {
            return Err(Error::config(format!("model.params.{key}"), "must be >= 0"));
        }
        Ok(v)
    }

    fn finish(self) -> Result<()> {
        for k in self.overrides.keys() {
            if !self.used.contains(&k.as_str()) {
                return Err(Error::config(
                    format!("model.params.{k}"),
                    format!("not a parameter of {}", self.kind),
                ));
            }
        }
        Ok(())
    }
}

/// Diagonal covariance from per-coordinate standard deviations.
pub(crate) fn diag_covariance(std_devs: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_iterator(
        std_devs.len(),
        std_devs.iter().map(|s| s * s),
    ))
}

/// Central finite-difference Jacobians, used for second-order terms and as
/// a test oracle.
pub fn finite_difference_jacobians(
    model: &dyn Dynamics,
    x: &DVector<f64>,
    u: &DVector<f64>,
    h: f64,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = model.state_dim();
    let m = model.control_dim();
    let mut fx = DMatrix::zeros(n, n);
    let mut fu = DMatrix::zeros(n, m);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        let col = (model.step(&xp, u) - model.step(&xm, u)) / (2.0 * h);
        fx.set_column(i, &col);
    }
    for i in 0..m {
        let mut up = u.clone();
        let mut um = u.clone();
        up[i] += h;
        um[i] -= h;
        let col = (model.step(x, &up) - model.step(x, &um)) / (2.0 * h);
        fu.set_column(i, &col);
    }
    (fx, fu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_point(model: &dyn Dynamics, rng: &mut ChaCha8Rng) -> (DVector<f64>, DVector<f64>) {
        let x = DVector::from_fn(model.state_dim(), |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(model.control_dim(), |_, _| rng.random_range(-2.0..2.0));
        (x, u)
    }

    fn relative_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let mut worst = 0.0f64;
        for (x, y) in a.iter().zip(b.iter()) {
            let scale = x.abs().max(y.abs()).max(1.0);
            worst = worst.max((x - y).abs() / scale);
        }
        worst
    }

    #[test]
    fn analytic_jacobians_match_finite_differences() {
        for kind in [
            ModelKind::Point2d,
            ModelKind::Car2d,
            ModelKind::Quadrotor3d,
            ModelKind::Diffdrive,
        ] {
            let model = make_model(kind, &ModelOverrides::new()).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..50 {
                let (x, u) = random_point(&model, &mut rng);
                let (fx, fu) = model.jacobians(&x, &u);
                let (nfx, nfu) = finite_difference_jacobians(&model, &x, &u, 1e-5);
                assert!(relative_gap(&fx, &nfx) < 1e-4, "{kind} f_x");
                assert!(relative_gap(&fu, &nfu) < 1e-4, "{kind} f_u");
            }
        }
    }

    #[test]
    fn step_is_bitwise_deterministic() {
        let model = make_model(ModelKind::Quadrotor3d, &ModelOverrides::new()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (x, u) = random_point(&model, &mut rng);
        let a = model.step(&x, &u);
        let b = model.step(&x, &u);
        assert!(a.iter().zip(b.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }

    #[test]
    fn default_dimensions_and_noise() {
        let p = make_model(ModelKind::Point2d, &ModelOverrides::new()).unwrap();
        assert_eq!((p.state_dim(), p.control_dim()), (4, 2));
        let sw = p.noise_covariance();
        let expect = [0.005f64.powi(2), 0.005f64.powi(2), 0.01f64.powi(2), 0.01f64.powi(2)];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(sw[(i, i)], *e);
        }
        let d = make_model(ModelKind::Diffdrive, &ModelOverrides::new()).unwrap();
        assert_eq!((d.state_dim(), d.control_dim(), d.dt()), (3, 2, 0.1));
        let q = make_model(ModelKind::Quadrotor3d, &ModelOverrides::new()).unwrap();
        assert_eq!((q.state_dim(), q.control_dim()), (12, 4));
        let c = make_model(ModelKind::Car2d, &ModelOverrides::new()).unwrap();
        assert_eq!((c.state_dim(), c.control_dim()), (4, 2));
        let csw = c.noise_covariance();
        assert_eq!(csw[(0, 0)], 0.001f64.powi(2));
        assert_eq!(csw[(2, 2)], 0.02f64.powi(2));
        assert_eq!(csw[(3, 3)], 0.02f64.powi(2));
    }

    #[test]
    fn overrides_apply_and_unknown_keys_fail() {
        let mut o = ModelOverrides::new();
        o.insert("dt".into(), 0.05);
        let car = make_model(ModelKind::Car2d, &o).unwrap();
        assert_eq!(car.dt(), 0.05);
        let default = make_model(ModelKind::Car2d, &ModelOverrides::new()).unwrap();
        assert_eq!(car.noise_covariance(), default.noise_covariance());

        o.insert("wingspan".into(), 3.0);
        assert!(matches!(
            make_model(ModelKind::Car2d, &o),
            Err(Error::Config { .. })
        ));
        let mut bad = ModelOverrides::new();
        bad.insert("dt".into(), -1.0);
        assert!(make_model(ModelKind::Point2d, &bad).is_err());
    }

    #[test]
    fn unknown_model_name_is_config_error() {
        assert!(matches!("boat".parse::<ModelKind>(), Err(Error::Config { .. })));
        assert_eq!("quadrotor3d".parse::<ModelKind>().unwrap(), ModelKind::Quadrotor3d);
    }

    #[test]
    fn checked_step_rejects_wrong_shapes() {
        let p = make_model(ModelKind::Point2d, &ModelOverrides::new()).unwrap();
        let r = step(&p, &DVector::zeros(3), &DVector::zeros(2));
        assert!(matches!(r, Err(Error::Contract(_))));
        assert!(jacobians(&p, &DVector::zeros(4), &DVector::zeros(1)).is_err());
    }
}
