use nalgebra::{DMatrix, DVector};

use super::{diag_covariance, Dynamics, Params};
use crate::error::Result;

/// Rigid-body quadrotor in plus configuration, integrated by explicit Euler.
///
/// State (12): position `p`, ZYX Euler angles `(φ, θ, ψ)`, world-frame
/// velocity `v`, body rates `(p, q, r)`. Control (4): motor thrusts, motor
/// 0 on the +x arm, 1 on +y, 2 on −x, 3 on −y.
#[derive(Debug, Clone)]
pub struct Quadrotor3d {
    dt: f64,
    mass: f64,
    gravity: f64,
    inertia: [f64; 3],
    arm: f64,
    /// Yaw torque per unit thrust.
    drag: f64,
    sigma_w: DMatrix<f64>,
}

impl Quadrotor3d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dt: f64,
        mass: f64,
        gravity: f64,
        inertia: [f64; 3],
        arm: f64,
        drag: f64,
        sigma_pose: f64,
        sigma_vel: f64,
    ) -> Self {
        let mut sd = [sigma_pose; 12];
        sd[6..].fill(sigma_vel);
        Self {
            dt,
            mass,
            gravity,
            inertia,
            arm,
            drag,
            sigma_w: diag_covariance(&sd),
        }
    }

    pub(super) fn from_params(p: &mut Params<'_>) -> Result<Self> {
        Ok(Self::new(
            p.positive("dt", 0.02)?,
            p.positive("mass", 1.0)?,
            p.non_negative("gravity", 9.81)?,
            [
                p.positive("ixx", 0.01)?,
                p.positive("iyy", 0.01)?,
                p.positive("izz", 0.02)?,
            ],
            p.positive("arm_length", 0.2)?,
            p.non_negative("drag", 0.01)?,
            p.non_negative("sigma_pose", 0.001)?,
            p.non_negative("sigma_vel", 0.1)?,
        ))
    }

    /// Per-motor thrust that balances gravity.
    pub fn hover_thrust(&self) -> f64 {
        self.mass * self.gravity / 4.0
    }

    fn torques(&self, u: &DVector<f64>) -> [f64; 3] {
        [
            self.arm * (u[1] - u[3]),
            self.arm * (u[2] - u[0]),
            self.drag * (u[0] - u[1] + u[2] - u[3]),
        ]
    }

    fn inertia_couplings(&self) -> [f64; 3] {
        let [ix, iy, iz] = self.inertia;
        [(iy - iz) / ix, (iz - ix) / iy, (ix - iy) / iz]
    }

    /// Continuous-time derivative `ẋ`.
    fn rate(&self, x: &DVector<f64>, u: &DVector<f64>) -> [f64; 12] {
        let (sphi, cphi) = x[3].sin_cos();
        let (sth, cth) = x[4].sin_cos();
        let (spsi, cpsi) = x[5].sin_cos();
        let thrust: f64 = u.iter().sum();
        let w = [x[9], x[10], x[11]];
        let tth = sth / cth;

        let r = [
            cpsi * sth * cphi + spsi * sphi,
            spsi * sth * cphi - cpsi * sphi,
            cth * cphi,
        ];
        let tau = self.torques(u);
        let k = self.inertia_couplings();
        let [ix, iy, iz] = self.inertia;
        let a = thrust / self.mass;
        [
            x[6],
            x[7],
            x[8],
            w[0] + sphi * tth * w[1] + cphi * tth * w[2],
            cphi * w[1] - sphi * w[2],
            (sphi * w[1] + cphi * w[2]) / cth,
            a * r[0],
            a * r[1],
            a * r[2] - self.gravity,
            k[0] * w[1] * w[2] + tau[0] / ix,
            k[1] * w[0] * w[2] + tau[1] / iy,
            k[2] * w[0] * w[1] + tau[2] / iz,
        ]
    }
}

impl Dynamics for Quadrotor3d {
    fn state_dim(&self) -> usize {
        12
    }
    fn control_dim(&self) -> usize {
        4
    }
    fn dt(&self) -> f64 {
        self.dt
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let r = self.rate(x, u);
        DVector::from_fn(12, |i, _| x[i] + self.dt * r[i])
    }

    fn jacobians(&self, x: &DVector<f64>, u: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dt = self.dt;
        let (sphi, cphi) = x[3].sin_cos();
        let (sth, cth) = x[4].sin_cos();
        let (spsi, cpsi) = x[5].sin_cos();
        let thrust: f64 = u.iter().sum();
        let a = thrust / self.mass;
        let (wx, wy, wz) = (x[9], x[10], x[11]);
        let tth = sth / cth;
        let sec2 = 1.0 / (cth * cth);

        let mut ac = DMatrix::<f64>::zeros(12, 12);
        for i in 0..3 {
            ac[(i, 6 + i)] = 1.0;
        }

        // Euler-angle kinematics.
        ac[(3, 3)] = cphi * tth * wy - sphi * tth * wz;
        ac[(3, 4)] = (sphi * wy + cphi * wz) * sec2;
        ac[(4, 3)] = -sphi * wy - cphi * wz;
        ac[(5, 3)] = (cphi * wy - sphi * wz) / cth;
        ac[(5, 4)] = (sphi * wy + cphi * wz) * sth * sec2;
        let wmat = [
            [1.0, sphi * tth, cphi * tth],
            [0.0, cphi, -sphi],
            [0.0, sphi / cth, cphi / cth],
        ];
        for (i, row) in wmat.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                ac[(3 + i, 9 + j)] = *v;
            }
        }

        // Thrust direction R·e3 and its angle derivatives.
        let dr = [
            [
                -cpsi * sth * sphi + spsi * cphi,
                cpsi * cth * cphi,
                -spsi * sth * cphi + cpsi * sphi,
            ],
            [
                -spsi * sth * sphi - cpsi * cphi,
                spsi * cth * cphi,
                cpsi * sth * cphi + spsi * sphi,
            ],
            [-cth * sphi, -sth * cphi, 0.0],
        ];
        for i in 0..3 {
            for j in 0..3 {
                ac[(6 + i, 3 + j)] = a * dr[i][j];
            }
        }

        let k = self.inertia_couplings();
        ac[(9, 10)] = k[0] * wz;
        ac[(9, 11)] = k[0] * wy;
        ac[(10, 9)] = k[1] * wz;
        ac[(10, 11)] = k[1] * wx;
        ac[(11, 9)] = k[2] * wy;
        ac[(11, 10)] = k[2] * wx;

        let fx = DMatrix::identity(12, 12) + ac * dt;

        let r = [
            cpsi * sth * cphi + spsi * sphi,
            spsi * sth * cphi - cpsi * sphi,
            cth * cphi,
        ];
        let [ix, iy, iz] = self.inertia;
        let l = self.arm;
        let c = self.drag;
        let mut bc = DMatrix::<f64>::zeros(12, 4);
        for j in 0..4 {
            for i in 0..3 {
                bc[(6 + i, j)] = r[i] / self.mass;
            }
        }
        bc[(9, 1)] = l / ix;
        bc[(9, 3)] = -l / ix;
        bc[(10, 2)] = l / iy;
        bc[(10, 0)] = -l / iy;
        for (j, s) in [1.0, -1.0, 1.0, -1.0].iter().enumerate() {
            bc[(11, j)] = s * c / iz;
        }
        (fx, bc * dt)
    }

    fn noise_covariance(&self) -> &DMatrix<f64> {
        &self.sigma_w
    }

    fn position_indices(&self) -> &[usize] {
        &[0, 1, 2]
    }
}
