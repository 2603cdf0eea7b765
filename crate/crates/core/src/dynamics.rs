//! Control-affine plant models `ẋ = F(x) + G(x)u` for the two benchmark
//! systems, a fixed-step RK4 integrator with zero-order hold on the input,
//! and analytic linearization (continuous and discrete).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type State = DVector<f64>;
pub type Control = DVector<f64>;

/// Physical constants for the ball-on-beam plant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BallBeamParams {
    /// Ball mass, kg.
    pub m_ball: f64,
    /// Gravitational acceleration, m/s².
    pub g_grav: f64,
    /// Beam moment of inertia, kg·m².
    pub i_beam: f64,
}

impl Default for BallBeamParams {
    fn default() -> Self {
        Self {
            m_ball: 0.5,
            g_grav: 9.81,
            i_beam: 0.5,
        }
    }
}

impl BallBeamParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("m_ball", self.m_ball),
            ("g_grav", self.g_grav),
            ("i_beam", self.i_beam),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn inertia(&self, r: f64) -> f64 {
        self.i_beam + self.m_ball * r * r
    }
}

/// Discrete-time simulation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub dt: f64,
    pub episode_length: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.episode_length == 0 {
            return Err(Error::Config("episode_length must be >= 1".into()));
        }
        Ok(())
    }
}

/// `A = ∂(F + Gu)/∂x`, `B = G` about an operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizedDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub about: State,
    pub about_u: Control,
}

/// The plant. Both variants have a single control input.
#[derive(Debug, Clone, PartialEq)]
pub enum Dynamics {
    /// Double integrator `[x, ẋ]`, `ẍ = u`.
    Integrator,
    /// Ball on a torque-driven beam, state `[r, β, ṙ, β̇]`.
    BallBeam(BallBeamParams),
}

impl Dynamics {
    pub fn state_dim(&self) -> usize {
        match self {
            Dynamics::Integrator => 2,
            Dynamics::BallBeam(_) => 4,
        }
    }

    pub fn control_dim(&self) -> usize {
        1
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            Dynamics::Integrator => &["x", "xdot"],
            Dynamics::BallBeam(_) => &["r", "beta", "rdot", "betadot"],
        }
    }

    pub fn check_state(&self, x: &State) -> Result<()> {
        if x.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "state",
                expected: self.state_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    pub fn check_control(&self, u: &Control) -> Result<()> {
        if u.len() != self.control_dim() {
            return Err(Error::Dimension {
                context: "control",
                expected: self.control_dim(),
                actual: u.len(),
            });
        }
        Ok(())
    }

    /// Drift `F(x)`.
    pub fn drift(&self, x: &State) -> DVector<f64> {
        match self {
            Dynamics::Integrator => DVector::from_vec(vec![x[1], 0.0]),
            Dynamics::BallBeam(p) => {
                let (r, beta, rdot, bdot) = (x[0], x[1], x[2], x[3]);
                let m = p.m_ball;
                let g = p.g_grav;
                DVector::from_vec(vec![
                    rdot,
                    bdot,
                    5.0 / 7.0 * (r * bdot * bdot - g * beta.sin()),
                    -(2.0 * m * r * rdot * bdot + m * g * r * beta.cos()) / p.inertia(r),
                ])
            }
        }
    }

    /// Input matrix `G(x)`, shape `n × m`.
    pub fn influence(&self, x: &State) -> DMatrix<f64> {
        match self {
            Dynamics::Integrator => DMatrix::from_column_slice(2, 1, &[0.0, 1.0]),
            Dynamics::BallBeam(p) => DMatrix::from_column_slice(4, 1, &[0.0, 0.0, 0.0, 1.0 / p.inertia(x[0])]),
        }
    }

    fn derivative(&self, x: &State, u: &Control) -> DVector<f64> {
        let mut dx = self.drift(x);
        dx.gemv(1.0, &self.influence(x), u, 1.0);
        dx
    }

    /// `F(x) + G(x)u`.
    pub fn eval_derivative(&self, x: &State, u: &Control) -> Result<DVector<f64>> {
        self.check_state(x)?;
        self.check_control(u)?;
        Ok(self.derivative(x, u))
    }

    /// `∂(F(x) + G(x)u)/∂x`.
    pub fn state_jacobian(&self, x: &State, u: &Control) -> DMatrix<f64> {
        match self {
            Dynamics::Integrator => DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            Dynamics::BallBeam(p) => {
                let (r, beta, rdot, bdot) = (x[0], x[1], x[2], x[3]);
                let m = p.m_ball;
                let g = p.g_grav;
                let d = p.inertia(r);
                let num = u[0] - 2.0 * m * r * rdot * bdot - m * g * r * beta.cos();
                let k = 5.0 / 7.0;
                let mut a = DMatrix::zeros(4, 4);
                a[(0, 2)] = 1.0;
                a[(1, 3)] = 1.0;
                a[(2, 0)] = k * bdot * bdot;
                a[(2, 1)] = -k * g * beta.cos();
                a[(2, 3)] = 2.0 * k * r * bdot;
                a[(3, 0)] = ((-2.0 * m * rdot * bdot - m * g * beta.cos()) * d - num * 2.0 * m * r) / (d * d);
                a[(3, 1)] = m * g * r * beta.sin() / d;
                a[(3, 2)] = -2.0 * m * r * bdot / d;
                a[(3, 3)] = -2.0 * m * r * rdot / d;
                a
            }
        }
    }

    /// Continuous-time linearization about `(x0, u0)`.
    pub fn linearize(&self, x0: &State, u0: &Control) -> LinearizedDynamics {
        LinearizedDynamics {
            a: self.state_jacobian(x0, u0),
            b: self.influence(x0),
            about: x0.clone(),
            about_u: u0.clone(),
        }
    }

    /// One classical RK4 step with `u` held over the interval.
    pub fn step(&self, x: &State, u: &Control, dt: f64) -> Result<State> {
        self.check_state(x)?;
        self.check_control(u)?;
        if dt.is_nan() || dt <= 0.0 {
            return Err(Error::Config(format!("dt must be > 0, got {dt}")));
        }
        let h = 0.5 * dt;
        let k1 = self.derivative(x, u);
        let k2 = self.derivative(&(x + &k1 * h), u);
        let k3 = self.derivative(&(x + &k2 * h), u);
        let k4 = self.derivative(&(x + &k3 * dt), u);
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if next.iter().all(|v| v.is_finite()) {
            Ok(next)
        } else {
            Err(Error::IntegrationDiverged {
                state: x.iter().copied().collect(),
            })
        }
    }

    /// RK4 step together with the exact derivatives of the discrete map,
    /// `∂x⁺/∂x` and `∂x⁺/∂u`.
    pub fn step_with_jacobians(&self, x: &State, u: &Control, dt: f64) -> Result<(State, DMatrix<f64>, DMatrix<f64>)> {
        self.check_state(x)?;
        self.check_control(u)?;
        let n = self.state_dim();
        let eye = DMatrix::<f64>::identity(n, n);
        let h = 0.5 * dt;

        let k1 = self.derivative(x, u);
        let k1x = self.state_jacobian(x, u);
        let k1u = self.influence(x);

        let x2 = x + &k1 * h;
        let a2 = self.state_jacobian(&x2, u);
        let k2 = self.derivative(&x2, u);
        let k2x = &a2 * (&eye + &k1x * h);
        let k2u = &a2 * (&k1u * h) + self.influence(&x2);

        let x3 = x + &k2 * h;
        let a3 = self.state_jacobian(&x3, u);
        let k3 = self.derivative(&x3, u);
        let k3x = &a3 * (&eye + &k2x * h);
        let k3u = &a3 * (&k2u * h) + self.influence(&x3);

        let x4 = x + &k3 * dt;
        let a4 = self.state_jacobian(&x4, u);
        let k4 = self.derivative(&x4, u);
        let k4x = &a4 * (&eye + &k3x * dt);
        let k4u = &a4 * (&k3u * dt) + self.influence(&x4);

        let s = dt / 6.0;
        let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * s;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::IntegrationDiverged {
                state: x.iter().copied().collect(),
            });
        }
        let ad = eye + (k1x + k2x * 2.0 + k3x * 2.0 + k4x) * s;
        let bd = (k1u + k2u * 2.0 + k3u * 2.0 + k4u) * s;
        Ok((next, ad, bd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bb() -> Dynamics {
        Dynamics::BallBeam(BallBeamParams::default())
    }

    fn central_diff_jacobian(dyn_: &Dynamics, x: &State, u: &Control, h: f64) -> DMatrix<f64> {
        let n = x.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (dyn_.eval_derivative(&xp, u).unwrap() - dyn_.eval_derivative(&xm, u).unwrap()) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }

    #[test]
    fn integrator_derivative_examples() {
        let d = Dynamics::Integrator;
        assert_eq!(
            d.eval_derivative(&dvector![1.0, 2.0], &dvector![0.0]).unwrap(),
            dvector![2.0, 0.0]
        );
        assert_eq!(
            d.eval_derivative(&dvector![0.0, 0.0], &dvector![3.0]).unwrap(),
            dvector![0.0, 3.0]
        );
    }

    #[test]
    fn ball_beam_equilibrium() {
        let dx = bb().eval_derivative(&State::zeros(4), &dvector![0.0]).unwrap();
        assert_eq!(dx, State::zeros(4));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let err = Dynamics::Integrator
            .eval_derivative(&dvector![1.0, 2.0, 3.0], &dvector![0.0])
            .unwrap_err();
        assert!(matches!(
            err,
            Error::Dimension {
                expected: 2,
                actual: 3,
                ..
            }
        ));
        assert!(bb().eval_derivative(&State::zeros(4), &dvector![0.0, 1.0]).is_err());
    }

    #[test]
    fn rk4_integrator_examples() {
        let d = Dynamics::Integrator;
        let x = d.step(&dvector![0.0, 1.0], &dvector![0.0], 0.02).unwrap();
        assert_relative_eq!(x, dvector![0.02, 1.0], epsilon = 1e-15);
        let x = d.step(&dvector![0.0, 0.0], &dvector![1.0], 0.02).unwrap();
        // closed form: x + ½u·dt², ẋ + u·dt
        assert_relative_eq!(x, dvector![0.5 * 0.02 * 0.02, 0.02], epsilon = 1e-15);
    }

    #[test]
    fn rk4_ball_beam_gravity_torque_sign() {
        let p = BallBeamParams::default();
        let x0 = dvector![0.5, 0.0, 0.0, 0.0];
        // direct evaluation: β̈ = −m g r / (I + m r²)
        let bddot = -p.m_ball * p.g_grav * 0.5 / (p.i_beam + p.m_ball * 0.25);
        assert!(bddot < 0.0);
        let x = bb().step(&x0, &dvector![0.0], 0.01).unwrap();
        assert!(x[3] < 0.0);
        assert_relative_eq!(x[3], bddot * 0.01, max_relative = 1e-3);
    }

    #[test]
    fn diverging_step_is_reported() {
        let x = dvector![f64::MAX, f64::MAX];
        let err = Dynamics::Integrator.step(&x, &dvector![f64::MAX], 1.0).unwrap_err();
        assert!(matches!(err, Error::IntegrationDiverged { .. }));
    }

    #[test]
    fn non_positive_dt_rejected() {
        assert!(Dynamics::Integrator
            .step(&dvector![0.0, 0.0], &dvector![0.0], 0.0)
            .is_err());
    }

    #[test]
    fn integrator_linearization_is_exact() {
        let lin = Dynamics::Integrator.linearize(&dvector![3.0, -1.0], &dvector![4.0]);
        assert_eq!(lin.a, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
        assert_eq!(lin.b, DMatrix::from_column_slice(2, 1, &[0.0, 1.0]));
    }

    #[test]
    fn ball_beam_linearization_at_origin() {
        let p = BallBeamParams::default();
        let lin = bb().linearize(&State::zeros(4), &dvector![0.0]);
        assert_eq!(lin.b.column(0).clone_owned(), dvector![0.0, 0.0, 0.0, 1.0 / p.i_beam]);
        assert_relative_eq!(lin.a[(2, 1)], -5.0 / 7.0 * p.g_grav, epsilon = 1e-15);
        let fd = central_diff_jacobian(&bb(), &State::zeros(4), &dvector![0.0], 1e-6);
        assert_relative_eq!(lin.a, fd, epsilon = 1e-8);
    }

    #[test]
    fn linearize_matches_finite_differences_on_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = bb();
        for _ in 0..100 {
            let x = dvector![
                rng.random_range(-2.0..2.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-3.0..3.0)
            ];
            let u = dvector![rng.random_range(-5.0..5.0)];
            let a = d.linearize(&x, &u).a;
            let fd = central_diff_jacobian(&d, &x, &u, 1e-5);
            let rel = (&a - &fd).norm() / fd.norm().max(1e-12);
            assert!(rel <= 1e-6, "relative error {rel} at {x:?}");
        }
    }

    #[test]
    fn discrete_jacobians_match_finite_differences() {
        let d = bb();
        let x = dvector![0.7, 0.3, -0.4, 1.1];
        let u = dvector![0.8];
        let dt = 0.01;
        let (next, ad, bd) = d.step_with_jacobians(&x, &u, dt).unwrap();
        assert_eq!(next, d.step(&x, &u, dt).unwrap());
        let h = 1e-6;
        for j in 0..4 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let col = (d.step(&xp, &u, dt).unwrap() - d.step(&xm, &u, dt).unwrap()) / (2.0 * h);
            assert_relative_eq!(ad.column(j).clone_owned(), col, epsilon = 1e-8);
        }
        let col =
            (d.step(&x, &dvector![u[0] + h], dt).unwrap() - d.step(&x, &dvector![u[0] - h], dt).unwrap()) / (2.0 * h);
        assert_relative_eq!(bd.column(0).clone_owned(), col, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn rk4_matches_exact_integrator_transition(
            x0 in -20.0..20.0f64, v0 in -5.0..5.0f64, u in -50.0..50.0f64, dt in 1e-4..0.05f64
        ) {
            let x = Dynamics::Integrator.step(&dvector![x0, v0], &dvector![u], dt).unwrap();
            // exp([[0,1],[0,0]] dt) = [[1,dt],[0,1]]; input integral = [dt²/2, dt]
            let exact = dvector![x0 + v0 * dt + 0.5 * u * dt * dt, v0 + u * dt];
            prop_assert!((x - exact).amax() <= 1e-12);
        }

        #[test]
        fn derivative_is_control_affine(
            r in -2.0..2.0f64, b in -1.0..1.0f64, rd in -2.0..2.0f64, bd in -3.0..3.0f64,
            u1 in -10.0..10.0f64, u2 in -10.0..10.0f64
        ) {
            let d = bb();
            let x = dvector![r, b, rd, bd];
            let f = |u: f64| d.eval_derivative(&x, &dvector![u]).unwrap();
            let lhs = f(u1 + u2) - f(u2) - f(u1) + f(0.0);
            // F + G(u1+u2) - F - Gu2 - F - Gu1 + F; exact up to rounding of the sums
            prop_assert!(lhs.amax() <= 1e-12 * (1.0 + u1.abs() + u2.abs()) * 10.0);
        }
    }

    #[test]
    fn integrator_control_affinity_is_exact() {
        let d = Dynamics::Integrator;
        let x = dvector![1.5, -0.25];
        let f = |u: f64| d.eval_derivative(&x, &dvector![u]).unwrap();
        let lhs = f(3.0 + 0.5) - f(0.5) - f(3.0) + f(0.0);
        assert_eq!(lhs, State::zeros(2));
    }
}
