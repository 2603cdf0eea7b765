//! Barrier functions: the handcrafted starting point `ĥ`, the learned
//! `h̃ = ĥ + Δh(·|θ)`, the linear class-K family, Lie derivatives, state
//! constraints and the distance functions used by the training losses.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ddn::NetworkParams;
use crate::dynamics::{Dynamics, State};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HandcraftedCbf {
    /// `ĥ = cap − ẋ` on the double integrator.
    IntegratorVelocity { cap: f64 },
    /// `ĥ = −β̇ + γ₀(β̄ − β)` on the ball-on-beam.
    BallBeamAngle { gamma0: f64, beta_bar: f64 },
}

impl HandcraftedCbf {
    pub fn state_dim(&self) -> usize {
        match self {
            HandcraftedCbf::IntegratorVelocity { .. } => 2,
            HandcraftedCbf::BallBeamAngle { .. } => 4,
        }
    }

    pub fn value(&self, x: &State) -> f64 {
        match *self {
            HandcraftedCbf::IntegratorVelocity { cap } => cap - x[1],
            HandcraftedCbf::BallBeamAngle { gamma0, beta_bar } => -x[3] + gamma0 * (beta_bar - x[1]),
        }
    }

    pub fn gradient(&self, _x: &State) -> DVector<f64> {
        match *self {
            HandcraftedCbf::IntegratorVelocity { .. } => DVector::from_vec(vec![0.0, -1.0]),
            HandcraftedCbf::BallBeamAngle { gamma0, .. } => DVector::from_vec(vec![0.0, -gamma0, 0.0, -1.0]),
        }
    }
}

/// `h̃(x|θ) = ĥ(x) + Δh(x|θ)`. Without a network the correction is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnedCbf {
    pub hand: HandcraftedCbf,
    pub net: Option<NetworkParams>,
}

impl LearnedCbf {
    pub fn new(hand: HandcraftedCbf, net: NetworkParams) -> Result<Self> {
        if net.input_dim() != hand.state_dim() {
            return Err(Error::Dimension {
                context: "network input vs state",
                expected: hand.state_dim(),
                actual: net.input_dim(),
            });
        }
        Ok(Self { hand, net: Some(net) })
    }

    pub fn hand_only(hand: HandcraftedCbf) -> Self {
        Self { hand, net: None }
    }

    fn check(&self, x: &State) -> Result<()> {
        if x.len() != self.hand.state_dim() {
            return Err(Error::Dimension {
                context: "cbf state",
                expected: self.hand.state_dim(),
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// `Δh(x|θ)`.
    pub fn correction(&self, x: &State) -> Result<f64> {
        self.check(x)?;
        match &self.net {
            Some(net) => Ok(net.forward(x)?.0),
            None => Ok(0.0),
        }
    }

    pub fn value(&self, x: &State) -> Result<f64> {
        Ok(self.hand.value(x) + self.correction(x)?)
    }

    pub fn gradient(&self, x: &State) -> Result<DVector<f64>> {
        Ok(self.value_and_gradient(x)?.1)
    }

    /// Value and gradient from a single forward pass.
    pub fn value_and_gradient(&self, x: &State) -> Result<(f64, DVector<f64>)> {
        self.check(x)?;
        let mut value = self.hand.value(x);
        let mut grad = self.hand.gradient(x);
        if let Some(net) = &self.net {
            let (dv, dg) = net.value_and_gradient(x)?;
            value += dv;
            grad += dg;
        }
        Ok((value, grad))
    }
}

/// `α(h) = γ·h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassKLinear {
    gamma: f64,
}

impl ClassKLinear {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Config(format!("class-K gain must be > 0, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    #[inline]
    pub fn apply(&self, h: f64) -> f64 {
        self.gamma * h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LieDerivatives {
    pub lf_h: f64,
    /// Length `m`.
    pub lg_h: DVector<f64>,
}

impl LieDerivatives {
    pub fn from_gradient(grad: &DVector<f64>, dynamics: &Dynamics, x: &State) -> Self {
        Self {
            lf_h: grad.dot(&dynamics.drift(x)),
            lg_h: dynamics.influence(x).tr_mul(grad),
        }
    }
}

pub fn lie_derivatives(cbf: &LearnedCbf, dynamics: &Dynamics, x: &State) -> Result<LieDerivatives> {
    dynamics.check_state(x)?;
    let grad = cbf.gradient(x)?;
    Ok(LieDerivatives::from_gradient(&grad, dynamics, x))
}

/// Linear state constraints `C x ≤ b`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    /// `r × n`.
    pub rows: DMatrix<f64>,
    pub bounds: DVector<f64>,
}

impl ConstraintSpec {
    pub fn new(rows: DMatrix<f64>, bounds: DVector<f64>) -> Result<Self> {
        if rows.nrows() != bounds.len() {
            return Err(Error::Dimension {
                context: "constraint bounds",
                expected: rows.nrows(),
                actual: bounds.len(),
            });
        }
        Ok(Self { rows, bounds })
    }

    /// `ẋ ≤ limit`.
    pub fn integrator_velocity(limit: f64) -> Self {
        Self {
            rows: DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            bounds: DVector::from_vec(vec![limit]),
        }
    }

    /// `β ≤ beta_max` and `β̇ ≥ betadot_min` (stored as `−β̇ ≤ −betadot_min`).
    pub fn ball_beam(beta_max: f64, betadot_min: f64) -> Self {
        Self {
            rows: DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, -1.0]),
            bounds: DVector::from_vec(vec![beta_max, -betadot_min]),
        }
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn c(&self, x: &State) -> DVector<f64> {
        &self.rows * x
    }

    /// `b − c(x)`; every entry is nonnegative on safe states.
    pub fn margins(&self, x: &State) -> DVector<f64> {
        &self.bounds - self.c(x)
    }

    /// `max_i (c_i(x) − b_i)`.
    pub fn max_violation(&self, x: &State) -> f64 {
        self.margins(x).iter().map(|m| -m).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_safe(&self, x: &State) -> bool {
        self.c(x).iter().zip(self.bounds.iter()).all(|(c, b)| c <= b)
    }

    /// True when some `c_i(x) − b_i > −eps_c`.
    pub fn near_boundary(&self, x: &State, eps_c: f64) -> bool {
        self.max_violation(x) > -eps_c
    }
}

/// `d₊(x) = min_i (b_i − c_i(x))`, `d₋(x) = max_i (b_i − c_i(x))`. With one
/// constraint both reduce to the same signed margin.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceFns {
    pub constraints: ConstraintSpec,
}

impl DistanceFns {
    pub fn new(constraints: ConstraintSpec) -> Self {
        Self { constraints }
    }

    pub fn d_plus(&self, x: &State) -> f64 {
        self.constraints.margins(x).min()
    }

    pub fn d_minus(&self, x: &State) -> f64 {
        self.constraints.margins(x).max()
    }
}
