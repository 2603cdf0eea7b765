//! Benchmark task presets and the run configuration file.
//!
//! A config file is TOML. Only `system` is required; every other key
//! overrides the per-system default. Unknown keys are rejected.
//!
//! ```toml
//! system = "ball_on_beam"
//! seed = 3
//!
//! [physics]
//! i_beam = 0.4
//!
//! [train]
//! epochs = 200
//! ```

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cbf::{ClassKLinear, ConstraintSpec, DistanceFns, HandcraftedCbf};
use crate::dynamics::{BallBeamParams, Control, Dynamics, SimConfig, State};
use crate::error::{Error, Result};
use crate::learning::TrainConfig;
use crate::mpc::{discretize_zoh, lqr_gain, LinearFeedback, LqrWeights, MpcController, MpcModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SystemId {
    #[serde(rename = "integrator2d")]
    Integrator2d,
    #[serde(rename = "ball_on_beam")]
    BallOnBeam,
}

impl SystemId {
    pub fn as_str(self) -> &'static str {
        match self {
            SystemId::Integrator2d => "integrator2d",
            SystemId::BallOnBeam => "ball_on_beam",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "integrator2d" => Ok(SystemId::Integrator2d),
            "ball_on_beam" => Ok(SystemId::BallOnBeam),
            other => Err(Error::Config(format!(
                "unknown system {other:?} (expected integrator2d or ball_on_beam)"
            ))),
        }
    }
}

impl std::fmt::Display for SystemId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfSettings {
    /// Integrator handcrafted velocity cap (`ĥ = cap − ẋ`).
    pub hand_cap: f64,
    /// Ball-on-beam `γ₀`.
    pub gamma0: f64,
    /// Ball-on-beam `β̄`.
    pub beta_bar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSettings {
    /// Integrator: `ẋ ≤ velocity_max`.
    pub velocity_max: f64,
    /// Ball-on-beam: `β ≤ beta_max`.
    pub beta_max: f64,
    /// Ball-on-beam: `β̇ ≥ betadot_min`.
    pub betadot_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSettings {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub mpc_horizon: usize,
    /// Bound tightening inside the fallback MPC.
    pub mpc_backoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    /// Initial position (`x` or `r`); other state components start at zero.
    pub x_init: f64,
    pub episode_length: usize,
    /// Class-K gains for the sweep command.
    pub gammas: Vec<f64>,
}

/// Fully resolved run configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemId,
    pub seed: u64,
    pub dt: f64,
    pub physics: BallBeamParams,
    pub cbf: CbfSettings,
    pub constraints: ConstraintSettings,
    pub control: ControlSettings,
    pub train: TrainConfig,
    pub eval: EvalSettings,
}

impl ExperimentConfig {
    pub fn defaults(system: SystemId) -> Self {
        let cbf = CbfSettings {
            hand_cap: 2.0,
            gamma0: 1.0,
            beta_bar: 0.5,
        };
        let constraints = ConstraintSettings {
            velocity_max: 3.0,
            beta_max: 0.75,
            betadot_min: -2.5,
        };
        match system {
            SystemId::Integrator2d => Self {
                system,
                seed: 0,
                dt: 0.02,
                physics: BallBeamParams::default(),
                cbf,
                constraints,
                control: ControlSettings {
                    q: vec![10.0, 10.0],
                    r: vec![1.0],
                    mpc_horizon: 20,
                    mpc_backoff: 1e-3,
                },
                train: TrainConfig::integrator_defaults(),
                eval: EvalSettings {
                    x_init: -15.0,
                    episode_length: 500,
                    gammas: vec![1.0, 5.0, 10.0],
                },
            },
            SystemId::BallOnBeam => Self {
                system,
                seed: 0,
                dt: 0.01,
                physics: BallBeamParams::default(),
                cbf,
                constraints,
                control: ControlSettings {
                    q: vec![10.0, 1.0, 1.0, 1.0],
                    r: vec![1.0],
                    mpc_horizon: 20,
                    mpc_backoff: 1e-3,
                },
                train: TrainConfig::ball_beam_defaults(),
                eval: EvalSettings {
                    x_init: 1.0,
                    episode_length: 800,
                    gammas: vec![1.0, 2.0, 5.0],
                },
            },
        }
    }

    /// Parse a config document, filling unspecified keys from the defaults
    /// of its `system`.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        let system = match table.get("system") {
            Some(toml::Value::String(s)) => SystemId::parse(s)?,
            Some(_) => return Err(Error::Config("`system` must be a string".into())),
            None => return Err(Error::Config("config is missing `system`".into())),
        };
        let defaults =
            toml::Table::try_from(Self::defaults(system)).map_err(|e| Error::Config(format!("default config: {e}")))?;
        let merged = merge_tables(defaults, table)?;
        let cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        SimConfig {
            dt: self.dt,
            episode_length: self.train.episode_length,
        }
        .validate()?;
        self.physics.validate()?;
        self.train.validate()?;
        ClassKLinear::new(self.train.gamma)?;
        if self.eval.episode_length == 0 {
            return Err(Error::Config("eval.episode_length must be >= 1".into()));
        }
        if self.control.mpc_horizon == 0 {
            return Err(Error::Config("control.mpc_horizon must be >= 1".into()));
        }
        if self.control.mpc_backoff < 0.0 {
            return Err(Error::Config("control.mpc_backoff must be >= 0".into()));
        }
        if self.system == SystemId::BallOnBeam && self.cbf.beta_bar >= self.constraints.beta_max {
            return Err(Error::Config("cbf.beta_bar must be below constraints.beta_max".into()));
        }
        if self.cbf.gamma0 <= 0.0 {
            return Err(Error::Config("cbf.gamma0 must be > 0".into()));
        }
        Ok(())
    }
}

fn merge_tables(mut base: toml::Table, over: toml::Table) -> Result<toml::Table> {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => {
                let merged = merge_tables(std::mem::take(b), o)?;
                *b = merged;
            }
            (Some(toml::Value::Float(_)), toml::Value::Integer(i)) => {
                base.insert(k, toml::Value::Float(i as f64));
            }
            (Some(_), v) => {
                base.insert(k, v);
            }
            (None, _) => return Err(Error::Config(format!("unknown config key `{k}`"))),
        }
    }
    Ok(base)
}

/// Everything needed to simulate, filter and train on one benchmark.
#[derive(Debug, Clone)]
pub struct Task {
    pub config: ExperimentConfig,
    pub dynamics: Dynamics,
    pub hand: HandcraftedCbf,
    pub constraints: ConstraintSpec,
    pub distances: DistanceFns,
    pub weights: LqrWeights,
    pub perf: LinearFeedback,
}

impl Task {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let (dynamics, hand, constraints) = match config.system {
            SystemId::Integrator2d => (
                Dynamics::Integrator,
                HandcraftedCbf::IntegratorVelocity {
                    cap: config.cbf.hand_cap,
                },
                ConstraintSpec::integrator_velocity(config.constraints.velocity_max),
            ),
            SystemId::BallOnBeam => (
                Dynamics::BallBeam(config.physics),
                HandcraftedCbf::BallBeamAngle {
                    gamma0: config.cbf.gamma0,
                    beta_bar: config.cbf.beta_bar,
                },
                ConstraintSpec::ball_beam(config.constraints.beta_max, config.constraints.betadot_min),
            ),
        };
        let weights = LqrWeights::diagonal(&config.control.q, &config.control.r);
        weights.validate(dynamics.state_dim(), dynamics.control_dim())?;
        let n = dynamics.state_dim();
        let lin = dynamics.linearize(&State::zeros(n), &Control::zeros(dynamics.control_dim()));
        let gain = lqr_gain(&lin, &weights, config.dt)?;
        Ok(Self {
            distances: DistanceFns::new(constraints.clone()),
            perf: LinearFeedback::regulator(gain),
            config,
            dynamics,
            hand,
            constraints,
            weights,
        })
    }

    pub fn from_system(system: SystemId) -> Result<Self> {
        Self::new(ExperimentConfig::defaults(system))
    }

    pub fn dt(&self) -> f64 {
        self.config.dt
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics.state_dim()
    }

    /// `[p, 0, …, 0]`.
    pub fn initial_state(&self, position: f64) -> State {
        let mut x = DVector::zeros(self.state_dim());
        x[0] = position;
        x
    }

    pub fn training_alpha(&self) -> ClassKLinear {
        ClassKLinear::new(self.config.train.gamma).expect("validated")
    }

    /// Barrier of the true constraint, where one exists in closed form.
    pub fn true_cbf(&self) -> Option<HandcraftedCbf> {
        match self.config.system {
            SystemId::Integrator2d => Some(HandcraftedCbf::IntegratorVelocity {
                cap: self.config.constraints.velocity_max,
            }),
            SystemId::BallOnBeam => None,
        }
    }

    /// The backup controller: linear MPC on the exact discretization for the
    /// integrator, shooting NMPC for the ball-on-beam.
    pub fn mpc_controller(&self) -> MpcController {
        let model = match &self.dynamics {
            Dynamics::Integrator => {
                let n = self.state_dim();
                let lin = self.dynamics.linearize(&State::zeros(n), &Control::zeros(1));
                let (ad, bd) = discretize_zoh(&lin, self.dt());
                MpcModel::Linear { ad, bd }
            }
            Dynamics::BallBeam(_) => MpcModel::Nonlinear {
                dynamics: self.dynamics.clone(),
                dt: self.dt(),
            },
        };
        MpcController::new(
            model,
            self.weights.clone(),
            self.config.control.mpc_horizon,
            self.constraints.clone(),
            self.config.control.mpc_backoff,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for sys in [SystemId::Integrator2d, SystemId::BallOnBeam] {
            let cfg = ExperimentConfig::defaults(sys);
            let text = cfg.to_toml_string().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text).unwrap(), cfg);
        }
    }

    #[test]
    fn partial_config_overrides_defaults() {
        let cfg = ExperimentConfig::from_toml_str(
            "system = \"ball_on_beam\"\nseed = 4\n[train]\nepochs = 200\n[physics]\ni_beam = 1\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.train.epochs, 200);
        assert_eq!(cfg.physics.i_beam, 1.0);
        assert_eq!(cfg.dt, 0.01);
        assert_eq!(cfg.train.lr, 1e-4);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = ExperimentConfig::from_toml_str("system = \"integrator2d\"\nfoo = 1\n").unwrap_err();
        assert!(err.to_string().contains("foo"));
        assert!(ExperimentConfig::from_toml_str("system = \"integrator2d\"\n[train]\nepoch = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("seed = 1\n").is_err());
        assert!(ExperimentConfig::from_toml_str("system = \"pendulum\"\n").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_toml_str("system = \"integrator2d\"\ndt = -1.0\n").is_err());
        assert!(ExperimentConfig::from_toml_str("system = \"ball_on_beam\"\n[cbf]\nbeta_bar = 0.8\n").is_err());
    }

    #[test]
    fn tasks_build() {
        let t = Task::from_system(SystemId::Integrator2d).unwrap();
        assert_eq!(t.perf.gain.shape(), (1, 2));
        assert!(t.true_cbf().is_some());
        let t = Task::from_system(SystemId::BallOnBeam).unwrap();
        assert_eq!(t.perf.gain.shape(), (1, 4));
        assert_eq!(t.initial_state(0.9), nalgebra::dvector![0.9, 0.0, 0.0, 0.0]);
    }
}
