//! Dataset, loss terms and the training loop for the learned CBF.
//!
//! Safe samples are real visited states paired with the applied control.
//! Unsafe samples come only from model-based rollouts. When a rollout of the
//! filtered policy predicts a violation, the real system is driven by MPC
//! and a rollout is repeated every step until one predicts safety again.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{ClassKLinear, DistanceFns, HandcraftedCbf, LearnedCbf, LieDerivatives};
use crate::ddn::{init_network, AdamConfig, AdamState, NetworkGrads, NetworkParams};
use crate::dynamics::{Control, Dynamics, State};
use crate::error::{Error, Result};
use crate::mpc::MpcController;
use crate::qpfilter::{filtered_policy, FilteredPolicy, Policy};
use crate::sim::{ControllerTag, Trajectory};
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    /// Visited by the real system.
    Real,
    CbfQpRollout,
    PerfRollout,
}

impl SampleSource {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleSource::Real => "real",
            SampleSource::CbfQpRollout => "cbf_qp_rollout",
            SampleSource::PerfRollout => "perf_rollout",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "real" => Some(SampleSource::Real),
            "cbf_qp_rollout" => Some(SampleSource::CbfQpRollout),
            "perf_rollout" => Some(SampleSource::PerfRollout),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeSample {
    pub x: State,
    pub u: Control,
    pub source: SampleSource,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnsafeSample {
    pub x: State,
    pub source: SampleSource,
}

/// Safe and unsafe sample stores, each bounded with FIFO eviction.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    safe: VecDeque<SafeSample>,
    unsafe_: VecDeque<UnsafeSample>,
    capacity: usize,
}

impl Dataset {
    pub fn new(capacity: usize) -> Self {
        Self {
            safe: VecDeque::new(),
            unsafe_: VecDeque::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push_safe(&mut self, s: SafeSample) {
        if self.safe.len() == self.capacity {
            self.safe.pop_front();
        }
        self.safe.push_back(s);
    }

    pub fn push_unsafe(&mut self, s: UnsafeSample) {
        if self.unsafe_.len() == self.capacity {
            self.unsafe_.pop_front();
        }
        self.unsafe_.push_back(s);
    }

    pub fn safe(&self) -> &VecDeque<SafeSample> {
        &self.safe
    }

    pub fn unsafe_samples(&self) -> &VecDeque<UnsafeSample> {
        &self.unsafe_
    }

    pub fn n_safe(&self) -> usize {
        self.safe.len()
    }

    pub fn n_unsafe(&self) -> usize {
        self.unsafe_.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
}

impl LossWeights {
    /// Errors on negative weights. Returns a warning when unsafe data is
    /// weighted but not above one.
    pub fn validate(&self) -> Result<Option<String>> {
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::Config("loss weights must be >= 0".into()));
        }
        if self.lambda1 > 0.0 && self.lambda1 <= 1.0 {
            return Ok(Some(format!(
                "lambda1 = {} is usually chosen above 1 when unsafe data is used",
                self.lambda1
            )));
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub episode_length: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Class-K gain used in the CBF-QP and the gradient loss.
    pub gamma: f64,
    pub rollout_interval: usize,
    pub rollout_horizon: usize,
    pub eps_c: f64,
    /// Initial position is drawn uniformly from this range.
    pub init_range: [f64; 2],
    pub lambda1: f64,
    pub lambda2: f64,
    /// Performance-controller rollouts near the constraint boundary.
    pub perf_rollouts: bool,
    pub capacity: usize,
    pub hidden: Vec<usize>,
}

impl TrainConfig {
    pub fn integrator_defaults() -> Self {
        Self {
            epochs: 100,
            episode_length: 500,
            batch_size: 64,
            lr: 1e-3,
            gamma: 5.0,
            rollout_interval: 10,
            rollout_horizon: 50,
            eps_c: 0.1,
            init_range: [-15.0, -5.0],
            lambda1: 0.0,
            lambda2: 1.0,
            perf_rollouts: true,
            capacity: 100_000,
            hidden: vec![128, 128],
        }
    }

    pub fn ball_beam_defaults() -> Self {
        Self {
            epochs: 1000,
            episode_length: 800,
            lr: 1e-4,
            gamma: 2.0,
            init_range: [0.6, 1.2],
            lambda1: 2.0,
            lambda2: 0.0,
            perf_rollouts: false,
            ..Self::integrator_defaults()
        }
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("episode_length", self.episode_length),
            ("batch_size", self.batch_size),
            ("rollout_interval", self.rollout_interval),
            ("rollout_horizon", self.rollout_horizon),
            ("capacity", self.capacity),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("train.{name} must be >= 1")));
            }
        }
        if self.rollout_interval > self.episode_length {
            return Err(Error::Config(
                "train.rollout_interval must not exceed episode_length".into(),
            ));
        }
        if !(self.lr > 0.0 && self.gamma > 0.0 && self.eps_c > 0.0) {
            return Err(Error::Config(
                "train.lr, train.gamma and train.eps_c must be > 0".into(),
            ));
        }
        if self.init_range.iter().any(|v| v.is_nan()) || self.init_range[0] > self.init_range[1] {
            return Err(Error::Config("train.init_range must be ordered".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("train.hidden widths must be >= 1".into()));
        }
        self.weights().validate()?;
        Ok(())
    }
}

/// Per-term losses. `total = safe + λ₁·unsafe + gradient + λ₂·regularizer`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub safe: f64,
    #[serde(rename = "unsafe")]
    pub unsafe_: f64,
    pub gradient: f64,
    pub regularizer: f64,
    pub total: f64,
}

impl LossTerms {
    fn combine(mut self, w: LossWeights) -> Self {
        self.total = self.safe + w.lambda1 * self.unsafe_ + self.gradient + w.lambda2 * self.regularizer;
        self
    }
}

/// Mean hinge `max(0, d₊(x) − h̃(x))` over safe states.
pub fn loss_safe(cbf: &LearnedCbf, batch: &[SafeSample], dist: &DistanceFns) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Config("loss_safe needs a nonempty batch".into()));
    }
    let mut sum = 0.0;
    for s in batch {
        sum += (dist.d_plus(&s.x) - cbf.value(&s.x)?).max(0.0);
    }
    Ok(sum / batch.len() as f64)
}

/// Mean hinge `max(0, h̃(x) − d₋(x))` over unsafe states; zero when empty.
pub fn loss_unsafe(cbf: &LearnedCbf, batch: &[UnsafeSample], dist: &DistanceFns) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for s in batch {
        sum += (cbf.value(&s.x)? - dist.d_minus(&s.x)).max(0.0);
    }
    Ok(sum / batch.len() as f64)
}

/// Mean hinge on the CBF condition `L_F h̃ + L_G h̃·u + α(h̃) ≥ 0` at the
/// stored pairs.
pub fn loss_gradient(cbf: &LearnedCbf, dynamics: &Dynamics, alpha: ClassKLinear, batch: &[SafeSample]) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for s in batch {
        let (h, grad) = cbf.value_and_gradient(&s.x)?;
        let lie = LieDerivatives::from_gradient(&grad, dynamics, &s.x);
        sum += (-lie.lf_h - lie.lg_h.dot(&s.u) - alpha.apply(h)).max(0.0);
    }
    Ok(sum / batch.len() as f64)
}

/// Mean `Δh(x)²`.
pub fn loss_regularizer(cbf: &LearnedCbf, batch: &[SafeSample]) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for s in batch {
        sum += cbf.correction(&s.x)?.powi(2);
    }
    Ok(sum / batch.len() as f64)
}

pub fn total_loss(
    cbf: &LearnedCbf,
    dynamics: &Dynamics,
    alpha: ClassKLinear,
    dist: &DistanceFns,
    safe: &[SafeSample],
    unsafe_batch: &[UnsafeSample],
    w: LossWeights,
) -> Result<LossTerms> {
    let terms = LossTerms {
        safe: if safe.is_empty() {
            0.0
        } else {
            loss_safe(cbf, safe, dist)?
        },
        unsafe_: loss_unsafe(cbf, unsafe_batch, dist)?,
        gradient: loss_gradient(cbf, dynamics, alpha, safe)?,
        regularizer: loss_regularizer(cbf, safe)?,
        total: 0.0,
    };
    Ok(terms.combine(w))
}

/// Fixed pieces of the loss.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a> {
    pub hand: &'a HandcraftedCbf,
    pub dynamics: &'a Dynamics,
    pub alpha: ClassKLinear,
    pub distances: &'a DistanceFns,
    pub weights: LossWeights,
}

fn stack_states<'s>(n: usize, xs: impl ExactSizeIterator<Item = &'s State>) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, xs.len());
    for (i, x) in xs.enumerate() {
        m.set_column(i, x);
    }
    m
}

/// Batched loss and its parameter gradient. Hinges use a zero subgradient
/// at the kink.
pub fn loss_and_grad(
    ctx: &LossContext<'_>,
    net: &NetworkParams,
    safe: &[&SafeSample],
    unsafe_batch: &[&UnsafeSample],
) -> Result<(LossTerms, NetworkGrads)> {
    let n = net.input_dim();
    let w = ctx.weights;
    let gamma = ctx.alpha.gamma();
    let mut terms = LossTerms::default();
    let mut grads = NetworkGrads::zeros_like(net);

    if !safe.is_empty() {
        let b = safe.len();
        let inv = 1.0 / b as f64;
        let cache = net.forward_batch(&stack_states(n, safe.iter().map(|s| &s.x)))?;
        let jac = net.input_jacobian_batch(&cache);
        let mut d_val = DVector::zeros(b);
        let mut d_jac = DMatrix::zeros(n, b);
        for (i, s) in safe.iter().enumerate() {
            let delta = cache.value(i);
            let h = ctx.hand.value(&s.x) + delta;
            let grad = ctx.hand.gradient(&s.x) + jac.column(i);

            let r = ctx.distances.d_plus(&s.x) - h;
            if r > 0.0 {
                terms.safe += r;
                d_val[i] -= inv;
            }

            let xdot = ctx.dynamics.drift(&s.x) + ctx.dynamics.influence(&s.x) * &s.u;
            let r = -grad.dot(&xdot) - gamma * h;
            if r > 0.0 {
                terms.gradient += r;
                d_val[i] -= gamma * inv;
                d_jac.column_mut(i).axpy(-inv, &xdot, 1.0);
            }

            terms.regularizer += delta * delta;
            d_val[i] += w.lambda2 * 2.0 * delta * inv;
        }
        terms.safe *= inv;
        terms.gradient *= inv;
        terms.regularizer *= inv;
        grads.add_assign(&net.backward_batch(&cache, &d_val, &d_jac));
    }

    if !unsafe_batch.is_empty() && w.lambda1 > 0.0 {
        let b = unsafe_batch.len();
        let inv = 1.0 / b as f64;
        let cache = net.forward_batch(&stack_states(n, unsafe_batch.iter().map(|s| &s.x)))?;
        let mut d_val = DVector::zeros(b);
        for (i, s) in unsafe_batch.iter().enumerate() {
            let r = ctx.hand.value(&s.x) + cache.value(i) - ctx.distances.d_minus(&s.x);
            if r > 0.0 {
                terms.unsafe_ += r;
                d_val[i] = w.lambda1 * inv;
            }
        }
        terms.unsafe_ *= inv;
        grads.add_assign(&net.backward_batch(&cache, &d_val, &DMatrix::zeros(n, b)));
    }

    Ok((terms.combine(w), grads))
}

/// Per-epoch record for the metrics stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub x_init: Vec<f64>,
    /// Mean over the epoch's minibatches.
    pub loss: LossTerms,
    pub minibatches: usize,
    pub n_safe: usize,
    pub n_unsafe: usize,
    pub new_unsafe: usize,
    /// Real states outside the constraint set. A run aborts before this can
    /// become nonzero, so completed epochs always report 0.
    pub violations: usize,
    /// `max(c(x) − b)` over the real trajectory.
    pub max_constraint: f64,
    pub mpc_steps: usize,
    pub cbf_qp_rollouts: usize,
    pub perf_rollouts: usize,
    pub mpc_mean_solve_s: f64,
    pub wall_time_s: f64,
}

/// Result of one real episode.
#[derive(Debug, Clone)]
pub struct Episode {
    pub trajectory: Trajectory,
    pub new_unsafe: usize,
    pub mpc_steps: usize,
    pub cbf_qp_rollouts: usize,
    pub perf_rollouts: usize,
    pub mpc_solve_s: f64,
    pub max_constraint: f64,
}

/// The untrained correction network a run with `seed` starts from.
pub fn initial_network(task: &Task, seed: u64) -> Result<NetworkParams> {
    let mut sizes = vec![task.state_dim()];
    sizes.extend(&task.config.train.hidden);
    sizes.push(1);
    init_network(seed, &sizes)
}

/// Outcome of a model-based rollout.
struct Rollout {
    unsafe_states: Vec<State>,
    failed: bool,
}

fn rollout<P: Policy + ?Sized>(policy: &P, task: &Task, x0: &State, horizon: usize) -> Rollout {
    let mut out = Rollout {
        unsafe_states: Vec::new(),
        failed: false,
    };
    let mut x = x0.clone();
    for _ in 0..horizon {
        let next = policy.control(&x).and_then(|u| task.dynamics.step(&x, &u, task.dt()));
        match next {
            Ok(next) => x = next,
            Err(_) => {
                out.failed = true;
                break;
            }
        }
        if !task.constraints.is_safe(&x) {
            out.failed = true;
            out.unsafe_states.push(x.clone());
        }
    }
    out
}

pub struct Trainer<'t> {
    task: &'t Task,
    config: TrainConfig,
    net: NetworkParams,
    adam: AdamState,
    dataset: Dataset,
    rng: ChaCha8Rng,
    mpc: MpcController,
    epoch: usize,
}

impl<'t> Trainer<'t> {
    /// Fresh network initialized from `seed`.
    pub fn new(task: &'t Task, seed: u64) -> Result<Self> {
        Self::with_network(task, seed, initial_network(task, seed)?)
    }

    pub fn with_network(task: &'t Task, seed: u64, net: NetworkParams) -> Result<Self> {
        let config = task.config.train.clone();
        config.validate()?;
        if net.input_dim() != task.state_dim() {
            return Err(Error::Dimension {
                context: "network input vs state",
                expected: task.state_dim(),
                actual: net.input_dim(),
            });
        }
        Ok(Self {
            adam: AdamState::new(&net, AdamConfig::with_lr(config.lr)),
            dataset: Dataset::new(config.capacity),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a),
            mpc: task.mpc_controller(),
            task,
            config,
            net,
            epoch: 0,
        })
    }

    pub fn network(&self) -> &NetworkParams {
        &self.net
    }

    pub fn into_network(self) -> NetworkParams {
        self.net
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn cbf(&self) -> LearnedCbf {
        LearnedCbf {
            hand: self.task.hand,
            net: Some(self.net.clone()),
        }
    }

    fn harvest(&mut self, states: Vec<State>, source: SampleSource) -> usize {
        let k = states.len();
        for x in states {
            self.dataset.push_unsafe(UnsafeSample { x, source });
        }
        k
    }

    /// Runs one real episode from `x_init` with the current network and
    /// appends the resulting samples.
    pub fn collect_episode(&mut self, x_init: &State) -> Result<Episode> {
        let task = self.task;
        task.dynamics.check_state(x_init)?;
        if !task.constraints.is_safe(x_init) {
            return Err(Error::Config(format!(
                "initial state {:?} is unsafe",
                x_init.as_slice()
            )));
        }
        let cfg = self.config.clone();
        let cbf = self.cbf();
        let alpha = ClassKLinear::new(cfg.gamma)?;
        let policy: FilteredPolicy<'_, _> = filtered_policy(&cbf, &task.dynamics, alpha, &task.perf);
        self.mpc.reset();

        let mut ep = Episode {
            trajectory: Trajectory::new(task.dynamics.state_names(), task.dt()),
            new_unsafe: 0,
            mpc_steps: 0,
            cbf_qp_rollouts: 0,
            perf_rollouts: 0,
            mpc_solve_s: 0.0,
            max_constraint: task.constraints.max_violation(x_init),
        };
        let mut x = x_init.clone();
        let mut fallback = false;
        for n in 0..cfg.episode_length {
            let filtered = policy.evaluate(&x);
            let needs_check = n % cfg.rollout_interval == 0 || fallback || filtered.is_err();
            let mut use_mpc = false;
            if needs_check {
                let r = rollout(&policy, task, &x, cfg.rollout_horizon);
                ep.cbf_qp_rollouts += 1;
                ep.new_unsafe += self.harvest(r.unsafe_states, SampleSource::CbfQpRollout);
                use_mpc = r.failed;
                fallback = r.failed;
            }
            if cfg.perf_rollouts && task.constraints.near_boundary(&x, cfg.eps_c) {
                let r = rollout(&task.perf, task, &x, cfg.rollout_horizon);
                ep.perf_rollouts += 1;
                ep.new_unsafe += self.harvest(r.unsafe_states, SampleSource::PerfRollout);
            }

            let (u, u_ref, h, tag) = if use_mpc {
                let t0 = Instant::now();
                let u = self.mpc.control(&x)?;
                ep.mpc_solve_s += t0.elapsed().as_secs_f64();
                ep.mpc_steps += 1;
                let u_ref = task.perf.control(&x)?;
                (u, u_ref[0], cbf.value(&x)?, ControllerTag::Mpc)
            } else {
                let out = filtered?;
                (out.safe.u, out.u_ref[0], out.h, ControllerTag::CbfQp)
            };
            ep.trajectory.push(&x, u_ref, u[0], h, tag);
            self.dataset.push_safe(SafeSample {
                x: x.clone(),
                u: u.clone(),
                source: SampleSource::Real,
            });

            let next = task.dynamics.step(&x, &u, task.dt())?;
            ep.max_constraint = ep.max_constraint.max(task.constraints.max_violation(&next));
            if !task.constraints.is_safe(&next) {
                return Err(Error::SafetyViolation {
                    epoch: self.epoch,
                    step: n + 1,
                    state: next.iter().copied().collect(),
                });
            }
            x = next;
        }
        Ok(ep)
    }

    /// One shuffled pass of minibatch updates over the safe set, each
    /// paired with a random unsafe minibatch.
    pub fn update(&mut self) -> Result<(LossTerms, usize)> {
        let task = self.task;
        let m = self.config.batch_size;
        let ctx = LossContext {
            hand: &task.hand,
            dynamics: &task.dynamics,
            alpha: ClassKLinear::new(self.config.gamma)?,
            distances: &task.distances,
            weights: self.config.weights(),
        };
        let mut order: Vec<usize> = (0..self.dataset.n_safe()).collect();
        order.shuffle(&mut self.rng);
        let n_unsafe = self.dataset.n_unsafe();
        let mut mean = LossTerms::default();
        let mut batches = 0;
        for chunk in order.chunks(m) {
            let safe: Vec<&SafeSample> = chunk.iter().map(|&i| &self.dataset.safe[i]).collect();
            let unsafe_batch: Vec<&UnsafeSample> = if ctx.weights.lambda1 > 0.0 && n_unsafe > 0 {
                rand::seq::index::sample(&mut self.rng, n_unsafe, m.min(n_unsafe))
                    .into_iter()
                    .map(|i| &self.dataset.unsafe_[i])
                    .collect()
            } else {
                Vec::new()
            };
            let (terms, grads) = loss_and_grad(&ctx, &self.net, &safe, &unsafe_batch)?;
            self.adam.adam_step(&mut self.net, &grads);
            mean.safe += terms.safe;
            mean.unsafe_ += terms.unsafe_;
            mean.gradient += terms.gradient;
            mean.regularizer += terms.regularizer;
            mean.total += terms.total;
            batches += 1;
        }
        if batches > 0 {
            let k = batches as f64;
            mean.safe /= k;
            mean.unsafe_ /= k;
            mean.gradient /= k;
            mean.regularizer /= k;
            mean.total /= k;
        }
        Ok((mean, batches))
    }

    pub fn sample_initial_state(&mut self) -> State {
        let [lo, hi] = self.config.init_range;
        let p = if lo < hi { self.rng.random_range(lo..=hi) } else { lo };
        self.task.initial_state(p)
    }

    /// Sample `x_init`, collect an episode, update the network.
    pub fn run_epoch(&mut self) -> Result<(EpochStats, Episode)> {
        let t0 = Instant::now();
        let x_init = self.sample_initial_state();
        let ep = self.collect_episode(&x_init)?;
        let (loss, minibatches) = self.update()?;
        let stats = EpochStats {
            epoch: self.epoch,
            x_init: x_init.iter().copied().collect(),
            loss,
            minibatches,
            n_safe: self.dataset.n_safe(),
            n_unsafe: self.dataset.n_unsafe(),
            new_unsafe: ep.new_unsafe,
            violations: 0,
            max_constraint: ep.max_constraint,
            mpc_steps: ep.mpc_steps,
            cbf_qp_rollouts: ep.cbf_qp_rollouts,
            perf_rollouts: ep.perf_rollouts,
            mpc_mean_solve_s: if ep.mpc_steps > 0 {
                ep.mpc_solve_s / ep.mpc_steps as f64
            } else {
                0.0
            },
            wall_time_s: t0.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        Ok((stats, ep))
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: NetworkParams,
    pub stats: Vec<EpochStats>,
    pub dataset: Dataset,
}

/// Full training run; `on_epoch` sees each record as soon as it exists.
pub fn train(task: &Task, seed: u64, mut on_epoch: impl FnMut(&EpochStats)) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(task, seed)?;
    let mut stats = Vec::with_capacity(task.config.train.epochs);
    for _ in 0..task.config.train.epochs {
        let (s, _) = trainer.run_epoch()?;
        on_epoch(&s);
        stats.push(s);
    }
    Ok(TrainOutcome {
        dataset: trainer.dataset.clone(),
        net: trainer.net,
        stats,
    })
}
