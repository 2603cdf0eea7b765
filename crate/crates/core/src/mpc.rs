//! LQR performance controllers and the MPC backup controllers.
//!
//! Both MPC variants use the same condensed formulation: the decision
//! variables are the stacked controls `u_0 … u_{T-1}`, predicted states
//! `x_1 … x_T` are affine in them through the sensitivity matrix `S`, and the
//! state constraints become linear inequalities in control space. The
//! nonlinear problem is solved by single-shooting SQP: linearize the RK4
//! rollout, solve the condensed QP, and line-search an L1 merit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cbf::ConstraintSpec;
use crate::dynamics::{Control, Dynamics, LinearizedDynamics, State};
use crate::error::{Error, Result};
use crate::qp::{kkt_residuals, solve_qp, QpFailure, QpSettings};
use crate::qpfilter::Policy;

#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl LqrWeights {
    pub fn diagonal(q: &[f64], r: &[f64]) -> Self {
        Self {
            q: DMatrix::from_diagonal(&DVector::from_column_slice(q)),
            r: DMatrix::from_diagonal(&DVector::from_column_slice(r)),
        }
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.q.shape() != (n, n) {
            return Err(Error::Dimension {
                context: "Q rows",
                expected: n,
                actual: self.q.nrows(),
            });
        }
        if self.r.shape() != (m, m) {
            return Err(Error::Dimension {
                context: "R rows",
                expected: m,
                actual: self.r.nrows(),
            });
        }
        if (&self.q - self.q.transpose()).amax() > 1e-12 || (&self.r - self.r.transpose()).amax() > 1e-12 {
            return Err(Error::Config("Q and R must be symmetric".into()));
        }
        if self.r.clone().cholesky().is_none() {
            return Err(Error::Config("R must be positive definite".into()));
        }
        if self.q.symmetric_eigenvalues().iter().any(|e| *e < -1e-12) {
            return Err(Error::Config("Q must be positive semidefinite".into()));
        }
        Ok(())
    }
}

/// Zero-order-hold discretization via the exponential of
/// `[[A, B], [0, 0]]·dt`.
pub fn discretize_zoh(lin: &LinearizedDynamics, dt: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = lin.a.nrows();
    let m = lin.b.ncols();
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&lin.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&lin.b * dt));
    let e = aug.exp();
    (
        e.view((0, 0), (n, n)).clone_owned(),
        e.view((0, n), (n, m)).clone_owned(),
    )
}

fn riccati_update(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let pa = p * a;
    let pb = p * b;
    let s = r + b.tr_mul(&pb);
    let k = s.cholesky()?.solve(&pb.tr_mul(a));
    let next = a.tr_mul(&pa) - a.tr_mul(&pb) * k + q;
    Some((&next + next.transpose()) * 0.5)
}

/// `AᵀPA − P − AᵀPB(R + BᵀPB)⁻¹BᵀPA + Q`, max-norm.
pub fn dare_residual(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    match riccati_update(a, b, q, r, p) {
        Some(next) => (next - p).amax(),
        None => f64::INFINITY,
    }
}

pub const DARE_MAX_ITER: usize = 100_000;

/// Solve the discrete algebraic Riccati equation by fixed-point iteration.
pub fn solve_dare(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..DARE_MAX_ITER {
        let next = riccati_update(a, b, q, r, &p).ok_or_else(|| Error::Numeric("R + BᵀPB lost definiteness".into()))?;
        let diff = (&next - &p).amax();
        p = next;
        if !diff.is_finite() {
            return Err(Error::Numeric("Riccati iteration diverged".into()));
        }
        if diff <= 1e-10 {
            return Ok(p);
        }
    }
    Err(Error::Numeric(format!(
        "Riccati iteration did not converge in {DARE_MAX_ITER} iterations"
    )))
}

/// Infinite-horizon gain of already-discrete `(A_d, B_d)`.
pub fn lqr_gain_discrete(ad: &DMatrix<f64>, bd: &DMatrix<f64>, w: &LqrWeights) -> Result<DMatrix<f64>> {
    let p = solve_dare(ad, bd, &w.q, &w.r)?;
    let pb = &p * bd;
    let s = &w.r + bd.tr_mul(&pb);
    s.cholesky()
        .map(|c| c.solve(&pb.tr_mul(ad)))
        .ok_or_else(|| Error::Numeric("R + BᵀPB not positive definite".into()))
}

/// Discrete LQR gain `K` (`u = −K x`) for the ZOH discretization of `lin`.
pub fn lqr_gain(lin: &LinearizedDynamics, w: &LqrWeights, dt: f64) -> Result<DMatrix<f64>> {
    w.validate(lin.a.nrows(), lin.b.ncols())?;
    let (ad, bd) = discretize_zoh(lin, dt);
    lqr_gain_discrete(&ad, &bd, w)
}

/// `u = u0 − K (x − x0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFeedback {
    pub gain: DMatrix<f64>,
    pub x0: State,
    pub u0: Control,
}

impl LinearFeedback {
    pub fn regulator(gain: DMatrix<f64>) -> Self {
        let (m, n) = gain.shape();
        Self {
            gain,
            x0: State::zeros(n),
            u0: Control::zeros(m),
        }
    }
}

impl Policy for LinearFeedback {
    fn control(&self, x: &State) -> Result<Control> {
        if x.len() != self.x0.len() {
            return Err(Error::Dimension {
                context: "feedback state",
                expected: self.x0.len(),
                actual: x.len(),
            });
        }
        Ok(&self.u0 - &self.gain * (x - &self.x0))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MpcStatus {
    Optimal,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone)]
pub struct MpcSolution {
    /// `T × m`.
    pub controls: DMatrix<f64>,
    /// `(T+1) × n`, first row is `x0`.
    pub predicted_states: DMatrix<f64>,
    pub status: MpcStatus,
    pub objective: f64,
    /// Condensed-QP KKT residuals (stationarity, primal, complementarity)
    /// of the final subproblem.
    pub kkt: (f64, f64, f64),
    pub iterations: usize,
    /// Merit before and after every accepted SQP step (empty for the
    /// linear solver).
    pub merit_steps: Vec<(f64, f64)>,
}

impl MpcSolution {
    pub fn first_control(&self) -> Control {
        self.controls.row(0).transpose()
    }

    fn infeasible(t: usize, m: usize, x0: &State) -> Self {
        let mut xs = DMatrix::zeros(t + 1, x0.len());
        xs.set_row(0, &x0.transpose());
        Self {
            controls: DMatrix::zeros(t, m),
            predicted_states: xs,
            status: MpcStatus::Infeasible,
            objective: f64::INFINITY,
            kkt: (f64::INFINITY, f64::INFINITY, f64::INFINITY),
            iterations: 0,
            merit_steps: Vec::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearMpcProblem {
    pub ad: DMatrix<f64>,
    pub bd: DMatrix<f64>,
    pub weights: LqrWeights,
    pub horizon: usize,
    pub constraints: ConstraintSpec,
    pub x0: State,
}

/// Condensed data for `x_{k+1} = x̄_{k+1} + Σ_j S_{k,j} δu_j`.
struct Condensed {
    /// `(T·n) × (T·m)`.
    sens: DMatrix<f64>,
}

impl Condensed {
    fn from_jacobians(a: &[DMatrix<f64>], b: &[DMatrix<f64>]) -> Self {
        let t = a.len();
        let n = a[0].nrows();
        let m = b[0].ncols();
        let mut sens = DMatrix::zeros(t * n, t * m);
        for k in 0..t {
            if k > 0 {
                let prev = sens.view((n * (k - 1), 0), (n, m * k)).clone_owned();
                sens.view_mut((n * k, 0), (n, m * k)).copy_from(&(&a[k] * prev));
            }
            sens.view_mut((n * k, m * k), (n, m)).copy_from(&b[k]);
        }
        Self { sens }
    }

    /// Hessian and gradient of `Σ ½xᵀQx + ½uᵀRu` at the nominal `(xs, us)`
    /// (`xs` = stacked `x_1..x_T`).
    fn cost_terms(&self, w: &LqrWeights, xs: &DVector<f64>, us: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
        let n = w.q.nrows();
        let m = w.r.nrows();
        let t = xs.len() / n;
        // Q̄ S and Q̄ x without forming the block diagonal
        let mut qs = DMatrix::zeros(t * n, t * m);
        let mut qx = DVector::zeros(t * n);
        for k in 0..t {
            qs.view_mut((n * k, 0), (n, t * m))
                .copy_from(&(&w.q * self.sens.view((n * k, 0), (n, t * m))));
            qx.rows_mut(n * k, n).copy_from(&(&w.q * xs.rows(n * k, n)));
        }
        let mut h = self.sens.tr_mul(&qs);
        let mut g = self.sens.tr_mul(&qx);
        for k in 0..t {
            let mut blk = h.view_mut((m * k, m * k), (m, m));
            blk += &w.r;
            g.rows_mut(m * k, m).gemv(1.0, &w.r, &us.rows(m * k, m), 1.0);
        }
        let h = (&h + h.transpose()) * 0.5;
        (h, g)
    }

    /// `C_row S_k δ ≤ b − margin − C_row x̄_k` for every step and row.
    fn constraint_terms(&self, spec: &ConstraintSpec, xs: &DVector<f64>, margin: f64) -> (DMatrix<f64>, DVector<f64>) {
        let r = spec.len();
        let n = spec.rows.ncols();
        let t = xs.len() / n;
        let tm = self.sens.ncols();
        let mut c = DMatrix::zeros(t * r, tm);
        let mut d = DVector::zeros(t * r);
        for k in 0..t {
            let sk = self.sens.view((n * k, 0), (n, tm));
            c.view_mut((r * k, 0), (r, tm)).copy_from(&(&spec.rows * sk));
            let xk = xs.rows(n * k, n);
            for i in 0..r {
                d[r * k + i] = spec.bounds[i] - margin - spec.rows.row(i).transpose().dot(&xk);
            }
        }
        (c, d)
    }
}

fn stage_cost(w: &LqrWeights, xs: &DVector<f64>, us: &DVector<f64>) -> f64 {
    let n = w.q.nrows();
    let m = w.r.nrows();
    let t = us.len() / m;
    (0..t)
        .map(|k| {
            let x = xs.rows(n * k, n);
            let u = us.rows(m * k, m);
            0.5 * x.dot(&(&w.q * x)) + 0.5 * u.dot(&(&w.r * u))
        })
        .sum()
}

fn max_violation(spec: &ConstraintSpec, xs: &DVector<f64>, margin: f64) -> f64 {
    let n = spec.rows.ncols();
    (0..xs.len() / n)
        .map(|k| {
            let x = xs.rows(n * k, n).clone_owned();
            (spec.c(&x) - &spec.bounds).add_scalar(margin).max()
        })
        .fold(0.0f64, f64::max)
}

fn total_violation(spec: &ConstraintSpec, xs: &DVector<f64>, margin: f64) -> f64 {
    let n = spec.rows.ncols();
    (0..xs.len() / n)
        .map(|k| {
            let x = xs.rows(n * k, n).clone_owned();
            (spec.c(&x) - &spec.bounds)
                .add_scalar(margin)
                .iter()
                .map(|v| v.max(0.0))
                .sum::<f64>()
        })
        .sum()
}

fn pack(x0: &State, xs: &DVector<f64>, us: &DVector<f64>, m: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = x0.len();
    let t = us.len() / m;
    let mut states = DMatrix::zeros(t + 1, n);
    states.set_row(0, &x0.transpose());
    for k in 0..t {
        states.set_row(k + 1, &xs.rows(n * k, n).transpose());
    }
    let controls = DMatrix::from_fn(t, m, |k, j| us[m * k + j]);
    (controls, states)
}

/// Solve the linear MPC exactly as one condensed QP. `margin` tightens every
/// bound (`c(x) ≤ b − margin`).
pub fn solve_linear_mpc_with_margin(p: &LinearMpcProblem, margin: f64) -> Result<MpcSolution> {
    let n = p.ad.nrows();
    let m = p.bd.ncols();
    if p.x0.len() != n {
        return Err(Error::Dimension {
            context: "mpc x0",
            expected: n,
            actual: p.x0.len(),
        });
    }
    if p.horizon == 0 {
        return Err(Error::Config("MPC horizon must be >= 1".into()));
    }
    p.weights.validate(n, m)?;
    let t = p.horizon;
    let cond = Condensed::from_jacobians(&vec![p.ad.clone(); t], &vec![p.bd.clone(); t]);
    // free response x̄_k = A^k x0
    let mut free = DVector::zeros(t * n);
    let mut x = p.x0.clone();
    for k in 0..t {
        x = &p.ad * x;
        free.rows_mut(n * k, n).copy_from(&x);
    }
    let zeros = DVector::zeros(t * m);
    let (h, g) = cond.cost_terms(&p.weights, &free, &zeros);
    let (c, d) = cond.constraint_terms(&p.constraints, &free, margin);
    match solve_qp(&h, &g, &c, &d, QpSettings::default()) {
        Ok(sol) => {
            let xs = &free + &cond.sens * &sol.z;
            let kkt = kkt_residuals(&h, &g, &c, &d, &sol.z, &sol.multipliers);
            let (controls, states) = pack(&p.x0, &xs, &sol.z, m);
            Ok(MpcSolution {
                controls,
                predicted_states: states,
                status: MpcStatus::Optimal,
                objective: stage_cost(&p.weights, &xs, &sol.z),
                kkt,
                iterations: sol.iterations,
                merit_steps: Vec::new(),
            })
        }
        Err(QpFailure::Infeasible) => Ok(MpcSolution::infeasible(t, m, &p.x0)),
        Err(e) => Err(Error::Numeric(format!("linear MPC QP failed: {e:?}"))),
    }
}

pub fn solve_linear_mpc(p: &LinearMpcProblem) -> Result<MpcSolution> {
    solve_linear_mpc_with_margin(p, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmpcSettings {
    pub max_iter: usize,
    pub step_tol: f64,
    /// Constraint violation tolerated in a returned iterate.
    pub feas_tol: f64,
    /// Bound tightening applied inside the solver.
    pub margin: f64,
}

impl Default for NmpcSettings {
    fn default() -> Self {
        Self {
            max_iter: 50,
            step_tol: 1e-6,
            feas_tol: 1e-4,
            margin: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearMpcProblem {
    pub dynamics: Dynamics,
    pub dt: f64,
    pub weights: LqrWeights,
    pub horizon: usize,
    pub constraints: ConstraintSpec,
    pub x0: State,
}

type Rollout = (DVector<f64>, Vec<DMatrix<f64>>, Vec<DMatrix<f64>>);

fn rollout_with_jacobians(p: &NonlinearMpcProblem, us: &DVector<f64>) -> Result<Rollout> {
    let n = p.x0.len();
    let m = p.dynamics.control_dim();
    let mut xs = DVector::zeros(p.horizon * n);
    let mut a = Vec::with_capacity(p.horizon);
    let mut b = Vec::with_capacity(p.horizon);
    let mut x = p.x0.clone();
    for k in 0..p.horizon {
        let u = us.rows(m * k, m).clone_owned();
        let (next, ak, bk) = p.dynamics.step_with_jacobians(&x, &u, p.dt)?;
        xs.rows_mut(n * k, n).copy_from(&next);
        a.push(ak);
        b.push(bk);
        x = next;
    }
    Ok((xs, a, b))
}

fn rollout(p: &NonlinearMpcProblem, us: &DVector<f64>) -> Result<DVector<f64>> {
    let n = p.x0.len();
    let m = p.dynamics.control_dim();
    let mut xs = DVector::zeros(p.horizon * n);
    let mut x = p.x0.clone();
    for k in 0..p.horizon {
        x = p.dynamics.step(&x, &us.rows(m * k, m).clone_owned(), p.dt)?;
        xs.rows_mut(n * k, n).copy_from(&x);
    }
    Ok(xs)
}

/// Single-shooting SQP with an L1 merit line search.
pub fn solve_nonlinear_mpc(
    p: &NonlinearMpcProblem,
    warm_start: Option<&DVector<f64>>,
    settings: NmpcSettings,
) -> Result<MpcSolution> {
    let n = p.dynamics.state_dim();
    let m = p.dynamics.control_dim();
    p.dynamics.check_state(&p.x0)?;
    if p.horizon == 0 {
        return Err(Error::Config("MPC horizon must be >= 1".into()));
    }
    p.weights.validate(n, m)?;
    let t = p.horizon;
    let margin = settings.margin;

    let mut us = match warm_start {
        Some(w) if w.len() == t * m => w.clone(),
        _ => DVector::zeros(t * m),
    };
    let mut mu: Option<f64> = None;
    let merit = |xs: &DVector<f64>, us: &DVector<f64>, mu: f64| {
        stage_cost(&p.weights, xs, us) + mu * total_violation(&p.constraints, xs, margin)
    };

    let mut best: Option<(f64, DVector<f64>, DVector<f64>)> = None;
    let mut merit_steps = Vec::new();
    let mut kkt = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..settings.max_iter {
        iterations += 1;
        let (xs, a, b) = rollout_with_jacobians(p, &us)?;
        let obj = stage_cost(&p.weights, &xs, &us);
        if max_violation(&p.constraints, &xs, margin) <= settings.feas_tol
            && best.as_ref().is_none_or(|(o, _, _)| obj < *o)
        {
            best = Some((obj, us.clone(), xs.clone()));
        }

        let cond = Condensed::from_jacobians(&a, &b);
        let (h, g) = cond.cost_terms(&p.weights, &xs, &us);
        let (c, d) = cond.constraint_terms(&p.constraints, &xs, margin);
        let sol = match solve_qp(&h, &g, &c, &d, QpSettings::default()) {
            Ok(s) => s,
            Err(QpFailure::Infeasible) => break,
            Err(e) => return Err(Error::Numeric(format!("NMPC subproblem failed: {e:?}"))),
        };
        kkt = kkt_residuals(&h, &g, &c, &d, &sol.z, &sol.multipliers);
        let lam_max = sol.multipliers.amax();
        let mu_now = match mu {
            Some(v) if v >= 2.0 * lam_max => v,
            _ => (10.0 * lam_max).max(100.0),
        };
        mu = Some(mu_now);

        let step = sol.z;
        if step.amax() <= settings.step_tol {
            converged = true;
            break;
        }
        let phi0 = merit(&xs, &us, mu_now);
        let dir = g.dot(&step) - mu_now * total_violation(&p.constraints, &xs, margin);
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-8 {
            let trial = &us + &step * alpha;
            let xt = rollout(p, &trial)?;
            let phi = merit(&xt, &trial, mu_now);
            if phi <= phi0 + 1e-4 * alpha * dir.min(0.0) {
                accepted = Some((trial, phi));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((trial, phi)) => {
                merit_steps.push((phi0, phi));
                let small = (&step * alpha).amax() <= settings.step_tol;
                us = trial;
                if small {
                    converged = true;
                    break;
                }
            }
            None => break,
        }
    }

    // the final iterate may not have been scored yet
    let xs = rollout(p, &us)?;
    let obj = stage_cost(&p.weights, &xs, &us);
    if max_violation(&p.constraints, &xs, margin) <= settings.feas_tol
        && best.as_ref().is_none_or(|(o, _, _)| obj <= *o)
    {
        best = Some((obj, us.clone(), xs));
    }

    match best {
        Some((objective, us, xs)) => {
            let (controls, states) = pack(&p.x0, &xs, &us, m);
            Ok(MpcSolution {
                controls,
                predicted_states: states,
                status: if converged {
                    MpcStatus::Optimal
                } else {
                    MpcStatus::MaxIter
                },
                objective,
                kkt,
                iterations,
                merit_steps,
            })
        }
        None => {
            let mut s = MpcSolution::infeasible(t, m, &p.x0);
            s.iterations = iterations;
            s.merit_steps = merit_steps;
            Ok(s)
        }
    }
}

/// Model used by a receding-horizon controller.
#[derive(Debug, Clone)]
pub enum MpcModel {
    /// Exact discrete linear model (integrator).
    Linear { ad: DMatrix<f64>, bd: DMatrix<f64> },
    /// RK4 shooting on the nonlinear plant.
    Nonlinear { dynamics: Dynamics, dt: f64 },
}

/// Receding-horizon MPC policy. The warm start is per instance, so calls
/// take `&mut self`.
#[derive(Debug, Clone)]
pub struct MpcController {
    pub model: MpcModel,
    pub weights: LqrWeights,
    pub horizon: usize,
    pub constraints: ConstraintSpec,
    /// Bound tightening so the applied step is strictly inside the set.
    pub backoff: f64,
    pub nmpc: NmpcSettings,
    warm: Option<DVector<f64>>,
}

impl MpcController {
    pub fn new(
        model: MpcModel,
        weights: LqrWeights,
        horizon: usize,
        constraints: ConstraintSpec,
        backoff: f64,
    ) -> Self {
        Self {
            model,
            weights,
            horizon,
            constraints,
            backoff,
            nmpc: NmpcSettings {
                margin: backoff,
                ..NmpcSettings::default()
            },
            warm: None,
        }
    }

    pub fn reset(&mut self) {
        self.warm = None;
    }

    pub fn solve(&mut self, x: &State) -> Result<MpcSolution> {
        let sol = match &self.model {
            MpcModel::Linear { ad, bd } => solve_linear_mpc_with_margin(
                &LinearMpcProblem {
                    ad: ad.clone(),
                    bd: bd.clone(),
                    weights: self.weights.clone(),
                    horizon: self.horizon,
                    constraints: self.constraints.clone(),
                    x0: x.clone(),
                },
                self.backoff,
            )?,
            MpcModel::Nonlinear { dynamics, dt } => {
                let problem = NonlinearMpcProblem {
                    dynamics: dynamics.clone(),
                    dt: *dt,
                    weights: self.weights.clone(),
                    horizon: self.horizon,
                    constraints: self.constraints.clone(),
                    x0: x.clone(),
                };
                solve_nonlinear_mpc(&problem, self.warm.as_ref(), self.nmpc)?
            }
        };
        if sol.status != MpcStatus::Infeasible {
            // shift by one step, repeat the last control
            let (t, m) = sol.controls.shape();
            let mut w = DVector::zeros(t * m);
            for k in 0..t {
                let src = (k + 1).min(t - 1);
                for j in 0..m {
                    w[m * k + j] = sol.controls[(src, j)];
                }
            }
            self.warm = Some(w);
        } else {
            self.warm = None;
        }
        Ok(sol)
    }

    /// First control of the receding-horizon solution.
    pub fn control(&mut self, x: &State) -> Result<Control> {
        let sol = self.solve(x)?;
        if sol.status == MpcStatus::Infeasible {
            return Err(Error::MpcInfeasible {
                state: x.iter().copied().collect(),
                reason: "no iterate satisfies the state constraints".into(),
            });
        }
        Ok(sol.first_control())
    }
}
