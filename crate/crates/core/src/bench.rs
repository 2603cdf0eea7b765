//! Per-solve latency of the safety filter and the MPC controllers.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cbf::{ClassKLinear, LearnedCbf};
use crate::dynamics::{Dynamics, State};
use crate::error::Result;
use crate::mpc::MpcStatus;
use crate::qpfilter::{build_cbf_qp, filtered_policy, solve_cbf_qp, Policy};
use crate::task::Task;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub controller: String,
    pub solves: usize,
    pub failures: usize,
    pub median_s: f64,
    pub p95_s: f64,
}

impl LatencyStats {
    fn from_samples(controller: &str, mut samples: Vec<f64>, failures: usize) -> Self {
        samples.sort_by(|a, b| a.total_cmp(b));
        let q = |p: f64| {
            if samples.is_empty() {
                f64::NAN
            } else {
                let k = ((samples.len() - 1) as f64 * p).round() as usize;
                samples[k]
            }
        };
        Self {
            controller: controller.to_string(),
            solves: samples.len(),
            failures,
            median_s: q(0.5),
            p95_s: q(0.95),
        }
    }
}

/// Safe states drawn from the task's training region.
pub fn bench_states(task: &Task, count: usize, seed: u64) -> Vec<State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let x = match task.dynamics {
            Dynamics::Integrator => State::from_vec(vec![rng.random_range(-15.0..0.0), rng.random_range(-1.0..2.9)]),
            Dynamics::BallBeam(_) => State::from_vec(vec![
                rng.random_range(-1.2..1.2),
                rng.random_range(-0.4..0.4),
                rng.random_range(-0.5..0.5),
                rng.random_range(-1.0..1.0),
            ]),
        };
        if task.constraints.is_safe(&x) {
            out.push(x);
        }
    }
    out
}

/// At each of `count` matched states, times the CBF-QP solve on its built
/// problem, the whole filtered controller (reference control, network value
/// and gradient, QP), and one cold-started MPC solve.
pub fn bench_solvers(
    task: &Task,
    cbf: &LearnedCbf,
    alpha: ClassKLinear,
    count: usize,
    seed: u64,
) -> Result<Vec<LatencyStats>> {
    let states = bench_states(task, count, seed);
    let policy = filtered_policy(cbf, &task.dynamics, alpha, &task.perf);
    let mut solve_times = Vec::with_capacity(count);
    let mut policy_times = Vec::with_capacity(count);
    let mut qp_fail = 0;
    for x in &states {
        let t0 = Instant::now();
        let r = policy.evaluate(x);
        policy_times.push(t0.elapsed().as_secs_f64());
        if r.is_err() {
            qp_fail += 1;
        }
        let u_ref = task.perf.control(x)?;
        let problem = build_cbf_qp(cbf, &task.dynamics, alpha, x, &u_ref)?;
        let t0 = Instant::now();
        let r = solve_cbf_qp(std::hint::black_box(&problem));
        solve_times.push(t0.elapsed().as_secs_f64());
        std::hint::black_box(r.is_ok());
    }
    let mut mpc = task.mpc_controller();
    let mut mpc_times = Vec::with_capacity(count);
    let mut mpc_fail = 0;
    for x in &states {
        mpc.reset();
        let t0 = Instant::now();
        let r = mpc.solve(x);
        mpc_times.push(t0.elapsed().as_secs_f64());
        if !matches!(r, Ok(ref s) if s.status != MpcStatus::Infeasible) {
            mpc_fail += 1;
        }
    }
    let mpc_name = match task.dynamics {
        Dynamics::Integrator => "linear_mpc",
        Dynamics::BallBeam(_) => "nmpc",
    };
    Ok(vec![
        LatencyStats::from_samples("cbf_qp_solve", solve_times, qp_fail),
        LatencyStats::from_samples("cbf_qp_controller", policy_times, qp_fail),
        LatencyStats::from_samples(mpc_name, mpc_times, mpc_fail),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::SystemId;

    #[test]
    fn quantiles() {
        let s = LatencyStats::from_samples("x", (1..=100).rev().map(|v| v as f64).collect(), 0);
        assert_eq!(s.solves, 100);
        assert_eq!(s.median_s, 51.0);
        assert_eq!(s.p95_s, 95.0);
    }

    #[test]
    fn same_seed_same_states() {
        let task = Task::from_system(SystemId::BallOnBeam).unwrap();
        let a = bench_states(&task, 50, 3);
        assert_eq!(a, bench_states(&task, 50, 3));
        assert!(a.iter().all(|x| task.constraints.is_safe(x)));
    }

    #[test]
    fn integrator_filter_is_faster_than_mpc() {
        let task = Task::from_system(SystemId::Integrator2d).unwrap();
        let cbf = LearnedCbf::hand_only(task.hand);
        let rows = bench_solvers(&task, &cbf, task.training_alpha(), 200, 1).unwrap();
        assert_eq!(rows[0].solves, 200);
        assert!(rows.iter().all(|r| r.failures == 0));
        assert!(rows[0].median_s < rows[2].median_s);
        assert!(rows[1].median_s < rows[2].median_s);
    }
}
