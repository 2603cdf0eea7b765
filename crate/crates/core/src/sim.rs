//! Closed-loop simulation of the benchmark controllers.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::cbf::{ClassKLinear, LearnedCbf};
use crate::dynamics::State;
use crate::error::{Error, Result};
use crate::qpfilter::filtered_policy;
use crate::task::Task;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerTag {
    CbfQp,
    Mpc,
}

impl ControllerTag {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerTag::CbfQp => "cbfqp",
            ControllerTag::Mpc => "mpc",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "cbfqp" => Some(ControllerTag::CbfQp),
            "mpc" => Some(ControllerTag::Mpc),
            _ => None,
        }
    }
}

/// One applied step. Inputs are scalar for both benchmark plants.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_ref: f64,
    pub u_safe: f64,
    /// `h̃(x)` of the CBF attached to the run.
    pub h: f64,
    pub controller: ControllerTag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub state_names: Vec<String>,
    pub dt: f64,
    pub rows: Vec<TrajectoryRow>,
}

impl Trajectory {
    pub fn new(state_names: &[&str], dt: f64) -> Self {
        Self {
            state_names: state_names.iter().map(|s| s.to_string()).collect(),
            dt,
            rows: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn push(&mut self, x: &State, u_ref: f64, u_safe: f64, h: f64, controller: ControllerTag) {
        let t = self.rows.len() as f64 * self.dt;
        self.rows.push(TrajectoryRow {
            t,
            x: x.iter().copied().collect(),
            u_ref,
            u_safe,
            h,
            controller,
        });
    }

    /// Column `i` of the state over time.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.x[i]).collect()
    }

    pub fn max_component(&self, i: usize) -> f64 {
        self.rows.iter().map(|r| r.x[i]).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_component(&self, i: usize) -> f64 {
        self.rows.iter().map(|r| r.x[i]).fold(f64::INFINITY, f64::min)
    }

    pub fn min_h(&self) -> f64 {
        self.rows.iter().map(|r| r.h).fold(f64::INFINITY, f64::min)
    }

    pub fn states(&self) -> DMatrix<f64> {
        let n = self.state_names.len();
        DMatrix::from_fn(self.rows.len(), n, |i, j| self.rows[i].x[j])
    }
}

/// Runs the CBF-QP filtered performance controller with no fallback. The
/// trajectory holds `steps + 1` states; the last row repeats the final
/// controls so every visited state is recorded.
pub fn simulate_filtered(
    task: &Task,
    cbf: &LearnedCbf,
    alpha: ClassKLinear,
    x0: &State,
    steps: usize,
) -> Result<Trajectory> {
    let policy = filtered_policy(cbf, &task.dynamics, alpha, &task.perf);
    let mut traj = Trajectory::new(task.dynamics.state_names(), task.dt());
    let mut x = x0.clone();
    for n in 0..=steps {
        let out = policy.evaluate(&x)?;
        traj.push(&x, out.u_ref[0], out.safe.u[0], out.h, ControllerTag::CbfQp);
        if n < steps {
            x = task.dynamics.step(&x, &out.safe.u, task.dt())?;
        }
    }
    Ok(traj)
}

/// Runs the MPC controller alone. `h` is evaluated with `cbf` for reference.
pub fn simulate_mpc(task: &Task, cbf: &LearnedCbf, x0: &State, steps: usize) -> Result<Trajectory> {
    use crate::qpfilter::Policy;
    let mut mpc = task.mpc_controller();
    let mut traj = Trajectory::new(task.dynamics.state_names(), task.dt());
    let mut x = x0.clone();
    for n in 0..=steps {
        let u_ref = task.perf.control(&x)?;
        let u = mpc.control(&x)?;
        traj.push(&x, u_ref[0], u[0], cbf.value(&x)?, ControllerTag::Mpc);
        if n < steps {
            x = task.dynamics.step(&x, &u, task.dt())?;
            if !task.constraints.is_safe(&x) {
                return Err(Error::SafetyViolation {
                    epoch: 0,
                    step: n + 1,
                    state: x.iter().copied().collect(),
                });
            }
        }
    }
    Ok(traj)
}

/// Rectangular grid over two state components, others held at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub axis_x: usize,
    pub axis_y: usize,
    pub x_range: [f64; 2],
    pub y_range: [f64; 2],
    pub nx: usize,
    pub ny: usize,
    pub base: State,
}

impl GridSpec {
    /// `x ∈ [−15, 0]`, `ẋ ∈ [0, 4]`.
    pub fn integrator_default(nx: usize, ny: usize) -> Self {
        Self {
            axis_x: 0,
            axis_y: 1,
            x_range: [-15.0, 0.0],
            y_range: [0.0, 4.0],
            nx,
            ny,
            base: State::zeros(2),
        }
    }
}

fn linspace(r: [f64; 2], n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![r[0]],
        _ => (0..n)
            .map(|i| r[0] + (r[1] - r[0]) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContourGrid {
    pub x_name: String,
    pub y_name: String,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// `ny × nx`; entry `(j, i)` is `h̃` at `(xs[i], ys[j])`.
    pub values: DMatrix<f64>,
}

impl ContourGrid {
    /// For each `xs[i]`, the first `y` (scanning upward) where `h̃` turns
    /// from nonnegative to negative, linearly interpolated.
    pub fn zero_crossings(&self) -> Vec<Option<f64>> {
        (0..self.xs.len())
            .map(|i| {
                (1..self.ys.len()).find_map(|j| {
                    let (h0, h1) = (self.values[(j - 1, i)], self.values[(j, i)]);
                    if h0 >= 0.0 && h1 < 0.0 {
                        let s = h0 / (h0 - h1);
                        Some(self.ys[j - 1] + s * (self.ys[j] - self.ys[j - 1]))
                    } else {
                        None
                    }
                })
            })
            .collect()
    }
}

pub fn evaluate_contour(cbf: &LearnedCbf, names: &[&str], spec: &GridSpec) -> Result<ContourGrid> {
    let n = spec.base.len();
    if spec.axis_x >= n || spec.axis_y >= n || names.len() != n {
        return Err(Error::Dimension {
            context: "contour axes",
            expected: n,
            actual: spec.axis_x.max(spec.axis_y) + 1,
        });
    }
    let xs = linspace(spec.x_range, spec.nx);
    let ys = linspace(spec.y_range, spec.ny);
    let mut values = DMatrix::zeros(ys.len(), xs.len());
    for (j, y) in ys.iter().enumerate() {
        for (i, x) in xs.iter().enumerate() {
            let mut s = spec.base.clone();
            s[spec.axis_x] = *x;
            s[spec.axis_y] = *y;
            values[(j, i)] = cbf.value(&s)?;
        }
    }
    Ok(ContourGrid {
        x_name: names[spec.axis_x].to_string(),
        y_name: names[spec.axis_y].to_string(),
        xs,
        ys,
        values,
    })
}
