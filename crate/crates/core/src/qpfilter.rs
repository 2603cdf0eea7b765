//! CBF-QP safety filter: the minimum-norm correction of a reference control
//! onto the half-space `L_G h·u ≥ −L_F h − α(h)`.

use nalgebra::DVector;

use crate::cbf::{ClassKLinear, LearnedCbf, LieDerivatives};
use crate::dynamics::{Control, Dynamics, State};
use crate::error::{Error, Result};

/// Below this `‖L_G h‖` the constraint is treated as control independent.
pub const DEGENERATE_NORM: f64 = 1e-12;

/// A state-feedback controller.
pub trait Policy {
    fn control(&self, x: &State) -> Result<Control>;
}

impl<F> Policy for F
where
    F: Fn(&State) -> Result<Control>,
{
    fn control(&self, x: &State) -> Result<Control> {
        self(x)
    }
}

/// `min ‖u − u_ref‖²  s.t.  a·u ≥ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct CbfQpProblem {
    pub u_ref: Control,
    pub a: DVector<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SafeControl {
    pub u: Control,
    /// Whether the CBF constraint is tight at the solution.
    pub active: bool,
    /// `a·u − rhs`.
    pub slack: f64,
}

pub fn solve_cbf_qp(p: &CbfQpProblem) -> Result<SafeControl> {
    let a_norm2 = p.a.norm_squared();
    let au = p.a.dot(&p.u_ref);
    if a_norm2.sqrt() < DEGENERATE_NORM {
        if p.rhs > 0.0 {
            return Err(Error::InfeasibleConstraint {
                lg_norm: a_norm2.sqrt(),
                rhs: p.rhs,
            });
        }
        return Ok(SafeControl {
            u: p.u_ref.clone(),
            active: false,
            slack: au - p.rhs,
        });
    }
    if au >= p.rhs {
        return Ok(SafeControl {
            u: p.u_ref.clone(),
            active: false,
            slack: au - p.rhs,
        });
    }
    let u = &p.u_ref + &p.a * ((p.rhs - au) / a_norm2);
    let slack = p.a.dot(&u) - p.rhs;
    Ok(SafeControl { u, active: true, slack })
}

/// `a = L_G h̃(x)`, `rhs = −L_F h̃(x) − γ h̃(x)`. Also returns `h̃(x)`.
pub fn build_cbf_qp_with_value(
    cbf: &LearnedCbf,
    dynamics: &Dynamics,
    alpha: ClassKLinear,
    x: &State,
    u_ref: &Control,
) -> Result<(CbfQpProblem, f64)> {
    dynamics.check_state(x)?;
    dynamics.check_control(u_ref)?;
    let (h, grad) = cbf.value_and_gradient(x)?;
    let lie = LieDerivatives::from_gradient(&grad, dynamics, x);
    Ok((
        CbfQpProblem {
            u_ref: u_ref.clone(),
            a: lie.lg_h,
            rhs: -lie.lf_h - alpha.apply(h),
        },
        h,
    ))
}

pub fn build_cbf_qp(
    cbf: &LearnedCbf,
    dynamics: &Dynamics,
    alpha: ClassKLinear,
    x: &State,
    u_ref: &Control,
) -> Result<CbfQpProblem> {
    Ok(build_cbf_qp_with_value(cbf, dynamics, alpha, x, u_ref)?.0)
}

/// One evaluation of the filtered controller.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub u_ref: Control,
    pub safe: SafeControl,
    /// `h̃(x)`.
    pub h: f64,
}

/// `x ↦ solve_cbf_qp(build_cbf_qp(x, perf(x)))`.
pub struct FilteredPolicy<'a, P: ?Sized> {
    pub cbf: &'a LearnedCbf,
    pub dynamics: &'a Dynamics,
    pub alpha: ClassKLinear,
    pub perf: &'a P,
}

pub fn filtered_policy<'a, P: Policy + ?Sized>(
    cbf: &'a LearnedCbf,
    dynamics: &'a Dynamics,
    alpha: ClassKLinear,
    perf: &'a P,
) -> FilteredPolicy<'a, P> {
    FilteredPolicy {
        cbf,
        dynamics,
        alpha,
        perf,
    }
}

impl<P: Policy + ?Sized> FilteredPolicy<'_, P> {
    pub fn evaluate(&self, x: &State) -> Result<FilterOutput> {
        let u_ref = self.perf.control(x)?;
        let (problem, h) = build_cbf_qp_with_value(self.cbf, self.dynamics, self.alpha, x, &u_ref)?;
        let safe = solve_cbf_qp(&problem)?;
        Ok(FilterOutput { u_ref, safe, h })
    }
}

impl<P: Policy + ?Sized> Policy for FilteredPolicy<'_, P> {
    fn control(&self, x: &State) -> Result<Control> {
        Ok(self.evaluate(x)?.safe.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cbf::HandcraftedCbf;
    use crate::qp::{solve_qp, QpSettings};
    use approx::assert_relative_eq;
    use nalgebra::{dvector, DMatrix};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn problem(a: &[f64], rhs: f64, u_ref: &[f64]) -> CbfQpProblem {
        CbfQpProblem {
            u_ref: DVector::from_column_slice(u_ref),
            a: DVector::from_column_slice(a),
            rhs,
        }
    }

    /// The generic active-set route on the same problem.
    fn oracle(p: &CbfQpProblem) -> DVector<f64> {
        let m = p.u_ref.len();
        let h = DMatrix::identity(m, m);
        let g = -&p.u_ref;
        let c = DMatrix::from_row_slice(1, m, (-&p.a).as_slice());
        let d = dvector![-p.rhs];
        solve_qp(&h, &g, &c, &d, QpSettings::default()).unwrap().z
    }

    #[test]
    fn feasible_reference_passes_through() {
        let s = solve_cbf_qp(&problem(&[1.0], 0.0, &[1.0])).unwrap();
        assert_eq!(s.u, dvector![1.0]);
        assert!(!s.active);
    }

    #[test]
    fn infeasible_reference_is_projected() {
        let s = solve_cbf_qp(&problem(&[1.0], 0.0, &[-2.0])).unwrap();
        assert_eq!(s.u, dvector![0.0]);
        assert!(s.active);
    }

    #[test]
    fn two_input_projection() {
        let p = problem(&[1.0, 1.0], 2.0, &[0.0, 0.0]);
        let s = solve_cbf_qp(&p).unwrap();
        assert_relative_eq!(s.u, dvector![1.0, 1.0], epsilon = 1e-15);
        assert_relative_eq!(oracle(&p), dvector![1.0, 1.0], epsilon = 1e-12);
    }

    #[test]
    fn degenerate_constraint() {
        assert_eq!(solve_cbf_qp(&problem(&[0.0], -1.0, &[3.0])).unwrap().u, dvector![3.0]);
        assert!(matches!(
            solve_cbf_qp(&problem(&[0.0], 0.5, &[3.0])),
            Err(Error::InfeasibleConstraint { .. })
        ));
    }

    #[test]
    fn integrator_problem_construction() {
        let cbf = LearnedCbf::hand_only(HandcraftedCbf::IntegratorVelocity { cap: 2.0 });
        let alpha = ClassKLinear::new(5.0).unwrap();
        let p = build_cbf_qp(&cbf, &Dynamics::Integrator, alpha, &dvector![0.0, 2.0], &dvector![1.0]).unwrap();
        assert_eq!(p.a, dvector![-1.0]);
        assert_eq!(p.rhs, 0.0);
        let p = build_cbf_qp(&cbf, &Dynamics::Integrator, alpha, &dvector![0.0, 0.0], &dvector![1.0]).unwrap();
        assert_eq!(p.rhs, -10.0);
    }

    #[test]
    fn zero_reference_in_interior() {
        let cbf = LearnedCbf::hand_only(HandcraftedCbf::IntegratorVelocity { cap: 2.0 });
        let perf = |_: &State| -> Result<Control> { Ok(dvector![0.0]) };
        let pol = filtered_policy(&cbf, &Dynamics::Integrator, ClassKLinear::new(5.0).unwrap(), &perf);
        let out = pol.evaluate(&dvector![-3.0, 0.5]).unwrap();
        assert_eq!(out.safe.u, dvector![0.0]);
        assert_eq!(out.h, 1.5);
    }

    #[test]
    fn closed_form_matches_active_set_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..1000 {
            let m = rng.random_range(1..4);
            let p = CbfQpProblem {
                u_ref: DVector::from_fn(m, |_, _| rng.random_range(-10.0..10.0)),
                a: DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0)),
                rhs: rng.random_range(-10.0..10.0),
            };
            let s = solve_cbf_qp(&p).unwrap();
            assert!(s.slack >= -1e-9);
            assert!((&s.u - oracle(&p)).amax() <= 1e-8);
        }
    }

    #[test]
    fn minimally_invasive() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let p = CbfQpProblem {
                u_ref: DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0)),
                a: DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0)),
                rhs: rng.random_range(-5.0..5.0),
            };
            let s = solve_cbf_qp(&p).unwrap();
            let dist = (&s.u - &p.u_ref).norm();
            let mut found = 0;
            while found < 100 {
                let cand = DVector::from_fn(2, |_, _| rng.random_range(-20.0..20.0));
                if p.a.dot(&cand) >= p.rhs {
                    assert!(dist <= (&cand - &p.u_ref).norm() + 1e-12);
                    found += 1;
                }
            }
        }
    }

    #[test]
    fn lipschitz_in_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..500 {
            let a = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
            let rhs = rng.random_range(-3.0..3.0);
            let u1 = DVector::from_fn(2, |_, _| rng.random_range(-5.0..5.0));
            let du = DVector::from_fn(2, |_, _| rng.random_range(-0.1..0.1));
            let s1 = solve_cbf_qp(&CbfQpProblem {
                u_ref: u1.clone(),
                a: a.clone(),
                rhs,
            })
            .unwrap();
            let s2 = solve_cbf_qp(&CbfQpProblem {
                u_ref: &u1 + &du,
                a: a.clone(),
                rhs,
            })
            .unwrap();
            // projection onto a convex set is 1-Lipschitz
            assert!((&s1.u - &s2.u).norm() <= du.norm() * (1.0 + 1e-12) + 1e-14);
        }
    }
}
