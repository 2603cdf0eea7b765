//! Dense strictly convex QP solver (dual active-set, Goldfarb–Idnani).
//!
//! Solves `min ½ zᵀHz + gᵀz  s.t.  C z ≤ d` for small dense problems. The
//! dual method starts from the unconstrained minimizer, so no feasible
//! starting point is required and infeasibility is detected directly.

use nalgebra::{Cholesky, DMatrix, DVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpFailure {
    /// `H` is not positive definite.
    NotConvex,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    /// One multiplier per constraint row, zero when inactive.
    pub multipliers: DVector<f64>,
    pub active: Vec<usize>,
    pub iterations: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct QpSettings {
    /// Constraint violation accepted as satisfied.
    pub feas_tol: f64,
    pub max_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-12,
            max_iter: 500,
        }
    }
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    settings: QpSettings,
) -> Result<QpSolution, QpFailure> {
    let n = g.len();
    let m = d.len();
    assert_eq!(h.shape(), (n, n));
    assert_eq!(c.shape(), (m, n));

    let chol = Cholesky::new(h.clone()).ok_or(QpFailure::NotConvex)?;
    let hinv = chol.inverse();
    let mut z = -(&hinv * g);
    let mut active: Vec<usize> = Vec::new();
    let mut lambda: Vec<f64> = Vec::new();
    let scale = |i: usize| 1.0 + d[i].abs() + c.row(i).amax();
    let mut iterations = 0;

    loop {
        // most violated constraint, scaled
        let mut worst = None;
        let mut worst_v = 0.0;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let v = (c.row(i).transpose().dot(&z) - d[i]) / scale(i);
            if v > settings.feas_tol && v > worst_v {
                worst_v = v;
                worst = Some(i);
            }
        }
        let Some(p) = worst else { break };

        let np: DVector<f64> = -c.row(p).transpose();
        let bp = -d[p];
        let mut lam_p = 0.0;
        loop {
            iterations += 1;
            if iterations > settings.max_iter {
                return Err(QpFailure::MaxIterations);
            }
            let hn = &hinv * &np;
            let (zdir, r) = if active.is_empty() {
                (hn, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_columns(&active.iter().map(|&j| -c.row(j).transpose()).collect::<Vec<_>>());
                let hn_act = &hinv * &nmat;
                let gram = nmat.tr_mul(&hn_act);
                let lu = gram.lu();
                let r = lu.solve(&nmat.tr_mul(&hn)).ok_or(QpFailure::NotConvex)?;
                (hn - hn_act * &r, r)
            };

            // dual step length limit
            let mut t1 = f64::INFINITY;
            let mut k = None;
            for (j, rj) in r.iter().enumerate() {
                if *rj > 1e-14 {
                    let t = lambda[j] / rj;
                    if t < t1 {
                        t1 = t;
                        k = Some(j);
                    }
                }
            }
            let curvature = zdir.dot(&np);
            let slack = np.dot(&z) - bp;
            let t2 = if zdir.amax() <= 1e-14 * (1.0 + np.amax()) || curvature <= 0.0 {
                f64::INFINITY
            } else {
                -slack / curvature
            };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpFailure::Infeasible);
            }
            for (lj, rj) in lambda.iter_mut().zip(r.iter()) {
                *lj -= t * rj;
            }
            lam_p += t;
            if t2.is_finite() {
                z += &zdir * t;
            }
            if t2 <= t1 {
                active.push(p);
                lambda.push(lam_p);
                break;
            }
            let k = k.expect("partial step needs a blocking constraint");
            active.remove(k);
            lambda.remove(k);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&j, &l) in active.iter().zip(&lambda) {
        multipliers[j] = l.max(0.0);
    }
    let objective = 0.5 * z.dot(&(h * &z)) + g.dot(&z);
    Ok(QpSolution {
        z,
        multipliers,
        active,
        iterations,
        objective,
    })
}

/// Max-norm KKT residuals `(stationarity, primal, complementarity)` of a
/// candidate solution.
pub fn kkt_residuals(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    c: &DMatrix<f64>,
    d: &DVector<f64>,
    z: &DVector<f64>,
    mu: &DVector<f64>,
) -> (f64, f64, f64) {
    let stat = (h * z + g + c.tr_mul(mu)).amax();
    let viol = c * z - d;
    let primal = viol.iter().fold(0.0f64, |a, v| a.max(*v));
    let comp = viol
        .iter()
        .zip(mu.iter())
        .fold(0.0f64, |a, (v, l)| a.max((v * l).abs()));
    (stat, primal, comp)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn unconstrained_minimizer() {
        let h = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]);
        let g = dvector![-2.0, -4.0];
        let sol = solve_qp(&h, &g, &DMatrix::zeros(0, 2), &DVector::zeros(0), QpSettings::default()).unwrap();
        assert_relative_eq!(sol.z, dvector![1.0, 1.0], epsilon = 1e-14);
    }

    #[test]
    fn single_active_constraint() {
        // min ½|z|² s.t. z1 + z2 ≥ 2  →  z = (1, 1)
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let c = DMatrix::from_row_slice(1, 2, &[-1.0, -1.0]);
        let d = dvector![-2.0];
        let sol = solve_qp(&h, &g, &c, &d, QpSettings::default()).unwrap();
        assert_relative_eq!(sol.z, dvector![1.0, 1.0], epsilon = 1e-14);
        assert_eq!(sol.active, vec![0]);
        assert_relative_eq!(sol.multipliers[0], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn detects_infeasibility() {
        let h = DMatrix::identity(1, 1);
        let c = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let d = dvector![-1.0, -1.0]; // z ≤ -1 and z ≥ 1
        let r = solve_qp(&h, &DVector::zeros(1), &c, &d, QpSettings::default());
        assert_eq!(r.unwrap_err(), QpFailure::Infeasible);
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let r = solve_qp(
            &h,
            &DVector::zeros(2),
            &DMatrix::zeros(0, 2),
            &DVector::zeros(0),
            QpSettings::default(),
        );
        assert_eq!(r.unwrap_err(), QpFailure::NotConvex);
    }

    #[test]
    fn random_problems_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..200 {
            let n = rng.random_range(1..8);
            let m = rng.random_range(0..12);
            let l = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let h = &l * l.transpose() + DMatrix::identity(n, n) * 0.1;
            let g = DVector::from_fn(n, |_, _| rng.random_range(-5.0..5.0));
            let c = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
            // feasible by construction around a random point
            let z0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
            let d = &c * &z0 + DVector::from_fn(m, |_, _| rng.random_range(0.0..0.5));
            let sol = solve_qp(&h, &g, &c, &d, QpSettings::default()).unwrap();
            let (s, p, cs) = kkt_residuals(&h, &g, &c, &d, &sol.z, &sol.multipliers);
            assert!(s <= 1e-9 && p <= 1e-9 && cs <= 1e-9, "{s} {p} {cs}");
            assert!(sol.multipliers.iter().all(|v| *v >= 0.0));
        }
    }

    #[test]
    fn redundant_constraints_are_handled() {
        let h = DMatrix::identity(2, 2);
        let g = DVector::zeros(2);
        let c = DMatrix::from_row_slice(3, 2, &[-1.0, -1.0, -2.0, -2.0, -1.0, -1.0]);
        let d = dvector![-2.0, -4.0, -2.0];
        let sol = solve_qp(&h, &g, &c, &d, QpSettings::default()).unwrap();
        assert_relative_eq!(sol.z, dvector![1.0, 1.0], epsilon = 1e-12);
    }
}
