//! Dense operator-splitting QP solver.
//!
//! Solves `min 1/2 x^T H x + g^T x  s.t.  l <= A x <= u` with the ADMM
//! iteration popularized by OSQP, followed by an active-set polishing step
//! that recovers the exact KKT point once the active constraints are known.
//! Problems handled here are small (tens of variables), so everything is
//! dense and the KKT matrix is simply re-factored when the step size changes.

use nalgebra::{Cholesky, DMatrix, DVector};

use super::{ConvexError, Polytope};

/// `min 1/2 x^T H x + g^T x` over a polytope.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub constraint: Polytope,
}

impl QpProblem {
    pub fn new(h: DMatrix<f64>, g: DVector<f64>, constraint: Polytope) -> Result<Self, ConvexError> {
        let n = constraint.dim();
        if h.nrows() != n || h.ncols() != n {
            return Err(ConvexError::DimensionMismatch {
                expected: n,
                found: h.nrows(),
            });
        }
        if g.len() != n {
            return Err(ConvexError::DimensionMismatch {
                expected: n,
                found: g.len(),
            });
        }
        if (&h - h.transpose()).amax() > 1e-9 {
            return Err(ConvexError::NotConvex("Hessian is not symmetric".into()));
        }
        let min_eig = h.clone().symmetric_eigenvalues().min();
        if min_eig < -1e-8 {
            return Err(ConvexError::NotConvex(format!("Hessian has eigenvalue {min_eig}")));
        }
        Ok(Self { h, g, constraint })
    }

    pub fn dimension(&self) -> usize {
        self.g.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let x = DVector::from_column_slice(x);
        0.5 * x.dot(&(&self.h * &x)) + self.g.dot(&x)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AdmmSettings {
    pub rho: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub eps_infeasible: f64,
    pub max_iter: usize,
    pub check_every: usize,
    pub adaptive_rho_every: usize,
    pub polish: bool,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            eps_abs: 1e-8,
            eps_rel: 1e-8,
            eps_infeasible: 1e-7,
            max_iter: 20_000,
            check_every: 5,
            adaptive_rho_every: 25,
            polish: true,
        }
    }
}

/// Primal/dual pair returned by the solver.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers for `l <= A x <= u` (positive on upper-active rows).
    pub y: Vec<f64>,
    pub iterations: usize,
    pub polished: bool,
    pub primal_residual: f64,
    pub dual_residual: f64,
}

/// Solve a [`QpProblem`]; `warm_start` seeds the primal iterate.
pub fn solve_qp(problem: &QpProblem, warm_start: Option<&[f64]>) -> Result<Vec<f64>, ConvexError> {
    solve_qp_detailed(problem, warm_start, &AdmmSettings::default()).map(|s| s.x)
}

pub fn solve_qp_detailed(
    problem: &QpProblem,
    warm_start: Option<&[f64]>,
    settings: &AdmmSettings,
) -> Result<QpSolution, ConvexError> {
    let a = problem.constraint.a_matrix();
    let u = problem.constraint.b_vector();
    let l = DVector::from_element(u.len(), f64::NEG_INFINITY);
    solve_general(&problem.h, &problem.g, &a, &l, &u, warm_start, settings)
}

/// General two-sided form `l <= A x <= u`; rows with `l == u` are equalities.
pub fn solve_general(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    warm_start: Option<&[f64]>,
    s: &AdmmSettings,
) -> Result<QpSolution, ConvexError> {
    let n = q.len();
    let m = l.len();
    debug_assert_eq!(a.nrows(), m);
    debug_assert_eq!(a.ncols(), n);

    let row_scale = |rho: f64, i: usize| -> f64 {
        if l[i].is_infinite() && u[i].is_infinite() {
            1e-6
        } else if (u[i] - l[i]).abs() < 1e-12 {
            1e3 * rho
        } else {
            rho
        }
    };

    let mut rho = s.rho;
    let mut rho_vec = DVector::from_fn(m, |i, _| row_scale(rho, i));
    let mut kkt = factor(p, a, &rho_vec, s.sigma)?;

    let mut x = match warm_start {
        Some(w) if w.len() == n => DVector::from_column_slice(w),
        _ => DVector::zeros(n),
    };
    let mut z = clamp(&(a * &x), l, u);
    let mut y = DVector::zeros(m);

    let mut iterations = 0;
    let mut converged = false;
    let mut prim_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;

    for k in 1..=s.max_iter {
        iterations = k;
        let rhs = s.sigma * &x - q + a.transpose() * (rho_vec.component_mul(&z) - &y);
        let xt = kkt.solve(&rhs);
        let zt = a * &xt;
        let x_new = s.alpha * &xt + (1.0 - s.alpha) * &x;
        let zr = s.alpha * &zt + (1.0 - s.alpha) * &z;
        let z_new = clamp(&(&zr + y.component_div(&rho_vec)), l, u);
        let y_new = &y + rho_vec.component_mul(&(&zr - &z_new));

        let dx = &x_new - &x;
        let dy = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        if k % s.check_every != 0 && k != s.max_iter {
            continue;
        }

        let ax = a * &x;
        let px = p * &x;
        let aty = a.transpose() * &y;
        prim_res = inf_norm(&(&ax - &z));
        dual_res = inf_norm(&(&px + q + &aty));
        let eps_prim = s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(&z));
        let eps_dual =
            s.eps_abs + s.eps_rel * inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(q));
        if prim_res <= eps_prim && dual_res <= eps_dual {
            converged = true;
            break;
        }

        if primal_infeasible(a, l, u, &dy, s.eps_infeasible) {
            return Err(ConvexError::Infeasible);
        }
        if dual_infeasible(p, q, a, l, u, &dx, s.eps_infeasible) {
            return Err(ConvexError::Unbounded);
        }

        if s.adaptive_rho_every > 0 && k % s.adaptive_rho_every == 0 {
            let prim_scale = inf_norm(&ax).max(inf_norm(&z)).max(1e-10);
            let dual_scale = inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(q)).max(1e-10);
            let ratio = ((prim_res / prim_scale) / (dual_res / dual_scale).max(1e-14)).sqrt();
            let new_rho = (rho * ratio).clamp(1e-6, 1e6);
            if new_rho > 5.0 * rho || new_rho < 0.2 * rho {
                rho = new_rho;
                rho_vec = DVector::from_fn(m, |i, _| row_scale(rho, i));
                kkt = factor(p, a, &rho_vec, s.sigma)?;
            }
        }
    }

    let mut sol = QpSolution {
        x: x.as_slice().to_vec(),
        y: y.as_slice().to_vec(),
        iterations,
        polished: false,
        primal_residual: prim_res,
        dual_residual: dual_res,
    };

    if s.polish {
        if let Some(polished) = polish(p, q, a, l, u, &x, &z, &y) {
            let obj = |v: &DVector<f64>| 0.5 * v.dot(&(p * v)) + q.dot(v);
            let admm_obj = obj(&x);
            let pol_x = DVector::from_column_slice(&polished.x);
            if obj(&pol_x) <= admm_obj + 1e-7 * (1.0 + admm_obj.abs()) || !converged {
                sol = polished;
                sol.iterations = iterations;
                converged = true;
            }
        }
    }

    if !converged {
        return Err(ConvexError::MaxIterations(iterations));
    }
    Ok(sol)
}

fn factor(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    rho: &DVector<f64>,
    sigma: f64,
) -> Result<Cholesky<f64, nalgebra::Dyn>, ConvexError> {
    let n = p.nrows();
    let mut k = p + DMatrix::identity(n, n) * sigma;
    let mut scaled = a.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= rho[i];
    }
    k += a.transpose() * scaled;
    Cholesky::new(k).ok_or(ConvexError::NotConvex("KKT matrix not positive definite".into()))
}

fn clamp(v: &DVector<f64>, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(v.len(), |i, _| v[i].max(l[i]).min(u[i]))
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn primal_infeasible(
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dy: &DVector<f64>,
    eps: f64,
) -> bool {
    let norm = inf_norm(dy);
    if norm < 1e-12 {
        return false;
    }
    if inf_norm(&(a.transpose() * dy)) > eps * norm {
        return false;
    }
    let mut support = 0.0;
    for i in 0..dy.len() {
        if dy[i] > 0.0 {
            if u[i].is_infinite() {
                return false;
            }
            support += u[i] * dy[i];
        } else if dy[i] < 0.0 {
            if l[i].is_infinite() {
                return false;
            }
            support += l[i] * dy[i];
        }
    }
    support < -eps * norm
}

fn dual_infeasible(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    dx: &DVector<f64>,
    eps: f64,
) -> bool {
    let norm = inf_norm(dx);
    if norm < 1e-12 {
        return false;
    }
    if inf_norm(&(p * dx)) > eps * norm || q.dot(dx) > -eps * norm {
        return false;
    }
    let adx = a * dx;
    (0..adx.len()).all(|i| {
        let ok_u = u[i].is_infinite() || adx[i] <= eps * norm;
        let ok_l = l[i].is_infinite() || adx[i] >= -eps * norm;
        ok_u && ok_l
    })
}

/// Solve the equality-constrained KKT system on the guessed active set and
/// keep the result only if it is primal feasible and dual consistent.
#[allow(clippy::too_many_arguments)]
fn polish(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    _x: &DVector<f64>,
    z: &DVector<f64>,
    y: &DVector<f64>,
) -> Option<QpSolution> {
    let n = q.len();
    let m = l.len();
    let mut active: Vec<(usize, f64)> = Vec::new();
    for i in 0..m {
        if (u[i] - l[i]).abs() < 1e-12 {
            active.push((i, u[i]));
        } else if z[i] - l[i] < -y[i] {
            active.push((i, l[i]));
        } else if u[i] - z[i] < y[i] {
            active.push((i, u[i]));
        }
    }
    let na = active.len();
    let delta = 1e-9;
    let dim = n + na;
    let mut kkt = DMatrix::zeros(dim, dim);
    let mut kkt_exact = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(p);
    kkt_exact.view_mut((0, 0), (n, n)).copy_from(p);
    for i in 0..n {
        kkt[(i, i)] += delta;
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -q[i];
    }
    for (r, &(row, bound)) in active.iter().enumerate() {
        for c in 0..n {
            let v = a[(row, c)];
            kkt[(n + r, c)] = v;
            kkt[(c, n + r)] = v;
            kkt_exact[(n + r, c)] = v;
            kkt_exact[(c, n + r)] = v;
        }
        kkt[(n + r, n + r)] = -delta;
        rhs[n + r] = bound;
    }
    let lu = kkt.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..5 {
        let resid = &rhs - &kkt_exact * &sol;
        let corr = lu.solve(&resid)?;
        sol += corr;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let x = sol.rows(0, n).into_owned();
    let mut y_full = DVector::zeros(m);
    for (r, &(row, _)) in active.iter().enumerate() {
        y_full[row] = sol[n + r];
    }

    let ax = a * &x;
    let scale = 1.0 + inf_norm(&ax);
    let feas_tol = 1e-9 * scale;
    for i in 0..m {
        if ax[i] > u[i] + feas_tol || ax[i] < l[i] - feas_tol {
            return None;
        }
    }
    for &(row, bound) in &active {
        if (u[row] - l[row]).abs() < 1e-12 {
            continue;
        }
        let yi = y_full[row];
        if bound == u[row] && yi < -1e-7 {
            return None;
        }
        if bound == l[row] && yi > 1e-7 {
            return None;
        }
    }
    let dual = inf_norm(&(p * &x + q + a.transpose() * &y_full));
    if dual > 1e-7 * (1.0 + inf_norm(q)) {
        return None;
    }
    Some(QpSolution {
        x: x.as_slice().to_vec(),
        y: y_full.as_slice().to_vec(),
        iterations: 0,
        polished: true,
        primal_residual: 0.0,
        dual_residual: dual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box_qp(g: [f64; 2]) -> QpProblem {
        QpProblem::new(
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_column_slice(&g),
            Polytope::axis_box(&[-1.0, -1.0], &[1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn interior_minimum() {
        let x = solve_qp(&unit_box_qp([0.0, 0.0]), None).unwrap();
        assert!(x[0].abs() < 1e-9 && x[1].abs() < 1e-9);
    }

    #[test]
    fn clipped_minimum() {
        let x = solve_qp(&unit_box_qp([-4.0, 0.0]), None).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9, "{x:?}");
        assert!(x[1].abs() < 1e-9);
    }

    #[test]
    fn warm_start_accepted() {
        let x = solve_qp(&unit_box_qp([-4.0, 0.0]), Some(&[1.0, 0.0])).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_detected() {
        // x <= -1 and -x <= -1 (x >= 1)
        let p = Polytope::new(1, vec![1.0, -1.0], vec![-1.0, -1.0]).unwrap();
        let qp = QpProblem::new(DMatrix::identity(1, 1), DVector::zeros(1), p).unwrap();
        assert!(matches!(solve_qp(&qp, None), Err(ConvexError::Infeasible)));
    }

    #[test]
    fn rejects_indefinite_hessian() {
        let h = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let p = Polytope::axis_box(&[-1.0, -1.0], &[1.0, 1.0]);
        assert!(QpProblem::new(h, DVector::zeros(2), p).is_err());
    }

    #[test]
    fn linear_program_unbounded() {
        let p = Polytope::new(2, vec![0.0, 1.0], vec![1.0]).unwrap();
        let qp = QpProblem::new(DMatrix::zeros(2, 2), DVector::from_column_slice(&[-1.0, 0.0]), p)
            .unwrap();
        assert!(matches!(solve_qp(&qp, None), Err(ConvexError::Unbounded)));
    }
}
