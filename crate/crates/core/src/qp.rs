//! Dense convex quadratic programming.
//!
//! Solves `min ½ xᵀHx + gᵀx` subject to `A_eq x = b_eq`, `A_in x ≤ b_in`
//! and box bounds, by operator splitting (ADMM) with an exact active-set
//! polish step. Every solution ships a KKT certificate recomputed from the
//! raw problem data, so callers can re-verify optimality independently of
//! the solver internals. The solver is deterministic: fixed inputs give a
//! bit-identical iterate sequence.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("problem is primal infeasible (dual divergence certificate)")]
    Infeasible,
    #[error("no convergence within {0} iterations")]
    MaxIterations(usize),
    #[error("malformed problem: {0}")]
    BadProblem(String),
}

/// Canonical QP data. `hessian` is symmetrised on construction.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, gradient: DVector<f64>) -> Self {
        let n = gradient.len();
        assert_eq!(hessian.nrows(), n);
        assert_eq!(hessian.ncols(), n);
        let sym = (&hessian + hessian.transpose()) * 0.5;
        Self {
            hessian: sym,
            gradient,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: DMatrix::zeros(0, n),
            b_in: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn with_equalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.ncols(), self.gradient.len());
        assert_eq!(a.nrows(), b.len());
        self.a_eq = a;
        self.b_eq = b;
        self
    }

    pub fn with_inequalities(mut self, a: DMatrix<f64>, b: DVector<f64>) -> Self {
        assert_eq!(a.ncols(), self.gradient.len());
        assert_eq!(a.nrows(), b.len());
        self.a_in = a;
        self.b_in = b;
        self
    }

    pub fn with_bounds(mut self, lower: DVector<f64>, upper: DVector<f64>) -> Self {
        assert_eq!(lower.len(), self.gradient.len());
        assert_eq!(upper.len(), self.gradient.len());
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    /// Stack all constraints as `l ≤ Ax ≤ u`.
    fn stacked(&self) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
        let n = self.num_vars();
        let me = self.a_eq.nrows();
        let mi = self.a_in.nrows();
        let has_bounds =
            (0..n).any(|i| self.lower[i].is_finite() || self.upper[i].is_finite());
        let mb = if has_bounds { n } else { 0 };
        let m = me + mi + mb;
        let mut a = DMatrix::zeros(m, n);
        let mut l = DVector::from_element(m, f64::NEG_INFINITY);
        let mut u = DVector::from_element(m, f64::INFINITY);
        a.view_mut((0, 0), (me, n)).copy_from(&self.a_eq);
        l.rows_mut(0, me).copy_from(&self.b_eq);
        u.rows_mut(0, me).copy_from(&self.b_eq);
        a.view_mut((me, 0), (mi, n)).copy_from(&self.a_in);
        u.rows_mut(me, mi).copy_from(&self.b_in);
        if mb > 0 {
            for i in 0..n {
                a[(me + mi + i, i)] = 1.0;
                l[me + mi + i] = self.lower[i];
                u[me + mi + i] = self.upper[i];
            }
        }
        (a, l, u)
    }
}

/// Worst-case KKT residuals recomputed from the raw problem data.
#[derive(Debug, Clone, Copy, Default)]
pub struct KktReport {
    pub stationarity: f64,
    pub equality_residual: f64,
    pub inequality_violation: f64,
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.equality_residual)
            .max(self.inequality_violation)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers for the stacked rows `[A_eq; A_in; bounds]`; positive
    /// values push on the upper bound, negative on the lower.
    pub duals: DVector<f64>,
    pub kkt: KktReport,
    pub iterations: usize,
    pub polished: bool,
}

/// Check KKT conditions for a candidate `(x, duals)` pair against raw data.
///
/// Independent of solver internals; used by tests and by the solver itself
/// before accepting a polished iterate.
pub fn kkt_report(p: &QpProblem, x: &DVector<f64>, duals: &DVector<f64>) -> KktReport {
    let (a, l, u) = p.stacked();
    let ax = &a * x;
    let stat = (&p.hessian * x + &p.gradient + a.transpose() * duals).amax();
    let me = p.a_eq.nrows();
    let mut eq_res: f64 = 0.0;
    for i in 0..me {
        eq_res = eq_res.max((ax[i] - p.b_eq[i]).abs());
    }
    let mut viol: f64 = 0.0;
    let mut comp: f64 = 0.0;
    for i in me..a.nrows() {
        if l[i].is_finite() {
            viol = viol.max(l[i] - ax[i]);
        }
        if u[i].is_finite() {
            viol = viol.max(ax[i] - u[i]);
        }
        let y = duals[i];
        if y > 0.0 {
            // Pushing on the upper bound: it must be finite and tight.
            comp = comp.max(if u[i].is_finite() { y * (u[i] - ax[i]).abs() } else { y });
        } else if y < 0.0 {
            comp = comp.max(if l[i].is_finite() { -y * (ax[i] - l[i]).abs() } else { -y });
        }
    }
    KktReport {
        stationarity: stat,
        equality_residual: eq_res,
        inequality_violation: viol.max(0.0),
        complementarity: comp,
    }
}

pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    solve_qp_from(p, tol, max_iter, None)
}

/// Solve with an optional warm-start point (repeated planning cycles pass
/// the previous solution).
pub fn solve_qp_from(
    p: &QpProblem,
    tol: f64,
    max_iter: usize,
    x0: Option<&DVector<f64>>,
) -> Result<QpSolution, QpError> {
    let n = p.num_vars();
    for i in 0..n {
        if p.lower[i] > p.upper[i] {
            return Err(QpError::BadProblem(format!(
                "lower bound {} above upper bound {} at variable {i}",
                p.lower[i], p.upper[i]
            )));
        }
    }
    let (a, l, u) = p.stacked();
    let m = a.nrows();

    if m == 0 {
        // Unconstrained: one positive-definite solve.
        let reg = DMatrix::identity(n, n) * 1e-12;
        let x = (p.hessian.clone() + reg)
            .cholesky()
            .map(|c| c.solve(&(-&p.gradient)))
            .or_else(|| p.hessian.clone().lu().solve(&(-&p.gradient)))
            .ok_or_else(|| QpError::BadProblem("singular unconstrained Hessian".into()))?;
        let duals = DVector::zeros(0);
        let kkt = kkt_report(p, &x, &duals);
        return Ok(QpSolution { x, duals, kkt, iterations: 1, polished: true });
    }

    // Row weights: equalities get a stiffer penalty, the usual splitting trick.
    let base_rho = 1.0;
    let mut rho = DVector::from_element(m, base_rho);
    for i in 0..m {
        if l[i].is_finite() && u[i].is_finite() && (u[i] - l[i]).abs() < 1e-12 {
            rho[i] = base_rho * 1e3;
        }
    }
    let sigma = 1e-6;

    // K = H + sigma I + Aᵀ diag(rho) A, factored once.
    let mut k = p.hessian.clone();
    for i in 0..n {
        k[(i, i)] += sigma;
    }
    let mut ra = a.clone();
    for i in 0..m {
        let w = rho[i];
        for j in 0..n {
            ra[(i, j)] *= w;
        }
    }
    k += a.transpose() * &ra;
    let chol = k
        .clone()
        .cholesky()
        .ok_or_else(|| QpError::BadProblem("splitting system not positive definite".into()))?;

    let mut x = x0.cloned().unwrap_or_else(|| DVector::zeros(n));
    let mut z = (&a * &x).zip_map(&l, |v, lo| v.max(lo)).zip_map(&u, |v, hi| v.min(hi));
    let mut y = DVector::zeros(m);

    let mut best: Option<QpSolution> = None;
    for iter in 1..=max_iter {
        let rhs = &x * sigma - &p.gradient + a.transpose() * (rho.component_mul(&z) - &y);
        let x_new = chol.solve(&rhs);
        let ax = &a * &x_new;
        let mut z_new = DVector::zeros(m);
        let mut y_new = DVector::zeros(m);
        for i in 0..m {
            let v = ax[i] + y[i] / rho[i];
            let zi = v.max(l[i]).min(u[i]);
            z_new[i] = zi;
            y_new[i] = y[i] + rho[i] * (ax[i] - zi);
        }
        let delta_y = &y_new - &y;
        x = x_new;
        z = z_new;
        y = y_new;

        if iter % 25 == 0 || iter == max_iter {
            let prim = (0..m).map(|i| (ax[i] - z[i]).abs()).fold(0.0_f64, f64::max);
            let dual = (&p.hessian * &x + &p.gradient + a.transpose() * &y).amax();
            let loose = prim < 1e-3 && dual < 1e-2 * (1.0 + p.gradient.amax());
            if loose || iter == max_iter {
                if let Some(sol) = polish(p, &a, &l, &u, &x, &y, tol) {
                    return Ok(QpSolution { iterations: iter, ..sol });
                }
            }
            if prim <= tol && dual <= tol {
                let kkt = kkt_report(p, &x, &y);
                let sol = QpSolution {
                    x: x.clone(),
                    duals: y.clone(),
                    kkt,
                    iterations: iter,
                    polished: false,
                };
                if kkt.max_residual() <= tol {
                    return Ok(sol);
                }
                best = Some(sol);
            }
            if infeasibility_certificate(&a, &l, &u, &delta_y) {
                return Err(QpError::Infeasible);
            }
        }
    }
    if let Some(sol) = best {
        return Ok(sol);
    }
    Err(QpError::MaxIterations(max_iter))
}

/// Primal infeasibility test on a candidate certificate direction `v`:
/// `Aᵀv ≈ 0` while the support function `uᵀv⁺ + lᵀv⁻` is negative.
fn infeasibility_certificate(
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> bool {
    let scale = v.amax();
    if scale < 1e-10 {
        return false;
    }
    let eps = 1e-7 * scale;
    if (a.transpose() * v).amax() > eps {
        return false;
    }
    let mut support = 0.0;
    for i in 0..v.len() {
        let vp = v[i].max(0.0);
        let vm = v[i].min(0.0);
        if vp > eps && !u[i].is_finite() {
            return false;
        }
        if vm < -eps && !l[i].is_finite() {
            return false;
        }
        if u[i].is_finite() {
            support += u[i] * vp;
        }
        if l[i].is_finite() {
            support += l[i] * vm;
        }
    }
    support < -eps
}

/// Detect the active set from the splitting iterate and re-solve the
/// corresponding equality-constrained problem exactly. Accepts the result
/// only if the full KKT certificate meets `tol`.
fn polish(
    p: &QpProblem,
    a: &DMatrix<f64>,
    l: &DVector<f64>,
    u: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
) -> Option<QpSolution> {
    let n = p.num_vars();
    let m = a.nrows();
    let ax = a * x;
    let mut active: Vec<(usize, f64)> = Vec::new(); // (row, bound value)
    for i in 0..m {
        let eq = l[i].is_finite() && u[i].is_finite() && (u[i] - l[i]).abs() < 1e-12;
        let eps_act = 1e-4 * (1.0 + ax[i].abs());
        if eq {
            active.push((i, u[i]));
        } else if u[i].is_finite() && (y[i] > 1e-8 || u[i] - ax[i] < eps_act) {
            active.push((i, u[i]));
        } else if l[i].is_finite() && (y[i] < -1e-8 || ax[i] - l[i] < eps_act) {
            active.push((i, l[i]));
        }
    }
    let ma = active.len();
    // Quasi-definite KKT system with tiny regularisation so dependent
    // active rows stay harmless.
    let dim = n + ma;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
    for i in 0..n {
        kkt[(i, i)] += 1e-12;
    }
    for (row, &(ai, _)) in active.iter().enumerate() {
        for jcol in 0..n {
            kkt[(n + row, jcol)] = a[(ai, jcol)];
            kkt[(jcol, n + row)] = a[(ai, jcol)];
        }
        kkt[(n + row, n + row)] = -1e-12;
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.gradient));
    for (row, &(_, bv)) in active.iter().enumerate() {
        rhs[n + row] = bv;
    }
    let lu = kkt.clone().lu();
    let mut sol = lu.solve(&rhs)?;
    // One step of iterative refinement sharpens the certificate.
    let resid = &rhs - &kkt * &sol;
    if let Some(corr) = lu.solve(&resid) {
        sol += corr;
    }
    let xp = DVector::from_fn(n, |i, _| sol[i]);
    let mut duals = DVector::zeros(m);
    for (row, &(ai, bv)) in active.iter().enumerate() {
        let mult = sol[n + row];
        let eq = l[ai].is_finite() && u[ai].is_finite() && (u[ai] - l[ai]).abs() < 1e-12;
        if eq {
            duals[ai] = mult;
        } else if u[ai].is_finite() && (bv - u[ai]).abs() < 1e-12 {
            // Upper-active multiplier must push upward; otherwise the guess
            // was wrong and the plain iterate continues.
            if mult < -tol {
                return None;
            }
            duals[ai] = mult.max(0.0);
        } else {
            if mult > tol {
                return None;
            }
            duals[ai] = mult.min(0.0);
        }
    }
    let kkt_rep = kkt_report(p, &xp, &duals);
    if kkt_rep.max_residual() <= tol {
        Some(QpSolution { x: xp, duals, kkt: kkt_rep, iterations: 0, polished: true })
    } else {
        None
    }
}
