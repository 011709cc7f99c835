//! Dense sequential quadratic programming for small inequality-constrained problems.
//!
//! Each iteration linearizes the constraints, solves a convex QP with a damped-BFGS
//! Hessian model, and line-searches on the ℓ₁ merit `f + μ·Σ max(0, cⱼ)`. Gradients are
//! central finite differences (one-sided at active bounds). When a QP subproblem cannot
//! be solved the iteration falls back to a projected-gradient step on the merit.
//!
//! Variables are internally divided by [`Problem::scale`] so that every coordinate is of
//! order one.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// `minimize f(x)` subject to `cⱼ(x) ≤ 0` and `lower ≤ x ≤ upper`.
pub trait Problem {
    fn dim(&self) -> usize;
    fn num_constraints(&self) -> usize;
    fn objective(&self, x: &[f64]) -> f64;
    /// Writes every `cⱼ(x)` into `out`; feasible when all are `≤ 0`.
    fn constraints(&self, x: &[f64], out: &mut [f64]);
    /// Per-variable bounds; use infinities for free variables.
    fn bounds(&self) -> Vec<(f64, f64)> {
        vec![(f64::NEG_INFINITY, f64::INFINITY); self.dim()]
    }
    /// Typical magnitude of each variable.
    fn scale(&self) -> Vec<f64> {
        vec![1.0; self.dim()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Step-length and stationarity tolerance, in scaled variables.
    pub tolerance: f64,
    /// Largest accepted constraint violation.
    pub feasibility_tol: f64,
    /// Finite-difference step relative to the variable scale.
    pub fd_step: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self { max_iters: 200, tolerance: 1e-8, feasibility_tol: 1e-9, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("initial point violates constraints by {max_violation:.3e} and restoration failed")]
    Infeasible { max_violation: f64 },
    #[error("problem returned a non-finite value")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("QP constraints are inconsistent")]
    Infeasible,
    #[error("QP Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("QP active-set iteration did not terminate")]
    Cycling,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterRecord {
    pub iteration: usize,
    pub objective: f64,
    pub max_violation: f64,
    /// Merit of the iterate entering this iteration, at this iteration's penalty weight.
    pub merit_start: f64,
    /// Merit after the step, same penalty weight; never above `merit_start`.
    pub merit: f64,
    pub step: f64,
    /// True when the QP subproblem failed and a projected-gradient step was taken.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIters,
    /// No further merit decrease was possible.
    Stalled,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub objective: f64,
    pub max_violation: f64,
    /// ∞-norm of the Lagrangian gradient (scaled variables) at the last QP solve.
    pub stationarity: f64,
    pub multipliers: Vec<f64>,
    pub iterations: usize,
    pub status: Status,
    pub trace: Vec<IterRecord>,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Solves `min ½pᵀGp + aᵀp` subject to `nᵢᵀp ≥ bᵢ` with the Goldfarb–Idnani dual
/// active-set method. Returns the minimizer and one multiplier per constraint.
pub fn solve_qp(g: &DMatrix<f64>, a: &DVector<f64>, normals: &[DVector<f64>], rhs: &[f64]) -> Result<(DVector<f64>, Vec<f64>), QpError> {
    let n = a.len();
    let m = normals.len();
    let ginv = g.clone().cholesky().ok_or(QpError::NotPositiveDefinite)?.inverse();
    let mut x = -(&ginv * a);
    let mut active: Vec<usize> = Vec::new();
    let mut u: Vec<f64> = Vec::new();
    let mut budget = 50 * (m + n) + 100;
    let slack = |x: &DVector<f64>, i: usize| normals[i].dot(x) - rhs[i];
    let viol_tol = |x: &DVector<f64>, i: usize| 1e-12 * (1.0 + rhs[i].abs() + normals[i].norm() * x.norm());

    loop {
        // most violated inactive constraint, normalized by its gradient length
        let mut pick = None;
        let mut worst = 0.0;
        for i in 0..m {
            if active.contains(&i) {
                continue;
            }
            let s = slack(&x, i);
            if s < -viol_tol(&x, i) {
                let scaled = s / normals[i].norm().max(1e-300);
                if scaled < worst {
                    worst = scaled;
                    pick = Some(i);
                }
            }
        }
        let Some(p) = pick else {
            let mut mult = vec![0.0; m];
            for (k, &i) in active.iter().enumerate() {
                mult[i] = u[k];
            }
            return Ok((x, mult));
        };
        let np = &normals[p];
        let mut u_plus = u.clone();
        u_plus.push(0.0);
        loop {
            if budget == 0 {
                return Err(QpError::Cycling);
            }
            budget -= 1;
            let q = active.len();
            let (z, r) = if q == 0 {
                (&ginv * np, DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_columns(&active.iter().map(|&i| normals[i].clone()).collect::<Vec<_>>());
                let gn = &ginv * &nmat;
                let mmat = nmat.transpose() * &gn;
                let minv = match mmat.clone().cholesky() {
                    Some(c) => c.inverse(),
                    None => mmat.try_inverse().ok_or(QpError::Cycling)?,
                };
                let nstar = &minv * gn.transpose();
                let z = &ginv * np - &gn * (&nstar * np);
                (z, nstar * np)
            };
            let mut t1 = f64::INFINITY;
            let mut drop = None;
            for j in 0..q {
                if r[j] > 1e-14 {
                    let t = u_plus[j] / r[j];
                    if t < t1 {
                        t1 = t;
                        drop = Some(j);
                    }
                }
            }
            let zn = z.dot(np);
            let t2 = if z.norm() > 1e-14 * (1.0 + np.norm()) && zn > 1e-300 { -slack(&x, p) / zn } else { f64::INFINITY };
            if t1.is_infinite() && t2.is_infinite() {
                return Err(QpError::Infeasible);
            }
            if t2.is_infinite() {
                for j in 0..q {
                    u_plus[j] -= t1 * r[j];
                }
                u_plus[q] += t1;
                let k = drop.expect("finite t1 has a blocking constraint");
                active.remove(k);
                u_plus.remove(k);
                continue;
            }
            let t = t1.min(t2);
            x += &z * t;
            for j in 0..q {
                u_plus[j] -= t * r[j];
            }
            u_plus[q] += t;
            if t2 <= t1 {
                active.push(p);
                u = u_plus;
                break;
            }
            let k = drop.expect("t1 < t2 implies a blocking constraint");
            active.remove(k);
            u_plus.remove(k);
        }
    }
}

struct Scaled<'a, P: Problem + ?Sized> {
    problem: &'a P,
    scale: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    fd_step: f64,
    buf: std::cell::RefCell<Vec<f64>>,
}

impl<'a, P: Problem + ?Sized> Scaled<'a, P> {
    fn unscale(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.scale).map(|(z, s)| z * s).collect()
    }

    fn f(&self, z: &[f64]) -> f64 {
        self.problem.objective(&self.unscale(z))
    }

    fn c(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.problem.num_constraints()];
        self.problem.constraints(&self.unscale(z), &mut out);
        out
    }

    fn clip(&self, z: &mut [f64]) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Objective gradient and constraint Jacobian (rows = constraints).
    fn derivatives(&self, z: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let n = z.len();
        let m = self.problem.num_constraints();
        let mut grad = DVector::zeros(n);
        let mut jac = DMatrix::zeros(m, n);
        let mut zz = self.buf.borrow_mut();
        zz.clear();
        zz.extend_from_slice(z);
        for i in 0..n {
            let h = self.fd_step * z[i].abs().max(1.0);
            let fwd = z[i] + h <= self.upper[i];
            let back = z[i] - h >= self.lower[i];
            let (hp, hm) = match (fwd, back) {
                (true, true) | (false, false) => (h, h),
                (true, false) => (h, 0.0),
                (false, true) => (0.0, h),
            };
            zz[i] = z[i] + hp;
            let fp = self.f(&zz);
            let cp = self.c(&zz);
            zz[i] = z[i] - hm;
            let fm = self.f(&zz);
            let cm = self.c(&zz);
            zz[i] = z[i];
            let denom = hp + hm;
            grad[i] = (fp - fm) / denom;
            for j in 0..m {
                jac[(j, i)] = (cp[j] - cm[j]) / denom;
            }
        }
        (grad, jac)
    }

    /// Linearized constraints and bounds in `nᵀp ≥ b` form.
    fn qp_constraints(&self, z: &[f64], c: &[f64], jac: &DMatrix<f64>) -> (Vec<DVector<f64>>, Vec<f64>) {
        let n = z.len();
        let mut normals = Vec::new();
        let mut rhs = Vec::new();
        for j in 0..c.len() {
            normals.push(-jac.row(j).transpose());
            rhs.push(c[j]);
        }
        for i in 0..n {
            if self.lower[i].is_finite() {
                normals.push(DVector::from_fn(n, |k, _| if k == i { 1.0 } else { 0.0 }));
                rhs.push(self.lower[i] - z[i]);
            }
            if self.upper[i].is_finite() {
                normals.push(DVector::from_fn(n, |k, _| if k == i { -1.0 } else { 0.0 }));
                rhs.push(z[i] - self.upper[i]);
            }
        }
        (normals, rhs)
    }
}

fn max_violation(c: &[f64]) -> f64 {
    c.iter().fold(0.0, |m, v| m.max(*v))
}

fn penalty(c: &[f64]) -> f64 {
    c.iter().map(|v| v.max(0.0)).sum()
}

/// Runs SQP from `x0`.
pub fn minimize<P: Problem + ?Sized>(problem: &P, x0: &[f64], opts: &SolverOptions) -> Result<Outcome, SolverError> {
    let n = problem.dim();
    if x0.len() != n {
        return Err(SolverError::Dimension { expected: n, got: x0.len() });
    }
    let scale: Vec<f64> = problem.scale().into_iter().map(|s| if s > 0.0 && s.is_finite() { s } else { 1.0 }).collect();
    let bounds = problem.bounds();
    let sp = Scaled {
        problem,
        lower: bounds.iter().zip(&scale).map(|(b, s)| b.0 / s).collect(),
        upper: bounds.iter().zip(&scale).map(|(b, s)| b.1 / s).collect(),
        scale,
        fd_step: opts.fd_step,
        buf: std::cell::RefCell::new(Vec::with_capacity(n)),
    };
    let mut z: Vec<f64> = x0.iter().zip(&sp.scale).map(|(x, s)| x / s).collect();
    sp.clip(&mut z);

    let mut c = sp.c(&z);
    if max_violation(&c) > opts.feasibility_tol {
        z = restore(&sp, z, opts)?;
        c = sp.c(&z);
    }
    let mut f = sp.f(&z);
    if !f.is_finite() || c.iter().any(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite);
    }

    let mut hess = DMatrix::<f64>::identity(n, n);
    let mut mu = 1.0f64;
    let mut trace = Vec::new();
    let (mut grad, mut jac) = sp.derivatives(&z);
    let mut lambda = vec![0.0; c.len()];
    let mut stationarity = f64::INFINITY;
    let mut status = Status::MaxIters;
    let mut first_update = true;

    for iter in 0..opts.max_iters {
        let (normals, rhs) = sp.qp_constraints(&z, &c, &jac);
        let qp = solve_qp(&hess, &grad, &normals, &rhs);
        let (step, fallback) = match qp {
            Ok((p, mult)) => {
                lambda = mult[..c.len()].to_vec();
                // ∇f + Σλ∇c − (bound multipliers); the QP's normals carry the signs
                let mut lag = grad.clone();
                for (k, nrm) in normals.iter().enumerate() {
                    lag -= nrm * mult[k];
                }
                stationarity = lag.amax();
                let lmax = mult.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                mu = mu.max(1.5 * lmax + 1e-8);
                (p, false)
            }
            Err(_) => {
                // projected gradient on the merit
                let mut d = -grad.clone();
                for j in 0..c.len() {
                    if c[j] > 0.0 {
                        d -= jac.row(j).transpose() * mu;
                    }
                }
                (d, true)
            }
        };

        let step_norm = step.amax();
        let viol = max_violation(&c);
        if !fallback && (step_norm <= opts.tolerance || stationarity <= opts.tolerance) && viol <= opts.feasibility_tol {
            status = Status::Converged;
            let merit_start = f + mu * penalty(&c);
            // take the last tiny step when it keeps feasibility and does not hurt
            let mut zt: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + step[i]).collect();
            sp.clip(&mut zt);
            let (ft, ct) = (sp.f(&zt), sp.c(&zt));
            if ft.is_finite() && ft + mu * penalty(&ct) <= merit_start && max_violation(&ct) <= opts.feasibility_tol {
                z = zt;
                f = ft;
                c = ct;
            }
            let merit = f + mu * penalty(&c);
            trace.push(IterRecord { iteration: iter, objective: f, max_violation: max_violation(&c), merit_start, merit, step: step_norm, fallback });
            break;
        }

        let merit0 = f + mu * penalty(&c);
        let slope = if fallback { -step.norm_squared() } else { grad.dot(&step) - mu * penalty(&c) };
        let mut t = 1.0;
        let mut accepted: Option<(Vec<f64>, f64, Vec<f64>)> = None;
        let try_point = |zt: &mut Vec<f64>| {
            sp.clip(zt);
            let ft = sp.f(zt);
            let ct = sp.c(zt);
            (ft, ct)
        };
        while t > 1e-12 {
            let mut zt: Vec<f64> = z.iter().enumerate().map(|(i, v)| v + t * step[i]).collect();
            let (ft, ct) = try_point(&mut zt);
            let mt = ft + mu * penalty(&ct);
            if ft.is_finite() && mt <= merit0 + 1e-4 * t * slope.min(0.0) && mt < merit0 && zt != z {
                log::trace!("sqp {iter}: t={t} |p|={step_norm:.3e} viol={viol:.3e} mu={mu:.3e} stat={stationarity:.3e}");
                accepted = Some((zt, ft, ct));
                break;
            }
            if !fallback {
                // second-order correction toward the curved constraint boundary
                if let Some((zs, fs, cs)) = second_order_correction(&sp, &zt, &ct, &jac) {
                    let ms = fs + mu * penalty(&cs);
                    if ms <= merit0 + 1e-4 * t * slope.min(0.0) && ms < merit0 {
                        log::trace!("sqp {iter}: corrected t={t} |p|={step_norm:.3e} viol={viol:.3e} stat={stationarity:.3e}");
                        accepted = Some((zs, fs, cs));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let Some((z_new, f_new, c_new)) = accepted else {
            status = if viol <= opts.feasibility_tol && stationarity <= opts.tolerance.sqrt() { Status::Converged } else { Status::Stalled };
            trace.push(IterRecord { iteration: iter, objective: f, max_violation: viol, merit_start: merit0, merit: merit0, step: 0.0, fallback });
            break;
        };

        let (grad_new, jac_new) = sp.derivatives(&z_new);
        let s = DVector::from_iterator(n, z_new.iter().zip(&z).map(|(a, b)| a - b));
        let lag_grad = |g: &DVector<f64>, j: &DMatrix<f64>| {
            let mut out = g.clone();
            for (k, l) in lambda.iter().enumerate() {
                if *l != 0.0 {
                    out += j.row(k).transpose() * *l;
                }
            }
            out
        };
        let y = lag_grad(&grad_new, &jac_new) - lag_grad(&grad, &jac);
        bfgs_update(&mut hess, &s, &y, &mut first_update);

        let step_taken = s.amax();
        z = z_new;
        f = f_new;
        c = c_new;
        grad = grad_new;
        jac = jac_new;
        trace.push(IterRecord {
            iteration: iter,
            objective: f,
            max_violation: max_violation(&c),
            merit_start: merit0,
            merit: f + mu * penalty(&c),
            step: step_taken,
            fallback,
        });
        if !f.is_finite() {
            return Err(SolverError::NonFinite);
        }
    }

    let iterations = trace.len();
    Ok(Outcome {
        x: sp.unscale(&z),
        objective: f,
        max_violation: max_violation(&c),
        stationarity,
        multipliers: lambda,
        iterations,
        status,
        trace,
    })
}

/// Minimum-norm correction `q` with `c_A(z + p) + J_A q = 0` over the violated constraints.
fn second_order_correction<P: Problem + ?Sized>(
    sp: &Scaled<'_, P>,
    zt: &[f64],
    ct: &[f64],
    jac: &DMatrix<f64>,
) -> Option<(Vec<f64>, f64, Vec<f64>)> {
    let idx: Vec<usize> = (0..ct.len()).filter(|&j| ct[j] > 0.0).collect();
    if idx.is_empty() {
        return None;
    }
    let ja = DMatrix::from_rows(&idx.iter().map(|&j| jac.row(j).clone_owned()).collect::<Vec<_>>());
    let ca = DVector::from_iterator(idx.len(), idx.iter().map(|&j| ct[j]));
    let gram = &ja * ja.transpose();
    let w = gram.lu().solve(&ca)?;
    let q = ja.transpose() * w;
    let mut zs: Vec<f64> = zt.iter().enumerate().map(|(i, v)| v - q[i]).collect();
    sp.clip(&mut zs);
    let fs = sp.f(&zs);
    let cs = sp.c(&zs);
    fs.is_finite().then_some((zs, fs, cs))
}

/// Powell-damped BFGS update; the first update rescales the identity (Shanno–Phua).
fn bfgs_update(b: &mut DMatrix<f64>, s: &DVector<f64>, y: &DVector<f64>, first: &mut bool) {
    let ss = s.norm_squared();
    if ss < 1e-30 {
        return;
    }
    if *first {
        let sy = s.dot(y);
        let yy = y.norm_squared();
        if sy > 1e-16 && yy > 0.0 {
            *b *= (yy / sy).clamp(1e-6, 1e6);
        }
        *first = false;
    }
    let bs = &*b * s;
    let sbs = s.dot(&bs);
    if sbs <= 1e-30 {
        return;
    }
    let sy = s.dot(y);
    let y = if sy < 0.2 * sbs {
        let theta = 0.8 * sbs / (sbs - sy);
        y * theta + &bs * (1.0 - theta)
    } else {
        y.clone()
    };
    let sy = s.dot(&y);
    if sy <= 1e-30 {
        return;
    }
    *b += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
    // keep it symmetric against round-off
    let sym = (b.clone() + b.transpose()) * 0.5;
    *b = sym;
}

/// Gauss–Newton style projection onto the linearized feasible set until every
/// constraint holds.
fn restore<P: Problem + ?Sized>(sp: &Scaled<'_, P>, mut z: Vec<f64>, opts: &SolverOptions) -> Result<Vec<f64>, SolverError> {
    let n = z.len();
    let eye = DMatrix::<f64>::identity(n, n);
    let zero = DVector::zeros(n);
    let mut c = sp.c(&z);
    for _ in 0..100 {
        if max_violation(&c) <= opts.feasibility_tol {
            return Ok(z);
        }
        let (_, jac) = sp.derivatives(&z);
        let (normals, rhs) = sp.qp_constraints(&z, &c, &jac);
        let Ok((p, _)) = solve_qp(&eye, &zero, &normals, &rhs) else {
            break;
        };
        for i in 0..n {
            z[i] += p[i];
        }
        sp.clip(&mut z);
        c = sp.c(&z);
    }
    if max_violation(&c) <= opts.feasibility_tol {
        Ok(z)
    } else {
        Err(SolverError::Infeasible { max_violation: max_violation(&c) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic;
    impl Problem for Quadratic {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn objective(&self, x: &[f64]) -> f64 {
            // minimum at (1, -2)
            3.0 * (x[0] - 1.0).powi(2) + (x[0] - 1.0) * (x[1] + 2.0) + 2.0 * (x[1] + 2.0).powi(2) + 5.0
        }
        fn constraints(&self, _: &[f64], _: &mut [f64]) {}
    }

    #[test]
    fn unconstrained_quadratic() {
        let out = minimize(&Quadratic, &[10.0, 10.0], &SolverOptions::default()).unwrap();
        assert!(out.converged());
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] + 2.0).abs() < 1e-6, "{:?}", out.x);
        assert!((out.objective - 5.0).abs() < 1e-10);
    }

    struct ActiveBound;
    impl Problem for ActiveBound {
        fn dim(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0]
        }
        fn constraints(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 1.0 - x[0];
        }
    }

    #[test]
    fn linear_objective_with_lower_limit() {
        let out = minimize(&ActiveBound, &[5.0], &SolverOptions::default()).unwrap();
        assert!(out.converged());
        assert!((out.x[0] - 1.0).abs() < 1e-9, "{:?}", out.x);
        assert!((out.multipliers[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn infeasible_start_is_restored() {
        let out = minimize(&ActiveBound, &[-3.0], &SolverOptions::default()).unwrap();
        assert!((out.x[0] - 1.0).abs() < 1e-9);
    }

    struct Impossible;
    impl Problem for Impossible {
        fn dim(&self) -> usize {
            1
        }
        fn num_constraints(&self) -> usize {
            2
        }
        fn objective(&self, x: &[f64]) -> f64 {
            x[0] * x[0]
        }
        fn constraints(&self, x: &[f64], out: &mut [f64]) {
            out[0] = 1.0 - x[0];
            out[1] = x[0] + 1.0;
        }
    }

    #[test]
    fn inconsistent_constraints_are_infeasible() {
        assert!(matches!(minimize(&Impossible, &[0.0], &SolverOptions::default()), Err(SolverError::Infeasible { .. })));
    }

    pub(crate) struct DiskRosenbrock;
    impl Problem for DiskRosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn constraints(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0] + x[1] * x[1] - 1.5 * 1.5;
        }
    }

    #[test]
    fn rosenbrock_in_disk_matches_grid_search() {
        // the unconstrained optimum (1, 1) has norm √2 < 1.5, so the disk is inactive;
        // grid oracle over the disk confirms
        let out = minimize(&DiskRosenbrock, &[-1.0, 0.5], &SolverOptions::default()).unwrap();
        let (mut best, mut bx) = (f64::INFINITY, (0.0, 0.0));
        let n = 1500;
        for i in 0..=n {
            for j in 0..=n {
                let x = -1.5 + 3.0 * i as f64 / n as f64;
                let y = -1.5 + 3.0 * j as f64 / n as f64;
                if x * x + y * y > 2.25 {
                    continue;
                }
                let v = DiskRosenbrock.objective(&[x, y]);
                if v < best {
                    best = v;
                    bx = (x, y);
                }
            }
        }
        assert!((out.x[0] - bx.0).abs() < 1e-3 && (out.x[1] - bx.1).abs() < 1e-3, "{:?} vs {bx:?}", out.x);
        assert!(out.objective <= best + 1e-6);
    }

    struct ShiftedRosenbrock;
    impl Problem for ShiftedRosenbrock {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            1
        }
        fn objective(&self, x: &[f64]) -> f64 {
            // minimum at (2, 4), outside the disk of radius 1.5
            (2.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn constraints(&self, x: &[f64], out: &mut [f64]) {
            out[0] = x[0] * x[0] + x[1] * x[1] - 1.5 * 1.5;
        }
    }

    #[test]
    fn active_disk_matches_boundary_search() {
        let out = minimize(&ShiftedRosenbrock, &[0.0, 0.0], &SolverOptions::default()).unwrap();
        assert!(out.converged(), "{:?}", out.status);
        // oracle: dense search along the circle (the minimum is on the boundary)
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for k in 0..2_000_000 {
            let th = k as f64 / 2_000_000.0 * std::f64::consts::TAU;
            let (x, y) = (1.5 * th.cos(), 1.5 * th.sin());
            let v = ShiftedRosenbrock.objective(&[x, y]);
            if v < best.0 {
                best = (v, x, y);
            }
        }
        assert!((out.x[0] - best.1).abs() < 1e-3 && (out.x[1] - best.2).abs() < 1e-3, "{:?} vs {best:?}", out.x);
        assert!(out.max_violation <= 1e-9);
    }

    struct Boxed;
    impl Problem for Boxed {
        fn dim(&self) -> usize {
            2
        }
        fn num_constraints(&self) -> usize {
            0
        }
        fn objective(&self, x: &[f64]) -> f64 {
            -(x[0] + 2.0 * x[1]) + 0.1 * (x[0] * x[0] + x[1] * x[1])
        }
        fn constraints(&self, _: &[f64], _: &mut [f64]) {}
        fn bounds(&self) -> Vec<(f64, f64)> {
            vec![(0.0, 1.0), (0.0, 10.0)]
        }
    }

    #[test]
    fn bounds_respected() {
        let out = minimize(&Boxed, &[0.5, 0.5], &SolverOptions::default()).unwrap();
        assert!(out.converged());
        assert!((out.x[0] - 1.0).abs() < 1e-9);
        assert!((out.x[1] - 10.0).abs() < 1e-9);
    }

    #[test]
    fn merit_trace_is_monotone() {
        for x0 in [[0.0, 0.0], [3.0, -2.0], [-1.0, 1.4]] {
            let out = minimize(&ShiftedRosenbrock, &x0, &SolverOptions::default()).unwrap();
            for r in &out.trace {
                assert!(r.merit <= r.merit_start, "{r:?}");
            }
        }
    }

    #[test]
    fn qp_small_known_solution() {
        // min ½(p0² + p1²) − p0 − p1  s.t.  p0 + p1 ≤ 1  →  (0.5, 0.5)
        let g = DMatrix::identity(2, 2);
        let a = DVector::from_vec(vec![-1.0, -1.0]);
        let normals = vec![DVector::from_vec(vec![-1.0, -1.0])];
        let (p, mult) = solve_qp(&g, &a, &normals, &[-1.0]).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
        assert!((mult[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn qp_inconsistent() {
        let g = DMatrix::identity(1, 1);
        let a = DVector::zeros(1);
        let normals = vec![DVector::from_vec(vec![1.0]), DVector::from_vec(vec![-1.0])];
        assert_eq!(solve_qp(&g, &a, &normals, &[1.0, 0.0]).unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn max_iters_reported() {
        let opts = SolverOptions { max_iters: 2, ..Default::default() };
        let out = minimize(&ShiftedRosenbrock, &[0.0, 0.0], &opts).unwrap();
        assert_eq!(out.status, Status::MaxIters);
        assert!(!out.converged());
    }
}
