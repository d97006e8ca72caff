//! Convex QCQP engine: minimize a PSD quadratic subject to PSD quadratic
//! inequality constraints and, for real-valued problems, a coordinate box.
//!
//! Complex problems are lowered to real form through the standard
//! `[[Re, -Im], [Im, Re]]` embedding. The solve runs dual coordinate search:
//! with multipliers fixed, the inner problem is an unconstrained ridge system
//! (Cholesky) or a box QP (projected coordinate descent); each violated
//! constraint's multiplier is then bisected on the monotone map from
//! multiplier to constraint value. A projected-gradient merit pass backs the
//! loop up on the rare instances where coordinate-wise duals cycle, and
//! doubles as the feasibility restoration used to certify infeasibility.

use crate::model::{C64, CMat, CVec, RVec};
use crate::solvers::SolverError;
use nalgebra::{DMatrix, DVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterationCap,
}

/// One constraint `x^H P x + 2 Re{q^H x} + r <= 0` with `P` Hermitian PSD.
#[derive(Clone, Debug)]
pub struct QuadConstraint {
    pub p: CMat,
    pub q: CVec,
    pub r: f64,
}

/// Minimize `x^H P0 x + 2 Re{q0^H x} + r0` over the constraint set.
#[derive(Clone, Debug)]
pub struct QcqpProblem {
    pub p0: CMat,
    pub q0: CVec,
    pub r0: f64,
    pub constraints: Vec<QuadConstraint>,
    /// Coordinate box, real-valued problems only.
    pub lower: Option<RVec>,
    pub upper: Option<RVec>,
    pub real_valued: bool,
}

#[derive(Clone, Debug)]
pub struct QcqpSolution {
    pub x: CVec,
    pub status: SolveStatus,
    /// Inner linear-system and sweep solves consumed.
    pub iterations: usize,
    /// Largest constraint violation at the returned point.
    pub max_violation: f64,
}

impl QcqpSolution {
    /// Real view of the solution; valid for real-valued problems.
    pub fn x_real(&self) -> RVec {
        RVec::from_fn(self.x.len(), |i, _| self.x[i].re)
    }
}

/// Projects a Hermitian matrix onto the PSD cone. Eigenvalues below
/// `-1e-9 * scale` are rejected as genuinely indefinite; small negatives are
/// clipped to zero.
fn psd_clip(p: &CMat, index: Option<usize>) -> Result<CMat, SolverError> {
    let n = p.nrows();
    if n != p.ncols() {
        return Err(SolverError::DimensionMismatch(
            "constraint matrix must be square".into(),
        ));
    }
    let herm = (p + p.adjoint()) * C64::new(0.5, 0.0);
    let eig = herm.clone().symmetric_eigen();
    let scale = eig
        .eigenvalues
        .iter()
        .fold(1.0f64, |acc, v| acc.max(v.abs()));
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig < -1e-9 * scale {
        return Err(SolverError::NotPsd { index, min_eig });
    }
    if min_eig >= 0.0 {
        return Ok(herm);
    }
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut out = CMat::zeros(n, n);
    for (j, lam) in vals.iter().enumerate() {
        if *lam > 0.0 {
            let col = eig.eigenvectors.column(j);
            for a in 0..n {
                for b in 0..n {
                    out[(a, b)] += col[a] * col[b].conj() * C64::new(*lam, 0.0);
                }
            }
        }
    }
    Ok(out)
}

impl QcqpProblem {
    pub fn new_complex(
        p0: CMat,
        q0: CVec,
        r0: f64,
        constraints: Vec<QuadConstraint>,
    ) -> Result<Self, SolverError> {
        Self::build(p0, q0, r0, constraints, None, None, false)
    }

    pub fn new_real(
        p0: CMat,
        q0: CVec,
        r0: f64,
        constraints: Vec<QuadConstraint>,
        lower: Option<RVec>,
        upper: Option<RVec>,
    ) -> Result<Self, SolverError> {
        Self::build(p0, q0, r0, constraints, lower, upper, true)
    }

    fn build(
        p0: CMat,
        q0: CVec,
        r0: f64,
        constraints: Vec<QuadConstraint>,
        lower: Option<RVec>,
        upper: Option<RVec>,
        real_valued: bool,
    ) -> Result<Self, SolverError> {
        let n = p0.nrows();
        if q0.len() != n {
            return Err(SolverError::DimensionMismatch(
                "objective linear term length must match the matrix".into(),
            ));
        }
        if !real_valued && (lower.is_some() || upper.is_some()) {
            return Err(SolverError::BoxOnComplex);
        }
        if let (Some(lb), Some(ub)) = (&lower, &upper) {
            if lb.len() != n || ub.len() != n {
                return Err(SolverError::DimensionMismatch(
                    "box bounds length must match the matrix".into(),
                ));
            }
            for i in 0..n {
                if lb[i] > ub[i] {
                    return Err(SolverError::BadBounds(i));
                }
            }
        }
        let p0 = psd_clip(&p0, None)?;
        let mut cons = Vec::with_capacity(constraints.len());
        for (i, c) in constraints.into_iter().enumerate() {
            if c.p.nrows() != n || c.q.len() != n {
                return Err(SolverError::DimensionMismatch(format!(
                    "constraint {i} dimensions do not match the objective"
                )));
            }
            cons.push(QuadConstraint {
                p: psd_clip(&c.p, Some(i))?,
                q: c.q,
                r: c.r,
            });
        }
        Ok(QcqpProblem {
            p0,
            q0,
            r0,
            constraints: cons,
            lower,
            upper,
            real_valued,
        })
    }

    pub fn dim(&self) -> usize {
        self.p0.nrows()
    }

    pub fn objective(&self, x: &CVec) -> f64 {
        x.dotc(&(&self.p0 * x)).re + 2.0 * x.dotc(&self.q0).re + self.r0
    }

    pub fn constraint_value(&self, i: usize, x: &CVec) -> f64 {
        let c = &self.constraints[i];
        x.dotc(&(&c.p * x)).re + 2.0 * x.dotc(&c.q).re + c.r
    }

    pub fn max_violation(&self, x: &CVec) -> f64 {
        (0..self.constraints.len())
            .map(|i| self.constraint_value(i, x))
            .fold(0.0f64, f64::max)
    }
}

struct RealCon {
    p: DMatrix<f64>,
    q: DVector<f64>,
    r: f64,
}

struct RealForm {
    p0: DMatrix<f64>,
    q0: DVector<f64>,
    cons: Vec<RealCon>,
    lb: Option<DVector<f64>>,
    ub: Option<DVector<f64>>,
}

fn lower_complex_mat(p: &CMat) -> DMatrix<f64> {
    let n = p.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = p[(i, j)];
            out[(i, j)] = v.re;
            out[(i, j + n)] = -v.im;
            out[(i + n, j)] = v.im;
            out[(i + n, j + n)] = v.re;
        }
    }
    out
}

fn lower_complex_vec(q: &CVec) -> DVector<f64> {
    let n = q.len();
    DVector::from_fn(2 * n, |i, _| if i < n { q[i].re } else { q[i - n].im })
}

fn real_part_mat(p: &CMat) -> DMatrix<f64> {
    DMatrix::from_fn(p.nrows(), p.ncols(), |i, j| {
        0.5 * (p[(i, j)].re + p[(j, i)].re)
    })
}

fn real_part_vec(q: &CVec) -> DVector<f64> {
    DVector::from_fn(q.len(), |i, _| q[i].re)
}

fn lower(problem: &QcqpProblem) -> RealForm {
    if problem.real_valued {
        RealForm {
            p0: real_part_mat(&problem.p0),
            q0: real_part_vec(&problem.q0),
            cons: problem
                .constraints
                .iter()
                .map(|c| RealCon {
                    p: real_part_mat(&c.p),
                    q: real_part_vec(&c.q),
                    r: c.r,
                })
                .collect(),
            lb: problem.lower.as_ref().map(|v| v.clone_owned()),
            ub: problem.upper.as_ref().map(|v| v.clone_owned()),
        }
    } else {
        RealForm {
            p0: lower_complex_mat(&problem.p0),
            q0: lower_complex_vec(&problem.q0),
            cons: problem
                .constraints
                .iter()
                .map(|c| RealCon {
                    p: lower_complex_mat(&c.p),
                    q: lower_complex_vec(&c.q),
                    r: c.r,
                })
                .collect(),
            lb: None,
            ub: None,
        }
    }
}

/// Drops coordinates whose box pins them (`lb == ub`), folding their values
/// into the linear and constant terms of every form.
struct Reduction {
    free: Vec<usize>,
    fixed_value: DVector<f64>,
}

fn reduce(form: &RealForm) -> (RealForm, Reduction) {
    let n = form.q0.len();
    let (lb, ub) = match (&form.lb, &form.ub) {
        (Some(l), Some(u)) => (l, u),
        _ => {
            return (
                RealForm {
                    p0: form.p0.clone(),
                    q0: form.q0.clone(),
                    cons: form
                        .cons
                        .iter()
                        .map(|c| RealCon {
                            p: c.p.clone(),
                            q: c.q.clone(),
                            r: c.r,
                        })
                        .collect(),
                    lb: form.lb.clone(),
                    ub: form.ub.clone(),
                },
                Reduction {
                    free: (0..n).collect(),
                    fixed_value: DVector::zeros(n),
                },
            );
        }
    };
    let free: Vec<usize> = (0..n).filter(|&i| lb[i] < ub[i]).collect();
    let mut fixed_value = DVector::zeros(n);
    for i in 0..n {
        if lb[i] >= ub[i] {
            fixed_value[i] = lb[i];
        }
    }
    let reduce_one = |p: &DMatrix<f64>, q: &DVector<f64>, r: f64| {
        let nf = free.len();
        let mut pr = DMatrix::zeros(nf, nf);
        let mut qr = DVector::zeros(nf);
        for (a, &i) in free.iter().enumerate() {
            for (b, &j) in free.iter().enumerate() {
                pr[(a, b)] = p[(i, j)];
            }
        }
        // q_f + P_f,fixed v, plus v' P_ff v and 2 q_fixed' v into the constant.
        let mut rr = r;
        for (a, &i) in free.iter().enumerate() {
            let mut acc = q[i];
            for j in 0..n {
                if lb[j] >= ub[j] {
                    acc += p[(i, j)] * fixed_value[j];
                }
            }
            qr[a] = acc;
        }
        for i in 0..n {
            if lb[i] >= ub[i] {
                rr += 2.0 * q[i] * fixed_value[i];
                for j in 0..n {
                    if lb[j] >= ub[j] {
                        rr += fixed_value[i] * p[(i, j)] * fixed_value[j];
                    }
                }
            }
        }
        (pr, qr, rr)
    };
    let (p0, q0, _) = reduce_one(&form.p0, &form.q0, 0.0);
    let cons = form
        .cons
        .iter()
        .map(|c| {
            let (p, q, r) = reduce_one(&c.p, &c.q, c.r);
            RealCon { p, q, r }
        })
        .collect();
    let lb_r = DVector::from_fn(free.len(), |a, _| lb[free[a]]);
    let ub_r = DVector::from_fn(free.len(), |a, _| ub[free[a]]);
    (
        RealForm {
            p0,
            q0,
            cons,
            lb: Some(lb_r),
            ub: Some(ub_r),
        },
        Reduction { free, fixed_value },
    )
}

fn con_val(c: &RealCon, x: &DVector<f64>) -> f64 {
    (x.transpose() * &c.p * x)[(0, 0)] + 2.0 * c.q.dot(x) + c.r
}

fn obj_val(form: &RealForm, x: &DVector<f64>) -> f64 {
    (x.transpose() * &form.p0 * x)[(0, 0)] + 2.0 * form.q0.dot(x)
}

fn clamp_box(x: &mut DVector<f64>, lb: &Option<DVector<f64>>, ub: &Option<DVector<f64>>) {
    if let Some(l) = lb {
        for i in 0..x.len() {
            x[i] = x[i].max(l[i]);
        }
    }
    if let Some(u) = ub {
        for i in 0..x.len() {
            x[i] = x[i].min(u[i]);
        }
    }
}

/// Minimizer of the multiplier-weighted quadratic, warm-started when a box
/// forces coordinate descent.
fn inner_solve(
    form: &RealForm,
    mu: &[f64],
    warm: Option<&DVector<f64>>,
    evals: &mut usize,
) -> DVector<f64> {
    let n = form.q0.len();
    *evals += 1;
    if n == 0 {
        return DVector::zeros(0);
    }
    let mut p = form.p0.clone();
    let mut q = form.q0.clone();
    for (i, c) in form.cons.iter().enumerate() {
        if mu[i] != 0.0 {
            p += &c.p * mu[i];
            q += &c.q * mu[i];
        }
    }
    let diag_max = (0..n).map(|i| p[(i, i)]).fold(0.0f64, f64::max);
    let mut ridge = 1e-10 * diag_max.max(1.0);
    for i in 0..n {
        p[(i, i)] += ridge;
    }
    if form.lb.is_none() && form.ub.is_none() {
        loop {
            if let Some(chol) = p.clone().cholesky() {
                return -chol.solve(&q);
            }
            // Near-singular despite the base ridge: thicken and retry.
            let bump = ridge * 9.0 + 1e-12;
            for i in 0..n {
                p[(i, i)] += bump;
            }
            ridge += bump;
            if ridge > 1.0 {
                return DVector::zeros(n);
            }
        }
    }
    let mut x = warm.cloned().unwrap_or_else(|| DVector::zeros(n));
    clamp_box(&mut x, &form.lb, &form.ub);
    // Gradient residual g = P x + q, maintained across coordinate updates.
    let mut g = &p * &x + &q;
    let lb = form.lb.as_ref();
    let ub = form.ub.as_ref();
    for _sweep in 0..300 {
        let mut largest = 0.0f64;
        for j in 0..n {
            let pjj = p[(j, j)];
            let mut target = x[j] - g[j] / pjj;
            if let Some(l) = lb {
                target = target.max(l[j]);
            }
            if let Some(u) = ub {
                target = target.min(u[j]);
            }
            let delta = target - x[j];
            if delta != 0.0 {
                x[j] = target;
                for i in 0..n {
                    g[i] += p[(i, j)] * delta;
                }
                largest = largest.max(delta.abs());
            }
        }
        let scale = x.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
        if largest <= 1e-12 * scale {
            break;
        }
    }
    x
}

/// Feasibility-first merit descent: minimizes the squared-hinge violation,
/// then polishes the objective with a ramped penalty while tracking the best
/// feasible point. Serves as both the fallback and the restoration pass.
fn merit_descent(
    form: &RealForm,
    start: &DVector<f64>,
    tol: f64,
    evals: &mut usize,
) -> (DVector<f64>, Option<DVector<f64>>) {
    let n = form.q0.len();
    let tol_i: Vec<f64> = form.cons.iter().map(|c| tol * (1.0 + c.r.abs())).collect();
    let feasible = |x: &DVector<f64>| {
        form.cons
            .iter()
            .zip(&tol_i)
            .all(|(c, t)| con_val(c, x) <= *t)
    };
    let mut x = start.clone();
    clamp_box(&mut x, &form.lb, &form.ub);
    let mut best_feasible: Option<(f64, DVector<f64>)> = None;
    let record = |x: &DVector<f64>, best: &mut Option<(f64, DVector<f64>)>| {
        let f = obj_val(form, x);
        if best.as_ref().map(|(bf, _)| f < *bf).unwrap_or(true) {
            *best = Some((f, x.clone()));
        }
    };
    if feasible(&x) {
        record(&x, &mut best_feasible);
    }
    let obj_scale = {
        let d = (0..n).map(|i| form.p0[(i, i)].abs()).fold(0.0f64, f64::max);
        let q = form.q0.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        d.max(q).max(1.0)
    };
    for &rho in &[0.0, 1e2, 1e4, 1e6, 1e8] {
        let rho = rho * obj_scale;
        // rho = 0 is the pure feasibility phase.
        let grad = |x: &DVector<f64>| {
            let mut g = if rho == 0.0 {
                DVector::zeros(n)
            } else {
                &form.p0 * x * 2.0 + &form.q0 * 2.0
            };
            for c in &form.cons {
                let v = con_val(c, x);
                if v > 0.0 {
                    let w = if rho == 0.0 { 2.0 * v } else { 2.0 * rho * v };
                    g += (&c.p * x * 2.0 + &c.q * 2.0) * w;
                }
            }
            g
        };
        let mut step = {
            let g0 = grad(&x);
            let gn = g0.norm().max(1e-12);
            0.1 * (1.0 + x.norm()) / gn
        };
        for _it in 0..400 {
            *evals += 1;
            let g = grad(&x);
            let gn = g.norm();
            if gn <= 1e-12 {
                break;
            }
            let merit = |y: &DVector<f64>| {
                let mut m = if rho == 0.0 { 0.0 } else { obj_val(form, y) };
                for c in &form.cons {
                    let v = con_val(c, y).max(0.0);
                    m += if rho == 0.0 { v * v } else { rho * v * v };
                }
                m
            };
            let m0 = merit(&x);
            let mut accepted = false;
            for _ls in 0..40 {
                let mut cand = &x - &g * step;
                clamp_box(&mut cand, &form.lb, &form.ub);
                if merit(&cand) < m0 - 1e-12 * m0.abs().max(1.0) {
                    x = cand;
                    step *= 1.5;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if feasible(&x) {
                record(&x, &mut best_feasible);
            }
            if !accepted {
                break;
            }
        }
    }
    let best = best_feasible.map(|(_, x)| x);
    (x, best)
}

/// Bisection state for one multiplier: finds `mu_i` driving its constraint
/// value into the tolerance band, holding the other multipliers fixed.
#[allow(clippy::too_many_arguments)]
fn tighten(
    form: &RealForm,
    mu: &mut [f64],
    i: usize,
    x: &mut DVector<f64>,
    band: f64,
    evals: &mut usize,
    eval_cap: usize,
) -> bool {
    let mut lo = mu[i];
    let mut hi = lo.max(1e-4);
    loop {
        mu[i] = hi;
        *x = inner_solve(form, mu, Some(x), evals);
        let v = con_val(&form.cons[i], x);
        if v <= 0.0 {
            break;
        }
        lo = hi;
        hi *= 8.0;
        if hi > 1e18 || *evals > eval_cap {
            return false;
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        mu[i] = mid;
        *x = inner_solve(form, mu, Some(x), evals);
        let v = con_val(&form.cons[i], x);
        if v.abs() <= band {
            return true;
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= 1e-15 * hi.max(1.0) || *evals > eval_cap {
            break;
        }
    }
    // Land on the feasible side of the band.
    mu[i] = hi;
    *x = inner_solve(form, mu, Some(x), evals);
    true
}

/// Solves the problem to `tol`-relative feasibility and complementarity.
/// `eval_cap` bounds the number of inner solves.
pub fn solve_qcqp(problem: &QcqpProblem, tol: f64, eval_cap: usize) -> QcqpSolution {
    let form_full = lower(problem);
    let (form, red) = reduce(&form_full);
    let nf = form.q0.len();
    let m = form.cons.len();
    let tol_i: Vec<f64> = form.cons.iter().map(|c| tol * (1.0 + c.r.abs())).collect();
    let mut evals = 0usize;
    let mut mu = vec![0.0; m];
    let mut x = inner_solve(&form, &mu, None, &mut evals);
    let mut status = SolveStatus::Optimal;

    'outer: {
        if nf == 0 {
            break 'outer;
        }
        let mut settled = false;
        for _round in 0..40 {
            let mut changed = false;
            for i in 0..m {
                if evals > eval_cap {
                    break;
                }
                let v = con_val(&form.cons[i], &x);
                if v > tol_i[i] {
                    let band = 0.25 * tol_i[i];
                    if !tighten(&form, &mut mu, i, &mut x, band, &mut evals, eval_cap) {
                        break;
                    }
                    changed = true;
                } else if mu[i] > 0.0 && v < -tol_i[i] {
                    let saved = mu[i];
                    mu[i] = 0.0;
                    x = inner_solve(&form, &mu, Some(&x), &mut evals);
                    if con_val(&form.cons[i], &x) > tol_i[i] {
                        // Constraint still binds: bisect inside (0, saved).
                        let band = 0.25 * tol_i[i];
                        let mut lo = 0.0;
                        let mut hi = saved;
                        for _ in 0..200 {
                            let mid = 0.5 * (lo + hi);
                            mu[i] = mid;
                            x = inner_solve(&form, &mu, Some(&x), &mut evals);
                            let vv = con_val(&form.cons[i], &x);
                            if vv.abs() <= band {
                                break;
                            }
                            if vv > 0.0 {
                                lo = mid;
                            } else {
                                hi = mid;
                            }
                            if (hi - lo) <= 1e-15 * hi.max(1.0) || evals > eval_cap {
                                mu[i] = hi;
                                x = inner_solve(&form, &mu, Some(&x), &mut evals);
                                break;
                            }
                        }
                    }
                    changed = true;
                }
            }
            if !changed {
                settled = true;
                break;
            }
            if evals > eval_cap {
                break;
            }
        }
        let violation = form
            .cons
            .iter()
            .zip(&tol_i)
            .map(|(c, t)| con_val(c, &x) - t)
            .fold(f64::NEG_INFINITY, f64::max);
        if settled && violation <= 0.0 {
            status = SolveStatus::Optimal;
            break 'outer;
        }
        // Dual coordinate search did not settle: merit fallback.
        let (last, best) = merit_descent(&form, &x, tol, &mut evals);
        match best {
            Some(b) => {
                x = b;
                status = SolveStatus::IterationCap;
            }
            None => {
                x = last;
                status = SolveStatus::Infeasible;
            }
        }
    }

    // Scatter free coordinates back among the pinned ones.
    let n_full = form_full.q0.len();
    let mut full = red.fixed_value.clone();
    for (a, &i) in red.free.iter().enumerate() {
        full[i] = x[a];
    }
    debug_assert_eq!(full.len(), n_full);
    let x_out = if problem.real_valued {
        CVec::from_fn(n_full, |i, _| C64::new(full[i], 0.0))
    } else {
        let n = n_full / 2;
        CVec::from_fn(n, |i, _| C64::new(full[i], full[i + n]))
    };
    let mut max_violation = 0.0f64;
    for (i, c) in problem.constraints.iter().enumerate() {
        let v = problem.constraint_value(i, &x_out);
        max_violation = max_violation.max(v);
        if status == SolveStatus::Optimal && v > 10.0 * tol * (1.0 + c.r.abs()) {
            // Pinned coordinates alone can violate a constraint.
            status = SolveStatus::Infeasible;
        }
    }
    QcqpSolution {
        x: x_out,
        status,
        iterations: evals,
        max_violation,
    }
}
