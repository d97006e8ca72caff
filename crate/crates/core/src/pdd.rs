//! Phase-face block via penalty dual decomposition.
//!
//! Each face's phases minimize a Hermitian quadratic under unit-modulus
//! entries and the face users' rate floors. The constraint set splits across
//! copies: `phi` carries the modulus constraint, one `psi` per face user
//! carries that user's rate floor, and an augmented Lagrangian with penalty
//! weight `1/rho` ties the copies to `theta`. The inner loop sweeps exact
//! block minimizers; the outer loop tightens duals when the copies agree and
//! shrinks `rho` otherwise.
//!
//! `pdd_solve` normalizes the problem internally so the default `rho`
//! schedule is meaningful at any channel scale; the public single-step
//! updates operate on the problem exactly as given.

use crate::fp::AuxFp;
use crate::model::{
    Beamformer, C64, CMat, CVec, ChannelSet, Region, RisConfig, SystemConfig,
};
use crate::solvers::couplings::{forwarded_beams, user_couplings};
use crate::solvers::SolverError;
use nalgebra::SymmetricEigen;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PddError {
    #[error("rate floor of user {user} unreachable on this face")]
    UserInfeasible { user: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// One face user's rate-floor block: `psi^H V psi + 2 Re{v^H psi} <= c4`.
#[derive(Clone, Debug)]
pub struct PhaseUser {
    pub v_mat: CMat,
    pub v_vec: CVec,
    pub c4: f64,
    pub user: usize,
}

/// Face subproblem: minimize `theta^H V theta + 2 Re{v^H theta} + constant`
/// over unit-modulus phases meeting every face user's rate floor.
#[derive(Clone, Debug)]
pub struct PhaseProblem {
    pub v_mat: CMat,
    pub v_vec: CVec,
    /// Bookkeeping constant making the objective the negated transformed
    /// sum-rate term of the full system at the assembly state. Consumed power
    /// does not depend on the phases and is excluded.
    pub constant: f64,
    pub users: Vec<PhaseUser>,
    pub face: Region,
}

impl PhaseProblem {
    pub fn dim(&self) -> usize {
        self.v_vec.len()
    }

    pub fn objective(&self, theta: &CVec) -> f64 {
        theta.dotc(&(&self.v_mat * theta)).re + 2.0 * theta.dotc(&self.v_vec).re + self.constant
    }

    pub fn user_value(&self, idx: usize, theta: &CVec) -> f64 {
        let u = &self.users[idx];
        theta.dotc(&(&u.v_mat * theta)).re + 2.0 * theta.dotc(&u.v_vec).re - u.c4
    }

    /// Running-mean update over channel realizations.
    pub fn blend(&mut self, other: &PhaseProblem, w: f64) {
        self.v_mat.zip_apply(&other.v_mat, |a, b| *a += (b - *a).scale(w));
        self.v_vec.zip_apply(&other.v_vec, |a, b| *a += (b - *a).scale(w));
        self.constant += w * (other.constant - self.constant);
        for (mine, theirs) in self.users.iter_mut().zip(&other.users) {
            mine.v_mat
                .zip_apply(&theirs.v_mat, |a, b| *a += (b - *a).scale(w));
            mine.v_vec
                .zip_apply(&theirs.v_vec, |a, b| *a += (b - *a).scale(w));
            mine.c4 += w * (theirs.c4 - mine.c4);
        }
    }
}

/// Assembles one face's phase subproblem at the current system state.
pub fn assemble_phase_problem(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    aux: &AuxFp,
    face: Region,
) -> Result<PhaseProblem, SolverError> {
    let m = cfg.m_elements;
    let k = cfg.k_total();
    let r_min_nats = cfg.r_min * std::f64::consts::LN_2;
    let gw = forwarded_beams(ch, bf);

    let mut v_mat = CMat::zeros(m, m);
    let mut v_vec = CVec::zeros(m);
    let mut constant = 0.0;
    let mut users = Vec::new();
    for i in 0..k {
        if ch.regions[i] != face {
            // Off-face users do not see these phases; their terms are
            // constants of the assembly state.
            constant -= crate::fp::ldt_user_term(ch, ris, bf, cfg, aux.gamma[i], aux.nu[i], i)
                .map_err(|e| match e {
                    crate::fp::FpError::Model(m) => SolverError::Model(m),
                    crate::fp::FpError::NonPositivePower => {
                        SolverError::NegativeBudget("non-positive power".into())
                    }
                })?;
            continue;
        }
        let cp = user_couplings(ch, bf, &gw, i);
        let nu = aux.nu[i];
        let nu2 = nu.norm_sqr();
        let gamma = aux.gamma[i];
        let root = (1.0 + gamma).sqrt();

        let mut uv = CMat::zeros(m, m);
        let mut ul = CVec::zeros(m);
        let mut noise = cfg.sigma2_user;
        for idx in 0..m {
            let d = ris.split(face, idx);
            let a = ris.alpha[idx];
            noise += cfg.sigma2_ris * a * a * d * d * ch.h_r[i][idx].norm_sqr();
        }
        let mut uc = -(1.0 + gamma).ln() + gamma + nu2 * noise;
        for j in 0..k {
            let a = cp.a[j];
            // y[m] = d_m alpha_m b_m; the symbol is a + y^T theta.
            let y = CVec::from_fn(m, |idx, _| {
                C64::new(ris.split(face, idx) * ris.alpha[idx], 0.0) * cp.b[j][idx]
            });
            for p in 0..m {
                for q in 0..m {
                    uv[(p, q)] += y[p].conj() * y[q] * C64::new(nu2, 0.0);
                }
            }
            for p in 0..m {
                ul[p] += a * y[p].conj() * C64::new(nu2, 0.0);
            }
            uc += nu2 * a.norm_sqr();
            if j == i {
                for p in 0..m {
                    ul[p] -= nu * y[p].conj() * C64::new(root, 0.0);
                }
                uc -= 2.0 * root * (nu.conj() * a).re;
            }
        }
        v_mat += &uv;
        v_vec += &ul;
        constant += uc;
        users.push(PhaseUser {
            v_mat: uv,
            v_vec: ul,
            c4: -(uc + r_min_nats),
            user: i,
        });
    }
    Ok(PhaseProblem {
        v_mat,
        v_vec,
        constant,
        users,
        face,
    })
}

/// Augmented Lagrangian state: the face phases, their modulus copy, one
/// rate-floor copy per face user, scaled duals, and the penalty parameter.
#[derive(Clone, Debug)]
pub struct PddState {
    pub theta: CVec,
    pub phi: CVec,
    pub psi: Vec<CVec>,
    pub mu1: CVec,
    pub mu2: Vec<CVec>,
    pub rho: f64,
}

impl PddState {
    pub fn from_entry(p: &PhaseProblem, theta_entry: &CVec, rho0: f64) -> Self {
        PddState {
            theta: theta_entry.clone(),
            phi: theta_entry.clone(),
            psi: vec![theta_entry.clone(); p.users.len()],
            mu1: CVec::zeros(theta_entry.len()),
            mu2: vec![CVec::zeros(theta_entry.len()); p.users.len()],
            rho: rho0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PddOptions {
    pub rho0: f64,
    pub c_rho: f64,
    pub tau_max: usize,
    pub q_max: usize,
    /// Consensus level that switches from penalty growth to dual updates.
    pub s_min: f64,
    /// Consensus level that terminates the outer loop.
    pub s_out: f64,
    pub bisect_tol: f64,
}

impl Default for PddOptions {
    fn default() -> Self {
        PddOptions {
            // The penalty is calibrated against the internally normalized
            // objective. Until the duals activate the consensus gap tracks
            // rho times the data gradient, and the dual rounds only start
            // once the gap is under `s_min`; this start puts the gap in that
            // zone with rounds to spare so the finish lands under `s_out`
            // inside `tau_max`. Callers that care more about descent per
            // call than a tight consensus finish should raise `rho0`.
            rho0: 0.01,
            c_rho: 0.8,
            tau_max: 15,
            q_max: 15,
            s_min: 1e-3,
            s_out: 1e-4,
            bisect_tol: 1e-9,
        }
    }
}

/// Exact minimizer of the augmented Lagrangian in the face phases.
pub fn update_theta(p: &PhaseProblem, st: &PddState) -> CVec {
    let m = p.dim();
    let k_face = p.users.len();
    let shift = (k_face as f64 + 1.0) / st.rho;
    let mut lhs = p.v_mat.clone();
    for i in 0..m {
        lhs[(i, i)] += C64::new(shift, 0.0);
    }
    let mut rhs = &st.phi * C64::new(1.0 / st.rho, 0.0);
    for psi in &st.psi {
        rhs += psi * C64::new(1.0 / st.rho, 0.0);
    }
    rhs -= &st.mu1;
    for mu in &st.mu2 {
        rhs -= mu;
    }
    rhs -= &p.v_vec;
    lhs.cholesky()
        .map(|c| c.solve(&rhs))
        .unwrap_or_else(|| rhs * C64::new(1.0 / shift.max(1e-300), 0.0))
}

/// Exact minimizer in the modulus copy: a phase projection. Zero entries
/// project to 1 so the result is always unit modulus.
pub fn update_phi(theta: &CVec, mu1: &CVec, rho: f64) -> CVec {
    CVec::from_fn(theta.len(), |i, _| {
        let z = theta[i] + mu1[i] * C64::new(rho, 0.0);
        let r = z.norm();
        if r == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            z / C64::new(r, 0.0)
        }
    })
}

/// Eigendecomposition cache for repeated rate-floor projections.
struct UserEig {
    q: CMat,
    lam: Vec<f64>,
    vq: CVec,
}

impl UserEig {
    fn new(u: &PhaseUser) -> Self {
        let herm = (&u.v_mat + u.v_mat.adjoint()) * C64::new(0.5, 0.0);
        let eig = SymmetricEigen::new(herm);
        let q = eig.eigenvectors;
        let lam = eig.eigenvalues.iter().cloned().collect();
        let vq = q.ad_mul(&u.v_vec);
        UserEig { q, lam, vq }
    }

    /// Copy for multiplier `mu3` toward target `t`, and the constraint value
    /// it attains, both in O(M) after the one-time transform of `t`.
    fn solve(&self, t_q: &CVec, mu3: f64) -> (CVec, f64) {
        let n = self.lam.len();
        let mut psi_q = CVec::zeros(n);
        let mut quad = 0.0;
        let mut lin = 0.0;
        for i in 0..n {
            let y = (t_q[i] - self.vq[i] * C64::new(mu3, 0.0))
                / C64::new(1.0 + mu3 * self.lam[i], 0.0);
            quad += self.lam[i] * y.norm_sqr();
            lin += 2.0 * (self.vq[i].conj() * y).re;
            psi_q[i] = y;
        }
        (psi_q, quad + lin)
    }
}

/// Projects the target onto one user's rate-floor set. Returns the copy and
/// the multiplier. Errors when the floor is unreachable on this face.
pub fn update_psi(
    user: &PhaseUser,
    target: &CVec,
    bisect_tol: f64,
) -> Result<(CVec, f64), PddError> {
    let eig = UserEig::new(user);
    update_psi_cached(user, &eig, target, bisect_tol)
}

fn update_psi_cached(
    user: &PhaseUser,
    eig: &UserEig,
    target: &CVec,
    bisect_tol: f64,
) -> Result<(CVec, f64), PddError> {
    if target.len() != user.v_vec.len() {
        return Err(PddError::DimensionMismatch(
            "target length must match the face".into(),
        ));
    }
    let t_q = eig.q.ad_mul(target);
    let band = bisect_tol * (1.0 + user.c4.abs());
    let (psi_q, value) = eig.solve(&t_q, 0.0);
    if value <= user.c4 + band {
        return Ok((&eig.q * psi_q, 0.0));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut found = false;
    for _ in 0..60 {
        let (_, v) = eig.solve(&t_q, hi);
        if v <= user.c4 {
            found = true;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return Err(PddError::UserInfeasible { user: user.user });
    }
    let mut mu3 = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (_, v) = eig.solve(&t_q, mid);
        if (v - user.c4).abs() <= band && mid * (v - user.c4).abs() <= band {
            mu3 = mid;
            break;
        }
        if v > user.c4 {
            lo = mid;
        } else {
            hi = mid;
            mu3 = mid;
        }
        if (hi - lo) <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    let (psi_q, _) = eig.solve(&t_q, mu3);
    Ok((&eig.q * psi_q, mu3))
}

/// Consensus gap and the outer dual-or-penalty step: duals tighten when the
/// copies agree to `s_min`, otherwise the penalty stiffens.
pub fn pdd_outer_step(st: &mut PddState, s_min: f64, c_rho: f64) -> f64 {
    let mut s_delta = (&st.theta - &st.phi).norm();
    for psi in &st.psi {
        s_delta = s_delta.max((&st.theta - psi).norm());
    }
    if s_delta <= s_min {
        let scale = C64::new(1.0 / st.rho, 0.0);
        let diff = (&st.theta - &st.phi) * scale;
        st.mu1 += diff;
        for (mu, psi) in st.mu2.iter_mut().zip(&st.psi) {
            *mu += (&st.theta - psi) * scale;
        }
    } else {
        st.rho *= c_rho;
    }
    s_delta
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PddStatus {
    Converged,
    IterationCap,
    Infeasible,
}

#[derive(Clone, Debug)]
pub struct PddReport {
    pub theta: CVec,
    pub s_delta: f64,
    pub status: PddStatus,
    /// Objective at the returned phases, in the problem's own scale.
    pub objective: f64,
    /// Whether the entry phases were kept because no improvement survived.
    pub kept_entry: bool,
}

/// Solves both faces independently from the current configuration and
/// returns their reports in reflect, transmit order.
pub fn pdd_solve(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    aux: &AuxFp,
    opts: &PddOptions,
) -> Result<(PddReport, PddReport), PddError> {
    let mut out = Vec::with_capacity(2);
    for face in [Region::Reflect, Region::Transmit] {
        let p = assemble_phase_problem(ch, ris, bf, cfg, aux, face)?;
        out.push(pdd_solve_face(&p, ris.theta_face(face), opts)?);
    }
    let t = out.pop().unwrap();
    let r = out.pop().unwrap();
    Ok((r, t))
}

/// Full two-layer solve of one face from an entry phase vector. The returned
/// phases are exactly unit modulus, and the objective never exceeds the
/// entry value.
pub fn pdd_solve_face(
    p: &PhaseProblem,
    theta_entry: &CVec,
    opts: &PddOptions,
) -> Result<PddReport, PddError> {
    if theta_entry.len() != p.dim() {
        return Err(PddError::DimensionMismatch(
            "entry phases must match the face size".into(),
        ));
    }
    // Internal normalization: the penalty schedule is calibrated for
    // order-one curvature.
    let scale = p
        .v_mat
        .iter()
        .chain(p.v_vec.iter())
        .map(|v| v.norm())
        .fold(0.0f64, f64::max)
        .max(1e-300);
    let inv = C64::new(1.0 / scale, 0.0);
    let mut norm_users = Vec::with_capacity(p.users.len());
    for u in &p.users {
        let s = u
            .v_mat
            .iter()
            .chain(u.v_vec.iter())
            .map(|v| v.norm())
            .fold(u.c4.abs(), f64::max)
            .max(1e-300);
        let si = C64::new(1.0 / s, 0.0);
        norm_users.push(PhaseUser {
            v_mat: &u.v_mat * si,
            v_vec: &u.v_vec * si,
            c4: u.c4 / s,
            user: u.user,
        });
    }
    let norm = PhaseProblem {
        v_mat: &p.v_mat * inv,
        v_vec: &p.v_vec * inv,
        constant: 0.0,
        users: norm_users,
        face: p.face,
    };
    let eigs: Vec<UserEig> = norm.users.iter().map(UserEig::new).collect();

    let mut st = PddState::from_entry(&norm, theta_entry, opts.rho0);
    let mut status = PddStatus::IterationCap;
    let mut s_delta = f64::INFINITY;
    for _tau in 0..opts.tau_max {
        let mut al_prev = f64::INFINITY;
        for _q in 0..opts.q_max {
            st.theta = update_theta(&norm, &st);
            st.phi = update_phi(&st.theta, &st.mu1, st.rho);
            for (idx, u) in norm.users.iter().enumerate() {
                let target = &st.theta + &st.mu2[idx] * C64::new(st.rho, 0.0);
                let (psi, _) = update_psi_cached(u, &eigs[idx], &target, opts.bisect_tol)?;
                st.psi[idx] = psi;
            }
            let mut al = norm.objective(&st.theta);
            let w = 1.0 / st.rho;
            al += w * (&st.theta - &st.phi + &st.mu1 * C64::new(st.rho, 0.0)).norm_squared();
            for (idx, psi) in st.psi.iter().enumerate() {
                al += w
                    * (&st.theta - psi + &st.mu2[idx] * C64::new(st.rho, 0.0)).norm_squared();
            }
            if (al_prev - al).abs() <= 1e-10 * (1.0 + al.abs()) {
                break;
            }
            al_prev = al;
        }
        s_delta = pdd_outer_step(&mut st, opts.s_min, opts.c_rho);
        if s_delta <= opts.s_out {
            status = PddStatus::Converged;
            break;
        }
    }
    let candidate = update_phi(&st.theta, &st.mu1, st.rho);
    let mut kept_entry = false;
    let theta = if norm.objective(&candidate) <= norm.objective(theta_entry) + 1e-8 {
        candidate
    } else {
        kept_entry = true;
        theta_entry.clone()
    };
    let objective = p.objective(&theta);
    Ok(PddReport {
        theta,
        s_delta,
        status,
        objective,
        kept_entry,
    })
}
