//! Amplification block. The transformed objective and rate floors are
//! convex quadratics in the per-sub-array gains, so no curvature envelope is
//! needed; only the sub-array activity count enters through its smoothed
//! surrogate. Splitting each gain deviation as `gain = 1 + p - n` with
//! `p, n >= 0` makes the deviation norm an exact linear term, keeping the
//! whole block one convex QCQP.

use crate::fp::AuxFp;
use crate::mm::{NormAffine, l0_surrogate};
use crate::model::{Beamformer, C64, CMat, CVec, ChannelSet, RVec, RisConfig, SystemConfig};
use crate::solvers::couplings::{forwarded_beams, user_couplings};
use crate::solvers::qcqp::{QcqpProblem, QuadConstraint, SolveStatus, solve_qcqp};
use crate::solvers::SolverError;
use nalgebra::DMatrix;

type RMat = DMatrix<f64>;

/// How the activity count enters the block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum L0Mode {
    /// Smoothed count with tangent majorizers, expanded at the current gains.
    Surrogate { delta: f64 },
    /// Count fixed by the active mask; inactive sub-arrays pinned at 1.
    FixedCount,
}

/// Smoothed-count terms of the subproblem, in the full-length deviation norm.
#[derive(Clone, Debug)]
pub struct L0Terms {
    pub bounds: Vec<NormAffine>,
    /// Objective weight: efficiency ratio times per-sub-array amplifier power.
    pub weight_obj: f64,
    /// Budget-constraint weight: per-sub-array amplifier power.
    pub weight_pow: f64,
    pub sqrt_m_sub: f64,
}

/// One user's rate-floor block in sub-array gain coordinates; feasible when
/// `value <= 0`.
#[derive(Clone, Debug)]
pub struct AlphaUser {
    pub quad: RMat,
    pub lin: RVec,
    pub constant: f64,
}

/// Convex subproblem over the per-sub-array gains.
#[derive(Clone, Debug)]
pub struct AlphaSurrogate {
    pub quad: RMat,
    pub lin: RVec,
    pub constant: f64,
    pub users: Vec<AlphaUser>,
    /// Diagonal of the surface budget quadratic.
    pub power_diag: RVec,
    /// Budget constant: statics minus the budget (plus the fixed-count
    /// amplifier power when the count is pinned).
    pub power_constant: f64,
    pub l0: Option<L0Terms>,
    pub active: Vec<bool>,
    pub alpha_max: f64,
}

impl AlphaSurrogate {
    fn l0_value(&self, gains: &RVec, weight: f64) -> f64 {
        match &self.l0 {
            None => 0.0,
            Some(t) => gains
                .iter()
                .zip(&t.bounds)
                .map(|(g, b)| weight * b.eval(t.sqrt_m_sub * (g - 1.0).abs()))
                .sum(),
        }
    }

    /// Subproblem objective at per-sub-array gains.
    pub fn objective(&self, gains: &RVec) -> f64 {
        let quad = (gains.transpose() * &self.quad * gains)[(0, 0)];
        let w_obj = self.l0.as_ref().map(|t| t.weight_obj).unwrap_or(0.0);
        quad + 2.0 * self.lin.dot(gains) + self.constant + self.l0_value(gains, w_obj)
    }

    pub fn user_value(&self, idx: usize, gains: &RVec) -> f64 {
        let u = &self.users[idx];
        (gains.transpose() * &u.quad * gains)[(0, 0)] + 2.0 * u.lin.dot(gains) + u.constant
    }

    pub fn power_value(&self, gains: &RVec) -> f64 {
        let quad: f64 = gains
            .iter()
            .zip(self.power_diag.iter())
            .map(|(g, d)| d * g * g)
            .sum();
        let w_pow = self.l0.as_ref().map(|t| t.weight_pow).unwrap_or(0.0);
        quad + self.power_constant + self.l0_value(gains, w_pow)
    }

    /// Running-mean update over realizations; the smoothed-count terms do not
    /// depend on the channel draw and stay fixed.
    pub fn blend(&mut self, other: &AlphaSurrogate, w: f64) {
        self.quad.zip_apply(&other.quad, |a, b| *a += w * (b - *a));
        self.lin.zip_apply(&other.lin, |a, b| *a += w * (b - *a));
        self.constant += w * (other.constant - self.constant);
        self.power_diag
            .zip_apply(&other.power_diag, |a, b| *a += w * (b - *a));
        self.power_constant += w * (other.power_constant - self.power_constant);
        for (mine, theirs) in self.users.iter_mut().zip(&other.users) {
            mine.quad.zip_apply(&theirs.quad, |a, b| *a += w * (b - *a));
            mine.lin.zip_apply(&theirs.lin, |a, b| *a += w * (b - *a));
            mine.constant += w * (theirs.constant - mine.constant);
        }
    }
}

/// Current per-sub-array gain levels of a surface.
pub fn subarray_gains(ris: &RisConfig, cfg: &SystemConfig) -> RVec {
    let m_sub = cfg.m_sub();
    RVec::from_fn(cfg.l_subarrays, |l, _| ris.alpha[l * m_sub])
}

/// Assembles the gain subproblem at the current iterate.
pub fn assemble_alpha_surrogate(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    aux: &AuxFp,
    mode: L0Mode,
) -> Result<AlphaSurrogate, SolverError> {
    let m = cfg.m_elements;
    let l_subs = cfg.l_subarrays;
    let m_sub = cfg.m_sub();
    let k = cfg.k_total();
    let r_min_nats = cfg.r_min * std::f64::consts::LN_2;
    let gw = forwarded_beams(ch, bf);

    let mut users = Vec::with_capacity(k);
    let mut quad = RMat::zeros(l_subs, l_subs);
    let mut lin = RVec::zeros(l_subs);
    let mut constant = 0.0;

    for i in 0..k {
        let region = ch.regions[i];
        let cp = user_couplings(ch, bf, &gw, i);
        let theta = ris.theta_face(region);
        let nu = aux.nu[i];
        let nu2 = nu.norm_sqr();
        let gamma = aux.gamma[i];
        let root = (1.0 + gamma).sqrt();

        let mut uq = RMat::zeros(l_subs, l_subs);
        let mut ul = RVec::zeros(l_subs);
        let mut uc = -(1.0 + gamma).ln() + gamma + nu2 * cfg.sigma2_user;
        for j in 0..k {
            let a = cp.a[j];
            // Sub-array coupling: sum of theta_m d_m b_m within each group.
            let mut t_bar = CVec::zeros(l_subs);
            for idx in 0..m {
                t_bar[idx / m_sub] += theta[idx] * ris.split(region, idx) * cp.b[j][idx];
            }
            for p in 0..l_subs {
                for q in 0..l_subs {
                    uq[(p, q)] += nu2 * (t_bar[p] * t_bar[q].conj()).re;
                }
            }
            for p in 0..l_subs {
                ul[p] += nu2 * (a.conj() * t_bar[p]).re;
            }
            uc += nu2 * a.norm_sqr();
            if j == i {
                for p in 0..l_subs {
                    ul[p] -= root * (nu.conj() * t_bar[p]).re;
                }
                uc -= 2.0 * root * (nu.conj() * a).re;
            }
        }
        for idx in 0..m {
            let d = ris.split(region, idx);
            uq[(idx / m_sub, idx / m_sub)] +=
                nu2 * cfg.sigma2_ris * d * d * ch.h_r[i][idx].norm_sqr();
        }

        quad += &uq;
        lin += &ul;
        constant += uc;
        users.push(AlphaUser {
            quad: uq,
            lin: ul,
            constant: uc + r_min_nats,
        });
    }

    // Surface budget: forwarded signal and amplified noise per sub-array.
    let mut power_diag = RVec::zeros(l_subs);
    for idx in 0..m {
        let mut incident: f64 = gw.iter().map(|g| g[idx].norm_sqr()).sum();
        incident += cfg.sigma2_ris;
        power_diag[idx / m_sub] += cfg.xi_ris * incident;
    }
    let m_f = m as f64;
    let statics = 2.0 * m_f * cfg.p_ps + m_f * cfg.p_pdu;
    let ra_unit = m_sub as f64 * cfg.p_ra;
    let (l0, power_constant, obj_ra) = match mode {
        L0Mode::Surrogate { delta } => {
            let surr = l0_surrogate(&ris.alpha, &ris.alpha, l_subs, delta)?;
            (
                Some(L0Terms {
                    bounds: surr.bounds,
                    weight_obj: aux.eta * ra_unit,
                    weight_pow: ra_unit,
                    sqrt_m_sub: (m_sub as f64).sqrt(),
                }),
                statics - cfg.p_max_ris,
                0.0,
            )
        }
        L0Mode::FixedCount => {
            let ra = ris.active_count() as f64 * ra_unit;
            (None, statics + ra - cfg.p_max_ris, ra)
        }
    };

    // Consumed power: the eta-weighted terms join the objective.
    for l in 0..l_subs {
        quad[(l, l)] += aux.eta * power_diag[l];
    }
    constant += aux.eta * (cfg.xi_bs * bf.total_power() + cfg.p_bs_static + statics + obj_ra);

    Ok(AlphaSurrogate {
        quad,
        lin,
        constant,
        users,
        power_diag,
        power_constant,
        l0,
        active: ris.active_mask.clone(),
        alpha_max: cfg.alpha_max,
    })
}

fn to_cmat(u: &RMat) -> CMat {
    CMat::from_fn(u.nrows(), u.ncols(), |i, j| C64::new(u[(i, j)], 0.0))
}

fn to_cvec(v: &RVec) -> CVec {
    CVec::from_fn(v.len(), |i, _| C64::new(v[i], 0.0))
}

/// Affine map `gains = 1 + T z` over split variables `z = [p; n]`, with zero
/// rows on pinned sub-arrays.
struct SplitMap {
    free: Vec<usize>,
    l_subs: usize,
}

impl SplitMap {
    fn dim(&self) -> usize {
        2 * self.free.len()
    }

    /// T as a dense matrix, `l_subs x dim`.
    fn matrix(&self) -> RMat {
        let mut t = RMat::zeros(self.l_subs, self.dim());
        for (slot, &l) in self.free.iter().enumerate() {
            t[(l, slot)] = 1.0;
            t[(l, slot + self.free.len())] = -1.0;
        }
        t
    }

    fn gains(&self, z: &RVec) -> RVec {
        let mut g = RVec::from_element(self.l_subs, 1.0);
        for (slot, &l) in self.free.iter().enumerate() {
            g[l] += z[slot] - z[slot + self.free.len()];
        }
        g
    }
}

/// Transforms `x^T Q x + 2 q.x + c` under `x = 1 + T z`.
fn shift_quad(quad: &RMat, linear: &RVec, constant: f64, t: &RMat) -> (RMat, RVec, f64) {
    let ones = RVec::from_element(quad.nrows(), 1.0);
    let q1 = quad * &ones;
    let qz = t.transpose() * quad * t;
    let lz = t.transpose() * (&q1 + linear);
    let cz = ones.dot(&q1) + 2.0 * linear.dot(&ones) + constant;
    (qz, lz, cz)
}

/// Minimizes the gain subproblem from the current per-sub-array gains.
/// Returns the entry gains on infeasibility or failure to improve.
pub fn solve_alpha_subproblem(
    s: &AlphaSurrogate,
    gains_cur: &RVec,
    tol: f64,
    eval_cap: usize,
) -> Result<(RVec, SolveStatus), SolverError> {
    let l_subs = s.active.len();
    match &s.l0 {
        Some(terms) => {
            let free: Vec<usize> = (0..l_subs).filter(|&l| s.active[l]).collect();
            if free.is_empty() {
                return Ok((gains_cur.clone(), SolveStatus::Optimal));
            }
            let map = SplitMap {
                free: free.clone(),
                l_subs,
            };
            let t = map.matrix();
            let dim = map.dim();
            let nf = free.len();

            let (qz, mut lz, mut cz) = shift_quad(&s.quad, &s.lin, s.constant, &t);
            // Smoothed-count objective terms: linear in p + n.
            for (slot, &l) in free.iter().enumerate() {
                let coeff = terms.weight_obj * terms.bounds[l].slope * terms.sqrt_m_sub;
                lz[slot] += coeff / 2.0;
                lz[slot + nf] += coeff / 2.0;
                cz += terms.weight_obj * terms.bounds[l].constant;
            }
            for l in 0..l_subs {
                if !s.active[l] {
                    cz += terms.weight_obj * terms.bounds[l].constant;
                }
            }
            let mut constraints = Vec::with_capacity(s.users.len() + 1);
            for u in &s.users {
                let (uq, ul, uc) = shift_quad(&u.quad, &u.lin, u.constant, &t);
                constraints.push(QuadConstraint {
                    p: to_cmat(&uq),
                    q: to_cvec(&ul),
                    r: uc,
                });
            }
            // Budget with the smoothed-count power terms.
            let pd = RMat::from_fn(l_subs, l_subs, |i, j| {
                if i == j { s.power_diag[i] } else { 0.0 }
            });
            let (pq, mut pl, mut pc) =
                shift_quad(&pd, &RVec::zeros(l_subs), s.power_constant, &t);
            for (slot, &l) in free.iter().enumerate() {
                let coeff = terms.weight_pow * terms.bounds[l].slope * terms.sqrt_m_sub;
                pl[slot] += coeff / 2.0;
                pl[slot + nf] += coeff / 2.0;
                pc += terms.weight_pow * terms.bounds[l].constant;
            }
            for l in 0..l_subs {
                if !s.active[l] {
                    pc += terms.weight_pow * terms.bounds[l].constant;
                }
            }
            constraints.push(QuadConstraint {
                p: to_cmat(&pq),
                q: to_cvec(&pl),
                r: pc,
            });

            let lower = RVec::zeros(dim);
            let upper = RVec::from_fn(dim, |i, _| {
                if i < nf { (s.alpha_max - 1.0).max(0.0) } else { 1.0 }
            });
            let problem = QcqpProblem::new_real(
                to_cmat(&qz),
                to_cvec(&lz),
                cz,
                constraints,
                Some(lower),
                Some(upper),
            )?;
            let sol = solve_qcqp(&problem, tol, eval_cap);
            if sol.status == SolveStatus::Infeasible {
                return Ok((gains_cur.clone(), SolveStatus::Infeasible));
            }
            let z = sol.x_real();
            let mut gains = map.gains(&z);
            for g in gains.iter_mut() {
                *g = g.clamp(0.0, s.alpha_max);
            }
            if s.objective(&gains)
                > s.objective(gains_cur) + 1e-9 * (1.0 + s.objective(gains_cur).abs())
            {
                return Ok((gains_cur.clone(), sol.status));
            }
            Ok((gains, sol.status))
        }
        None => {
            // Fixed count: direct box-constrained solve with pinned gains.
            let mut constraints = Vec::with_capacity(s.users.len() + 1);
            for u in &s.users {
                constraints.push(QuadConstraint {
                    p: to_cmat(&u.quad),
                    q: to_cvec(&u.lin),
                    r: u.constant,
                });
            }
            let pd = CMat::from_fn(l_subs, l_subs, |i, j| {
                if i == j {
                    C64::new(s.power_diag[i], 0.0)
                } else {
                    C64::new(0.0, 0.0)
                }
            });
            constraints.push(QuadConstraint {
                p: pd,
                q: CVec::zeros(l_subs),
                r: s.power_constant,
            });
            let lower = RVec::from_fn(l_subs, |l, _| if s.active[l] { 0.0 } else { 1.0 });
            let upper = RVec::from_fn(l_subs, |l, _| {
                if s.active[l] { s.alpha_max } else { 1.0 }
            });
            let problem = QcqpProblem::new_real(
                to_cmat(&s.quad),
                to_cvec(&s.lin),
                s.constant,
                constraints,
                Some(lower),
                Some(upper),
            )?;
            let sol = solve_qcqp(&problem, tol, eval_cap);
            if sol.status == SolveStatus::Infeasible {
                return Ok((gains_cur.clone(), SolveStatus::Infeasible));
            }
            let xr = sol.x_real();
            let gains = RVec::from_fn(l_subs, |l, _| {
                if s.active[l] { xr[l].clamp(0.0, s.alpha_max) } else { 1.0 }
            });
            if s.objective(&gains)
                > s.objective(gains_cur) + 1e-9 * (1.0 + s.objective(gains_cur).abs())
            {
                return Ok((gains_cur.clone(), sol.status));
            }
            Ok((gains, sol.status))
        }
    }
}
