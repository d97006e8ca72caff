//! Power-splitting block. In the splitting amplitudes the transformed
//! objective and rate floors are quadratic forms per face; a curvature
//! envelope makes every form isotropic, and the transmit-face square roots
//! are chained through tangent bounds so the final subproblem is a
//! per-coordinate convex QP over `beta` in the unit box.

use crate::fp::AuxFp;
use crate::mm::{quad_upper_bound, tangent_bound_concave_quad, tangent_bound_sqrt};
use crate::model::{
    Beamformer, C64, CMat, CVec, ChannelSet, RVec, Region, RisConfig, SystemConfig,
};
use crate::solvers::couplings::{forwarded_beams, user_couplings};
use crate::solvers::qcqp::{QcqpProblem, QuadConstraint, SolveStatus, solve_qcqp};
use crate::solvers::SolverError;

/// Coordinates at or above this value are frozen at 1: the transmit-face
/// tangent is undefined there and the element keeps nothing to refract.
const PIN_THRESHOLD: f64 = 1.0 - 1e-6;

/// Isotropic quadratic `lambda |d|^2 + 2 u_hat . d + constant` in one face's
/// splitting coordinates.
#[derive(Clone, Debug)]
pub struct IsoQuad {
    pub lambda: f64,
    pub u_hat: RVec,
    pub constant: f64,
}

impl IsoQuad {
    pub fn value(&self, d: &RVec) -> f64 {
        self.lambda * d.norm_squared() + 2.0 * self.u_hat.dot(d) + self.constant
    }

    fn blend(&mut self, other: &IsoQuad, w: f64) {
        self.lambda += w * (other.lambda - self.lambda);
        self.constant += w * (other.constant - self.constant);
        self.u_hat.zip_apply(&other.u_hat, |a, b| *a += w * (b - *a));
    }
}

/// Post-envelope splitting subproblem. User entries fold the rate floor into
/// their constant, so feasibility is `value <= 0`.
#[derive(Clone, Debug)]
pub struct BetaSurrogate {
    pub obj_r: IsoQuad,
    pub obj_t: IsoQuad,
    pub users: Vec<(Region, IsoQuad)>,
}

impl BetaSurrogate {
    /// Objective value at a splitting vector, both faces.
    pub fn objective(&self, beta: &RVec) -> f64 {
        let d_t = RVec::from_fn(beta.len(), |m, _| {
            (1.0 - beta[m] * beta[m]).max(0.0).sqrt()
        });
        self.obj_r.value(beta) + self.obj_t.value(&d_t)
    }

    pub fn constraint(&self, idx: usize, beta: &RVec) -> f64 {
        let (region, quad) = &self.users[idx];
        match region {
            Region::Reflect => quad.value(beta),
            Region::Transmit => {
                let d_t = RVec::from_fn(beta.len(), |m, _| {
                    (1.0 - beta[m] * beta[m]).max(0.0).sqrt()
                });
                quad.value(&d_t)
            }
        }
    }

    /// Running-mean update, used by the sample-average loop.
    pub fn blend(&mut self, other: &BetaSurrogate, w: f64) {
        self.obj_r.blend(&other.obj_r, w);
        self.obj_t.blend(&other.obj_t, w);
        for ((_, mine), (_, theirs)) in self.users.iter_mut().zip(&other.users) {
            mine.blend(theirs, w);
        }
    }
}

fn to_cmat(u: &nalgebra::DMatrix<f64>) -> CMat {
    CMat::from_fn(u.nrows(), u.ncols(), |i, j| C64::new(u[(i, j)], 0.0))
}

fn to_cvec(v: &RVec) -> CVec {
    CVec::from_fn(v.len(), |i, _| C64::new(v[i], 0.0))
}

/// Raw per-user quadratic in the user's face coordinates, before the
/// curvature envelope.
struct RawQuad {
    u: nalgebra::DMatrix<f64>,
    lin: RVec,
    cst: f64,
}

fn envelope(raw: &RawQuad, d_i: &RVec) -> Result<IsoQuad, SolverError> {
    let surr = quad_upper_bound(&to_cmat(&raw.u), &to_cvec(d_i))?;
    let u_hat = RVec::from_fn(raw.lin.len(), |m, _| surr.linear[m].re + raw.lin[m]);
    Ok(IsoQuad {
        lambda: surr.curvature,
        u_hat,
        constant: surr.constant + raw.cst,
    })
}

/// Assembles the splitting surrogate at the current iterate. The expansion
/// point of the curvature envelopes is the surface's current splitting.
pub fn assemble_beta_surrogate(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    aux: &AuxFp,
) -> Result<BetaSurrogate, SolverError> {
    let m = cfg.m_elements;
    let k = cfg.k_total();
    let r_min_nats = cfg.r_min * std::f64::consts::LN_2;
    let gw = forwarded_beams(ch, bf);
    let d_r = ris.beta.clone();
    let d_t = RVec::from_fn(m, |i, _| ris.split(Region::Transmit, i));

    let mut obj_raw_r = RawQuad {
        u: nalgebra::DMatrix::zeros(m, m),
        lin: RVec::zeros(m),
        cst: 0.0,
    };
    let mut obj_raw_t = RawQuad {
        u: nalgebra::DMatrix::zeros(m, m),
        lin: RVec::zeros(m),
        cst: 0.0,
    };
    let mut users = Vec::with_capacity(k);

    for i in 0..k {
        let region = ch.regions[i];
        let cp = user_couplings(ch, bf, &gw, i);
        let theta = ris.theta_face(region);
        let nu = aux.nu[i];
        let nu2 = nu.norm_sqr();
        let gamma = aux.gamma[i];
        let root = (1.0 + gamma).sqrt();

        let mut u = nalgebra::DMatrix::zeros(m, m);
        let mut lin = RVec::zeros(m);
        let mut cst = -(1.0 + gamma).ln() + gamma + nu2 * cfg.sigma2_user;
        for j in 0..k {
            // v[m] = theta_m alpha_m b_{i,j,m}; |c|^2 contributes Re(v v^H),
            // 2 Re(conj(a) v), |a|^2.
            let a = cp.a[j];
            let v = CVec::from_fn(m, |idx, _| theta[idx] * ris.alpha[idx] * cp.b[j][idx]);
            for p in 0..m {
                for q in 0..m {
                    u[(p, q)] += nu2 * (v[p] * v[q].conj()).re;
                }
            }
            for p in 0..m {
                lin[p] += nu2 * (a.conj() * v[p]).re;
            }
            cst += nu2 * a.norm_sqr();
            if j == i {
                for p in 0..m {
                    lin[p] -= root * (nu.conj() * v[p]).re;
                }
                cst -= 2.0 * root * (nu.conj() * a).re;
            }
        }
        // Forwarded surface noise scales with the splitting toward this user.
        for p in 0..m {
            u[(p, p)] += nu2 * cfg.sigma2_ris * ris.alpha[p] * ris.alpha[p] * ch.h_r[i][p].norm_sqr();
        }

        let d_i = match region {
            Region::Reflect => &d_r,
            Region::Transmit => &d_t,
        };
        let target = match region {
            Region::Reflect => &mut obj_raw_r,
            Region::Transmit => &mut obj_raw_t,
        };
        target.u += &u;
        target.lin += &lin;
        target.cst += cst;

        let user_iso = envelope(
            &RawQuad {
                u,
                lin,
                cst: cst + r_min_nats,
            },
            d_i,
        )?;
        users.push((region, user_iso));
    }

    Ok(BetaSurrogate {
        obj_r: envelope(&obj_raw_r, &d_r)?,
        obj_t: envelope(&obj_raw_t, &d_t)?,
        users,
    })
}

/// Per-coordinate quadratic accumulator over the free coordinates.
struct CoordForm {
    quad: Vec<f64>,
    lin: Vec<f64>,
    cst: f64,
}

impl CoordForm {
    fn new(n: usize) -> Self {
        CoordForm {
            quad: vec![0.0; n],
            lin: vec![0.0; n],
            cst: 0.0,
        }
    }
}

/// Exact quadratic minorant of `sqrt(1 - b^2)` touching at `beta_i`:
/// `g_i + slope (b - beta_i) - curv (b - beta_i)^2 <= sqrt(1 - b^2)` on
/// [0, 1]. The tangent gap is convex with a monotone difference quotient, so
/// the tightest valid curvature is attained at a corner of the box.
fn sqrt_lower_quad(beta_i: f64) -> (f64, f64, f64) {
    let g_i = (1.0 - beta_i * beta_i).sqrt();
    let slope = -beta_i / g_i;
    let mut curv = 0.0f64;
    for corner in [0.0f64, 1.0] {
        let dist = corner - beta_i;
        if dist.abs() < 1e-9 {
            continue;
        }
        let tangent = g_i + slope * dist;
        let truth = (1.0 - corner * corner).max(0.0).sqrt();
        curv = curv.max((tangent - truth) / (dist * dist));
    }
    (g_i, slope, curv)
}

/// Adds one face block of an isotropic quadratic to the coordinate form,
/// chaining the transmit-face square roots through their bounds. Pinned
/// coordinates contribute their exact values to the constant.
fn add_face(
    form: &mut CoordForm,
    region: Region,
    iso: &IsoQuad,
    beta_cur: &RVec,
    free: &[usize],
) {
    match region {
        Region::Reflect => {
            form.cst += iso.constant;
            for (slot, &m) in free.iter().enumerate() {
                form.quad[slot] += iso.lambda;
                form.lin[slot] += 2.0 * iso.u_hat[m];
            }
            for m in 0..beta_cur.len() {
                if beta_cur[m] >= PIN_THRESHOLD {
                    form.cst += iso.lambda + 2.0 * iso.u_hat[m];
                }
            }
        }
        Region::Transmit => {
            form.cst += iso.constant;
            for (slot, &m) in free.iter().enumerate() {
                let b_i = beta_cur[m];
                // lambda (1 - b^2): constant plus a concave piece, linearized.
                form.cst += iso.lambda;
                let (_, t_lin, t_cst) = tangent_bound_concave_quad(iso.lambda, b_i);
                form.lin[slot] += t_lin;
                form.cst += t_cst;
                // 2 u_hat sqrt(1 - b^2), bounded per the coefficient sign.
                let c = 2.0 * iso.u_hat[m];
                if c > 0.0 {
                    let (a1, c1) = tangent_bound_sqrt(b_i).expect("free coordinate in domain");
                    // c a1 b^2 is concave (a1 < 0): linearize again.
                    let (_, l2, c2) = tangent_bound_concave_quad(-c * a1, b_i);
                    form.lin[slot] += l2;
                    form.cst += c * c1 + c2;
                } else if c < 0.0 {
                    let (g_i, slope, curv) = sqrt_lower_quad(b_i);
                    // c times a touching minorant is a touching majorant.
                    form.quad[slot] += -c * curv;
                    form.lin[slot] += c * (slope + 2.0 * curv * b_i);
                    form.cst += c * (g_i - slope * b_i - curv * b_i * b_i);
                }
                // Pinned coordinates contribute exactly zero on this face.
            }
        }
    }
}

/// Minimizes the chained surrogate from `beta_cur`. Returns the entry point
/// unchanged when the subproblem reports infeasibility or fails to improve
/// the surrogate.
pub fn solve_beta_subproblem(
    s: &BetaSurrogate,
    beta_cur: &RVec,
    tol: f64,
    eval_cap: usize,
) -> Result<(RVec, SolveStatus), SolverError> {
    let m = beta_cur.len();
    let free: Vec<usize> = (0..m).filter(|&i| beta_cur[i] < PIN_THRESHOLD).collect();
    if free.is_empty() {
        return Ok((beta_cur.clone(), SolveStatus::Optimal));
    }
    let nf = free.len();

    let mut obj = CoordForm::new(nf);
    add_face(&mut obj, Region::Reflect, &s.obj_r, beta_cur, &free);
    add_face(&mut obj, Region::Transmit, &s.obj_t, beta_cur, &free);

    let mut constraints = Vec::with_capacity(s.users.len());
    for (region, iso) in &s.users {
        let mut cf = CoordForm::new(nf);
        add_face(&mut cf, *region, iso, beta_cur, &free);
        let p = CMat::from_fn(nf, nf, |i, j| {
            if i == j {
                C64::new(cf.quad[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let q = CVec::from_fn(nf, |i, _| C64::new(0.5 * cf.lin[i], 0.0));
        constraints.push(QuadConstraint { p, q, r: cf.cst });
    }

    let p0 = CMat::from_fn(nf, nf, |i, j| {
        if i == j {
            C64::new(obj.quad[i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let q0 = CVec::from_fn(nf, |i, _| C64::new(0.5 * obj.lin[i], 0.0));
    let problem = QcqpProblem::new_real(
        p0,
        q0,
        obj.cst,
        constraints,
        Some(RVec::zeros(nf)),
        Some(RVec::from_element(nf, 1.0)),
    )?;
    let sol = solve_qcqp(&problem, tol, eval_cap);
    if sol.status == SolveStatus::Infeasible {
        return Ok((beta_cur.clone(), SolveStatus::Infeasible));
    }
    let xr = sol.x_real();
    let mut beta_new = beta_cur.clone();
    for (slot, &i) in free.iter().enumerate() {
        beta_new[i] = xr[slot].clamp(0.0, 1.0);
    }
    // The chained problem majorizes the surrogate with touching at entry, so
    // a worse surrogate value can only be solver noise; keep the entry point.
    if s.objective(&beta_new) > s.objective(beta_cur) + 1e-9 * (1.0 + s.objective(beta_cur).abs())
    {
        return Ok((beta_cur.clone(), sol.status));
    }
    Ok((beta_new, sol.status))
}
