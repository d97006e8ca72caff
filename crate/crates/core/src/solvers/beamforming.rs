//! Beamformer block: with the surface and auxiliaries fixed, the transformed
//! objective is a concave quadratic in the stacked beams, and the rate floors
//! are concave quadratic as well, so the block is one convex QCQP over
//! `x = [w_1; ...; w_K]`.
//!
//! The built problem is exact bookkeeping: `objective(x)` equals the negated
//! transformed objective at that beamformer, constants included, and each
//! QoS constraint value equals the rate floor shortfall of its user.

use crate::fp::AuxFp;
use crate::model::{
    Beamformer, C64, CMat, CVec, ChannelSet, PowerModel, RisConfig, SystemConfig,
    forwarded_noise_gain,
};
use crate::solvers::SolverError;
use crate::solvers::qcqp::{QcqpProblem, QcqpSolution, QuadConstraint, SolveStatus, solve_qcqp};

/// Consumed-power constants that do not depend on the beamformers: everything
/// in the surface budget except the forwarded signal.
pub fn surface_static_power(ris: &RisConfig, cfg: &SystemConfig) -> f64 {
    surface_static_power_with(ris, cfg, PowerModel::Active)
}

/// Beam-independent surface consumption under the given accounting.
pub fn surface_static_power_with(ris: &RisConfig, cfg: &SystemConfig, model: PowerModel) -> f64 {
    let m = cfg.m_elements as f64;
    let shifters = 2.0 * m * cfg.p_ps + m * cfg.p_pdu;
    match model {
        PowerModel::Active => {
            let amp_norm: f64 = ris.alpha.iter().map(|a| a * a).sum();
            cfg.xi_ris * cfg.sigma2_ris * amp_norm
                + shifters
                + ris.active_count() as f64 * cfg.m_sub() as f64 * cfg.p_ra
        }
        PowerModel::Passive => shifters,
    }
}

/// Builds the beamformer QCQP at the current surface state and auxiliaries.
/// Errors when the surface budget is exhausted by its static terms, since no
/// beamformer can then be feasible.
pub fn build_beamforming_problem(
    ch: &ChannelSet,
    ris: &RisConfig,
    cfg: &SystemConfig,
    aux: &AuxFp,
    model: PowerModel,
) -> Result<QcqpProblem, SolverError> {
    let n = cfg.n_antennas;
    let k = cfg.k_total();
    let dim = n * k;
    let r_min_nats = cfg.r_min * std::f64::consts::LN_2;
    let active = model == PowerModel::Active;

    // Per-beam block shared by objective and budget: amplified forwarding.
    let mut g_amp = ch.g.clone();
    for i in 0..ch.g.nrows() {
        for j in 0..n {
            g_amp[(i, j)] *= C64::new(ris.alpha[i], 0.0);
        }
    }
    let ris_quad = g_amp.ad_mul(&g_amp) * C64::new(cfg.xi_ris, 0.0);

    let mut interference = CMat::zeros(n, n);
    let mut h_all = Vec::with_capacity(k);
    let mut noise = Vec::with_capacity(k);
    for i in 0..k {
        let h = crate::model::effective_channel(ch, ris, i)?;
        let w = aux.nu[i].norm_sqr();
        for a in 0..n {
            for b in 0..n {
                interference[(a, b)] += h[a] * h[b].conj() * C64::new(w, 0.0);
            }
        }
        noise.push(cfg.sigma2_ris * forwarded_noise_gain(ch, ris, i)? + cfg.sigma2_user);
        h_all.push(h);
    }

    let mut block = &interference + CMat::identity(n, n) * C64::new(aux.eta * cfg.xi_bs, 0.0);
    if active {
        block += &ris_quad * C64::new(aux.eta, 0.0);
    }
    let mut p0 = CMat::zeros(dim, dim);
    let mut q0 = CVec::zeros(dim);
    let mut r0 = 0.0;
    for j in 0..k {
        p0.view_mut((j * n, j * n), (n, n)).copy_from(&block);
    }
    for i in 0..k {
        let scale = -(1.0 + aux.gamma[i]).sqrt() * aux.nu[i];
        for a in 0..n {
            q0[i * n + a] = scale * h_all[i][a];
        }
        r0 -= (1.0 + aux.gamma[i]).ln() - aux.gamma[i] - aux.nu[i].norm_sqr() * noise[i];
    }
    r0 += aux.eta * (cfg.p_bs_static + surface_static_power_with(ris, cfg, model));

    let mut constraints = Vec::with_capacity(k + 2);
    // Radiated-power budget at the BS.
    constraints.push(QuadConstraint {
        p: CMat::identity(dim, dim),
        q: CVec::zeros(dim),
        r: -cfg.p_max_bs,
    });
    // Surface budget on the amplifier output; absent on a passive surface.
    if active {
        let static_margin = cfg.p_max_ris - surface_static_power(ris, cfg);
        if static_margin < 0.0 {
            return Err(SolverError::NegativeBudget(format!(
                "surface static power exceeds its budget by {:.3e} W",
                -static_margin
            )));
        }
        let mut p_ris = CMat::zeros(dim, dim);
        for j in 0..k {
            p_ris
                .view_mut((j * n, j * n), (n, n))
                .copy_from(&ris_quad);
        }
        constraints.push(QuadConstraint {
            p: p_ris,
            q: CVec::zeros(dim),
            r: -static_margin,
        });
    }
    // Per-user rate floors on the transformed per-user terms.
    for i in 0..k {
        let w = aux.nu[i].norm_sqr();
        let mut p = CMat::zeros(dim, dim);
        let mut hh = CMat::zeros(n, n);
        for a in 0..n {
            for b in 0..n {
                hh[(a, b)] = h_all[i][a] * h_all[i][b].conj() * C64::new(w, 0.0);
            }
        }
        for j in 0..k {
            p.view_mut((j * n, j * n), (n, n)).copy_from(&hh);
        }
        let mut q = CVec::zeros(dim);
        let scale = -(1.0 + aux.gamma[i]).sqrt() * aux.nu[i];
        for a in 0..n {
            q[i * n + a] = scale * h_all[i][a];
        }
        let r = r_min_nats - (1.0 + aux.gamma[i]).ln() + aux.gamma[i] + w * noise[i];
        constraints.push(QuadConstraint { p, q, r });
    }
    QcqpProblem::new_complex(p0, q0, r0, constraints)
}

/// Unpacks a stacked QCQP solution into per-user beams.
pub fn unstack_beamformer(x: &CVec, cfg: &SystemConfig) -> Beamformer {
    let n = cfg.n_antennas;
    let w = (0..cfg.k_total())
        .map(|j| CVec::from_fn(n, |a, _| x[j * n + a]))
        .collect();
    Beamformer { w }
}

/// Builds and solves the beamformer block.
pub fn solve_beamforming(
    ch: &ChannelSet,
    ris: &RisConfig,
    cfg: &SystemConfig,
    aux: &AuxFp,
    model: PowerModel,
    tol: f64,
    eval_cap: usize,
) -> Result<(Beamformer, SolveStatus), SolverError> {
    let problem = build_beamforming_problem(ch, ris, cfg, aux, model)?;
    let QcqpSolution { x, status, .. } = solve_qcqp(&problem, tol, eval_cap);
    Ok((unstack_beamformer(&x, cfg), status))
}
