//! Fractional-programming layer: the Lagrangian-dual and quadratic
//! transforms that turn each user's log-rate into a beamformer-concave
//! surrogate, and the ratio update that drives the outer energy-efficiency
//! loop.
//!
//! Everything here works in nats. With both auxiliaries at their closed-form
//! optima the surrogate is tight: the per-user value equals `ln(1 + SINR_k)`,
//! and the partial derivatives in `gamma_k` and `nu_k` vanish.

use crate::model::{
    Beamformer, C64, CVec, ChannelSet, ModelError, RVec, RisConfig, SystemConfig,
    effective_channel, forwarded_noise_gain, user_sinr,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FpError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("total power must be positive in a ratio update")]
    NonPositivePower,
}

/// Auxiliary state of the transformed problem: one rate auxiliary and one
/// quadratic-transform auxiliary per user, plus the current efficiency ratio
/// in nats per joule.
#[derive(Clone, Debug)]
pub struct AuxFp {
    pub gamma: RVec,
    pub nu: CVec,
    pub eta: f64,
}

impl AuxFp {
    pub fn new(users: usize) -> Self {
        AuxFp {
            gamma: RVec::zeros(users),
            nu: CVec::zeros(users),
            eta: 0.0,
        }
    }
}

/// Value of the transformed sum-rate surrogate.
#[derive(Clone, Debug)]
pub struct LdtValue {
    /// Surrogate sum over users, nats.
    pub g_p: f64,
    /// Surrogate minus `eta` times total consumed power.
    pub f_p_i: f64,
    /// Per-user surrogate terms, the QoS quantities.
    pub per_user: Vec<f64>,
}

/// One ratio update of the outer loop.
#[derive(Clone, Copy, Debug)]
pub struct DinkelbachStep {
    pub eta_next: f64,
    /// `rate - eta_prev * power`; zero exactly at the optimal ratio.
    pub residual: f64,
}

/// Closed-form optimum of the rate auxiliaries: the current SINRs.
pub fn update_gamma(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<RVec, FpError> {
    let k = ch.users();
    let mut gamma = RVec::zeros(k);
    for i in 0..k {
        gamma[i] = user_sinr(ch, ris, bf, cfg, i)?;
    }
    Ok(gamma)
}

/// Total received power at user `k`: all beam contributions plus forwarded
/// surface noise plus receiver noise.
fn received_power(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    h: &CVec,
    k: usize,
) -> Result<f64, FpError> {
    let mut total = cfg.sigma2_ris * forwarded_noise_gain(ch, ris, k)? + cfg.sigma2_user;
    for w in &bf.w {
        total += h.dotc(w).norm_sqr();
    }
    Ok(total)
}

/// Closed-form optimum of the quadratic-transform auxiliaries.
pub fn update_nu(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    gamma: &RVec,
) -> Result<CVec, FpError> {
    let k = ch.users();
    let mut nu = CVec::zeros(k);
    for i in 0..k {
        let h = effective_channel(ch, ris, i)?;
        let signal = h.dotc(&bf.w[i]);
        let denom = received_power(ch, ris, bf, cfg, &h, i)?;
        nu[i] = signal * ((1.0 + gamma[i]).sqrt() / denom);
    }
    Ok(nu)
}

/// Evaluates the surrogate at the given auxiliaries and system state.
pub fn ldt_objective(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    aux: &AuxFp,
    p_tot: f64,
) -> Result<LdtValue, FpError> {
    let k = ch.users();
    let mut per_user = Vec::with_capacity(k);
    let mut g_p = 0.0;
    for i in 0..k {
        let h = effective_channel(ch, ris, i)?;
        let signal = h.dotc(&bf.w[i]);
        let denom = received_power(ch, ris, bf, cfg, &h, i)?;
        let gamma = aux.gamma[i];
        let nu = aux.nu[i];
        let term = (1.0 + gamma).ln() - gamma
            + 2.0 * (1.0 + gamma).sqrt() * (nu.conj() * signal).re
            - nu.norm_sqr() * denom;
        per_user.push(term);
        g_p += term;
    }
    Ok(LdtValue {
        g_p,
        f_p_i: g_p - aux.eta * p_tot,
        per_user,
    })
}

/// Per-user surrogate value for one user only.
pub fn ldt_user_term(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    gamma: f64,
    nu: C64,
    k: usize,
) -> Result<f64, FpError> {
    let h = effective_channel(ch, ris, k)?;
    let signal = h.dotc(&bf.w[k]);
    let denom = received_power(ch, ris, bf, cfg, &h, k)?;
    Ok((1.0 + gamma).ln() - gamma + 2.0 * (1.0 + gamma).sqrt() * (nu.conj() * signal).re
        - nu.norm_sqr() * denom)
}

/// Ratio update: `eta_next = rate / power`. The residual changes sign at the
/// optimum, so a vanishing residual certifies the outer loop's fixed point.
pub fn dinkelbach_update(
    rate_nats: f64,
    p_tot: f64,
    eta_prev: f64,
) -> Result<DinkelbachStep, FpError> {
    if !(p_tot > 0.0) {
        return Err(FpError::NonPositivePower);
    }
    Ok(DinkelbachStep {
        eta_next: rate_nats / p_tot,
        residual: rate_nats - eta_prev * p_tot,
    })
}
