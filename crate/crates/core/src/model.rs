//! Signal, rate, and power model for the double-faced active RIS downlink.
//!
//! The surface has `m_elements` element pairs grouped into `l_subarrays`
//! amplifier groups. Each element splits its incident signal into a reflect
//! branch weighted `beta[m]` and a transmit branch weighted
//! `sqrt(1 - beta[m]^2)`, phase-shifts each branch with its own face, and
//! amplifies both branches with the sub-array gain `alpha[m]`. Power
//! splitting conserves energy across the two branches, so the amplifier
//! output power does not depend on `beta`.
//!
//! Rates are reported in bits/s/Hz; internal optimization works in nats and
//! converts at this boundary.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;
pub type RVec = DVector<f64>;

/// Tolerance for unit-modulus and pinned-value checks in `validate`.
const VALIDATE_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("user index {index} out of range for {users} users")]
    UserIndex { index: usize, users: usize },
    #[error("total power is not positive")]
    NonPositivePower,
}

/// Which face of the surface serves a user.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Region {
    Reflect,
    Transmit,
}

/// Static system parameters. Powers in watts, rates in bits/s/Hz.
#[derive(Clone, Debug)]
pub struct SystemConfig {
    /// Base station antennas.
    pub n_antennas: usize,
    /// RIS element pairs.
    pub m_elements: usize,
    /// Amplifier sub-arrays; must divide `m_elements`.
    pub l_subarrays: usize,
    /// Users in the reflect region.
    pub k_r: usize,
    /// Users in the transmit region.
    pub k_t: usize,
    /// Base station transmit power budget.
    pub p_max_bs: f64,
    /// RIS power budget (amplifier output plus surface consumption).
    pub p_max_ris: f64,
    /// Per-element amplification cap, at least 1.
    pub alpha_max: f64,
    /// Per-user minimum rate in bits/s/Hz.
    pub r_min: f64,
    /// Receiver noise power per user.
    pub sigma2_user: f64,
    /// Noise power injected at each RIS element.
    pub sigma2_ris: f64,
    /// Inverse BS power-amplifier efficiency, at least 1.
    pub xi_bs: f64,
    /// Inverse RIS amplifier efficiency, at least 1.
    pub xi_ris: f64,
    /// BS static circuit power.
    pub p_bs_static: f64,
    /// Per-phase-shifter power; each pair carries two shifters.
    pub p_ps: f64,
    /// Per-pair power distribution overhead.
    pub p_pdu: f64,
    /// Per-element reflection-amplifier power when its sub-array is on.
    pub p_ra: f64,
}

impl SystemConfig {
    pub fn k_total(&self) -> usize {
        self.k_r + self.k_t
    }

    /// Elements per sub-array.
    pub fn m_sub(&self) -> usize {
        self.m_elements / self.l_subarrays
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |what: &str| Err(ModelError::InvalidConfig(what.to_string()));
        if self.n_antennas == 0 || self.m_elements == 0 || self.l_subarrays == 0 {
            return bad("array sizes must be positive");
        }
        if self.m_elements % self.l_subarrays != 0 {
            return bad("l_subarrays must divide m_elements");
        }
        if self.k_total() == 0 {
            return bad("at least one user required");
        }
        if !(self.p_max_bs > 0.0) || !(self.p_max_ris > 0.0) {
            return bad("power budgets must be positive");
        }
        if !(self.alpha_max >= 1.0) {
            return bad("alpha_max must be at least 1");
        }
        if !(self.r_min >= 0.0) {
            return bad("r_min must be non-negative");
        }
        if !(self.sigma2_user > 0.0) || !(self.sigma2_ris > 0.0) {
            return bad("noise powers must be positive");
        }
        if !(self.xi_bs >= 1.0) || !(self.xi_ris >= 1.0) {
            return bad("amplifier inefficiencies must be at least 1");
        }
        if !(self.p_bs_static >= 0.0)
            || !(self.p_ps >= 0.0)
            || !(self.p_pdu >= 0.0)
            || !(self.p_ra >= 0.0)
        {
            return bad("static powers must be non-negative");
        }
        Ok(())
    }
}

/// One draw of all propagation channels. Users are indexed with the reflect
/// region first, then the transmit region.
#[derive(Clone, Debug)]
pub struct ChannelSet {
    /// BS-to-RIS channel, `m_elements x n_antennas`.
    pub g: CMat,
    /// Direct BS-to-user channels, each `n_antennas`.
    pub h_d: Vec<CVec>,
    /// RIS-to-user channels, each `m_elements`.
    pub h_r: Vec<CVec>,
    /// Served face per user.
    pub regions: Vec<Region>,
}

impl ChannelSet {
    pub fn users(&self) -> usize {
        self.regions.len()
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        let k = cfg.k_total();
        if self.g.nrows() != cfg.m_elements || self.g.ncols() != cfg.n_antennas {
            return Err(ModelError::DimensionMismatch(format!(
                "g is {}x{}, expected {}x{}",
                self.g.nrows(),
                self.g.ncols(),
                cfg.m_elements,
                cfg.n_antennas
            )));
        }
        if self.h_d.len() != k || self.h_r.len() != k || self.regions.len() != k {
            return Err(ModelError::DimensionMismatch(
                "per-user channel counts do not match k_r + k_t".into(),
            ));
        }
        for (idx, h) in self.h_d.iter().enumerate() {
            if h.len() != cfg.n_antennas {
                return Err(ModelError::DimensionMismatch(format!(
                    "h_d[{idx}] has length {}",
                    h.len()
                )));
            }
        }
        for (idx, h) in self.h_r.iter().enumerate() {
            if h.len() != cfg.m_elements {
                return Err(ModelError::DimensionMismatch(format!(
                    "h_r[{idx}] has length {}",
                    h.len()
                )));
            }
        }
        let n_r = self
            .regions
            .iter()
            .take_while(|r| **r == Region::Reflect)
            .count();
        let reflect_total = self
            .regions
            .iter()
            .filter(|r| **r == Region::Reflect)
            .count();
        if reflect_total != cfg.k_r || n_r != cfg.k_r {
            return Err(ModelError::InvalidConfig(
                "regions must list k_r reflect users first, then k_t transmit users".into(),
            ));
        }
        Ok(())
    }
}

/// Tunable surface state.
#[derive(Clone, Debug)]
pub struct RisConfig {
    /// Reflect-face phases, unit modulus, length `m_elements`.
    pub theta_r: CVec,
    /// Transmit-face phases, unit modulus, length `m_elements`.
    pub theta_t: CVec,
    /// Power-splitting amplitudes in `[0, 1]`, length `m_elements`.
    pub beta: RVec,
    /// Per-element amplification in `[0, alpha_max]`, shared within each
    /// sub-array; pinned to 1 on inactive sub-arrays.
    pub alpha: RVec,
    /// Amplifier on/off state per sub-array.
    pub active_mask: Vec<bool>,
}

impl RisConfig {
    /// Pass-through surface: unit phases, even split, unit gain, all
    /// sub-arrays on.
    pub fn passthrough(cfg: &SystemConfig) -> Self {
        let m = cfg.m_elements;
        RisConfig {
            theta_r: CVec::from_element(m, C64::new(1.0, 0.0)),
            theta_t: CVec::from_element(m, C64::new(1.0, 0.0)),
            beta: RVec::from_element(m, std::f64::consts::FRAC_1_SQRT_2),
            alpha: RVec::from_element(m, 1.0),
            active_mask: vec![true; cfg.l_subarrays],
        }
    }

    pub fn theta_face(&self, region: Region) -> &CVec {
        match region {
            Region::Reflect => &self.theta_r,
            Region::Transmit => &self.theta_t,
        }
    }

    /// Splitting amplitude of element `m` toward `region`.
    pub fn split(&self, region: Region, m: usize) -> f64 {
        match region {
            Region::Reflect => self.beta[m],
            Region::Transmit => (1.0 - self.beta[m] * self.beta[m]).max(0.0).sqrt(),
        }
    }

    pub fn active_count(&self) -> usize {
        self.active_mask.iter().filter(|a| **a).count()
    }

    /// Sub-array index of element `m`.
    pub fn subarray_of(m: usize, m_sub: usize) -> usize {
        m / m_sub
    }

    /// Sets the shared gain of sub-array `l` on all its elements.
    pub fn set_subarray_alpha(&mut self, l: usize, m_sub: usize, value: f64) {
        for m in l * m_sub..(l + 1) * m_sub {
            self.alpha[m] = value;
        }
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        let m = cfg.m_elements;
        if self.theta_r.len() != m
            || self.theta_t.len() != m
            || self.beta.len() != m
            || self.alpha.len() != m
        {
            return Err(ModelError::DimensionMismatch(
                "surface vectors must have length m_elements".into(),
            ));
        }
        if self.active_mask.len() != cfg.l_subarrays {
            return Err(ModelError::DimensionMismatch(
                "active_mask must have length l_subarrays".into(),
            ));
        }
        for face in [&self.theta_r, &self.theta_t] {
            for v in face.iter() {
                if (v.norm() - 1.0).abs() > VALIDATE_TOL {
                    return Err(ModelError::InvalidConfig(
                        "phase entries must have unit modulus".into(),
                    ));
                }
            }
        }
        for &b in self.beta.iter() {
            if !(-VALIDATE_TOL..=1.0 + VALIDATE_TOL).contains(&b) {
                return Err(ModelError::InvalidConfig(
                    "beta entries must lie in [0, 1]".into(),
                ));
            }
        }
        let m_sub = cfg.m_sub();
        for (l, &on) in self.active_mask.iter().enumerate() {
            let first = self.alpha[l * m_sub];
            for idx in l * m_sub..(l + 1) * m_sub {
                let a = self.alpha[idx];
                if (a - first).abs() > VALIDATE_TOL {
                    return Err(ModelError::InvalidConfig(format!(
                        "sub-array {l} must share one amplification value"
                    )));
                }
                if !on && (a - 1.0).abs() > VALIDATE_TOL {
                    return Err(ModelError::InvalidConfig(format!(
                        "inactive sub-array {l} must have unit amplification"
                    )));
                }
                if !(-VALIDATE_TOL..=cfg.alpha_max + VALIDATE_TOL).contains(&a) {
                    return Err(ModelError::InvalidConfig(
                        "alpha entries must lie in [0, alpha_max]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Per-user transmit beamformers, each of length `n_antennas`.
#[derive(Clone, Debug)]
pub struct Beamformer {
    pub w: Vec<CVec>,
}

impl Beamformer {
    pub fn total_power(&self) -> f64 {
        self.w.iter().map(|w| w.norm_squared()).sum()
    }

    pub fn validate(&self, cfg: &SystemConfig) -> Result<(), ModelError> {
        if self.w.len() != cfg.k_total() {
            return Err(ModelError::DimensionMismatch(
                "beamformer count must equal the number of users".into(),
            ));
        }
        for (idx, w) in self.w.iter().enumerate() {
            if w.len() != cfg.n_antennas {
                return Err(ModelError::DimensionMismatch(format!(
                    "w[{idx}] has length {}",
                    w.len()
                )));
            }
        }
        Ok(())
    }
}

/// Consumed power split by node, in watts.
#[derive(Clone, Copy, Debug)]
pub struct PowerBreakdown {
    pub p_bs: f64,
    pub p_ris: f64,
    pub p_tot: f64,
}

/// Which consumption terms the surface incurs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PowerModel {
    /// Amplifying surface: output power, phase shifters, distribution, and
    /// reflection-amplifier terms all count.
    Active,
    /// Passive surface baseline: only phase shifters and distribution count.
    Passive,
}

fn check_user(ch: &ChannelSet, k: usize) -> Result<(), ModelError> {
    if k >= ch.users() {
        return Err(ModelError::UserIndex {
            index: k,
            users: ch.users(),
        });
    }
    Ok(())
}

/// Effective BS-to-user channel through the direct path and the user's face:
/// `h_d + G^H A D Theta^* h_r` with all three element factors diagonal.
pub fn effective_channel(ch: &ChannelSet, ris: &RisConfig, k: usize) -> Result<CVec, ModelError> {
    check_user(ch, k)?;
    let m = ch.g.nrows();
    let region = ch.regions[k];
    let theta = ris.theta_face(region);
    let h_r = &ch.h_r[k];
    if h_r.len() != m || theta.len() != m || ris.beta.len() != m || ris.alpha.len() != m {
        return Err(ModelError::DimensionMismatch(
            "surface and channel element counts disagree".into(),
        ));
    }
    let mut forwarded = CVec::zeros(m);
    for i in 0..m {
        let gain = ris.alpha[i] * ris.split(region, i);
        forwarded[i] = theta[i].conj() * h_r[i] * gain;
    }
    let mut h = ch.g.ad_mul(&forwarded);
    if ch.h_d[k].len() != h.len() {
        return Err(ModelError::DimensionMismatch(
            "direct channel length must equal n_antennas".into(),
        ));
    }
    h += &ch.h_d[k];
    Ok(h)
}

/// Power gain of the surface noise forwarded to user `k`:
/// `sum_m (alpha_m d_m |h_r,m|)^2` over the user's face.
pub fn forwarded_noise_gain(ch: &ChannelSet, ris: &RisConfig, k: usize) -> Result<f64, ModelError> {
    check_user(ch, k)?;
    let region = ch.regions[k];
    let h_r = &ch.h_r[k];
    let mut gain = 0.0;
    for i in 0..h_r.len() {
        let a = ris.alpha[i] * ris.split(region, i) * h_r[i].norm();
        gain += a * a;
    }
    Ok(gain)
}

/// SINR of user `k` under the current beamformers and surface state.
pub fn user_sinr(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    k: usize,
) -> Result<f64, ModelError> {
    check_user(ch, k)?;
    if bf.w.len() != ch.users() {
        return Err(ModelError::DimensionMismatch(
            "beamformer count must equal the number of users".into(),
        ));
    }
    let h = effective_channel(ch, ris, k)?;
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (j, w) in bf.w.iter().enumerate() {
        let p = h.dotc(w).norm_sqr();
        if j == k {
            signal = p;
        } else {
            interference += p;
        }
    }
    let noise = cfg.sigma2_ris * forwarded_noise_gain(ch, ris, k)? + cfg.sigma2_user;
    Ok(signal / (interference + noise))
}

/// Sum rate in bits/s/Hz.
pub fn sum_rate(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    Ok(sum_rate_nats(ch, ris, bf, cfg)? / std::f64::consts::LN_2)
}

/// Sum rate in nats/s/Hz, the unit the optimizer works in.
pub fn sum_rate_nats(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let mut total = 0.0;
    for k in 0..ch.users() {
        total += (1.0 + user_sinr(ch, ris, bf, cfg, k)?).ln();
    }
    Ok(total)
}

/// Per-user rate in bits/s/Hz.
pub fn user_rate(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    k: usize,
) -> Result<f64, ModelError> {
    Ok((1.0 + user_sinr(ch, ris, bf, cfg, k)?).log2())
}

/// Amplifier output power of the surface: the splitting branches conserve
/// energy, so `beta` drops out and only `alpha` and the incident power remain.
pub fn amplifier_output_power(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    let m = ch.g.nrows();
    if ris.alpha.len() != m {
        return Err(ModelError::DimensionMismatch(
            "alpha length must equal m_elements".into(),
        ));
    }
    let mut signal = 0.0;
    for w in &bf.w {
        if w.len() != ch.g.ncols() {
            return Err(ModelError::DimensionMismatch(
                "beamformer length must equal n_antennas".into(),
            ));
        }
        let gw = &ch.g * w;
        for i in 0..m {
            signal += ris.alpha[i] * ris.alpha[i] * gw[i].norm_sqr();
        }
    }
    let amp_norm: f64 = ris.alpha.iter().map(|a| a * a).sum();
    Ok(signal + cfg.sigma2_ris * amp_norm)
}

pub fn power_total(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<PowerBreakdown, ModelError> {
    power_total_with(ch, ris, bf, cfg, PowerModel::Active)
}

pub fn power_total_with(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    model: PowerModel,
) -> Result<PowerBreakdown, ModelError> {
    let p_bs = cfg.xi_bs * bf.total_power() + cfg.p_bs_static;
    let m = cfg.m_elements as f64;
    let surface_static = 2.0 * m * cfg.p_ps + m * cfg.p_pdu;
    let p_ris = match model {
        PowerModel::Active => {
            let output = cfg.xi_ris * amplifier_output_power(ch, ris, bf, cfg)?;
            let ra = ris.active_count() as f64 * cfg.m_sub() as f64 * cfg.p_ra;
            output + surface_static + ra
        }
        PowerModel::Passive => surface_static,
    };
    Ok(PowerBreakdown {
        p_bs,
        p_ris,
        p_tot: p_bs + p_ris,
    })
}

/// Bits per joule per hertz. Errors when total power is not positive.
pub fn energy_efficiency(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<f64, ModelError> {
    energy_efficiency_with(ch, ris, bf, cfg, PowerModel::Active)
}

pub fn energy_efficiency_with(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    model: PowerModel,
) -> Result<f64, ModelError> {
    let p = power_total_with(ch, ris, bf, cfg, model)?;
    if p.p_tot <= 0.0 {
        return Err(ModelError::NonPositivePower);
    }
    Ok(sum_rate(ch, ris, bf, cfg)? / p.p_tot)
}
