//! Scenario geometry, channel sampling, and the imperfect-CSI model.
//!
//! The BS-to-RIS and RIS-to-user links are Rician with unit-modulus ULA
//! steering components; direct BS-to-user links are Rayleigh. Path loss
//! follows `ref_db + 10 chi log10(d)` in dB at a 1 m reference. All draws
//! come from a counter-based generator keyed by the caller's seed, so a
//! `(seed, geometry)` pair always reproduces the same channels bit for bit.
//!
//! Draw order is part of the contract: user angles, then the BS-RIS matrix
//! row by row, then each user's RIS link, then each user's direct link.

use crate::model::{C64, CMat, CVec, ChannelSet, ModelError, Region, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("distance must be positive")]
    NonPositiveDistance,
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Node placement and propagation constants. Positions in meters.
#[derive(Clone, Debug)]
pub struct ScenarioGeometry {
    pub bs_pos: [f64; 3],
    pub ris_pos: [f64; 3],
    /// Center of the reflect-region user circle.
    pub user_center_r: [f64; 3],
    /// Center of the transmit-region user circle.
    pub user_center_t: [f64; 3],
    pub user_radius: f64,
    /// Rician factor (linear) of the BS-RIS and RIS-user links.
    pub rician_factor: f64,
    /// Path loss in dB at the 1 m reference distance.
    pub pl_ref_db: f64,
    /// Path-loss exponent of the direct BS-user links.
    pub chi_bu: f64,
    /// Path-loss exponent of the BS-RIS link.
    pub chi_br: f64,
    /// Path-loss exponent of the RIS-user links.
    pub chi_ru: f64,
}

impl Default for ScenarioGeometry {
    fn default() -> Self {
        ScenarioGeometry {
            bs_pos: [60.0, 0.0, 5.0],
            ris_pos: [0.0, 80.0, 15.0],
            user_center_r: [30.0, 200.0, 0.0],
            user_center_t: [-30.0, 200.0, 0.0],
            user_radius: 15.0,
            rician_factor: 10.0,
            pl_ref_db: 30.0,
            chi_bu: 3.45,
            chi_br: 2.2,
            chi_ru: 2.2,
        }
    }
}

impl ScenarioGeometry {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.user_radius >= 0.0) {
            return Err(ChannelError::InvalidGeometry(
                "user_radius must be non-negative".into(),
            ));
        }
        if !(self.rician_factor >= 0.0) {
            return Err(ChannelError::InvalidGeometry(
                "rician_factor must be non-negative".into(),
            ));
        }
        if distance(&self.bs_pos, &self.ris_pos) <= 0.0 {
            return Err(ChannelError::InvalidGeometry(
                "BS and RIS positions must differ".into(),
            ));
        }
        Ok(())
    }
}

/// Per-draw scales and distances, kept for the CSI error model and tests.
#[derive(Clone, Debug)]
pub struct ChannelMeta {
    /// Per-entry standard deviation of the BS-RIS scattered component.
    pub nlos_std_g: f64,
    /// Per-entry standard deviation of each user's RIS-link scattered component.
    pub nlos_std_hr: Vec<f64>,
    /// Per-entry standard deviation of each user's direct link.
    pub nlos_std_hd: Vec<f64>,
    pub d_br: f64,
    pub d_ru: Vec<f64>,
    pub d_bu: Vec<f64>,
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Linear power gain of the `ref_db + 10 chi log10(d)` model, with distances
/// clamped to the 1 m reference.
pub fn path_loss_linear(ref_db: f64, chi: f64, d: f64) -> Result<f64, ChannelError> {
    if !(d > 0.0) {
        return Err(ChannelError::NonPositiveDistance);
    }
    let pl_db = ref_db + 10.0 * chi * d.max(1.0).log10();
    Ok(10f64.powf(-pl_db / 10.0))
}

/// Half-wavelength ULA steering vector for direction cosine `u`.
fn steering(count: usize, u: f64) -> CVec {
    CVec::from_fn(count, |i, _| {
        C64::from_polar(1.0, std::f64::consts::PI * i as f64 * u)
    })
}

/// Direction cosine seen by an array at `from`, along the x axis, toward `to`.
fn direction_cosine(from: &[f64; 3], to: &[f64; 3]) -> f64 {
    (to[0] - from[0]) / distance(from, to)
}

fn complex_normal(rng: &mut ChaCha12Rng) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Draws one scenario: user positions on their region circles, then all
/// channels. Deterministic in `(geom, cfg, seed)`.
pub fn sample_channel_set(
    geom: &ScenarioGeometry,
    cfg: &SystemConfig,
    seed: u64,
) -> Result<(ChannelSet, ChannelMeta), ChannelError> {
    cfg.validate()?;
    geom.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let k = cfg.k_total();
    let m = cfg.m_elements;
    let n = cfg.n_antennas;

    let mut user_pos = Vec::with_capacity(k);
    let mut regions = Vec::with_capacity(k);
    for idx in 0..k {
        let region = if idx < cfg.k_r {
            Region::Reflect
        } else {
            Region::Transmit
        };
        let center = match region {
            Region::Reflect => &geom.user_center_r,
            Region::Transmit => &geom.user_center_t,
        };
        let phi: f64 = rng.r#gen::<f64>() * std::f64::consts::TAU;
        user_pos.push([
            center[0] + geom.user_radius * phi.cos(),
            center[1] + geom.user_radius * phi.sin(),
            center[2],
        ]);
        regions.push(region);
    }

    let kappa = geom.rician_factor;
    let los_scale = (kappa / (1.0 + kappa)).sqrt();
    let nlos_scale = (1.0 / (1.0 + kappa)).sqrt();

    let d_br = distance(&geom.bs_pos, &geom.ris_pos);
    let pl_br = path_loss_linear(geom.pl_ref_db, geom.chi_br, d_br)?;
    let a_ris_bs = steering(m, direction_cosine(&geom.ris_pos, &geom.bs_pos));
    let a_bs_ris = steering(n, direction_cosine(&geom.bs_pos, &geom.ris_pos));
    let amp_g = pl_br.sqrt();
    let mut g = CMat::zeros(m, n);
    for row in 0..m {
        for col in 0..n {
            let los = a_ris_bs[row] * a_bs_ris[col].conj();
            let scattered = complex_normal(&mut rng);
            g[(row, col)] = amp_g * (los_scale * los + nlos_scale * scattered);
        }
    }

    let mut h_r = Vec::with_capacity(k);
    let mut d_ru = Vec::with_capacity(k);
    let mut nlos_std_hr = Vec::with_capacity(k);
    for pos in &user_pos {
        let d = distance(&geom.ris_pos, pos);
        let pl = path_loss_linear(geom.pl_ref_db, geom.chi_ru, d)?;
        let amp = pl.sqrt();
        let a = steering(m, direction_cosine(&geom.ris_pos, pos));
        let mut h = CVec::zeros(m);
        for i in 0..m {
            h[i] = amp * (los_scale * a[i] + nlos_scale * complex_normal(&mut rng));
        }
        h_r.push(h);
        d_ru.push(d);
        nlos_std_hr.push(amp * nlos_scale);
    }

    let mut h_d = Vec::with_capacity(k);
    let mut d_bu = Vec::with_capacity(k);
    let mut nlos_std_hd = Vec::with_capacity(k);
    for pos in &user_pos {
        let d = distance(&geom.bs_pos, pos);
        let pl = path_loss_linear(geom.pl_ref_db, geom.chi_bu, d)?;
        let amp = pl.sqrt();
        let mut h = CVec::zeros(n);
        for i in 0..n {
            h[i] = amp * complex_normal(&mut rng);
        }
        h_d.push(h);
        d_bu.push(d);
        nlos_std_hd.push(amp);
    }

    let set = ChannelSet {
        g,
        h_d,
        h_r,
        regions,
    };
    set.validate(cfg)?;
    let meta = ChannelMeta {
        nlos_std_g: amp_g * nlos_scale,
        nlos_std_hr,
        nlos_std_hd,
        d_br,
        d_ru,
        d_bu,
    };
    Ok((set, meta))
}

/// Relative error energy `e` on the scattered channel components. The
/// estimate observed by the solver carries `sqrt(e)`-scaled noise, and
/// candidate channel realizations around the estimate carry the same scale.
#[derive(Clone, Copy, Debug)]
pub struct CsiErrorModel {
    pub e_mse: f64,
}

impl CsiErrorModel {
    pub fn validate(&self) -> Result<(), ChannelError> {
        if !(self.e_mse >= 0.0) {
            return Err(ChannelError::InvalidGeometry(
                "e_mse must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Stateless generator of channel realizations around a fixed estimate.
/// `realization(idx)` depends only on `(seed, idx)`.
#[derive(Clone, Debug)]
pub struct CsiSampler {
    estimate: ChannelSet,
    meta: ChannelMeta,
    e_mse: f64,
    seed: u64,
}

/// Adds one scattered-scale noise pass over every channel entry, stream-keyed
/// so disjoint streams never share draws.
fn perturb(base: &ChannelSet, meta: &ChannelMeta, scale_e: f64, rng: &mut ChaCha12Rng) -> ChannelSet {
    let mut out = base.clone();
    if scale_e == 0.0 {
        return out;
    }
    let s = scale_e.sqrt();
    let g_std = s * meta.nlos_std_g;
    for row in 0..out.g.nrows() {
        for col in 0..out.g.ncols() {
            out.g[(row, col)] += g_std * complex_normal(rng);
        }
    }
    for (k, h) in out.h_r.iter_mut().enumerate() {
        let std = s * meta.nlos_std_hr[k];
        for v in h.iter_mut() {
            *v += std * complex_normal(rng);
        }
    }
    for (k, h) in out.h_d.iter_mut().enumerate() {
        let std = s * meta.nlos_std_hd[k];
        for v in h.iter_mut() {
            *v += std * complex_normal(rng);
        }
    }
    out
}

impl CsiSampler {
    pub fn estimate(&self) -> &ChannelSet {
        &self.estimate
    }

    pub fn error_energy(&self) -> f64 {
        self.e_mse
    }

    /// Candidate true channel `idx`: the estimate plus a fresh error draw.
    /// With `e_mse = 0` this is the estimate itself.
    pub fn realization(&self, idx: u64) -> ChannelSet {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(idx.wrapping_add(1));
        perturb(&self.estimate, &self.meta, self.e_mse, &mut rng)
    }
}

/// Corrupts `truth` into the estimate the solver sees and returns the sampler
/// that generates error realizations around that estimate. Stream 0 of the
/// seed produces the estimate noise; stream `idx + 1` produces realization
/// `idx`.
pub fn apply_csi_error(
    truth: &ChannelSet,
    meta: &ChannelMeta,
    err: &CsiErrorModel,
    seed: u64,
) -> Result<(ChannelSet, CsiSampler), ChannelError> {
    err.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(0);
    let estimate = perturb(truth, meta, err.e_mse, &mut rng);
    let sampler = CsiSampler {
        estimate: estimate.clone(),
        meta: meta.clone(),
        e_mse: err.e_mse,
        seed,
    };
    Ok((estimate, sampler))
}
