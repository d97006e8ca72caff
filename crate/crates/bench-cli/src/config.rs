//! Flat key=value experiment configs. Unknown or duplicated keys are hard
//! errors so a typo never silently runs the default scenario.

use std::collections::BTreeSet;
use std::path::PathBuf;

use risee_core::channel::{CsiErrorModel, ScenarioGeometry};
use risee_core::model::SystemConfig;

use crate::arch::Architecture;
use crate::dbm_to_watts;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("config line {line}: duplicate key `{key}`")]
    DuplicateKey { line: usize, key: String },
    #[error("config key `{key}`: {message}")]
    BadValue { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// Which scenario parameter the sweep varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    PMaxBsDbm,
    RMin,
    NSubarrays,
    PMaxRisDbm,
    AlphaMax,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::PMaxBsDbm => "p_max_bs_dbm",
            SweepAxis::RMin => "r_min",
            SweepAxis::NSubarrays => "n_subarrays",
            SweepAxis::PMaxRisDbm => "p_max_ris_dbm",
            SweepAxis::AlphaMax => "alpha_max",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "p_max_bs_dbm" => Some(SweepAxis::PMaxBsDbm),
            "r_min" => Some(SweepAxis::RMin),
            "n_subarrays" => Some(SweepAxis::NSubarrays),
            "p_max_ris_dbm" => Some(SweepAxis::PMaxRisDbm),
            "alpha_max" => Some(SweepAxis::AlphaMax),
        _ => None,
        }
    }
}

/// A fully resolved experiment: scenario, sweep grid, architectures, seeds.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub cfg: SystemConfig,
    pub geom: ScenarioGeometry,
    pub csi: CsiErrorModel,
    /// Absent for single-scenario runs.
    pub sweep: Option<SweepAxis>,
    pub values: Vec<f64>,
    pub modes: Vec<Architecture>,
    pub seeds: usize,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Desk-scale scenario: the reference layout and power numbers with the
    /// surface shrunk to 16 elements in 4 sub-arrays.
    pub fn desk() -> Self {
        ExperimentConfig {
            cfg: SystemConfig {
                n_antennas: 4,
                m_elements: 16,
                l_subarrays: 4,
                k_r: 2,
                k_t: 2,
                p_max_bs: dbm_to_watts(20.0),
                p_max_ris: dbm_to_watts(30.0),
                alpha_max: 80.0,
                r_min: 1.0,
                sigma2_user: dbm_to_watts(-100.0),
                sigma2_ris: dbm_to_watts(-100.0),
                xi_bs: 1.1,
                xi_ris: 1.1,
                p_bs_static: 1.5,
                p_ps: 1.25e-3,
                p_pdu: 1.25e-3,
                p_ra: 10e-3,
            },
            geom: ScenarioGeometry::default(),
            csi: CsiErrorModel { e_mse: 0.0 },
            sweep: None,
            values: Vec::new(),
            modes: vec![Architecture::SubarrayDfa],
            seeds: 50,
            out: PathBuf::from("results.csv"),
        }
    }

    /// Forces the quick-turnaround surface size and seed count.
    pub fn apply_desk_scale(&mut self) {
        self.cfg.m_elements = 16;
        self.cfg.l_subarrays = 4;
        self.seeds = self.seeds.min(50);
    }

    /// Checks cross-field consistency after parsing and CLI overrides.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.cfg
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.geom
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.csi
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.seeds == 0 {
            return Err(ConfigError::Invalid("seeds must be at least 1".into()));
        }
        if self.modes.is_empty() {
            return Err(ConfigError::Invalid(
                "at least one architecture mode required".into(),
            ));
        }
        if let Some(axis) = self.sweep {
            if self.values.is_empty() {
                return Err(ConfigError::Invalid(
                    "sweep declared but `values` is empty".into(),
                ));
            }
            for &v in &self.values {
                if !v.is_finite() {
                    return Err(ConfigError::Invalid(format!(
                        "sweep value {v} is not finite"
                    )));
                }
                validate_sweep_value(axis, v, &self.cfg)?;
            }
        } else if !self.values.is_empty() {
            return Err(ConfigError::Invalid(
                "`values` given without a `sweep` axis".into(),
            ));
        }
        Ok(())
    }
}

/// Bounds a sweep value before it is written into a scenario.
pub fn validate_sweep_value(
    axis: SweepAxis,
    v: f64,
    cfg: &SystemConfig,
) -> Result<(), ConfigError> {
    let bad = |message: String| {
        Err(ConfigError::BadValue {
            key: "values".into(),
            message,
        })
    };
    match axis {
        SweepAxis::PMaxBsDbm | SweepAxis::PMaxRisDbm => Ok(()),
        SweepAxis::RMin => {
            if v < 0.0 {
                return bad(format!("r_min {v} must be non-negative"));
            }
            Ok(())
        }
        SweepAxis::AlphaMax => {
            if v < 1.0 {
                return bad(format!("alpha_max {v} must be at least 1"));
            }
            Ok(())
        }
        SweepAxis::NSubarrays => {
            if v < 1.0 || v.fract() != 0.0 {
                return bad(format!("n_subarrays {v} must be a positive integer"));
            }
            let l = v as usize;
            if cfg.m_elements % l != 0 {
                return bad(format!(
                    "n_subarrays {l} must divide m_elements {}",
                    cfg.m_elements
                ));
            }
            Ok(())
        }
    }
}

fn parse_f64(key: &str, val: &str) -> Result<f64, ConfigError> {
    val.parse::<f64>().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        message: format!("`{val}` is not a number"),
    })
}

fn parse_usize(key: &str, val: &str) -> Result<usize, ConfigError> {
    val.parse::<usize>().map_err(|_| ConfigError::BadValue {
        key: key.into(),
        message: format!("`{val}` is not a non-negative integer"),
    })
}

fn parse_triple(key: &str, val: &str) -> Result<[f64; 3], ConfigError> {
    let parts: Vec<&str> = val.split(',').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(ConfigError::BadValue {
            key: key.into(),
            message: format!("`{val}` must be three comma-separated numbers"),
        });
    }
    Ok([
        parse_f64(key, parts[0])?,
        parse_f64(key, parts[1])?,
        parse_f64(key, parts[2])?,
    ])
}

fn parse_values(key: &str, val: &str) -> Result<Vec<f64>, ConfigError> {
    val.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_f64(key, s))
        .collect()
}

fn parse_modes(key: &str, val: &str) -> Result<Vec<Architecture>, ConfigError> {
    let mut out = Vec::new();
    for part in val.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let mode = Architecture::from_name(part).ok_or_else(|| ConfigError::BadValue {
            key: key.into(),
            message: format!(
                "unknown architecture `{part}` (expected one of {})",
                Architecture::ALL
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ),
        })?;
        if out.contains(&mode) {
            return Err(ConfigError::BadValue {
                key: key.into(),
                message: format!("architecture `{part}` listed twice"),
            });
        }
        out.push(mode);
    }
    Ok(out)
}

/// Parses a flat key=value config on top of the desk-scale defaults.
/// Comments are whole lines starting with `#`; blank lines are skipped.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut ec = ExperimentConfig::desk();
    let mut seen: BTreeSet<String> = BTreeSet::new();

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') {
            continue;
        }
        let Some((k, v)) = s.split_once('=') else {
            return Err(ConfigError::Syntax {
                line,
                text: s.into(),
            });
        };
        let key = k.trim();
        let val = v.trim();
        if !seen.insert(key.to_string()) {
            return Err(ConfigError::DuplicateKey {
                line,
                key: key.into(),
            });
        }
        match key {
            "n_antennas" => ec.cfg.n_antennas = parse_usize(key, val)?,
            "m_elements" => ec.cfg.m_elements = parse_usize(key, val)?,
            "l_subarrays" => ec.cfg.l_subarrays = parse_usize(key, val)?,
            "k_r" => ec.cfg.k_r = parse_usize(key, val)?,
            "k_t" => ec.cfg.k_t = parse_usize(key, val)?,
            "p_max_bs_dbm" => ec.cfg.p_max_bs = dbm_to_watts(parse_f64(key, val)?),
            "p_max_ris_dbm" => ec.cfg.p_max_ris = dbm_to_watts(parse_f64(key, val)?),
            "alpha_max" => ec.cfg.alpha_max = parse_f64(key, val)?,
            "r_min" => ec.cfg.r_min = parse_f64(key, val)?,
            "sigma2_user_dbm" => ec.cfg.sigma2_user = dbm_to_watts(parse_f64(key, val)?),
            "sigma2_ris_dbm" => ec.cfg.sigma2_ris = dbm_to_watts(parse_f64(key, val)?),
            "xi_bs" => ec.cfg.xi_bs = parse_f64(key, val)?,
            "xi_ris" => ec.cfg.xi_ris = parse_f64(key, val)?,
            "p_bs_static" => ec.cfg.p_bs_static = parse_f64(key, val)?,
            "p_ps" => ec.cfg.p_ps = parse_f64(key, val)?,
            "p_pdu" => ec.cfg.p_pdu = parse_f64(key, val)?,
            "p_ra" => ec.cfg.p_ra = parse_f64(key, val)?,
            "bs_pos" => ec.geom.bs_pos = parse_triple(key, val)?,
            "ris_pos" => ec.geom.ris_pos = parse_triple(key, val)?,
            "user_center_r" => ec.geom.user_center_r = parse_triple(key, val)?,
            "user_center_t" => ec.geom.user_center_t = parse_triple(key, val)?,
            "user_radius" => ec.geom.user_radius = parse_f64(key, val)?,
            "rician_factor" => ec.geom.rician_factor = parse_f64(key, val)?,
            "pl_ref_db" => ec.geom.pl_ref_db = parse_f64(key, val)?,
            "chi_bu" => ec.geom.chi_bu = parse_f64(key, val)?,
            "chi_br" => ec.geom.chi_br = parse_f64(key, val)?,
            "chi_ru" => ec.geom.chi_ru = parse_f64(key, val)?,
            "e_mse" => ec.csi.e_mse = parse_f64(key, val)?,
            "modes" => ec.modes = parse_modes(key, val)?,
            "sweep" => {
                ec.sweep = Some(SweepAxis::from_name(val).ok_or_else(|| {
                    ConfigError::BadValue {
                        key: key.into(),
                        message: format!(
                            "unknown sweep axis `{val}` (expected p_max_bs_dbm, r_min, \
                             n_subarrays, p_max_ris_dbm, or alpha_max)"
                        ),
                    }
                })?)
            }
            "values" => ec.values = parse_values(key, val)?,
            "seeds" => ec.seeds = parse_usize(key, val)?,
            "out" => ec.out = PathBuf::from(val),
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.into(),
                })
            }
        }
    }

    ec.validate()?;
    Ok(ec)
}
