//! Sweep execution: a seed-by-value-by-architecture grid solved on a bounded
//! worker pool, aggregated into one row per (architecture, value).

use rayon::prelude::*;

use risee_core::ao::{solve_imperfect_csi, solve_perfect_csi, AoStatus, SolveOptions, SolveReport};
use risee_core::channel::{apply_csi_error, sample_channel_set};
use risee_core::model::{energy_efficiency_with, power_total_with, sum_rate, SystemConfig};

use crate::arch::{apply_architecture, Architecture};
use crate::config::{ConfigError, ExperimentConfig, SweepAxis};
use crate::dbm_to_watts;

/// Decorrelates the starting-point draws from the channel draws, which use
/// the raw seed.
const INIT_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Internal(String),
}

/// Figures recorded for a successful seed, evaluated on the true channels.
#[derive(Clone, Copy, Debug)]
pub struct SeedMetrics {
    /// Bits per joule per hertz.
    pub ee: f64,
    /// Sum rate, bits/s/Hz.
    pub rate: f64,
    /// Total consumed power, watts.
    pub power: f64,
    /// Sub-arrays with powered amplifiers.
    pub q: usize,
    pub iterations: usize,
}

/// Outcome of one (architecture, sweep value, seed) cell.
#[derive(Clone, Debug)]
pub enum SeedOutcome {
    Feasible(SeedMetrics),
    /// The solver could not meet the rate floors.
    Infeasible,
    /// Hard failure (degenerate channels, numerical breakdown); excluded
    /// from the averages exactly like an infeasible seed.
    Failed(String),
}

/// One fully solved cell, kept whole so callers can print the report.
pub struct CellRun {
    pub cfg: SystemConfig,
    pub opts: SolveOptions,
    pub report: SolveReport,
    pub outcome: SeedOutcome,
}

/// Writes a sweep value into the scenario. The value must already have
/// passed `validate_sweep_value`.
pub fn apply_sweep_value(axis: SweepAxis, v: f64, cfg: &mut SystemConfig) {
    match axis {
        SweepAxis::PMaxBsDbm => cfg.p_max_bs = dbm_to_watts(v),
        SweepAxis::RMin => cfg.r_min = v,
        SweepAxis::NSubarrays => cfg.l_subarrays = v as usize,
        SweepAxis::PMaxRisDbm => cfg.p_max_ris = dbm_to_watts(v),
        SweepAxis::AlphaMax => cfg.alpha_max = v,
    }
}

/// Scenario and options for one cell: sweep value first, then the
/// architecture pins (the passive baseline folds budgets, so order matters).
pub fn cell_scenario(
    ec: &ExperimentConfig,
    mode: Architecture,
    value: Option<f64>,
    seed: u64,
) -> (SystemConfig, SolveOptions) {
    let mut cfg = ec.cfg.clone();
    if let (Some(axis), Some(v)) = (ec.sweep, value) {
        apply_sweep_value(axis, v, &mut cfg);
    }
    let base = SolveOptions {
        init_seed: seed ^ INIT_SEED_SALT,
        ..SolveOptions::default()
    };
    apply_architecture(mode, &cfg, &base)
}

/// Solves one cell end to end. Imperfect-CSI runs are scored on the true
/// channels, not on the solver's sample means.
pub fn run_cell(
    ec: &ExperimentConfig,
    mode: Architecture,
    value: Option<f64>,
    seed: u64,
) -> Result<CellRun, String> {
    let (cfg, opts) = cell_scenario(ec, mode, value, seed);
    cfg.validate().map_err(|e| e.to_string())?;
    let (truth, meta) = sample_channel_set(&ec.geom, &cfg, seed).map_err(|e| e.to_string())?;

    let report = if ec.csi.e_mse > 0.0 {
        let (_estimate, sampler) =
            apply_csi_error(&truth, &meta, &ec.csi, seed).map_err(|e| e.to_string())?;
        solve_imperfect_csi(&sampler, &cfg, &opts).map_err(|e| e.to_string())?
    } else {
        solve_perfect_csi(&truth, &cfg, &opts).map_err(|e| e.to_string())?
    };

    let outcome = if report.status == AoStatus::Infeasible {
        SeedOutcome::Infeasible
    } else if ec.csi.e_mse > 0.0 {
        // The report's figures are sample means over the solver's draws;
        // score the returned configuration on the truth instead.
        let pm = opts.power_model;
        let ee = energy_efficiency_with(&truth, &report.ris, &report.bf, &cfg, pm)
            .map_err(|e| e.to_string())?;
        let rate = sum_rate(&truth, &report.ris, &report.bf, &cfg).map_err(|e| e.to_string())?;
        let power = power_total_with(&truth, &report.ris, &report.bf, &cfg, pm)
            .map_err(|e| e.to_string())?
            .p_tot;
        SeedOutcome::Feasible(SeedMetrics {
            ee,
            rate,
            power,
            q: report.active_count,
            iterations: report.iterations,
        })
    } else {
        SeedOutcome::Feasible(SeedMetrics {
            ee: report.ee,
            rate: report.rate,
            power: report.power,
            q: report.active_count,
            iterations: report.iterations,
        })
    };

    Ok(CellRun {
        cfg,
        opts,
        report,
        outcome,
    })
}

fn cell_outcome(ec: &ExperimentConfig, mode: Architecture, value: f64, seed: u64) -> SeedOutcome {
    match run_cell(ec, mode, Some(value), seed) {
        Ok(run) => run.outcome,
        Err(message) => SeedOutcome::Failed(message),
    }
}

/// One aggregated CSV row. Means and deviations cover feasible seeds only;
/// `n_infeasible` counts every excluded seed (infeasible or failed).
#[derive(Clone, Debug)]
pub struct AggregateRow {
    pub mode: Architecture,
    pub value: f64,
    pub mean_ee: f64,
    pub std_ee: f64,
    pub mean_rate: f64,
    pub mean_power: f64,
    pub mean_q: f64,
    pub n_ok: usize,
    pub n_infeasible: usize,
}

#[derive(Clone, Debug, Default)]
pub struct ResultTable {
    pub rows: Vec<AggregateRow>,
}

impl ResultTable {
    /// True when no cell anywhere produced a feasible solution.
    pub fn all_infeasible(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.n_ok == 0)
    }
}

/// Sample mean and (n-1)-normalized deviation, in input order.
fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn aggregate(
    mode: Architecture,
    value: f64,
    outcomes: &[SeedOutcome],
    seeds_hint: &mut Vec<String>,
) -> AggregateRow {
    let mut ee = Vec::new();
    let mut rate = Vec::new();
    let mut power = Vec::new();
    let mut q = Vec::new();
    let mut excluded = 0usize;
    for (seed, o) in outcomes.iter().enumerate() {
        match o {
            SeedOutcome::Feasible(m) => {
                ee.push(m.ee);
                rate.push(m.rate);
                power.push(m.power);
                q.push(m.q as f64);
            }
            SeedOutcome::Infeasible => excluded += 1,
            SeedOutcome::Failed(message) => {
                excluded += 1;
                seeds_hint.push(format!(
                    "{} value {} seed {}: {}",
                    mode.name(),
                    value,
                    seed,
                    message
                ));
            }
        }
    }
    let (mean_ee, std_ee) = mean_std(&ee);
    let (mean_rate, _) = mean_std(&rate);
    let (mean_power, _) = mean_std(&power);
    let (mean_q, _) = mean_std(&q);
    AggregateRow {
        mode,
        value,
        mean_ee,
        std_ee,
        mean_rate,
        mean_power,
        mean_q,
        n_ok: ee.len(),
        n_infeasible: excluded,
    }
}

/// Worker count from `RISEE_WORKERS`; 0 or unset leaves the pool at its
/// default width.
pub fn worker_count() -> Result<usize, RunError> {
    match std::env::var("RISEE_WORKERS") {
        Ok(s) if s.trim().is_empty() => Ok(0),
        Ok(s) => s.trim().parse::<usize>().map_err(|_| {
            RunError::Config(ConfigError::Invalid(format!(
                "RISEE_WORKERS must be a non-negative integer, got `{s}`"
            )))
        }),
        Err(_) => Ok(0),
    }
}

/// Runs the full grid and aggregates. Rows come back sorted by architecture
/// name, then sweep value, independent of config order or thread timing.
pub fn run_sweep(ec: &ExperimentConfig) -> Result<ResultTable, RunError> {
    ec.validate()?;
    if ec.sweep.is_none() {
        return Err(RunError::Config(ConfigError::Invalid(
            "sweep axis required (set `sweep = ...` and `values = ...`)".into(),
        )));
    }

    let mut tasks = Vec::with_capacity(ec.modes.len() * ec.values.len() * ec.seeds);
    for &mode in &ec.modes {
        for &value in &ec.values {
            for seed in 0..ec.seeds as u64 {
                tasks.push((mode, value, seed));
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count()?)
        .build()
        .map_err(|e| RunError::Internal(e.to_string()))?;
    // Indexed collect keeps task order, so aggregation sums in seed order
    // and the output bytes never depend on scheduling.
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(mode, value, seed)| cell_outcome(ec, mode, value, seed))
            .collect()
    });

    let mut failures = Vec::new();
    let mut rows = Vec::with_capacity(ec.modes.len() * ec.values.len());
    let mut cursor = 0usize;
    for &mode in &ec.modes {
        for &value in &ec.values {
            let chunk = &outcomes[cursor..cursor + ec.seeds];
            cursor += ec.seeds;
            let row = aggregate(mode, value, chunk, &mut failures);
            if row.n_infeasible > 0 {
                eprintln!(
                    "risee: {} value {}: {} of {} seeds excluded",
                    mode.name(),
                    value,
                    row.n_infeasible,
                    ec.seeds
                );
            }
            rows.push(row);
        }
    }
    for line in &failures {
        eprintln!("risee: seed failure: {line}");
    }

    rows.sort_by(|a, b| {
        a.mode
            .name()
            .cmp(b.mode.name())
            .then(a.value.partial_cmp(&b.value).expect("finite sweep values"))
    });
    Ok(ResultTable { rows })
}
