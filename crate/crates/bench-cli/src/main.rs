use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use risee_cli::config::{parse_config, ConfigError, ExperimentConfig};
use risee_cli::runner::{run_cell, run_sweep, RunError, SeedOutcome};
use risee_cli::{arch::Architecture, report::emit_report, selftest::run_selftest};

const EXIT_OK: i32 = 0;
const EXIT_ERROR: i32 = 1;
const EXIT_CONFIG: i32 = 2;
const EXIT_INFEASIBLE: i32 = 3;

#[derive(Parser)]
#[command(
    name = "risee",
    version,
    about = "Energy-efficiency experiments for amplifying dual-face surfaces"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Experiment config file (flat key = value lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the seed count from the config.
    #[arg(long)]
    seeds: Option<usize>,
    /// Override the output CSV path from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run a single architecture instead of the configured list.
    #[arg(long)]
    mode: Option<String>,
    /// Shrink the surface to 16 elements in 4 sub-arrays and cap seeds at 50.
    #[arg(long)]
    desk_scale: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve one scenario per seed and print the reports.
    Solve(CommonOpts),
    /// Run the configured sweep grid and write CSV plus manifest.
    Sweep(CommonOpts),
    /// Run the built-in smoke checks.
    Selftest,
}

/// Config text plus the parsed experiment, after CLI overrides.
struct LoadedConfig {
    ec: ExperimentConfig,
    text: String,
    overrides: Vec<String>,
}

fn load(opts: &CommonOpts, require_file: bool) -> Result<LoadedConfig, CliFailure> {
    let (text, mut ec) = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliFailure::config(format!("cannot read {}: {e}", path.display()))
            })?;
            let ec = parse_config(&text)?;
            (text, ec)
        }
        None if require_file => {
            return Err(CliFailure::config(
                "sweep requires --config (a sweep axis and value list)".into(),
            ))
        }
        None => (String::new(), ExperimentConfig::desk()),
    };

    let mut overrides = Vec::new();
    if let Some(n) = opts.seeds {
        ec.seeds = n;
        overrides.push(format!("seeds = {n}"));
    }
    if let Some(out) = &opts.out {
        ec.out = out.clone();
        overrides.push(format!("out = {}", out.display()));
    }
    if let Some(name) = &opts.mode {
        let mode = Architecture::from_name(name).ok_or_else(|| {
            CliFailure::config(format!(
                "unknown --mode `{name}` (expected one of {})",
                Architecture::ALL
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            ))
        })?;
        ec.modes = vec![mode];
        overrides.push(format!("mode = {name}"));
    }
    if opts.desk_scale {
        ec.apply_desk_scale();
        overrides.push("desk-scale".into());
    }
    ec.validate()?;
    Ok(LoadedConfig {
        ec,
        text,
        overrides,
    })
}

struct CliFailure {
    message: String,
    code: i32,
}

impl CliFailure {
    fn config(message: String) -> Self {
        CliFailure {
            message,
            code: EXIT_CONFIG,
        }
    }
}

impl From<ConfigError> for CliFailure {
    fn from(e: ConfigError) -> Self {
        CliFailure::config(e.to_string())
    }
}

impl From<RunError> for CliFailure {
    fn from(e: RunError) -> Self {
        let code = match e {
            RunError::Config(_) => EXIT_CONFIG,
            RunError::Internal(_) => EXIT_ERROR,
        };
        CliFailure {
            message: e.to_string(),
            code,
        }
    }
}

fn cmd_solve(opts: &CommonOpts) -> Result<i32, CliFailure> {
    let loaded = load(opts, false)?;
    let ec = &loaded.ec;
    let seeds = if opts.seeds.is_some() { ec.seeds } else { 1 };
    let mut any_feasible = false;
    for &mode in &ec.modes {
        for seed in 0..seeds as u64 {
            let run = run_cell(ec, mode, None, seed).map_err(|message| CliFailure {
                message,
                code: EXIT_ERROR,
            })?;
            let r = &run.report;
            println!("arch: {}", mode.name());
            println!("seed: {seed}");
            println!("status: {:?}", r.status);
            println!("outer iterations: {}", r.iterations);
            match &run.outcome {
                SeedOutcome::Feasible(m) => {
                    any_feasible = true;
                    println!("efficiency: {:.6} bits/J/Hz", m.ee);
                    println!("sum rate: {:.6} bits/s/Hz", m.rate);
                    println!("total power: {:.6} W", m.power);
                    println!("active sub-arrays: {} of {}", m.q, run.cfg.l_subarrays);
                }
                SeedOutcome::Infeasible => {
                    println!("efficiency: (rate floors unmet)");
                }
                SeedOutcome::Failed(message) => {
                    println!("failure: {message}");
                }
            }
            if !r.ee_trajectory.is_empty() {
                let path: Vec<String> = r
                    .ee_trajectory
                    .iter()
                    .map(|v| format!("{v:.4}"))
                    .collect();
                println!("efficiency path: {}", path.join(" "));
            }
            println!("wall seconds: {:.3}", r.wall_seconds);
            println!();
        }
    }
    Ok(if any_feasible { EXIT_OK } else { EXIT_INFEASIBLE })
}

fn cmd_sweep(opts: &CommonOpts) -> Result<i32, CliFailure> {
    let loaded = load(opts, true)?;
    let ec = &loaded.ec;
    let started = Instant::now();
    let table = run_sweep(ec)?;
    let elapsed = started.elapsed().as_secs_f64();
    emit_report(&table, ec, &loaded.text, &loaded.overrides, &ec.out).map_err(|e| CliFailure {
        message: format!("cannot write {}: {e}", ec.out.display()),
        code: EXIT_ERROR,
    })?;
    eprintln!(
        "risee: wrote {} ({} rows) in {elapsed:.1}s",
        ec.out.display(),
        table.rows.len()
    );
    Ok(if table.all_infeasible() {
        EXIT_INFEASIBLE
    } else {
        EXIT_OK
    })
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Solve(opts) => cmd_solve(opts),
        Cmd::Sweep(opts) => cmd_sweep(opts),
        Cmd::Selftest => Ok(if run_selftest() == 0 {
            EXIT_OK
        } else {
            EXIT_ERROR
        }),
    };
    match result {
        Ok(code) => std::process::exit(code),
        Err(failure) => {
            eprintln!("risee: {}", failure.message);
            std::process::exit(failure.code);
        }
    }
}
