//! Alternating-optimization drivers.
//!
//! `solve_perfect_csi` runs the single-loop ratio-update pipeline: per outer
//! iteration the auxiliaries, beamformers, splitting, phases, and gains are
//! updated in order, each block guarded so the transformed objective never
//! decreases, then the efficiency ratio is refreshed. After convergence the
//! amplifier on/off pattern is chosen by the nested linear search.
//!
//! `solve_imperfect_csi` mirrors the structure on an estimated channel: the
//! beamformer block works on the estimate, while the surface blocks solve
//! running sample averages of their subproblems over fresh channel
//! realizations, so rate floors hold in expectation.

use crate::channel::CsiSampler;
use crate::fp::{self, AuxFp, FpError};
use crate::model::{
    self, Beamformer, C64, CVec, ChannelSet, ModelError, PowerModel, RVec, Region, RisConfig,
    SystemConfig,
};
use crate::pdd::{self, PddError, PddOptions};
use crate::ra;
use crate::solvers::SolverError;
use crate::solvers::alpha::{self, L0Mode};
use crate::solvers::beamforming;
use crate::solvers::beta;
use crate::solvers::qcqp::SolveStatus;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AoError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Fp(#[from] FpError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pdd(#[from] PddError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AoStatus {
    Converged,
    IterationCap,
    Infeasible,
}

/// One guarded block update: the transformed objective before and after, and
/// whether the block's move was kept.
#[derive(Clone, Copy, Debug)]
pub struct BlockStep {
    pub iteration: usize,
    pub block: &'static str,
    pub before: f64,
    pub after: f64,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct SolveOptions {
    /// Outer iteration cap.
    pub outer_cap: usize,
    /// Relative efficiency change that terminates the outer loop.
    pub ee_tol: f64,
    /// Largest tolerated per-block decrease of the transformed objective.
    pub guard_tol: f64,
    pub qcqp_tol: f64,
    pub qcqp_cap: usize,
    pub pdd: PddOptions,
    /// Smoothing width of the amplifier-count surrogate.
    pub l0_delta: f64,
    /// Beamformer/auxiliary inner passes per outer iteration on the estimate
    /// (sample-averaged pipeline only).
    pub w_inner_cap: usize,
    /// Channel realizations averaged per outer iteration.
    pub r_cap: usize,
    /// Re-sweep the blocks under a fixed ratio until the transformed
    /// objective stabilizes before each ratio refresh.
    pub strict_ratio_updates: bool,
    /// Optimize the power splitting; architectures with one active face pin
    /// it instead.
    pub optimize_beta: bool,
    /// Optimize amplification; the passive baseline pins gains at 1.
    pub optimize_alpha: bool,
    /// Apply smoothed-count pressure in the gain block (sub-array switching
    /// architectures only).
    pub sparsity: bool,
    /// Run the on/off pattern search after convergence.
    pub ra_search: bool,
    /// Pin every splitting coefficient to one value (single-face
    /// architectures); pair with `optimize_beta: false`.
    pub beta_pin: Option<f64>,
    pub power_model: PowerModel,
    /// Seed of the deterministic starting point.
    pub init_seed: u64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            outer_cap: 15,
            ee_tol: 1e-3,
            guard_tol: 1e-6,
            qcqp_tol: 1e-8,
            qcqp_cap: 20_000,
            // The phase solver is proximal: cumulative movement per call
            // scales with the penalty start. Standalone defaults favour a
            // tight consensus finish; inside the sweep loop a stronger
            // start buys more objective descent per call, and the per-user
            // floors stay enforced on the feasible copy either way.
            pdd: PddOptions {
                rho0: 2.0,
                ..PddOptions::default()
            },
            l0_delta: 1e-6,
            w_inner_cap: 15,
            r_cap: 15,
            strict_ratio_updates: false,
            optimize_beta: true,
            optimize_alpha: true,
            sparsity: true,
            ra_search: true,
            beta_pin: None,
            power_model: PowerModel::Active,
            init_seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    /// Efficiency after each outer iteration, bits/s/Hz per watt.
    pub ee_trajectory: Vec<f64>,
    pub rate_trajectory: Vec<f64>,
    pub power_trajectory: Vec<f64>,
    pub iterations: usize,
    pub status: AoStatus,
    pub ris: RisConfig,
    pub bf: Beamformer,
    pub active_count: usize,
    pub ee: f64,
    pub rate: f64,
    pub power: f64,
    /// Every guarded block update, in execution order.
    pub block_trace: Vec<BlockStep>,
    /// The subset of `block_trace` that was rejected and rolled back.
    pub guard_violations: Vec<BlockStep>,
    /// On/off candidates evaluated by the pattern search, when it ran.
    pub ra_trail: Vec<ra::RaCandidate>,
    pub wall_seconds: f64,
}

/// Whether a block update kept the transformed objective from decreasing by
/// more than `tol` (relative to the objective's size).
pub fn ao_objective_guard(previous: f64, new_value: f64, tol: f64) -> bool {
    new_value >= previous - tol * (1.0 + previous.abs())
}

/// Deterministic starting point: uniform random phases, even splitting, MRT
/// beams at 90% of the radiated budget, and a uniform gain level putting the
/// surface budget at half its headroom.
pub fn initialize(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    seed: u64,
) -> Result<(RisConfig, Beamformer), AoError> {
    cfg.validate()?;
    ch.validate(cfg)?;
    let m = cfg.m_elements;
    let n = cfg.n_antennas;
    let k = cfg.k_total();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut ris = RisConfig::passthrough(cfg);
    for face in [Region::Reflect, Region::Transmit] {
        for i in 0..m {
            let ph: f64 = rng.r#gen::<f64>() * std::f64::consts::TAU;
            let v = C64::new(ph.cos(), ph.sin());
            match face {
                Region::Reflect => ris.theta_r[i] = v,
                Region::Transmit => ris.theta_t[i] = v,
            }
        }
    }

    let per_user = 0.9 * cfg.p_max_bs / k as f64;
    let w = (0..k)
        .map(|i| {
            let h = &ch.h_d[i];
            let norm = h.norm();
            if norm > 0.0 {
                h * C64::new(per_user.sqrt() / norm, 0.0)
            } else {
                CVec::from_element(n, C64::new((per_user / n as f64).sqrt(), 0.0))
            }
        })
        .collect();
    let bf = Beamformer { w };

    // Gain level spending half the headroom left by the surface's fixed
    // consumption, assuming every amplifier group is on.
    let fixed = 2.0 * m as f64 * cfg.p_ps
        + m as f64 * cfg.p_pdu
        + cfg.l_subarrays as f64 * cfg.m_sub() as f64 * cfg.p_ra;
    let headroom = cfg.p_max_ris - fixed;
    let mut forwarded = m as f64 * cfg.sigma2_ris;
    for wk in &bf.w {
        let gw = &ch.g * wk;
        forwarded += gw.norm_squared();
    }
    let denom = cfg.xi_ris * forwarded;
    let level = if headroom > 0.0 && denom > 0.0 {
        (0.5 * headroom / denom).sqrt()
    } else {
        1.0
    };
    let alpha = level.min(cfg.alpha_max);
    for l in 0..cfg.l_subarrays {
        ris.set_subarray_alpha(l, cfg.m_sub(), alpha);
    }
    Ok((ris, bf))
}

fn rel_change(prev: f64, next: f64) -> f64 {
    (next - prev).abs() / next.abs().max(1e-300)
}

/// Architecture pins applied on top of the generic starting point: a fixed
/// splitting face, and a unit-gain surface with no amplifier groups under
/// passive accounting.
fn apply_pins(ris: &mut RisConfig, cfg: &SystemConfig, opts: &SolveOptions) {
    if let Some(v) = opts.beta_pin {
        ris.beta = RVec::from_element(cfg.m_elements, v);
    }
    if opts.power_model == PowerModel::Passive {
        for l in 0..cfg.l_subarrays {
            ris.set_subarray_alpha(l, cfg.m_sub(), 1.0);
        }
        ris.active_mask = vec![false; cfg.l_subarrays];
    }
}

/// Transformed objective at the current variables, auxiliaries, and power
/// accounting.
fn transformed_objective(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    aux: &AuxFp,
    power_model: PowerModel,
) -> Result<f64, AoError> {
    let p = model::power_total_with(ch, ris, bf, cfg, power_model)?.p_tot;
    Ok(fp::ldt_objective(ch, ris, bf, cfg, aux, p)?.f_p_i)
}

fn true_qos_ok(
    ch: &ChannelSet,
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
) -> Result<bool, AoError> {
    for i in 0..cfg.k_total() {
        if model::user_rate(ch, ris, bf, cfg, i)? < cfg.r_min - 1e-7 {
            return Ok(false);
        }
    }
    Ok(true)
}

struct LoopOutcome {
    ris: RisConfig,
    bf: Beamformer,
    ee_trajectory: Vec<f64>,
    rate_trajectory: Vec<f64>,
    power_trajectory: Vec<f64>,
    block_trace: Vec<BlockStep>,
    status: AoStatus,
    iterations: usize,
}

/// Records a guarded block move: keeps it when the objective did not drop,
/// rolls it back otherwise. Tracking only starts once the iterate is
/// feasible, since restoration moves legitimately trade objective for
/// feasibility.
struct Guard<'a> {
    trace: &'a mut Vec<BlockStep>,
    iteration: usize,
    tracking: bool,
    tol: f64,
}

impl Guard<'_> {
    fn check(&mut self, block: &'static str, before: f64, after: f64) -> bool {
        let accepted = !self.tracking || ao_objective_guard(before, after, self.tol);
        if self.tracking {
            self.trace.push(BlockStep {
                iteration: self.iteration,
                block,
                before,
                after,
                accepted,
            });
        }
        accepted
    }
}

/// Sub-array gains as a full per-element vector.
fn write_gains(ris: &mut RisConfig, cfg: &SystemConfig, gains: &crate::model::RVec) {
    for l in 0..cfg.l_subarrays {
        ris.set_subarray_alpha(l, cfg.m_sub(), gains[l]);
    }
}

fn run_ao_loop(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    ris0: &RisConfig,
    bf0: &Beamformer,
    opts: &SolveOptions,
    l0_mode: Option<L0Mode>,
) -> Result<LoopOutcome, AoError> {
    let mut ris = ris0.clone();
    let mut bf = bf0.clone();
    let pm = opts.power_model;

    let gamma = fp::update_gamma(ch, &ris, &bf, cfg)?;
    let nu = fp::update_nu(ch, &ris, &bf, cfg, &gamma)?;
    let rate0 = model::sum_rate_nats(ch, &ris, &bf, cfg)?;
    let p0 = model::power_total_with(ch, &ris, &bf, cfg, pm)?.p_tot;
    let mut aux = AuxFp {
        gamma,
        nu,
        eta: if p0 > 0.0 { rate0 / p0 } else { 0.0 },
    };

    let mut ee_trajectory = Vec::new();
    let mut rate_trajectory = Vec::new();
    let mut power_trajectory = Vec::new();
    let mut block_trace = Vec::new();
    let mut status = AoStatus::IterationCap;
    let mut iterations = 0;
    let mut feasible = true_qos_ok(ch, &ris, &bf, cfg)?;
    let mut prev_ee = f64::NAN;
    // Sweeps allowed to keep searching for a first feasible beamformer.
    let restoration_cap = 3usize;

    'outer: for it in 0..opts.outer_cap {
        iterations = it + 1;
        // Each block step is a single surrogate ascent, so one pass rarely
        // reaches the per-iteration stationary point the ratio refresh
        // assumes. Sweeping until the transformed objective stalls keeps
        // the outer count close to the ideal single-loop schedule.
        let (sweeps, sweep_tol) = if opts.strict_ratio_updates {
            (25, 1e-9)
        } else {
            (12, 1e-5)
        };
        let mut prev_f = f64::NAN;
        for _s in 0..sweeps {
            let mut guard = Guard {
                trace: &mut block_trace,
                iteration: it,
                tracking: feasible,
                tol: opts.guard_tol,
            };

            // Auxiliaries: exact maximizers of the transformed objective.
            let before = transformed_objective(ch, &ris, &bf, cfg, &aux, pm)?;
            let gamma = fp::update_gamma(ch, &ris, &bf, cfg)?;
            let nu = fp::update_nu(ch, &ris, &bf, cfg, &gamma)?;
            let trial = AuxFp {
                gamma,
                nu,
                eta: aux.eta,
            };
            let after = transformed_objective(ch, &ris, &bf, cfg, &trial, pm)?;
            if guard.check("aux", before, after) {
                aux = trial;
            }

            // Beamformers.
            let before = transformed_objective(ch, &ris, &bf, cfg, &aux, pm)?;
            match beamforming::solve_beamforming(
                ch,
                &ris,
                cfg,
                &aux,
                pm,
                opts.qcqp_tol,
                opts.qcqp_cap,
            ) {
                Ok((cand, st)) => {
                    if st == SolveStatus::Infeasible {
                        if !feasible {
                            if it + 1 >= restoration_cap {
                                status = AoStatus::Infeasible;
                                break 'outer;
                            }
                            // Keep the restoration point; its violation is
                            // smaller than the entry's.
                            bf = cand;
                        }
                        // Otherwise a numerical failure: the previous beams
                        // remain feasible for the refreshed constraints.
                    } else {
                        let after = transformed_objective(ch, &ris, &cand, cfg, &aux, pm)?;
                        if guard.check("beams", before, after) {
                            bf = cand;
                        }
                        if !feasible {
                            feasible = true_qos_ok(ch, &ris, &bf, cfg)?;
                        }
                    }
                }
                Err(SolverError::NegativeBudget(_)) => {
                    status = AoStatus::Infeasible;
                    break 'outer;
                }
                Err(e) => return Err(e.into()),
            }

            // Power splitting.
            if opts.optimize_beta {
                let before = transformed_objective(ch, &ris, &bf, cfg, &aux, pm)?;
                let surrogate = beta::assemble_beta_surrogate(ch, &ris, &bf, cfg, &aux)?;
                let (new_beta, _st) =
                    beta::solve_beta_subproblem(&surrogate, &ris.beta, opts.qcqp_tol, opts.qcqp_cap)?;
                let mut cand = ris.clone();
                cand.beta = new_beta;
                let after = transformed_objective(ch, &cand, &bf, cfg, &aux, pm)?;
                if guard.check("split", before, after) {
                    ris = cand;
                }
            }

            // Phases, one face at a time.
            for face in [Region::Reflect, Region::Transmit] {
                let label = match face {
                    Region::Reflect => "phases-r",
                    Region::Transmit => "phases-t",
                };
                let before = transformed_objective(ch, &ris, &bf, cfg, &aux, pm)?;
                let problem = pdd::assemble_phase_problem(ch, &ris, &bf, cfg, &aux, face)?;
                match pdd::pdd_solve_face(&problem, ris.theta_face(face), &opts.pdd) {
                    Ok(report) => {
                        let mut cand = ris.clone();
                        match face {
                            Region::Reflect => cand.theta_r = report.theta,
                            Region::Transmit => cand.theta_t = report.theta,
                        }
                        let after = transformed_objective(ch, &cand, &bf, cfg, &aux, pm)?;
                        if guard.check(label, before, after) {
                            ris = cand;
                        }
                    }
                    // An unreachable floor here is a bracket failure; the
                    // entry phases already satisfy the refreshed floors.
                    Err(PddError::UserInfeasible { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }

            // Amplification gains.
            if let Some(mode) = l0_mode {
                let before = transformed_objective(ch, &ris, &bf, cfg, &aux, pm)?;
                let surrogate = alpha::assemble_alpha_surrogate(ch, &ris, &bf, cfg, &aux, mode)?;
                let gains_cur = alpha::subarray_gains(&ris, cfg);
                let (gains, _st) =
                    alpha::solve_alpha_subproblem(&surrogate, &gains_cur, opts.qcqp_tol, opts.qcqp_cap)?;
                let mut cand = ris.clone();
                write_gains(&mut cand, cfg, &gains);
                let after = transformed_objective(ch, &cand, &bf, cfg, &aux, pm)?;
                if guard.check("gains", before, after) {
                    ris = cand;
                }
            }

            let f = transformed_objective(ch, &ris, &bf, cfg, &aux, pm)?;
            if prev_f.is_finite() && rel_change(prev_f, f) < sweep_tol {
                break;
            }
            prev_f = f;
        }

        // Ratio refresh and trajectory bookkeeping.
        let rate_nats = model::sum_rate_nats(ch, &ris, &bf, cfg)?;
        let p_tot = model::power_total_with(ch, &ris, &bf, cfg, pm)?.p_tot;
        let step = fp::dinkelbach_update(rate_nats, p_tot, aux.eta)?;
        aux.eta = step.eta_next;
        let rate_bits = rate_nats / std::f64::consts::LN_2;
        let ee = rate_bits / p_tot;
        ee_trajectory.push(ee);
        rate_trajectory.push(rate_bits);
        power_trajectory.push(p_tot);
        if prev_ee.is_finite() && feasible && rel_change(prev_ee, ee) < opts.ee_tol {
            status = AoStatus::Converged;
            break;
        }
        prev_ee = ee;
    }

    if status != AoStatus::Infeasible && !feasible {
        status = AoStatus::Infeasible;
    }
    Ok(LoopOutcome {
        ris,
        bf,
        ee_trajectory,
        rate_trajectory,
        power_trajectory,
        block_trace,
        status,
        iterations,
    })
}

fn finish_report(out: LoopOutcome, active_count: usize, started: std::time::Instant) -> SolveReport {
    let ee = out.ee_trajectory.last().copied().unwrap_or(0.0);
    let rate = out.rate_trajectory.last().copied().unwrap_or(0.0);
    let power = out.power_trajectory.last().copied().unwrap_or(0.0);
    let guard_violations = out
        .block_trace
        .iter()
        .filter(|s| !s.accepted)
        .copied()
        .collect();
    SolveReport {
        ee_trajectory: out.ee_trajectory,
        rate_trajectory: out.rate_trajectory,
        power_trajectory: out.power_trajectory,
        iterations: out.iterations,
        status: out.status,
        ris: out.ris,
        bf: out.bf,
        active_count,
        ee,
        rate,
        power,
        block_trace: out.block_trace,
        guard_violations,
        ra_trail: Vec::new(),
        wall_seconds: started.elapsed().as_secs_f64(),
    }
}

/// Full pipeline on perfectly known channels: guarded block sweeps with a
/// single ratio refresh per iteration, then the amplifier pattern search.
pub fn solve_perfect_csi(
    ch: &ChannelSet,
    cfg: &SystemConfig,
    opts: &SolveOptions,
) -> Result<SolveReport, AoError> {
    let started = std::time::Instant::now();
    let (mut ris0, bf0) = initialize(ch, cfg, opts.init_seed)?;
    apply_pins(&mut ris0, cfg, opts);
    let main_mode = main_gain_mode(opts);
    let out = run_ao_loop(ch, cfg, &ris0, &bf0, opts, main_mode)?;
    let all_on = out.ris.active_count();
    if out.status == AoStatus::Infeasible || !opts.ra_search {
        return Ok(finish_report(out, all_on, started));
    }

    // Pattern search: nested masks in deactivation-priority order, each
    // candidate re-optimized with its count fixed, warm-started from its
    // predecessor.
    let order = ra::deactivation_order(&out.ris.alpha, cfg);
    let mut warm = (out.ris.clone(), out.bf.clone());
    let mut search_err = None;
    let search = ra::select_active_count(cfg.l_subarrays, &order, |_count, mask| {
        let mut ris = warm.0.clone();
        ris.active_mask = mask.to_vec();
        for l in 0..cfg.l_subarrays {
            if !mask[l] {
                ris.set_subarray_alpha(l, cfg.m_sub(), 1.0);
            }
        }
        let run = match run_ao_loop(ch, cfg, &ris, &warm.1, opts, Some(L0Mode::FixedCount)) {
            Ok(run) => run,
            Err(e) => {
                search_err = Some(e);
                return None;
            }
        };
        if run.status == AoStatus::Infeasible {
            return None;
        }
        let ee = *run.ee_trajectory.last()?;
        warm = (run.ris.clone(), run.bf.clone());
        Some((ee, run))
    });
    if let Some(e) = search_err {
        return Err(e);
    }

    match search {
        Some(found) => {
            let mut report = finish_report(found.best, found.best_count, started);
            report.ee = found.best_ee;
            report.ra_trail = found.candidates;
            Ok(report)
        }
        None => Ok(finish_report(out, all_on, started)),
    }
}

fn main_gain_mode(opts: &SolveOptions) -> Option<L0Mode> {
    if !opts.optimize_alpha {
        return None;
    }
    Some(if opts.sparsity {
        L0Mode::Surrogate {
            delta: opts.l0_delta,
        }
    } else {
        L0Mode::FixedCount
    })
}

/// Running sample averages of the surface subproblems over channel
/// realizations. Weights are uniform 1/r by construction of the running
/// mean.
#[derive(Default)]
pub struct CsmmAccumulator {
    pub count: usize,
    beta: Option<beta::BetaSurrogate>,
    phase_r: Option<pdd::PhaseProblem>,
    phase_t: Option<pdd::PhaseProblem>,
    alpha: Option<alpha::AlphaSurrogate>,
}

impl CsmmAccumulator {
    pub fn reset(&mut self) {
        *self = CsmmAccumulator::default();
    }

    /// Weight the newest draw carries.
    pub fn weight(&self) -> f64 {
        1.0 / self.count.max(1) as f64
    }

    pub fn advance(&mut self) {
        self.count += 1;
    }

    pub fn fold_beta(&mut self, fresh: beta::BetaSurrogate) -> &beta::BetaSurrogate {
        let w = self.weight();
        match &mut self.beta {
            Some(acc) => acc.blend(&fresh, w),
            None => self.beta = Some(fresh),
        }
        self.beta.as_ref().unwrap()
    }

    pub fn fold_phase(&mut self, face: Region, fresh: pdd::PhaseProblem) -> &pdd::PhaseProblem {
        let w = self.weight();
        let slot = match face {
            Region::Reflect => &mut self.phase_r,
            Region::Transmit => &mut self.phase_t,
        };
        match slot {
            Some(acc) => acc.blend(&fresh, w),
            None => *slot = Some(fresh),
        }
        slot.as_ref().unwrap()
    }

    pub fn fold_alpha(&mut self, fresh: alpha::AlphaSurrogate) -> &alpha::AlphaSurrogate {
        let w = self.weight();
        match &mut self.alpha {
            Some(acc) => acc.blend(&fresh, w),
            None => self.alpha = Some(fresh),
        }
        self.alpha.as_ref().unwrap()
    }
}

struct CsmmLoopOutcome {
    ris: RisConfig,
    bf: Beamformer,
    ee_trajectory: Vec<f64>,
    rate_trajectory: Vec<f64>,
    power_trajectory: Vec<f64>,
    block_trace: Vec<BlockStep>,
    status: AoStatus,
    iterations: usize,
}

/// Sample-mean sum rate (nats) and total power at the given variables over a
/// set of realizations.
fn sample_means(
    draws: &[ChannelSet],
    ris: &RisConfig,
    bf: &Beamformer,
    cfg: &SystemConfig,
    pm: PowerModel,
) -> Result<(f64, f64), AoError> {
    let mut rate = 0.0;
    let mut power = 0.0;
    for ch in draws {
        rate += model::sum_rate_nats(ch, ris, bf, cfg)?;
        power += model::power_total_with(ch, ris, bf, cfg, pm)?.p_tot;
    }
    let n = draws.len().max(1) as f64;
    Ok((rate / n, power / n))
}

#[allow(clippy::too_many_arguments)]
fn run_csmm_loop(
    sampler: &CsiSampler,
    cfg: &SystemConfig,
    ris0: &RisConfig,
    bf0: &Beamformer,
    opts: &SolveOptions,
    l0_mode: Option<L0Mode>,
    draw_counter: &mut u64,
) -> Result<CsmmLoopOutcome, AoError> {
    let est = sampler.estimate();
    let mut ris = ris0.clone();
    let mut bf = bf0.clone();
    let pm = opts.power_model;

    let gamma = fp::update_gamma(est, &ris, &bf, cfg)?;
    let nu = fp::update_nu(est, &ris, &bf, cfg, &gamma)?;
    let rate0 = model::sum_rate_nats(est, &ris, &bf, cfg)?;
    let p0 = model::power_total_with(est, &ris, &bf, cfg, pm)?.p_tot;
    let mut aux = AuxFp {
        gamma,
        nu,
        eta: if p0 > 0.0 { rate0 / p0 } else { 0.0 },
    };

    let mut ee_trajectory = Vec::new();
    let mut rate_trajectory = Vec::new();
    let mut power_trajectory = Vec::new();
    let mut block_trace = Vec::new();
    let mut status = AoStatus::IterationCap;
    let mut iterations = 0;
    let mut feasible = true_qos_ok(est, &ris, &bf, cfg)?;
    let mut prev_ee = f64::NAN;
    let restoration_cap = 3usize;

    'outer: for it in 0..opts.outer_cap {
        iterations = it + 1;

        // Beamformer and auxiliaries on the estimate, iterated to a fixed
        // point of their two-block subgame.
        let mut prev_f = f64::NAN;
        for _pass in 0..opts.w_inner_cap.max(1) {
            let mut guard = Guard {
                trace: &mut block_trace,
                iteration: it,
                tracking: feasible,
                tol: opts.guard_tol,
            };
            let before = transformed_objective(est, &ris, &bf, cfg, &aux, pm)?;
            let gamma = fp::update_gamma(est, &ris, &bf, cfg)?;
            let nu = fp::update_nu(est, &ris, &bf, cfg, &gamma)?;
            let trial = AuxFp {
                gamma,
                nu,
                eta: aux.eta,
            };
            let after = transformed_objective(est, &ris, &bf, cfg, &trial, pm)?;
            if guard.check("aux", before, after) {
                aux = trial;
            }

            let before = transformed_objective(est, &ris, &bf, cfg, &aux, pm)?;
            match beamforming::solve_beamforming(
                est,
                &ris,
                cfg,
                &aux,
                pm,
                opts.qcqp_tol,
                opts.qcqp_cap,
            ) {
                Ok((cand, st)) => {
                    if st == SolveStatus::Infeasible {
                        if !feasible {
                            if it + 1 >= restoration_cap {
                                status = AoStatus::Infeasible;
                                break 'outer;
                            }
                            bf = cand;
                        }
                    } else {
                        let after = transformed_objective(est, &ris, &cand, cfg, &aux, pm)?;
                        if guard.check("beams", before, after) {
                            bf = cand;
                        }
                        if !feasible {
                            feasible = true_qos_ok(est, &ris, &bf, cfg)?;
                        }
                    }
                }
                Err(SolverError::NegativeBudget(_)) => {
                    status = AoStatus::Infeasible;
                    break 'outer;
                }
                Err(e) => return Err(e.into()),
            }

            let f = transformed_objective(est, &ris, &bf, cfg, &aux, pm)?;
            if prev_f.is_finite() && rel_change(prev_f, f) < 1e-6 {
                break;
            }
            prev_f = f;
        }

        // Surface blocks against running sample averages over fresh draws.
        // Guards evaluate the newest draw so the zero-error single-draw case
        // reduces exactly to the perfect-channel sweep.
        let mut acc = CsmmAccumulator::default();
        let mut draws = Vec::with_capacity(opts.r_cap.max(1));
        for _r in 0..opts.r_cap.max(1) {
            let draw = sampler.realization(*draw_counter);
            *draw_counter += 1;
            acc.advance();
            let mut guard = Guard {
                trace: &mut block_trace,
                iteration: it,
                tracking: feasible,
                tol: opts.guard_tol,
            };

            if opts.optimize_beta {
                let before = transformed_objective(&draw, &ris, &bf, cfg, &aux, pm)?;
                let fresh = beta::assemble_beta_surrogate(&draw, &ris, &bf, cfg, &aux)?;
                let averaged = acc.fold_beta(fresh);
                let (new_beta, _st) = beta::solve_beta_subproblem(
                    averaged,
                    &ris.beta,
                    opts.qcqp_tol,
                    opts.qcqp_cap,
                )?;
                let mut cand = ris.clone();
                cand.beta = new_beta;
                let after = transformed_objective(&draw, &cand, &bf, cfg, &aux, pm)?;
                if guard.check("split", before, after) {
                    ris = cand;
                }
            }

            for face in [Region::Reflect, Region::Transmit] {
                let label = match face {
                    Region::Reflect => "phases-r",
                    Region::Transmit => "phases-t",
                };
                let before = transformed_objective(&draw, &ris, &bf, cfg, &aux, pm)?;
                let fresh = pdd::assemble_phase_problem(&draw, &ris, &bf, cfg, &aux, face)?;
                let averaged = acc.fold_phase(face, fresh);
                match pdd::pdd_solve_face(averaged, ris.theta_face(face), &opts.pdd) {
                    Ok(report) => {
                        let mut cand = ris.clone();
                        match face {
                            Region::Reflect => cand.theta_r = report.theta,
                            Region::Transmit => cand.theta_t = report.theta,
                        }
                        let after = transformed_objective(&draw, &cand, &bf, cfg, &aux, pm)?;
                        if guard.check(label, before, after) {
                            ris = cand;
                        }
                    }
                    Err(PddError::UserInfeasible { .. }) => {}
                    Err(e) => return Err(e.into()),
                }
            }

            if let Some(mode) = l0_mode {
                let before = transformed_objective(&draw, &ris, &bf, cfg, &aux, pm)?;
                let fresh = alpha::assemble_alpha_surrogate(&draw, &ris, &bf, cfg, &aux, mode)?;
                let averaged = acc.fold_alpha(fresh);
                let gains_cur = alpha::subarray_gains(&ris, cfg);
                let (gains, _st) = alpha::solve_alpha_subproblem(
                    averaged,
                    &gains_cur,
                    opts.qcqp_tol,
                    opts.qcqp_cap,
                )?;
                let mut cand = ris.clone();
                write_gains(&mut cand, cfg, &gains);
                let after = transformed_objective(&draw, &cand, &bf, cfg, &aux, pm)?;
                if guard.check("gains", before, after) {
                    ris = cand;
                }
            }

            draws.push(draw);
        }

        // Ratio refresh from the sample averages at the swept variables.
        let (mean_rate, mean_power) = sample_means(&draws, &ris, &bf, cfg, pm)?;
        let step = fp::dinkelbach_update(mean_rate, mean_power, aux.eta)?;
        aux.eta = step.eta_next;
        let rate_bits = mean_rate / std::f64::consts::LN_2;
        let ee = rate_bits / mean_power;
        ee_trajectory.push(ee);
        rate_trajectory.push(rate_bits);
        power_trajectory.push(mean_power);
        if prev_ee.is_finite() && feasible && rel_change(prev_ee, ee) < opts.ee_tol {
            status = AoStatus::Converged;
            break;
        }
        prev_ee = ee;
    }

    if status != AoStatus::Infeasible && !feasible {
        status = AoStatus::Infeasible;
    }
    Ok(CsmmLoopOutcome {
        ris,
        bf,
        ee_trajectory,
        rate_trajectory,
        power_trajectory,
        block_trace,
        status,
        iterations,
    })
}

/// Sample-averaged pipeline on an estimated channel. Reported rates, powers,
/// and efficiencies are sample means over the solver's own realizations;
/// evaluate the returned variables on the true channels for ground-truth
/// figures.
pub fn solve_imperfect_csi(
    sampler: &CsiSampler,
    cfg: &SystemConfig,
    opts: &SolveOptions,
) -> Result<SolveReport, AoError> {
    let started = std::time::Instant::now();
    let est = sampler.estimate();
    let (mut ris0, bf0) = initialize(est, cfg, opts.init_seed)?;
    apply_pins(&mut ris0, cfg, opts);
    let mut draw_counter = 0u64;
    let main_mode = main_gain_mode(opts);
    let out = run_csmm_loop(sampler, cfg, &ris0, &bf0, opts, main_mode, &mut draw_counter)?;
    let all_on = out.ris.active_count();
    let csmm_report = |o: CsmmLoopOutcome, count: usize| {
        finish_report(
            LoopOutcome {
                ris: o.ris,
                bf: o.bf,
                ee_trajectory: o.ee_trajectory,
                rate_trajectory: o.rate_trajectory,
                power_trajectory: o.power_trajectory,
                block_trace: o.block_trace,
                status: o.status,
                iterations: o.iterations,
            },
            count,
            started,
        )
    };
    if out.status == AoStatus::Infeasible || !opts.ra_search {
        return Ok(csmm_report(out, all_on));
    }

    let order = ra::deactivation_order(&out.ris.alpha, cfg);
    let mut warm = (out.ris.clone(), out.bf.clone());
    let mut search_err = None;
    let search = ra::select_active_count(cfg.l_subarrays, &order, |_count, mask| {
        let mut ris = warm.0.clone();
        ris.active_mask = mask.to_vec();
        for l in 0..cfg.l_subarrays {
            if !mask[l] {
                ris.set_subarray_alpha(l, cfg.m_sub(), 1.0);
            }
        }
        let run = match run_csmm_loop(
            sampler,
            cfg,
            &ris,
            &warm.1,
            opts,
            Some(L0Mode::FixedCount),
            &mut draw_counter,
        ) {
            Ok(run) => run,
            Err(e) => {
                search_err = Some(e);
                return None;
            }
        };
        if run.status == AoStatus::Infeasible {
            return None;
        }
        let ee = *run.ee_trajectory.last()?;
        warm = (run.ris.clone(), run.bf.clone());
        Some((ee, run))
    });
    if let Some(e) = search_err {
        return Err(e);
    }

    match search {
        Some(found) => {
            let mut report = csmm_report(found.best, found.best_count);
            report.ee = found.best_ee;
            report.ra_trail = found.candidates;
            Ok(report)
        }
        None => Ok(csmm_report(out, all_on)),
    }
}
