//! Built-in smoke checks: one fast probe per subsystem so a deployed binary
//! can vouch for itself without the development test suite.

use risee_core::ao::{solve_perfect_csi, AoStatus, SolveOptions};
use risee_core::channel::sample_channel_set;
use risee_core::fp::{ldt_objective, update_gamma, update_nu, AuxFp};
use risee_core::mm::quad_upper_bound;
use risee_core::model::{power_total, user_sinr};
use risee_core::pdd::{pdd_solve, PddOptions};
use risee_core::{C64, CMat, CVec};

use crate::config::ExperimentConfig;

type Check = (&'static str, fn() -> Result<(), String>);

fn channel_determinism() -> Result<(), String> {
    let ec = ExperimentConfig::desk();
    let (a, _) = sample_channel_set(&ec.geom, &ec.cfg, 7).map_err(|e| e.to_string())?;
    let (b, _) = sample_channel_set(&ec.geom, &ec.cfg, 7).map_err(|e| e.to_string())?;
    for k in 0..a.h_d.len() {
        if a.h_d[k] != b.h_d[k] {
            return Err("identical seeds produced different direct channels".into());
        }
    }
    Ok(())
}

fn quadratic_envelope() -> Result<(), String> {
    // Small fixed Hermitian PSD matrix: sum of two rank-one terms.
    let u1 = CVec::from_vec(vec![
        C64::new(1.0, 0.5),
        C64::new(-0.3, 0.8),
        C64::new(0.2, -0.1),
    ]);
    let u2 = CVec::from_vec(vec![
        C64::new(0.4, -0.2),
        C64::new(0.9, 0.1),
        C64::new(-0.6, 0.3),
    ]);
    let u: CMat = &u1 * u1.adjoint() + &u2 * u2.adjoint();
    let d_i = CVec::from_vec(vec![
        C64::new(0.3, -0.4),
        C64::new(-0.1, 0.2),
        C64::new(0.5, 0.0),
    ]);
    let sur = quad_upper_bound(&u, &d_i).map_err(|e| e.to_string())?;
    let target = |d: &CVec| (d.adjoint() * &u * d)[(0, 0)].re;
    if (sur.eval(&d_i) - target(&d_i)).abs() > 1e-9 {
        return Err("surrogate must touch its expansion point".into());
    }
    for t in [-1.0, -0.25, 0.5, 2.0] {
        let d = CVec::from_fn(3, |i, _| d_i[i] + C64::new(t * 0.7, -t * 0.3) * u1[i]);
        if sur.eval(&d) < target(&d) - 1e-10 {
            return Err(format!("surrogate fell below the quadratic at step {t}"));
        }
    }
    Ok(())
}

fn auxiliary_tightness() -> Result<(), String> {
    let ec = ExperimentConfig::desk();
    let (ch, _) = sample_channel_set(&ec.geom, &ec.cfg, 3).map_err(|e| e.to_string())?;
    let (ris, bf) = risee_core::ao::initialize(&ch, &ec.cfg, 11).map_err(|e| e.to_string())?;
    let gamma = update_gamma(&ch, &ris, &bf, &ec.cfg).map_err(|e| e.to_string())?;
    let nu = update_nu(&ch, &ris, &bf, &ec.cfg, &gamma).map_err(|e| e.to_string())?;
    let aux = AuxFp {
        gamma,
        nu,
        eta: 0.0,
    };
    let p = power_total(&ch, &ris, &bf, &ec.cfg).map_err(|e| e.to_string())?;
    let val = ldt_objective(&ch, &ris, &bf, &ec.cfg, &aux, p.p_tot).map_err(|e| e.to_string())?;
    let mut direct = 0.0;
    for k in 0..ec.cfg.k_total() {
        direct += (1.0 + user_sinr(&ch, &ris, &bf, &ec.cfg, k).map_err(|e| e.to_string())?).ln();
    }
    if (val.g_p - direct).abs() > 1e-9 {
        return Err(format!(
            "auxiliary updates must make the surrogate tight, gap {}",
            (val.g_p - direct).abs()
        ));
    }
    Ok(())
}

fn phase_subproblem() -> Result<(), String> {
    let mut ec = ExperimentConfig::desk();
    // No rate floors: the subproblem is then feasible at the entry point,
    // which is the regime the consensus contract covers.
    ec.cfg.r_min = 0.0;
    let (ch, _) = sample_channel_set(&ec.geom, &ec.cfg, 5).map_err(|e| e.to_string())?;
    let (ris, bf) = risee_core::ao::initialize(&ch, &ec.cfg, 13).map_err(|e| e.to_string())?;
    let gamma = update_gamma(&ch, &ris, &bf, &ec.cfg).map_err(|e| e.to_string())?;
    let nu = update_nu(&ch, &ris, &bf, &ec.cfg, &gamma).map_err(|e| e.to_string())?;
    let aux = AuxFp {
        gamma,
        nu,
        eta: 0.0,
    };
    let (r, t) = pdd_solve(&ch, &ris, &bf, &ec.cfg, &aux, &PddOptions::default())
        .map_err(|e| e.to_string())?;
    for rep in [&r, &t] {
        for m in 0..rep.theta.len() {
            if (rep.theta[m].norm() - 1.0).abs() > 1e-12 {
                return Err("phase solution strayed off the unit circle".into());
            }
        }
        if rep.s_delta > 1e-4 {
            return Err(format!("consensus gap {} above 1e-4", rep.s_delta));
        }
    }
    Ok(())
}

fn end_to_end_desk() -> Result<(), String> {
    let ec = ExperimentConfig::desk();
    let (ch, _) = sample_channel_set(&ec.geom, &ec.cfg, 0).map_err(|e| e.to_string())?;
    let opts = SolveOptions::default();
    let report = solve_perfect_csi(&ch, &ec.cfg, &opts).map_err(|e| e.to_string())?;
    if report.status == AoStatus::Infeasible {
        return Err("reference desk scenario came back infeasible".into());
    }
    if !(report.ee.is_finite() && report.ee > 0.0) {
        return Err(format!("non-finite or non-positive efficiency {}", report.ee));
    }
    for w in report.ee_trajectory.windows(2) {
        if w[1] < w[0] - 1e-6 * (1.0 + w[0].abs()) {
            return Err(format!("efficiency fell from {} to {}", w[0], w[1]));
        }
    }
    Ok(())
}

pub const CHECKS: [Check; 5] = [
    ("channel_determinism", channel_determinism),
    ("quadratic_envelope", quadratic_envelope),
    ("auxiliary_tightness", auxiliary_tightness),
    ("phase_subproblem", phase_subproblem),
    ("end_to_end_desk", end_to_end_desk),
];

/// Runs every check, printing one line each. Returns the failure count.
pub fn run_selftest() -> usize {
    let mut failures = 0;
    for (name, check) in CHECKS {
        match check() {
            Ok(()) => println!("selftest {name}: ok"),
            Err(message) => {
                failures += 1;
                println!("selftest {name}: FAIL: {message}");
            }
        }
    }
    failures
}
