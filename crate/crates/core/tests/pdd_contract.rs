//! Contract tests for the two-layer phase solver: each block update is held
//! to its closed form or KKT condition against independent oracles (finite
//! differences, per-element phase grids, radial projections), and the full
//! face solve is held to the consensus, modulus, and descent guarantees.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use risee_core::fp::{update_gamma, update_nu, AuxFp};
use risee_core::model::{user_rate, Beamformer, ChannelSet, Region, RisConfig, SystemConfig};
use risee_core::pdd::{
    assemble_phase_problem, pdd_outer_step, pdd_solve, pdd_solve_face, update_phi, update_psi,
    update_theta, PddOptions, PddState, PddStatus, PhaseProblem, PhaseUser,
};
use risee_core::{C64, CMat, CVec};

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rand_c64(rng: &mut ChaCha12Rng) -> C64 {
    C64::new(gauss(rng), gauss(rng))
}

fn rand_cvec(rng: &mut ChaCha12Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| rand_c64(rng))
}

fn unit_phases(rng: &mut ChaCha12Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| {
        let a = rng.gen_range(0.0..std::f64::consts::TAU);
        C64::new(a.cos(), a.sin())
    })
}

fn rand_psd(rng: &mut ChaCha12Rng, n: usize) -> CMat {
    let a = CMat::from_fn(n, n, |_, _| rand_c64(rng));
    a.ad_mul(&a)
}

fn rand_user(rng: &mut ChaCha12Rng, m: usize, idx: usize) -> PhaseUser {
    PhaseUser {
        v_mat: rand_psd(rng, m),
        v_vec: rand_cvec(rng, m),
        c4: gauss(rng),
        user: idx,
    }
}

fn rand_problem(rng: &mut ChaCha12Rng, m: usize, k: usize) -> PhaseProblem {
    PhaseProblem {
        v_mat: rand_psd(rng, m),
        v_vec: rand_cvec(rng, m),
        constant: gauss(rng),
        users: (0..k).map(|i| rand_user(rng, m, i)).collect(),
        face: Region::Reflect,
    }
}

fn rand_state(rng: &mut ChaCha12Rng, m: usize, k: usize, rho: f64) -> PddState {
    PddState {
        theta: rand_cvec(rng, m),
        phi: unit_phases(rng, m),
        psi: (0..k).map(|_| rand_cvec(rng, m)).collect(),
        mu1: rand_cvec(rng, m) * C64::new(0.3, 0.0),
        mu2: (0..k)
            .map(|_| rand_cvec(rng, m) * C64::new(0.3, 0.0))
            .collect(),
        rho,
    }
}

/// The augmented Lagrangian the inner sweep block-minimizes.
fn al_value(p: &PhaseProblem, st: &PddState, theta: &CVec) -> f64 {
    let w = 1.0 / st.rho;
    let mut al = p.objective(theta);
    al += w * (theta - &st.phi + &st.mu1 * C64::new(st.rho, 0.0)).norm_squared();
    for (idx, psi) in st.psi.iter().enumerate() {
        al += w * (theta - psi + &st.mu2[idx] * C64::new(st.rho, 0.0)).norm_squared();
    }
    al
}

/// Analytic Wirtinger-style gradient of the augmented Lagrangian: 2g with
/// g = Vθ + v + (1/ρ)(θ−φ+ρμ1) + Σ_k (1/ρ)(θ−ψ_k+ρμ2_k).
fn al_gradient(p: &PhaseProblem, st: &PddState, theta: &CVec) -> CVec {
    let w = C64::new(1.0 / st.rho, 0.0);
    let rho = C64::new(st.rho, 0.0);
    let mut g = &p.v_mat * theta + &p.v_vec;
    g += (theta - &st.phi + &st.mu1 * rho) * w;
    for (idx, psi) in st.psi.iter().enumerate() {
        g += (theta - psi + &st.mu2[idx] * rho) * w;
    }
    g * C64::new(2.0, 0.0)
}

#[test]
fn theta_update_returns_the_consensus_fixed_point() {
    // Zero curvature, zero tilt, zero duals, and every copy already agreeing
    // leave nothing to move: the minimizer is the common copy itself.
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for &k in &[0usize, 1, 3] {
        let m = 5;
        let phi = unit_phases(&mut rng, m);
        let p = PhaseProblem {
            v_mat: CMat::zeros(m, m),
            v_vec: CVec::zeros(m),
            constant: 0.0,
            users: (0..k).map(|i| rand_user(&mut rng, m, i)).collect(),
            face: Region::Transmit,
        };
        let st = PddState {
            theta: rand_cvec(&mut rng, m),
            phi: phi.clone(),
            psi: vec![phi.clone(); k],
            mu1: CVec::zeros(m),
            mu2: vec![CVec::zeros(m); k],
            rho: 0.7,
        };
        let theta = update_theta(&p, &st);
        assert!(
            (&theta - &phi).norm() <= 1e-12,
            "k={k}: moved off the agreed copy by {}",
            (&theta - &phi).norm()
        );
    }
}

#[test]
fn theta_update_is_stationary_on_the_augmented_lagrangian() {
    // First a finite-difference check that the analytic gradient is the
    // right one, then the analytic gradient at the returned minimizer.
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    for trial in 0..10 {
        let m = rng.gen_range(2..=5);
        let k = rng.gen_range(0..=3);
        let p = rand_problem(&mut rng, m, k);
        let rho = rng.gen_range(0.05..2.0);
        let st = rand_state(&mut rng, m, k, rho);
        let theta = rand_cvec(&mut rng, m);
        let grad = al_gradient(&p, &st, &theta);
        let h = 1e-5;
        for i in 0..m {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[i] += C64::new(h, 0.0);
            dn[i] -= C64::new(h, 0.0);
            let fd_re = (al_value(&p, &st, &up) - al_value(&p, &st, &dn)) / (2.0 * h);
            up = theta.clone();
            dn = theta.clone();
            up[i] += C64::new(0.0, h);
            dn[i] -= C64::new(0.0, h);
            let fd_im = (al_value(&p, &st, &up) - al_value(&p, &st, &dn)) / (2.0 * h);
            let scale = 1.0 + fd_re.abs().max(fd_im.abs());
            assert!(
                (fd_re - grad[i].re).abs() <= 1e-5 * scale,
                "trial {trial} coord {i}: fd {fd_re} vs analytic {}",
                grad[i].re
            );
            assert!(
                (fd_im - grad[i].im).abs() <= 1e-5 * scale,
                "trial {trial} coord {i}: fd {fd_im} vs analytic {}",
                grad[i].im
            );
        }
    }
    for trial in 0..50 {
        let m = rng.gen_range(2..=6);
        let k = rng.gen_range(0..=3);
        let p = rand_problem(&mut rng, m, k);
        let rho = rng.gen_range(0.05..2.0);
        let st = rand_state(&mut rng, m, k, rho);
        let theta = update_theta(&p, &st);
        let grad = al_gradient(&p, &st, &theta);
        let scale = 1.0 + p.v_vec.norm() + theta.norm() / st.rho;
        assert!(
            grad.norm() <= 1e-8 * scale,
            "trial {trial}: residual gradient {} at scale {scale}",
            grad.norm()
        );
    }
}

#[test]
fn tiny_penalty_pulls_theta_to_the_mean_of_targets() {
    // As the penalty weight blows up the quadratic data stops mattering and
    // the minimizer collapses onto the average of the consensus targets.
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    for _ in 0..20 {
        let m = rng.gen_range(2..=6);
        let k = rng.gen_range(0..=3);
        let p = rand_problem(&mut rng, m, k);
        let mut st = rand_state(&mut rng, m, k, 1e-6);
        st.mu1 = CVec::zeros(m);
        st.mu2 = vec![CVec::zeros(m); k];
        let theta = update_theta(&p, &st);
        let mut mean = st.phi.clone();
        for psi in &st.psi {
            mean += psi;
        }
        mean /= C64::new(k as f64 + 1.0, 0.0);
        assert!(
            (&theta - &mean).norm() <= 1e-4 * (1.0 + mean.norm()),
            "theta strayed {} from the target mean",
            (&theta - &mean).norm()
        );
    }
}

#[test]
fn phi_update_is_an_elementwise_phase_projection() {
    let mut rng = ChaCha12Rng::seed_from_u64(4);

    // Real positive stays at phase zero; a positive imaginary part lands on i.
    let theta = CVec::from_vec(vec![C64::new(2.5, 0.0), C64::new(0.0, 0.3)]);
    let phi = update_phi(&theta, &CVec::zeros(2), 0.9);
    assert!((phi[0] - C64::new(1.0, 0.0)).norm() <= 1e-15);
    assert!((phi[1] - C64::new(0.0, 1.0)).norm() <= 1e-15);

    // An exactly zero target has no phase; the projection pins it to 1.
    let phi = update_phi(&CVec::zeros(3), &CVec::zeros(3), 1.0);
    for i in 0..3 {
        assert_eq!(phi[i], C64::new(1.0, 0.0));
    }

    // Against a dense per-element phase grid the projection maximizes the
    // real alignment with theta + rho*mu1, and is exactly unit modulus.
    for _ in 0..12 {
        let m = rng.gen_range(1..=6);
        let theta = rand_cvec(&mut rng, m);
        let mu1 = rand_cvec(&mut rng, m);
        let rho = rng.gen_range(0.05..3.0);
        let phi = update_phi(&theta, &mu1, rho);
        for i in 0..m {
            assert!((phi[i].norm() - 1.0).abs() <= 1e-12, "modulus {}", phi[i].norm());
            let z = theta[i] + mu1[i] * C64::new(rho, 0.0);
            let got = (z.conj() * phi[i]).re;
            for g in 0..1000 {
                let a = g as f64 / 1000.0 * std::f64::consts::TAU;
                let cand = (z.conj() * C64::new(a.cos(), a.sin())).re;
                assert!(
                    got >= cand - 1e-9 * (1.0 + z.norm()),
                    "grid phase {a} beats the projection: {cand} > {got}"
                );
            }
        }
    }
}

#[test]
fn psi_update_passes_through_when_the_floor_is_slack() {
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let m = 4;
    let user = PhaseUser {
        v_mat: rand_psd(&mut rng, m),
        v_vec: rand_cvec(&mut rng, m),
        c4: 1e9,
        user: 0,
    };
    let target = rand_cvec(&mut rng, m);
    let (psi, mu3) = update_psi(&user, &target, 1e-9).unwrap();
    assert_eq!(mu3, 0.0);
    assert!(
        (&psi - &target).norm() <= 1e-10 * (1.0 + target.norm()),
        "slack projection moved the target by {}",
        (&psi - &target).norm()
    );
}

#[test]
fn psi_update_shrinks_radially_on_the_unit_ball() {
    // V = I, v = 0, c = 1 makes the floor set the unit ball, so projecting a
    // norm-2 target is the radial closed form t/(1+mu3) with mu3 = 1.
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let m = 5;
    let user = PhaseUser {
        v_mat: CMat::identity(m, m),
        v_vec: CVec::zeros(m),
        c4: 1.0,
        user: 0,
    };
    let mut target = rand_cvec(&mut rng, m);
    target *= C64::new(2.0 / target.norm(), 0.0);
    let (psi, mu3) = update_psi(&user, &target, 1e-9).unwrap();
    assert!((psi.norm_squared() - 1.0).abs() <= 1e-7, "norm^2 {}", psi.norm_squared());
    assert!((mu3 - 1.0).abs() <= 1e-6, "multiplier {mu3}");
    let radial = &target * C64::new(1.0 / (1.0 + mu3), 0.0);
    assert!(
        (&psi - &radial).norm() <= 1e-8,
        "projection is not radial: off by {}",
        (&psi - &radial).norm()
    );
}

#[test]
fn psi_update_satisfies_complementary_slackness() {
    // Mix slack and active floors; at return the multiplier and the residual
    // can never both be large, and the copy sits inside the floor set.
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut active = 0;
    for trial in 0..50 {
        let m = rng.gen_range(2..=6);
        let mut user = rand_user(&mut rng, m, 0);
        let target = rand_cvec(&mut rng, m);
        let raw = target.dotc(&(&user.v_mat * &target)).re
            + 2.0 * target.dotc(&user.v_vec).re;
        // Half the trials put the floor below the target's value (active),
        // half above (slack).
        user.c4 = if trial % 2 == 0 { raw - rng.gen_range(0.5..3.0) } else { raw + 1.0 };
        let (psi, mu3) = update_psi(&user, &target, 1e-9).unwrap();
        let value =
            psi.dotc(&(&user.v_mat * &psi)).re + 2.0 * psi.dotc(&user.v_vec).re;
        let residual = value - user.c4;
        let band = 1e-6 * (1.0 + user.c4.abs());
        assert!(residual <= band, "trial {trial}: copy outside the floor by {residual}");
        assert!(
            mu3 * residual.abs() <= band,
            "trial {trial}: slackness violated, mu3 {mu3} residual {residual}"
        );
        if mu3 > 0.0 {
            active += 1;
        }
    }
    assert!(active >= 20, "only {active} active projections; oracle undersampled");
}

#[test]
fn outer_step_updates_duals_or_penalty_exactly() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let m = 4;

    // Perfect agreement: everything frozen.
    let phi = unit_phases(&mut rng, m);
    let mut st = PddState {
        theta: phi.clone(),
        phi: phi.clone(),
        psi: vec![phi.clone(); 2],
        mu1: rand_cvec(&mut rng, m),
        mu2: vec![rand_cvec(&mut rng, m); 2],
        rho: 0.5,
    };
    let mu1_before = st.mu1.clone();
    let mu2_before = st.mu2.clone();
    let s = pdd_outer_step(&mut st, 1e-3, 0.8);
    assert_eq!(s, 0.0);
    assert_eq!(st.rho, 0.5);
    assert_eq!(st.mu1, mu1_before);
    assert_eq!(st.mu2, mu2_before);

    // Large gap: the penalty stiffens by exactly c_rho and duals freeze.
    let mut st = rand_state(&mut rng, m, 2, 0.5);
    st.theta = &st.phi + CVec::from_element(m, C64::new(1.0, 0.0));
    let mu1_before = st.mu1.clone();
    let s = pdd_outer_step(&mut st, 1e-3, 0.8);
    assert!(s >= 1.0);
    assert_eq!(st.rho, 0.5 * 0.8);
    assert_eq!(st.mu1, mu1_before);

    // Small gap: duals absorb the scaled residuals and the penalty freezes.
    let mut st = rand_state(&mut rng, m, 1, 0.5);
    let eps = 1e-5;
    st.phi = st.theta.clone();
    st.phi[0] += C64::new(eps, 0.0);
    st.psi[0] = st.theta.clone();
    st.psi[0][1] += C64::new(0.0, eps);
    let mu1_before = st.mu1.clone();
    let mu2_before = st.mu2[0].clone();
    let s = pdd_outer_step(&mut st, 1e-3, 0.8);
    assert!((s - eps).abs() <= 1e-12);
    assert_eq!(st.rho, 0.5);
    let d1 = (&st.mu1 - &mu1_before)[0] - C64::new(-eps / 0.5, 0.0);
    assert!(d1.norm() <= 1e-15, "mu1 absorbed wrong residual");
    let d2 = (&st.mu2[0] - &mu2_before)[1] - C64::new(0.0, -eps / 0.5);
    assert!(d2.norm() <= 1e-15, "mu2 absorbed wrong residual");
}

struct Scenario {
    cfg: SystemConfig,
    ch: ChannelSet,
    ris: RisConfig,
    bf: Beamformer,
    aux: AuxFp,
}

/// A random system state whose entry phases satisfy every rate floor with a
/// factor-two margin, so the face subproblems are strictly feasible.
fn feasible_scenario(seed: u64) -> Scenario {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=3);
    let m_sub = rng.gen_range(1..=3);
    let l = rng.gen_range(1..=3);
    let k_r = rng.gen_range(1..=2);
    let k_t = rng.gen_range(0..=2);
    let mut cfg = SystemConfig {
        n_antennas: n,
        m_elements: m_sub * l,
        l_subarrays: l,
        k_r,
        k_t,
        p_max_bs: 4.0,
        p_max_ris: 10.0,
        alpha_max: 12.0,
        r_min: 0.0,
        sigma2_user: 5e-2,
        sigma2_ris: 2e-2,
        xi_bs: 1.2,
        xi_ris: 1.1,
        p_bs_static: 1.5,
        p_ps: 1.25e-3,
        p_pdu: 1.25e-3,
        p_ra: 10e-3,
    };
    let k = k_r + k_t;
    let ch = ChannelSet {
        g: CMat::from_fn(cfg.m_elements, n, |_, _| rand_c64(&mut rng)),
        h_d: (0..k).map(|_| rand_cvec(&mut rng, n)).collect(),
        h_r: (0..k).map(|_| rand_cvec(&mut rng, cfg.m_elements)).collect(),
        regions: (0..k)
            .map(|i| if i < k_r { Region::Reflect } else { Region::Transmit })
            .collect(),
    };
    let mut ris = RisConfig::passthrough(&cfg);
    ris.theta_r = unit_phases(&mut rng, cfg.m_elements);
    ris.theta_t = unit_phases(&mut rng, cfg.m_elements);
    ris.beta = risee_core::RVec::from_fn(cfg.m_elements, |_, _| rng.gen_range(0.3..0.9));
    for l_idx in 0..l {
        ris.set_subarray_alpha(l_idx, m_sub, rng.gen_range(1.0..2.5));
    }
    let bf = Beamformer {
        w: (0..k)
            .map(|_| rand_cvec(&mut rng, n) * C64::new(0.4, 0.0))
            .collect(),
    };
    let min_rate = (0..k)
        .map(|i| user_rate(&ch, &ris, &bf, &cfg, i).unwrap())
        .fold(f64::INFINITY, f64::min);
    cfg.r_min = 0.5 * min_rate;
    let gamma = update_gamma(&ch, &ris, &bf, &cfg).unwrap();
    let nu = update_nu(&ch, &ris, &bf, &cfg, &gamma).unwrap();
    let aux = AuxFp { gamma, nu, eta: 0.5 };
    Scenario { cfg, ch, ris, bf, aux }
}

#[test]
fn inner_sweep_never_raises_the_augmented_lagrangian() {
    // Each block exactly minimizes the augmented Lagrangian in its own
    // variable, so the value must be non-increasing after every one of the
    // theta, phi, psi updates within a sweep.
    for seed in 0..10u64 {
        let s = feasible_scenario(800 + seed);
        for face in [Region::Reflect, Region::Transmit] {
            let p = assemble_phase_problem(&s.ch, &s.ris, &s.bf, &s.cfg, &s.aux, face).unwrap();
            let mut st = PddState::from_entry(&p, s.ris.theta_face(face), 0.5);
            for sweep in 0..6 {
                let mut prev = al_value(&p, &st, &st.theta);
                st.theta = update_theta(&p, &st);
                let after_theta = al_value(&p, &st, &st.theta);
                let tol = 1e-9 * (1.0 + prev.abs());
                assert!(after_theta <= prev + tol, "sweep {sweep}: theta raised the AL");
                prev = after_theta;

                st.phi = update_phi(&st.theta, &st.mu1, st.rho);
                let after_phi = al_value(&p, &st, &st.theta);
                assert!(after_phi <= prev + tol, "sweep {sweep}: phi raised the AL");
                prev = after_phi;

                for idx in 0..p.users.len() {
                    let target = &st.theta + &st.mu2[idx] * C64::new(st.rho, 0.0);
                    let (psi, mu3) = update_psi(&p.users[idx], &target, 1e-9).unwrap();
                    let residual = p.users[idx].c4 + p.user_value(idx, &psi) - p.users[idx].c4;
                    let band = 1e-6 * (1.0 + p.users[idx].c4.abs());
                    assert!(
                        mu3 * residual.abs() <= band,
                        "sweep {sweep}: slackness violated on user {idx}"
                    );
                    st.psi[idx] = psi;
                }
                let after_psi = al_value(&p, &st, &st.theta);
                assert!(after_psi <= prev + tol, "sweep {sweep}: psi raised the AL");
                pdd_outer_step(&mut st, 1e-3, 0.8);
            }
        }
    }
}

#[test]
fn face_solver_meets_the_consensus_contract() {
    // The full two-layer run must agree to the outer tolerance, return
    // exactly unit-modulus phases, and never hand back something worse than
    // its entry point.
    let opts = PddOptions::default();
    for seed in 0..12u64 {
        let s = feasible_scenario(900 + seed);
        let (rep_r, rep_t) = pdd_solve(&s.ch, &s.ris, &s.bf, &s.cfg, &s.aux, &opts).unwrap();
        for (face, rep) in [(Region::Reflect, &rep_r), (Region::Transmit, &rep_t)] {
            assert_eq!(rep.status, PddStatus::Converged, "seed {seed} face {face:?}");
            assert!(rep.s_delta <= 1e-4, "seed {seed}: consensus gap {}", rep.s_delta);
            for i in 0..rep.theta.len() {
                assert!(
                    (rep.theta[i].norm() - 1.0).abs() <= 1e-12,
                    "seed {seed}: modulus {}",
                    rep.theta[i].norm()
                );
            }
            let p = assemble_phase_problem(&s.ch, &s.ris, &s.bf, &s.cfg, &s.aux, face).unwrap();
            let entry = p.objective(s.ris.theta_face(face));
            assert!(
                rep.objective <= entry + 1e-8 * (1.0 + entry.abs()),
                "seed {seed}: objective {} exceeds entry {entry}",
                rep.objective
            );
        }
    }
}

#[test]
fn face_solver_is_idempotent_at_its_fixed_point() {
    // A single run stops at its consensus tolerance, which can leave real
    // descent on the table, so first chain runs until the objective settles;
    // the fixed-point contract is that a further rerun from a settled point
    // stays put.
    let opts = PddOptions {
        rho0: 1.0,
        tau_max: 80,
        q_max: 40,
        s_out: 1e-8,
        s_min: 1e-6,
        ..PddOptions::default()
    };
    for seed in 0..6u64 {
        let s = feasible_scenario(950 + seed);
        let p =
            assemble_phase_problem(&s.ch, &s.ris, &s.bf, &s.cfg, &s.aux, Region::Reflect).unwrap();
        let mut theta = s.ris.theta_face(Region::Reflect).clone();
        let mut obj = f64::INFINITY;
        let mut settled = false;
        for _ in 0..30 {
            let rep = pdd_solve_face(&p, &theta, &opts).unwrap();
            let drift = (rep.objective - obj).abs() / (1.0 + rep.objective.abs());
            theta = rep.theta;
            obj = rep.objective;
            if drift < 1e-7 {
                settled = true;
                break;
            }
        }
        assert!(settled, "seed {seed}: solve chain never reached a fixed point");
        let rep = pdd_solve_face(&p, &theta, &opts).unwrap();
        assert!(
            (rep.objective - obj).abs() <= 1e-6 * (1.0 + obj.abs()),
            "seed {seed}: rerun moved the settled objective {obj} -> {}",
            rep.objective
        );
    }
}

#[test]
fn idle_transmitter_gives_a_trivial_phase_problem() {
    // All-zero beams zero out every quadratic and linear term, so any phase
    // vector is optimal and the solver just keeps a unit-modulus point.
    let mut s = feasible_scenario(999);
    s.cfg.r_min = 0.0;
    for w in &mut s.bf.w {
        w.fill(C64::new(0.0, 0.0));
    }
    let gamma = update_gamma(&s.ch, &s.ris, &s.bf, &s.cfg).unwrap();
    let nu = update_nu(&s.ch, &s.ris, &s.bf, &s.cfg, &gamma).unwrap();
    s.aux = AuxFp { gamma, nu, eta: 0.5 };
    let p = assemble_phase_problem(&s.ch, &s.ris, &s.bf, &s.cfg, &s.aux, Region::Reflect).unwrap();
    assert!(p.v_mat.norm() <= 1e-14, "quadratic term survives an idle transmitter");
    assert!(p.v_vec.norm() <= 1e-14, "linear term survives an idle transmitter");
    let rep = pdd_solve_face(&p, s.ris.theta_face(Region::Reflect), &PddOptions::default()).unwrap();
    for i in 0..rep.theta.len() {
        assert!((rep.theta[i].norm() - 1.0).abs() <= 1e-12);
    }
    let entry = p.objective(s.ris.theta_face(Region::Reflect));
    assert!((rep.objective - entry).abs() <= 1e-12 * (1.0 + entry.abs()));
}

#[test]
fn unconstrained_diagonal_problem_aligns_every_phase() {
    // With a diagonal quadratic the modulus constraint freezes the quadratic
    // term, so the minimizer opposes each linear coefficient's phase. A
    // per-element grid certifies the closed form before the solver is held
    // to it.
    let mut rng = ChaCha12Rng::seed_from_u64(60);
    let m = 6;
    let diag = CMat::from_fn(m, m, |i, j| {
        if i == j {
            C64::new(rng.gen_range(0.1..2.0), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let v = rand_cvec(&mut rng, m);
    let p = PhaseProblem {
        v_mat: diag,
        v_vec: v.clone(),
        constant: 0.0,
        users: vec![],
        face: Region::Reflect,
    };
    let closed = CVec::from_fn(m, |i, _| -v[i] / C64::new(v[i].norm(), 0.0));
    let mut grid_arg = CVec::zeros(m);
    // The objective separates per element on the unit circle, so a per
    // element grid scan is a global oracle.
    for i in 0..m {
        let mut best = (C64::new(1.0, 0.0), f64::INFINITY);
        for g in 0..4000 {
            let a = g as f64 / 4000.0 * std::f64::consts::TAU;
            let cand = C64::new(a.cos(), a.sin());
            let val = 2.0 * (v[i].conj() * cand).re;
            if val < best.1 {
                best = (cand, val);
            }
        }
        grid_arg[i] = best.0;
    }
    let grid_best = p.objective(&grid_arg);
    assert!(
        (&grid_arg - &closed).norm() <= 1e-2,
        "grid argmin disagrees with the phase-opposition closed form"
    );
    // A soft penalty start keeps the early sweeps data-driven; the shrink
    // schedule then finishes the consensus. The default start is tuned for
    // the fixed outer budget instead and stops far short of alignment.
    let opts = PddOptions {
        rho0: 5.0,
        tau_max: 80,
        q_max: 40,
        s_out: 1e-8,
        s_min: 1e-6,
        ..PddOptions::default()
    };
    let rep = pdd_solve_face(&p, &unit_phases(&mut rng, m), &opts).unwrap();
    assert!(
        rep.objective <= grid_best + 1e-6 * (1.0 + grid_best.abs()),
        "solver value {} vs grid oracle {grid_best}",
        rep.objective
    );
    for i in 0..m {
        assert!(
            (rep.theta[i] - closed[i]).norm() <= 1e-6,
            "element {i}: {} vs closed form {}",
            rep.theta[i],
            closed[i]
        );
    }
}
