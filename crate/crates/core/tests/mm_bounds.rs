// Majorization-bound contracts: every surrogate family must dominate its
// true term on a dense grid of evaluation points and touch it at the
// expansion point, and the eigenvalue routine must match an independent
// power-iteration oracle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use risee_core::mm::{
    l0_surrogate, lambda_max, quad_upper_bound, tangent_bound_concave_quad, tangent_bound_sqrt,
    MmError,
};
use risee_core::{C64, CMat, CVec, RVec};

fn gauss(rng: &mut ChaCha12Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn rand_cvec(rng: &mut ChaCha12Rng, n: usize) -> CVec {
    CVec::from_fn(n, |_, _| C64::new(gauss(rng), gauss(rng)))
}

fn rand_hermitian(rng: &mut ChaCha12Rng, n: usize) -> CMat {
    let raw = CMat::from_fn(n, n, |_, _| C64::new(gauss(rng), gauss(rng)));
    (&raw + raw.adjoint()) * C64::new(0.5, 0.0)
}

fn quad_form(u: &CMat, d: &CVec) -> f64 {
    d.dotc(&(u * d)).re
}

/// Independent largest-eigenvalue estimate: plain power iteration on the
/// Frobenius-shifted matrix, which is positive definite with the target
/// eigenvalue dominant in magnitude.
fn oracle_lambda_max(u: &CMat, rng: &mut ChaCha12Rng) -> f64 {
    let n = u.nrows();
    let shift = u.norm() + 1.0;
    let mut best = f64::NEG_INFINITY;
    for _ in 0..3 {
        let mut x = rand_cvec(rng, n);
        x /= C64::new(x.norm(), 0.0);
        for _ in 0..4000 {
            let mut y = u * &x;
            y.axpy(C64::new(shift, 0.0), &x, C64::new(1.0, 0.0));
            let norm = y.norm();
            if norm == 0.0 {
                break;
            }
            x = y / C64::new(norm, 0.0);
        }
        best = best.max(quad_form(u, &x));
    }
    best
}

#[test]
fn curvature_bound_dominates_and_touches() {
    let mut rng = ChaCha12Rng::seed_from_u64(100);
    for case in 0..1000 {
        let n = rng.gen_range(1..=6usize);
        let u = rand_hermitian(&mut rng, n);
        let d_i = rand_cvec(&mut rng, n);
        let s = quad_upper_bound(&u, &d_i).unwrap();

        let truth_i = quad_form(&u, &d_i);
        let scale = 1.0 + truth_i.abs();
        assert!(
            (s.eval(&d_i) - truth_i).abs() <= 1e-9 * scale,
            "case {case}: no touching, {} vs {truth_i}",
            s.eval(&d_i)
        );
        for _ in 0..4 {
            let d = rand_cvec(&mut rng, n) * C64::new(2.0, 0.0);
            let truth = quad_form(&u, &d);
            assert!(
                s.eval(&d) >= truth - 1e-10 * (1.0 + truth.abs()),
                "case {case}: bound {} below true {truth}",
                s.eval(&d)
            );
        }
    }
}

#[test]
fn identity_matrix_bound_is_the_norm() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let u = CMat::identity(4, 4);
    let d_i = rand_cvec(&mut rng, 4);
    let s = quad_upper_bound(&u, &d_i).unwrap();
    assert!((s.curvature - 1.0).abs() < 1e-9);
    assert!(s.linear.norm() < 1e-9);
    assert!(s.constant.abs() < 1e-9);
    let d = rand_cvec(&mut rng, 4);
    assert!((s.eval(&d) - d.norm_squared()).abs() <= 1e-9 * (1.0 + d.norm_squared()));
}

#[test]
fn lambda_max_matches_power_iteration_oracle() {
    let mut rng = ChaCha12Rng::seed_from_u64(200);
    for _ in 0..100 {
        let n = rng.gen_range(1..=8usize);
        let u = rand_hermitian(&mut rng, n);
        let lam = lambda_max(&u).unwrap();
        let oracle = oracle_lambda_max(&u, &mut rng);
        let scale = 1.0 + oracle.abs();
        assert!((lam - oracle).abs() <= 1e-8 * scale, "{lam} vs {oracle}");
    }
}

#[test]
fn lambda_max_closed_forms() {
    assert!((lambda_max(&CMat::identity(5, 5)).unwrap() - 1.0).abs() < 1e-10);
    assert_eq!(lambda_max(&CMat::zeros(3, 3)).unwrap(), 0.0);

    let d = CMat::from_fn(3, 3, |i, j| {
        if i == j {
            C64::new([1.0, 5.0, -3.0][i], 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    assert!((lambda_max(&d).unwrap() - 5.0).abs() < 1e-9);

    let skew = CMat::from_fn(2, 2, |i, j| {
        if i != j {
            C64::new(if i < j { 1.0 } else { -1.0 }, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    assert!(matches!(lambda_max(&skew), Err(MmError::NonHermitian)));
    assert!(matches!(
        lambda_max(&CMat::zeros(2, 3)),
        Err(MmError::NotSquare)
    ));
}

#[test]
fn concave_quad_tangent_dominates() {
    for lambda in [0.0, 0.5, 1.0, 3.0] {
        for beta_i in [0.0, 0.25, 0.5, 0.9, 1.0] {
            let (a, b, c) = tangent_bound_concave_quad(lambda, beta_i);
            assert_eq!(a, 0.0);
            for step in 0..=200 {
                let beta = step as f64 / 200.0;
                let truth = -lambda * beta * beta;
                let bound = b * beta + c;
                assert!(bound >= truth - 1e-12);
            }
            let at_i = b * beta_i + c;
            assert!((at_i + lambda * beta_i * beta_i).abs() < 1e-12);
        }
    }
    // Hand value: unit curvature expanded at one half.
    let (a, b, c) = tangent_bound_concave_quad(1.0, 0.5);
    assert_eq!((a, b, c), (0.0, -1.0, 0.25));
}

#[test]
fn sqrt_tangent_dominates_on_its_domain() {
    for step_i in 0..=40 {
        let beta_i = 0.999 * step_i as f64 / 40.0;
        let (a, c) = tangent_bound_sqrt(beta_i).unwrap();
        for step in 0..=400 {
            let beta = step as f64 / 400.0;
            let truth = (1.0 - beta * beta).sqrt();
            let bound = a * beta * beta + c;
            assert!(
                bound >= truth - 1e-10,
                "beta_i {beta_i} beta {beta}: {bound} < {truth}"
            );
        }
        let at_i = a * beta_i * beta_i + c;
        let truth_i = (1.0 - beta_i * beta_i).sqrt();
        assert!((at_i - truth_i).abs() < 1e-9);
    }

    // Expanded at zero the bound is the textbook 1 - b^2/2.
    let (a, c) = tangent_bound_sqrt(0.0).unwrap();
    assert_eq!((a, c), (-0.5, 1.0));

    for bad in [1.0, 1.0 - 1e-10, 1.5, -0.1] {
        assert!(matches!(
            tangent_bound_sqrt(bad),
            Err(MmError::ExpansionOutOfRange(_))
        ));
    }
}

fn subarray_devs(alpha: &RVec, l_subarrays: usize) -> Vec<f64> {
    let m_sub = alpha.len() / l_subarrays;
    (0..l_subarrays)
        .map(|l| {
            (l * m_sub..(l + 1) * m_sub)
                .map(|i| (alpha[i] - 1.0) * (alpha[i] - 1.0))
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

#[test]
fn activity_count_normalization() {
    // A single element at gain two deviates by exactly one, scoring one unit;
    // resting elements score zero.
    let delta = 1e-3;
    let one_on = RVec::from_vec(vec![2.0, 1.0, 1.0]);
    let s = l0_surrogate(&one_on, &one_on, 3, delta).unwrap();
    assert!((s.value - 1.0).abs() < 1e-12);

    let all_off = RVec::from_element(3, 1.0);
    let s0 = l0_surrogate(&all_off, &all_off, 3, delta).unwrap();
    assert_eq!(s0.value, 0.0);

    // The smoothed count grows with the deviation.
    let bigger = RVec::from_vec(vec![3.0, 1.0, 1.0]);
    let s2 = l0_surrogate(&bigger, &bigger, 3, delta).unwrap();
    assert!(s2.value > s.value);
}

#[test]
fn activity_majorizer_dominates_and_touches() {
    let mut rng = ChaCha12Rng::seed_from_u64(300);
    for case in 0..1000 {
        let l = rng.gen_range(1..=4usize);
        let m_sub = rng.gen_range(1..=3usize);
        let len = l * m_sub;
        let delta = 10f64.powf(rng.gen_range(-6.0..-1.0));
        let alpha_i = RVec::from_fn(len, |_, _| rng.gen_range(0.0..4.0));
        let alpha = RVec::from_fn(len, |_, _| rng.gen_range(0.0..4.0));

        let s = l0_surrogate(&alpha, &alpha_i, l, delta).unwrap();
        let devs = subarray_devs(&alpha, l);
        let majorized: f64 = s
            .bounds
            .iter()
            .zip(devs.iter())
            .map(|(b, &t)| b.eval(t))
            .sum();
        assert!(
            majorized >= s.value - 1e-10 * (1.0 + s.value.abs()),
            "case {case}: {majorized} < {}",
            s.value
        );

        let at_i = l0_surrogate(&alpha_i, &alpha_i, l, delta).unwrap();
        let devs_i = subarray_devs(&alpha_i, l);
        let touch: f64 = at_i
            .bounds
            .iter()
            .zip(devs_i.iter())
            .map(|(b, &t)| b.eval(t))
            .sum();
        assert!((touch - at_i.value).abs() <= 1e-9 * (1.0 + at_i.value.abs()));
    }
}

#[test]
fn activity_surrogate_rejects_bad_arguments() {
    let alpha = RVec::from_element(4, 1.0);
    assert!(matches!(
        l0_surrogate(&alpha, &alpha, 2, 0.0),
        Err(MmError::InvalidDelta)
    ));
    assert!(matches!(
        l0_surrogate(&alpha, &alpha, 2, -1.0),
        Err(MmError::InvalidDelta)
    ));
    let short = RVec::from_element(3, 1.0);
    assert!(matches!(
        l0_surrogate(&alpha, &short, 2, 1e-3),
        Err(MmError::DimensionMismatch(_))
    ));
    assert!(matches!(
        l0_surrogate(&alpha, &alpha, 3, 1e-3),
        Err(MmError::SubarrayMismatch)
    ));
    assert!(matches!(
        l0_surrogate(&alpha, &alpha, 0, 1e-3),
        Err(MmError::SubarrayMismatch)
    ));
}
