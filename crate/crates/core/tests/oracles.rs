//! Numerical kernels checked against closed forms and an independent linear
//! algebra implementation.

use copert_core::lti::{dlqr, hinf_norm, spectral_radius, zoh_discretize, StateSpace};
use copert_core::numkernel::{eigenvalues, expm, linear_solve, symmetric_eigenvalues};
use copert_core::plants::{integrate_with, IntegratorOptions};
use copert_core::Matrix;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-scale..scale))
}

#[test]
fn zoh_scalar_closed_form() {
    for (a, b, dt) in [(-0.5, 2.0, 0.1), (0.3, -1.0, 0.02), (-4.0, 0.7, 0.5)] {
        let (ad, bd) = zoh_discretize(&Matrix::filled(1, 1, a), &Matrix::filled(1, 1, b), dt).unwrap();
        let e = (a * dt).exp();
        assert!((ad.get(0, 0) - e).abs() < 1e-9);
        assert!((bd.get(0, 0) - (e - 1.0) / a * b).abs() < 1e-9);
    }
}

#[test]
fn zoh_double_integrator() {
    let dt = 0.1;
    let (ad, bd) = zoh_discretize(
        &Matrix::from_rows(&[[0.0, 1.0], [0.0, 0.0]]),
        &Matrix::from_rows(&[[0.0], [1.0]]),
        dt,
    )
    .unwrap();
    assert!((&ad - &Matrix::from_rows(&[[1.0, dt], [0.0, 1.0]])).max_abs() < 1e-9);
    assert!((&bd - &Matrix::from_rows(&[[dt * dt / 2.0], [dt]])).max_abs() < 1e-9);
}

#[test]
fn zoh_harmonic_oscillator() {
    let (w, dt) = (2.0f64, 0.3);
    let (ad, _) = zoh_discretize(
        &Matrix::from_rows(&[[0.0, w], [-w, 0.0]]),
        &Matrix::from_rows(&[[0.0], [1.0]]),
        dt,
    )
    .unwrap();
    let (s, c) = (w * dt).sin_cos();
    assert!((&ad - &Matrix::from_rows(&[[c, s], [-s, c]])).max_abs() < 1e-9);
}

#[test]
fn expm_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [1, 2, 5, 9] {
        for scale in [0.1, 1.0, 4.0] {
            let a = random_matrix(&mut rng, n, n, scale);
            let ours = expm(&a).unwrap();
            let theirs = to_na(&a).exp();
            let ours_na = to_na(&ours);
            let rel = (&ours_na - &theirs).abs().max() / theirs.abs().max().max(1.0);
            assert!(rel < 1e-10, "n={n} scale={scale}: {rel}");
        }
    }
}

#[test]
fn linear_solve_matches_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [1, 3, 8, 20] {
        let a = &random_matrix(&mut rng, n, n, 1.0) + &Matrix::identity(n).scale(n as f64);
        let b = random_matrix(&mut rng, n, 3, 1.0);
        let x = linear_solve(&a, &b).unwrap();
        let oracle = to_na(&a).lu().solve(&to_na(&b)).unwrap();
        assert!((&to_na(&x) - &oracle).abs().max() < 1e-12);
    }
}

#[test]
fn eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [2, 3, 6, 12, 20] {
        for _ in 0..5 {
            let a = random_matrix(&mut rng, n, n, 1.0);
            let mut ours: Vec<f64> = eigenvalues(&a).unwrap().iter().map(|(r, i)| r.hypot(*i)).collect();
            let mut theirs: Vec<f64> = to_na(&a).complex_eigenvalues().iter().map(|z| z.norm()).collect();
            ours.sort_by(f64::total_cmp);
            theirs.sort_by(f64::total_cmp);
            for (x, y) in ours.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-8, "n={n}: {ours:?} vs {theirs:?}");
            }
            let rho = spectral_radius(&a).unwrap();
            assert!((rho - theirs[n - 1]).abs() < 1e-8);
        }
    }
}

#[test]
fn symmetric_eigenvalues_match_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in [1, 4, 10] {
        let g = random_matrix(&mut rng, n, n, 1.0);
        let s = &g + &g.transpose();
        let ours = symmetric_eigenvalues(&s).unwrap();
        let mut theirs: Vec<f64> = to_na(&s).symmetric_eigenvalues().iter().copied().collect();
        theirs.sort_by(f64::total_cmp);
        for (x, y) in ours.iter().zip(&theirs) {
            assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn dlqr_scalar_golden_ratio() {
    let one = Matrix::identity(1);
    let sol = dlqr(&one, &one, &one, &one).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((sol.cost.get(0, 0) - phi).abs() < 1e-8);
    // K = P / (1 + P)
    assert!((sol.gain.get(0, 0) - phi / (1.0 + phi)).abs() < 1e-8);
}

#[test]
fn dlqr_satisfies_riccati_against_nalgebra() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random_matrix(&mut rng, 4, 4, 0.8);
    let b = random_matrix(&mut rng, 4, 2, 1.0);
    let q = Matrix::identity(4);
    let r = Matrix::identity(2);
    let sol = dlqr(&a, &b, &q, &r).unwrap();
    let (na, nb, p) = (to_na(&a), to_na(&b), to_na(&sol.cost));
    let s = DMatrix::identity(2, 2) + nb.transpose() * &p * &nb;
    let k = s.lu().solve(&(nb.transpose() * &p * &na)).unwrap();
    let residual = na.transpose() * &p * &na - &p + DMatrix::identity(4, 4) - na.transpose() * &p * &nb * &k;
    assert!(residual.abs().max() < 1e-8 * p.abs().max());
    assert!((&to_na(&sol.gain) - &k).abs().max() < 1e-8);
}

fn scalar_system(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
    let m = |v: f64| Matrix::filled(1, 1, v);
    StateSpace::new(m(a), m(b), m(c), m(d), 1.0).unwrap()
}

#[test]
fn hinf_scalar_closed_forms() {
    // c b / (z - a): peak at ω = 0 for a > 0, ω = π for a < 0.
    for (a, b, c) in [(0.5, 1.0, 1.0), (-0.8, 2.0, 0.5), (0.9, -1.0, 3.0), (0.0, 1.0, 1.0)] {
        let h = hinf_norm(&scalar_system(a, b, c, 0.0), 1e-10).unwrap();
        let exact = (b * c).abs() / (1.0 - a.abs());
        assert!((h.norm - exact).abs() < 1e-6, "{a}: {} vs {exact}", h.norm);
    }
    // Static gain.
    let h = hinf_norm(&scalar_system(0.3, 0.0, 0.0, -2.5), 1e-10).unwrap();
    assert!((h.norm - 2.5).abs() < 1e-6);
    // All-pass: (1 - a z) / (z - a) has unit gain everywhere.
    let a = 0.6;
    let h = hinf_norm(&scalar_system(a, 1.0 - a * a, 1.0, -a), 1e-10).unwrap();
    assert!((h.norm - 1.0).abs() < 1e-6);
}

#[test]
fn hinf_is_at_least_every_sampled_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random_matrix(&mut rng, 5, 5, 1.0);
    let rho = to_na(&a)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);
    let a = a.scale(0.9 / rho);
    let b = random_matrix(&mut rng, 5, 2, 1.0);
    let c = random_matrix(&mut rng, 3, 5, 1.0);
    let ss = StateSpace::new(a.clone(), b.clone(), c.clone(), Matrix::zeros(3, 2), 1.0).unwrap();
    let h = hinf_norm(&ss, 1e-10).unwrap().norm;
    for i in 0..=200 {
        let w = std::f64::consts::PI * i as f64 / 200.0;
        let z = nalgebra::Complex::new(w.cos(), w.sin());
        let na_c = to_na(&a).map(nalgebra::Complex::from);
        let shifted = DMatrix::from_diagonal_element(5, 5, z) - na_c;
        let x = shifted.lu().solve(&to_na(&b).map(nalgebra::Complex::from)).unwrap();
        let g = to_na(&c).map(nalgebra::Complex::from) * x;
        let sigma = g.singular_values()[0];
        assert!(sigma <= h * (1.0 + 1e-9), "ω={w}: {sigma} > {h}");
    }
}

#[test]
fn integrator_matches_exponential() {
    for (lambda, dt) in [(-1.0, 0.1), (-3.0, 0.05), (0.5, 0.2)] {
        let opts = IntegratorOptions::default();
        let mut y = vec![1.0];
        for k in 0..20 {
            y = integrate_with(|_, y| vec![lambda * y[0]], k as f64 * dt, &y, dt, opts).unwrap();
        }
        let exact = (lambda * 20.0 * dt).exp();
        assert!(
            (y[0] - exact).abs() < 20.0 * opts.rtol * exact.max(1.0),
            "{lambda}: {} vs {exact}",
            y[0]
        );
    }
}

#[test]
fn integrator_handles_oscillation() {
    // ẍ = -x from (1, 0): x(t) = cos t.
    let opts = IntegratorOptions {
        rtol: 1e-8,
        atol: 1e-10,
    };
    let y = integrate_with(|_, y| vec![y[1], -y[0]], 0.0, &[1.0, 0.0], 2.0, opts).unwrap();
    assert!((y[0] - 2f64.cos()).abs() < 1e-6);
    assert!((y[1] + 2f64.sin()).abs() < 1e-6);
}
