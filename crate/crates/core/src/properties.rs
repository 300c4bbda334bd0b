//! Property tests over randomised systems, sequences and parameters.

use proptest::prelude::*;

use crate::depca::{solve_initial, RapSolver};
use crate::dichotomy::{bounded_solution, detect_dichotomy, DetectOptions};
use crate::grid::TimeGrid;
use crate::lasota::{LasotaOptions, LasotaParams, LasotaSolver};
use crate::linalg::{Matrix, Vector};
use crate::perturb::{solve_perturbed_discrete, ContractionOptions, Perturbation};
use crate::rap::{integer_taus, interpolate_sequence, scan_function, scan_sequence, ScanMode, ScanOptions};
use crate::reduction::{iterate, DiscreteSystem};
use crate::sequence::SequenceWindow;
use crate::system::{CoefficientSystem, FnCoefficients};
use crate::transition::{fundamental, hybrid_kernels};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn planar(a0: f64, a1: f64, w: f64, b0: f64) -> FnCoefficients {
    FnCoefficients::new(
        2,
        move |t| Matrix::from_row_slice(2, 2, &[a0 + 0.3 * (w * t).cos(), 0.4, -0.2, a1]),
        move |_| Matrix::from_row_slice(2, 2, &[b0, 0.0, 0.1, -b0]),
        move |t| Vector::from_column_slice(&[t.sin(), 1.0]),
    )
}

/// Diagonal hyperbolic matrix conjugated by a near-identity shear.
fn hyperbolic(stable: f64, unstable: f64, shear: f64) -> Matrix {
    let s = Matrix::from_row_slice(2, 2, &[1.0, shear, 0.0, 1.0]);
    let s_inv = Matrix::from_row_slice(2, 2, &[1.0, -shear, 0.0, 1.0]);
    s * Matrix::from_diagonal(&Vector::from_column_slice(&[stable, unstable])) * s_inv
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn transition_cocycle(
        a0 in -1.5..0.5f64, a1 in -1.0..1.0f64, w in 0.5..3.0f64, b0 in -0.5..0.5f64,
        i in 0usize..=80, j in 0usize..=80, k in 0usize..=80,
    ) {
        let grid = TimeGrid::from_integers(-4, 4, 10).unwrap();
        let sys = CoefficientSystem::new(planar(a0, a1, w, b0), &grid).unwrap();
        let phi = fundamental(&sys, &grid).unwrap();
        let (t, r, s) = (grid.t(i), grid.t(j), grid.t(k));
        let lhs = phi.phi(t, r).unwrap() * phi.phi(r, s).unwrap();
        let rhs = phi.phi(t, s).unwrap();
        prop_assert!((lhs - &rhs).amax() <= 1e-10 * rhs.amax().max(1.0));
        let back = phi.phi(s, t).unwrap() * &rhs;
        prop_assert!((back - Matrix::identity(2, 2)).amax() <= 1e-10);
    }

    #[test]
    fn iterate_forward_then_back(
        stable in 0.2..0.9f64, unstable in 1.2..3.0f64, shear in -1.0..1.0f64,
        x0 in prop::array::uniform2(-2.0..2.0f64), h0 in -1.0..1.0f64,
    ) {
        let c = hyperbolic(stable, unstable, shear);
        let disc = DiscreteSystem::from_fn(
            0, 12, |_| c.clone(), |n| Vector::from_column_slice(&[h0 * (n as f64).cos(), 0.5]),
        ).unwrap();
        let x0 = Vector::from_column_slice(&x0);
        let fwd = iterate(&disc, &x0, 0, 13).unwrap();
        let back = iterate(&disc, fwd.at(13), 13, 0).unwrap();
        // backward steps amplify roundoff along the stable direction
        let scale = fwd.values().iter().map(|v| v.amax()).fold(1.0, f64::max);
        let growth = (1.0 + shear.abs()).powi(2) / stable.powi(13);
        for n in 0..=13 {
            prop_assert!((back.at(n) - fwd.at(n)).amax() <= 1e-14 * growth * scale);
        }
    }

    #[test]
    fn bounded_solution_residual_and_bound(
        stable in 0.1..0.8f64, unstable in 1.25..4.0f64, shear in -1.0..1.0f64,
        amp in 0.1..2.0f64, freq in 0.1..3.0f64,
    ) {
        let c = hyperbolic(stable, unstable, shear);
        let disc = DiscreteSystem::from_fn(
            -200, 200, |_| c.clone(),
            |n| Vector::from_column_slice(&[amp * (freq * n as f64).sin(), amp * (n as f64).cos()]),
        ).unwrap();
        let dd = detect_dichotomy(&disc).unwrap();
        let sol = bounded_solution(&disc, &dd, 1e-12).unwrap();
        let (lo, hi) = sol.interior;
        prop_assert!(lo < hi);
        for n in lo..hi {
            let r = sol.values.at(n + 1) - &c * sol.values.at(n) - disc.h(n);
            prop_assert!(r.amax() <= 1e-9, "residual {} at {n}", r.amax());
        }
        prop_assert!(sol.bound_holds());
    }

    #[test]
    fn scalar_geometric_series(
        c in prop_oneof![0.05..0.8f64, -0.8..-0.05f64, 1.25..4.0f64, -4.0..-1.25f64], h in -3.0..3.0f64,
    ) {
        let disc = DiscreteSystem::scalar(-300, 300, c, h).unwrap();
        let dd = detect_dichotomy(&disc).unwrap();
        let sol = bounded_solution(&disc, &dd, 1e-13).unwrap();
        let exact = h / (1.0 - c);
        let (lo, hi) = sol.interior;
        for n in lo..=hi {
            prop_assert!((sol.values.at(n)[0] - exact).abs() <= 1e-10 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn scalar_pipeline_matches_closed_form(
        a in -2.0..-0.2f64, b in -1.0..1.0f64, c in -1.0..1.0f64, x0 in -2.0..2.0f64,
    ) {
        let grid = TimeGrid::from_integers(0, 6, 20).unwrap();
        let sys = CoefficientSystem::new(FnCoefficients::scalar(move |_| a, move |_| b, move |_| c), &grid).unwrap();
        let kernel = hybrid_kernels(fundamental(&sys, &grid).unwrap(), &sys).unwrap();
        let sol = solve_initial(&kernel, &sys, &Vector::from_element(1, x0)).unwrap();
        let (ea, mut x, mut n) = (a.exp(), x0, 0i64);
        for (k, v) in sol.values().iter().enumerate() {
            let t = grid.t(k);
            while (n + 1) as f64 <= t {
                x = ea * x + (b * x + c) * (ea - 1.0) / a;
                n += 1;
            }
            let s = t - n as f64;
            let exact = (a * s).exp() * x + (b * x + c) * ((a * s).exp() - 1.0) / a;
            prop_assert!((v[0] - exact).abs() <= 1e-8);
        }
    }

    #[test]
    fn bounded_solution_shift_equivariance(a in -2.0..-0.5f64, b in -0.3..0.3f64, w in 0.3..2.0f64, shift in 1i64..6) {
        let opts = DetectOptions::default();
        let target = TimeGrid::from_integers(-10, 10, 8).unwrap();
        let solve = |offset: f64| {
            let grid = target.widen(60);
            let sys = CoefficientSystem::new(
                FnCoefficients::scalar(move |_| a, move |_| b, move |t| (w * (t + offset)).cos()),
                &grid,
            ).unwrap();
            RapSolver::with_margin(&sys, &target, &opts, 1e-12).unwrap().solve().unwrap()
        };
        let base = solve(0.0);
        let shifted = solve(shift as f64);
        for n in -10..10 - shift {
            for j in 0..8 {
                let d = (shifted.node(n, j) - base.node(n + shift, j)).amax();
                prop_assert!(d <= 1e-9, "n = {n}, j = {j}: {d}");
            }
        }
    }
}

fn trig_sequence(n_min: i64, n_max: i64, amps: [f64; 3], freqs: [f64; 3]) -> SequenceWindow {
    SequenceWindow::scalar(n_min, n_max, |n| {
        let x = n as f64;
        (0..3).map(|i| amps[i] * (freqs[i] * x).cos()).sum::<f64>() + x / (1.0 + x.abs())
    })
    .unwrap()
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn rap_scan_monotone_and_contains_zero(
        amps in prop::array::uniform3(0.0..1.0f64), freqs in prop::array::uniform3(0.1..3.0f64),
        e1 in 0.05..1.0f64, de in 0.0..1.0f64,
    ) {
        let u = trig_sequence(-260, 260, amps, freqs);
        let opts = |epsilon| ScanOptions { epsilon, tail_start: 60, tail_end: 200, density_bound: None };
        let small = scan_sequence(&u, &opts(e1), 40).unwrap();
        let large = scan_sequence(&u, &opts(e1 + de), 40).unwrap();
        prop_assert!(small.accepts(0.0));
        for tau in &small.taus_found {
            prop_assert!(large.accepts(*tau));
        }
    }

    #[test]
    fn interpolant_inherits_translation_numbers(
        amps in prop::array::uniform3(0.0..1.0f64), freqs in prop::array::uniform3(0.1..3.0f64),
        eps in 0.05..2.0f64, m in 1u32..6,
    ) {
        let u = trig_sequence(-260, 260, amps, freqs);
        let opts = |epsilon| ScanOptions { epsilon, tail_start: 60, tail_end: 200, density_bound: None };
        let third = scan_sequence(&u, &opts(eps / 3.0), 40).unwrap();
        let f = interpolate_sequence(&u, m).unwrap();
        let interp = scan_function(&f, &opts(eps), &integer_taus(40), ScanMode::Rap).unwrap();
        for tau in &third.taus_found {
            prop_assert!(interp.accepts(*tau), "tau = {tau}");
        }
    }

    #[test]
    fn contraction_residuals_decay(c in 0.1..0.7f64, h in -2.0..2.0f64, nu in 0.0..0.15f64) {
        let disc = DiscreteSystem::scalar(-200, 200, c, h).unwrap();
        let dd = detect_dichotomy(&disc).unwrap();
        let xi = bounded_solution(&disc, &dd, 1e-13).unwrap().values;
        let pert = Perturbation::new(|t, x: &Vector, _: &Vector, nu| x.map(|v| nu * (v + 0.1 * t).sin()), nu, 1.0).unwrap();
        let opts = ContractionOptions { samples: 2000, ..Default::default() };
        let sol = solve_perturbed_discrete(&disc, &dd, &pert, &xi, &opts).unwrap();
        let cert = &sol.certificate;
        prop_assert!(cert.kappa < 1.0);
        for w in cert.residuals.windows(2) {
            if w[1] > 100.0 * opts.tol {
                prop_assert!(w[1] <= 1.1 * cert.kappa * w[0], "{} -> {} with kappa {}", w[0], w[1], cert.kappa);
            }
        }
        prop_assert!(cert.distance <= cert.r);
    }
}

proptest! {
    #![proptest_config(config(8))]

    #[test]
    fn lasota_solution_positive_and_bounded(
        d_amp in 0.0..0.5f64, p_amp in 0.0..0.5f64, gamma_frac in 0.05..0.8f64,
    ) {
        let delta = move |t: f64| 1.0 + d_amp * (2f64.sqrt() * t).cos();
        let p = move |t: f64| 1.0 + p_amp * t.cos();
        let params = LasotaParams::new(delta, p, 0.0, 0.5);
        let grid = TimeGrid::from_integers(-60, 60, 8).unwrap();
        let solver = LasotaSolver::new(&params, &grid, 1e-12).unwrap();
        let gamma = gamma_frac * solver.gamma_star();
        let sol = solver.solve(gamma, &LasotaOptions::default()).unwrap();
        let cap = (1.0 + p_amp) / (1.0 - d_amp);
        for v in sol.solution.values() {
            prop_assert!(v[0] > 0.0);
            prop_assert!(v[0] <= cap * (1.0 + 1e-9), "{} > {cap}", v[0]);
        }
    }
}
