// Acceptance checks. Each check prints one PASS/FAIL line; the process
// exits non-zero when any check fails. Reference values are recomputed here
// (closed forms, bisection, brute-force scans) rather than taken from the
// library.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use depca_lab::depca::{solve_initial, RapSolver};
use depca_lab::dichotomy::{bounded_solution, detect_dichotomy, DetectOptions};
use depca_lab::lasota::{gamma_sweep, LasotaOptions, LasotaParams, LasotaSolver};
use depca_lab::perturb::{
    jacobians, nu_ladder, solve_nonlinear, solve_perturbed_depca, solve_perturbed_discrete,
    ContractionOptions, Perturbation, VectorField,
};
use depca_lab::rap::{
    demo_sequence, integer_taus, interpolate_sequence, scan_function, scan_sequence, ScanMode, ScanOptions,
};
use depca_lab::reduction::{reduce, DiscreteSystem};
use depca_lab::transition::{fundamental, hybrid_kernels};
use depca_lab::{CoefficientSystem, Error, FnCoefficients, Matrix, TimeGrid, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = std::result::Result<String, String>;
type CheckFn = fn() -> Check;

fn ensure(ok: bool, detail: String) -> Check {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn lib<T>(r: depca_lab::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("library error: {e}"))
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    assert!(f(lo) * f(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo) * f(mid) <= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Step-by-step closed form of `x' = ax + bx([t]) + c`, `x(0) = x0`.
fn scalar_exact(a: f64, b: f64, c: f64, x0: f64, t: f64) -> f64 {
    let piece = |xn: f64, s: f64| (a * s).exp() * xn + (b * xn + c) * ((a * s).exp() - 1.0) / a;
    let mut x = x0;
    let mut n = 0.0;
    while n + 1.0 <= t + 1e-12 {
        x = piece(x, 1.0);
        n += 1.0;
    }
    piece(x, t - n)
}

fn scalar_closed_form() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let grid = lib(TimeGrid::from_integers(0, 10, 100))?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    while cases < 50 {
        let a: f64 = rng.gen_range(-2.0..-0.2);
        let b: f64 = rng.gen_range(-1.5..1.5);
        let c: f64 = rng.gen_range(-1.0..1.0);
        let x0: f64 = rng.gen_range(-2.0..2.0);
        let big_c = a.exp() + b / a * (a.exp() - 1.0);
        if (0.99..=1.01).contains(&big_c.abs()) {
            continue;
        }
        cases += 1;
        let sys = lib(CoefficientSystem::new(
            FnCoefficients::scalar(move |_| a, move |_| b, move |_| c),
            &grid,
        ))?;
        let kernel = lib(hybrid_kernels(lib(fundamental(&sys, &grid))?, &sys))?;
        let sol = lib(solve_initial(&kernel, &sys, &Vector::from_element(1, x0)))?;
        for (k, v) in sol.values().iter().enumerate() {
            worst = worst.max((v[0] - scalar_exact(a, b, c, x0, grid.t(k))).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        worst <= 1e-6 && secs < 30.0,
        format!("50 cases, sup error {worst:.2e} (<= 1e-6), {secs:.1} s (< 30 s)"),
    )
}

fn discrete_reduction() -> Check {
    let (a, b, f) = (-1.0f64, 0.5, 1.0);
    let grid = lib(TimeGrid::from_integers(0, 5, 50))?;
    let sys = lib(CoefficientSystem::new(
        FnCoefficients::scalar(move |_| a, move |_| b, move |_| f),
        &grid,
    ))?;
    let kernel = lib(hybrid_kernels(lib(fundamental(&sys, &grid))?, &sys))?;
    let disc = lib(reduce(&kernel, &sys))?;
    let c_exact = a.exp() + b / a * (a.exp() - 1.0);
    let h_exact = f * (1.0 - a.exp()) / -a;
    let mut err: f64 = 0.0;
    for n in disc.n_min()..=disc.n_max() {
        err = err.max((disc.c(n)[(0, 0)] - c_exact).abs());
        err = err.max((disc.h(n)[0] - h_exact).abs());
    }
    ensure(
        err <= 1e-8,
        format!(
            "C = {:.6} (exact {c_exact:.6}), h = {:.6} (exact {h_exact:.6}), max error {err:.1e}",
            disc.c(0)[(0, 0)],
            disc.h(0)[0]
        ),
    )
}

fn random_hyperbolic(rng: &mut ChaCha8Rng) -> Matrix {
    let q = rng.gen_range(1..=4);
    let n_unstable = if q == 1 {
        rng.gen_range(0..=1)
    } else {
        rng.gen_range(1..q)
    };
    let d = Matrix::from_fn(q, q, |i, j| {
        if i != j {
            0.0
        } else {
            let sign = if (i * 7 + q) % 3 == 0 { -1.0 } else { 1.0 };
            sign * if i < n_unstable {
                1.3 + 1.2 * ((i + 1) as f64 / q as f64)
            } else {
                0.2 + 0.6 * ((i + 1) as f64 / (q + 1) as f64)
            }
        }
    });
    loop {
        let s = Matrix::identity(q, q) + Matrix::from_fn(q, q, |_, _| rng.gen_range(-0.4..0.4));
        if let Some(inv) = s.clone().try_inverse() {
            if s.norm() * inv.norm() < 20.0 {
                return &s * d * inv;
            }
        }
    }
}

fn green_series_bound() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut violations = 0;
    let mut worst_residual: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for _ in 0..100 {
        let c = random_hyperbolic(&mut rng);
        let q = c.nrows();
        let h: Vec<Vector> = (0..=160)
            .map(|_| Vector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0)))
            .collect();
        let disc = lib(DiscreteSystem::new(-80, vec![c.clone(); 161], h.clone()))?;
        let dd = lib(detect_dichotomy(&disc))?;
        let sol = lib(bounded_solution(&disc, &dd, 1e-12))?;
        let (lo, hi) = sol.interior;
        let h_norm = h.iter().map(|v| v.amax()).fold(0.0, f64::max);
        let e = (-dd.alpha()).exp();
        let bound = dd.k() * (1.0 + e) / (1.0 - e) * h_norm;
        for n in lo..hi {
            let r = sol.values.at(n + 1) - &c * sol.values.at(n) - disc.h(n);
            worst_residual = worst_residual.max(r.amax());
        }
        let sup = (lo..=hi).map(|n| sol.values.at(n).amax()).fold(0.0, f64::max);
        worst_ratio = worst_ratio.max(sup / bound);
        if sup > bound {
            violations += 1;
        }
    }
    ensure(
        worst_residual <= 1e-8 && violations == 0,
        format!("100 systems, max residual {worst_residual:.1e}, {violations} bound violations (max sup/bound {worst_ratio:.3})"),
    )
}

fn dichotomy_detection() -> Check {
    let c = Matrix::from_diagonal(&Vector::from_column_slice(&[0.5, 2.0]));
    let disc = lib(DiscreteSystem::constant(-40, 40, c.clone(), Vector::zeros(2)))?;
    let dd = lib(detect_dichotomy(&disc))?;
    let (alpha, k) = (dd.alpha(), dd.k());
    let p = dd.p().clone();
    let power = |e: i64| -> Matrix {
        let base = if e >= 0 {
            c.clone()
        } else {
            c.clone().try_inverse().unwrap()
        };
        (0..e.abs()).fold(Matrix::identity(2, 2), |acc, _| acc * &base)
    };
    let mut excess: f64 = f64::NEG_INFINITY;
    let mut worst_diff: f64 = 0.0;
    for n in -20..=20 {
        for m in -20..=20 {
            let g = if n >= m {
                power(n - m) * &p
            } else {
                -(power(n - m) * (Matrix::identity(2, 2) - &p))
            };
            let norm = g.clone().svd(false, false).singular_values.max();
            excess = excess.max(norm - k * (-alpha * (n - m).abs() as f64).exp());
            worst_diff = worst_diff.max((dd.green(n, m) - g).amax());
        }
    }
    let unit = lib(DiscreteSystem::scalar(-20, 20, 1.0, 0.0))?;
    let no_dichotomy = matches!(detect_dichotomy(&unit), Err(Error::NoDichotomy { .. }));
    ensure(
        excess <= 1e-12 && worst_diff <= 1e-10 && no_dichotomy,
        format!(
            "alpha = {alpha:.4}, K = {k:.4}, worst |G| - K e^(-alpha|n-m|) = {excess:.1e} on 41x41, green vs brute force {worst_diff:.1e}, C = 1 rejected: {no_dichotomy}"
        ),
    )
}

fn contraction_solver() -> Check {
    let disc = lib(DiscreteSystem::scalar(-60, 60, 0.5, 1.0))?;
    let dd = lib(detect_dichotomy(&disc))?;
    let xi = lib(bounded_solution(&disc, &dd, 1e-13))?.values;
    let pert = lib(Perturbation::new(
        |_, x: &Vector, _: &Vector, nu| x.map(|v| nu * v.sin()),
        0.1,
        1.0,
    ))?;
    let opts = ContractionOptions {
        seed: 5,
        ..Default::default()
    };
    let sol = lib(solve_perturbed_discrete(&disc, &dd, &pert, &xi, &opts))?;
    let root = bisect(|y| 0.5 * y + 1.0 + 0.1 * y.sin() - y, 1.0, 3.0);
    let (lo, hi) = sol.interior;
    let root_err = (lo..=hi)
        .map(|n| (sol.psi.at(n)[0] - root).abs())
        .fold(0.0, f64::max);

    let cert = &sol.certificate;
    let floor = 100.0 * opts.tol;
    let ratios_ok = cert
        .residuals
        .windows(2)
        .filter(|w| w[1] > floor)
        .all(|w| w[1] / w[0] <= cert.kappa * 1.1);

    let nus = [0.1, 0.05, 0.025, 0.0125];
    let rows = nu_ladder(&nus, |nu| {
        Ok(solve_perturbed_discrete(&disc, &dd, &pert.with_nu(nu)?, &xi, &opts)?.certificate)
    });
    let dists: Vec<f64> = rows.iter().map(|r| r.distance).collect();
    let converged = rows.iter().all(|r| r.converged);
    let shrinking = dists.windows(2).all(|w| w[1] < w[0]);
    let last = *dists.last().unwrap();
    ensure(
        root_err <= 1e-6 && ratios_ok && converged && shrinking && last <= 0.02,
        format!(
            "psi vs bisection root {root:.6}: {root_err:.1e}; ratios <= 1.1 kappa (kappa = {:.4}): {ratios_ok}; ladder {dists:.4?} shrinking: {shrinking}, final {last:.4} <= 0.02: {}",
            cert.kappa,
            last <= 0.02
        ),
    )
}

fn nonlinear_linearization() -> Check {
    let field = |_: f64, x: &Vector, y: &Vector| {
        Vector::from_column_slice(&[
            -1.5 * x[0] + 0.3 * (x[1] * y[0]).sin() + 0.2 * x[0].powi(3),
            0.4 * x[0] * x[1] - (0.5 * y[1]).tanh() + (x[1] + y[0]).exp() * 0.1,
        ])
    };
    let f: Arc<VectorField> = Arc::new(field);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let t = rng.gen_range(-5.0..5.0);
        let x = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        let y = Vector::from_fn(2, |_, _| rng.gen_range(-2.0..2.0));
        let (jx, jy) = lib(jacobians(f.as_ref(), t, &x, &y))?;
        for (col, wrt_x) in [(0usize, true), (1, true), (0, false), (1, false)] {
            let v = if wrt_x { x[col] } else { y[col] };
            let h = 0.5e-3 * v.abs().max(1.0);
            let shift = |s: f64| {
                let (mut xs, mut ys) = (x.clone(), y.clone());
                if wrt_x {
                    xs[col] += s;
                } else {
                    ys[col] += s;
                }
                field(t, &xs, &ys)
            };
            let fd = (shift(h) - shift(-h)) / (2.0 * h);
            let lib_col = if wrt_x {
                jx.column(col).clone_owned()
            } else {
                jy.column(col).clone_owned()
            };
            for i in 0..2 {
                worst = worst.max((lib_col[i] - fd[i]).abs() / fd[i].abs().max(1.0));
            }
        }
    }

    // linear field: the nonlinear solver must reproduce the linear one
    let grid = lib(TimeGrid::from_integers(-80, 80, 10))?;
    let (a, b, c) = (-1.2, 0.4, 0.8);
    let linear: Arc<VectorField> =
        Arc::new(move |_, x: &Vector, y: &Vector| x * a + y * b + Vector::from_element(1, c));
    let sys = lib(CoefficientSystem::new(
        FnCoefficients::scalar(move |_| a, move |_| b, move |_| c),
        &grid.widen(40),
    ))?;
    let opts = ContractionOptions {
        seed: 2,
        ..Default::default()
    };
    let solver = lib(RapSolver::with_margin(
        &sys,
        &grid,
        &DetectOptions::default(),
        opts.series_tol,
    ))?;
    let (xi, _) = lib(solver.solve_full())?;
    let steady = (xi.sup_norm() - (-c / (a + b))).abs();
    let pert = lib(Perturbation::new(
        |t, x: &Vector, _: &Vector, nu| x.map(|v| nu * (v + t).cos()),
        0.1,
        1.0,
    ))?;
    let lin = lib(solve_perturbed_depca(&solver, &xi, &pert, &opts))?;
    let lin_target = lib(lin.target(&solver))?;
    let nl = lib(solve_nonlinear(
        linear,
        &xi,
        &pert,
        &DetectOptions::default(),
        &opts,
    ))?;
    let nl_sol = &nl.perturbed.solution;
    let (lo, hi) = nl_sol.trusted();
    let (llo, lhi) = lin_target.trusted();
    let (lo, hi) = (lo.max(llo), hi.min(lhi));
    let mut gap: f64 = 0.0;
    for n in lo..hi {
        for j in 0..grid.subdivisions() {
            gap = gap.max((nl_sol.node(n, j) - lin_target.node(n, j)).amax());
        }
    }
    ensure(
        worst <= 1e-5 && gap <= 1e-8,
        format!("Jacobians vs halved-step differences: max relative {worst:.1e} on 100 points; linear field vs linear solver on [{lo}, {hi}]: {gap:.1e} (reference within {steady:.0e} of the equilibrium)"),
    )
}

fn rap_demo() -> Check {
    let (t0, t, tau_max, eps) = (500i64, 2000i64, 100i64, 0.5);
    let u = lib(demo_sequence(-(t + tau_max), t + tau_max))?;
    let opts = ScanOptions {
        epsilon: eps,
        tail_start: t0,
        tail_end: t,
        density_bound: None,
    };
    let report = lib(scan_sequence(&u, &opts, tau_max))?;

    let direct = |n: i64| {
        let x = n as f64;
        x.cos() + (2f64.sqrt() * x).cos() + (x + x.abs().sqrt()).sin() + 3.0 * x * x / (x * x + 1.0)
    };
    let tail: Vec<i64> = (-t..=-t0).chain(t0..=t).collect();
    let brute = |e: f64| -> Vec<f64> {
        (-tau_max..=tau_max)
            .filter(|&tau| tail.iter().all(|&n| (direct(n + tau) - direct(n)).abs() <= e))
            .map(|tau| tau as f64)
            .collect()
    };
    let oracle = brute(eps);
    let same_set = oracle == report.taus_found;
    let mut edges = vec![-tau_max as f64];
    edges.extend(&oracle);
    edges.push(tau_max as f64);
    let gap = edges.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let density = (tau_max as f64 / 10.0).max(1.0);
    let recurring = !oracle.is_empty() && gap <= density;

    let f = lib(interpolate_sequence(&u, 4))?;
    let interp = lib(scan_function(&f, &opts, &integer_taus(tau_max), ScanMode::Rap))?;
    let third = brute(eps / 3.0);
    let counterexamples = third.iter().filter(|&&tau| !interp.accepts(tau)).count();
    ensure(
        same_set && recurring && counterexamples == 0,
        format!(
            "accepted {:?} (brute force agrees: {same_set}), max gap {gap} vs L = {density}: recurring {recurring}; inclusion counterexamples {counterexamples}",
            oracle
        ),
    )
}

fn lasota() -> Check {
    let grid = lib(TimeGrid::from_integers(-100, 100, 10))?;
    let params = LasotaParams::constant(1.0, 1.0, 0.1);
    let solver = lib(LasotaSolver::new(&params, &grid, 1e-12))?;
    let sol = lib(solver.solve(0.1, &LasotaOptions::default()))?;
    let root = bisect(|y| (-0.1 * y).exp() - y, 0.0, 2.0);
    let root_err = sol
        .solution
        .values()
        .iter()
        .map(|v| (v[0] - root).abs())
        .fold(0.0, f64::max);

    let delta = |t: f64| 1.0 + 0.2 * (2f64.sqrt() * t).cos();
    let p = |t: f64| 1.0 + 0.1 * t.cos();
    let qp = LasotaParams::new(delta, p, 0.05, 0.5);
    let wide = lib(TimeGrid::from_integers(-300, 300, 10))?;
    let qp_solver = lib(LasotaSolver::new(&qp, &wide, 1e-12))?;
    let qp_sol = lib(qp_solver.solve(0.05, &LasotaOptions::default()))?;
    let mean = {
        let n = 200_000;
        let (a, b) = (-300.0, 300.0);
        (0..n)
            .map(|k| delta(a + (k as f64 + 0.5) * (b - a) / n as f64))
            .sum::<f64>()
            / n as f64
    };
    let bound = 1.1 / mean * 1.05;
    let (lo, hi) = qp_sol
        .solution
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v[0]), hi.max(v[0]))
        });
    let positive = lo > 0.0;
    let bounded = hi <= bound;

    let gamma_star = qp_solver.gamma_star();
    let fractions = [0.1, 0.25, 0.4, 0.5];
    let rows = gamma_sweep(
        &qp_solver,
        &fractions.map(|f| f * gamma_star),
        &LasotaOptions::default(),
    );
    let sweep_ok = gamma_star.is_finite() && rows.iter().all(|r| r.converged);
    ensure(
        root_err <= 1e-6 && positive && bounded && sweep_ok,
        format!(
            "constant case vs bisection root {root:.6}: {root_err:.1e}; quasi-periodic psi in [{lo:.4}, {hi:.4}], bound {bound:.4}; gamma* = {gamma_star:.4}, converged up to 0.5 gamma*: {sweep_ok}"
        ),
    )
}

fn run_cli(bin: &Path, args: &[&str], out: &Path, threads: Option<&str>) -> std::result::Result<(), String> {
    let mut cmd = Command::new(bin);
    cmd.args(args).arg("--out").arg(out);
    if let Some(n) = threads {
        cmd.env("DEPCA_LAB_THREADS", n);
    }
    let status = cmd.output().map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&status.stderr)
        ));
    }
    Ok(())
}

fn artifacts(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Check {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_depca-lab"));
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let cfg = |name: &str| configs.join(name).display().to_string();
    let runs: Vec<(&str, String)> = vec![
        ("solve", cfg("scalar_bounded.json")),
        ("reduce", cfg("planar_trig.json")),
        ("dichotomy", cfg("discrete_saddle.json")),
        ("rap-scan", cfg("rap_demo.json")),
        ("perturb", cfg("scalar_perturb.json")),
        ("nonlinear", cfg("nonlinear.json")),
        ("lasota", cfg("lasota.json")),
        ("oracle-check", cfg("oracle.json")),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut mismatches = Vec::new();
    let mut files = 0;
    for (sub, config) in &runs {
        let dirs: Vec<PathBuf> = (0..3).map(|i| tmp.path().join(format!("{sub}-{i}"))).collect();
        let args = [*sub, "--config", config.as_str(), "--seed", "42"];
        run_cli(&bin, &args, &dirs[0], None)?;
        run_cli(&bin, &args, &dirs[1], None)?;
        run_cli(&bin, &args, &dirs[2], Some("1"))?;
        let first = artifacts(&dirs[0]);
        files += first.len();
        if first.is_empty() || artifacts(&dirs[1]) != first || artifacts(&dirs[2]) != first {
            mismatches.push(*sub);
        }
    }
    ensure(
        mismatches.is_empty(),
        format!("{} subcommands x 3 runs (one single-threaded), {files} artifacts compared, mismatches {mismatches:?}", runs.len()),
    )
}

fn main() {
    let checks: [(&str, CheckFn); 9] = [
        ("scalar closed-form oracle", scalar_closed_form),
        ("discrete reduction exactness", discrete_reduction),
        ("Green-series bound", green_series_bound),
        ("dichotomy detection", dichotomy_detection),
        ("contraction solver", contraction_solver),
        ("nonlinear linearization", nonlinear_linearization),
        ("RAP diagnostics", rap_demo),
        ("Lasota-Wazewska", lasota),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (k, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {}. {name} ({secs:.1} s): {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name} ({secs:.1} s): {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
