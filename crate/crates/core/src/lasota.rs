//! The Lasota–Wazewska model with piecewise constant argument
//! `y'(t) = -δ(t)y(t) + p(t) f(y([t]))`, `f(y) = e^{-γy}` by default.
//!
//! The positive bounded solution is the fixed point of `ψ ↦ y_ψ`, where
//! `y_ψ` is the bounded solution of `y' = -δy + p f(ψ([t]))`. Since
//! `|y_ψ1 - y_ψ2| <= γ S_p ‖ψ1 - ψ2‖` with
//! `S_p = sup_t ∫_{-∞}^t e^{-∫_u^t δ} p(u) du`, the map contracts for
//! `γ < γ* = 1/S_p`. `S_p` is itself the bounded solution for `γ = 0`.

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depca::{HybridSolution, RapSolver};
use crate::dichotomy::DetectOptions;
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::TimeGrid;
use crate::linalg::Vector;
use crate::quadrature::{gl5, gl5_composite};
use crate::rap::{integer_taus, scan_function, RapReport, SampledFunction, ScanMode, ScanOptions};
use crate::system::{CoefficientSystem, FnCoefficients, TrigSeries};
use crate::transition::QuadPoint;

pub type ScalarFn = dyn Fn(f64) -> f64 + Send + Sync;

/// Production response `f`.
#[derive(Clone)]
pub enum Response {
    /// `e^{-γy}`.
    Exponential,
    /// A γ-Lipschitz response given directly.
    Custom(Arc<ScalarFn>),
}

#[derive(Clone)]
pub struct LasotaParams {
    pub delta: Arc<ScalarFn>,
    pub p: Arc<ScalarFn>,
    pub gamma: f64,
    pub response: Response,
    pub delta_minus: f64,
}

impl std::fmt::Debug for LasotaParams {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LasotaParams")
            .field("gamma", &self.gamma)
            .field("delta_minus", &self.delta_minus)
            .finish_non_exhaustive()
    }
}

impl LasotaParams {
    pub fn new(
        delta: impl Fn(f64) -> f64 + Send + Sync + 'static,
        p: impl Fn(f64) -> f64 + Send + Sync + 'static,
        gamma: f64,
        delta_minus: f64,
    ) -> Self {
        Self {
            delta: Arc::new(delta),
            p: Arc::new(p),
            gamma,
            response: Response::Exponential,
            delta_minus,
        }
    }

    /// Constant rates, with `δ₋ = δ/2`.
    pub fn constant(delta: f64, p: f64, gamma: f64) -> Self {
        Self::new(move |_| delta, move |_| p, gamma, 0.5 * delta)
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self {
            gamma,
            ..self.clone()
        }
    }

    pub fn with_response(self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            response: Response::Custom(Arc::new(f)),
            ..self
        }
    }

    pub fn response(&self, y: f64) -> f64 {
        match &self.response {
            Response::Exponential => (-self.gamma * y).exp(),
            Response::Custom(f) => f(y),
        }
    }

    /// `(1/(b-a)) ∫_a^b δ` over the grid's span.
    pub fn mean_delta(&self, grid: &TimeGrid) -> f64 {
        let (a, b) = (grid.t_start() as f64, grid.t_end() as f64);
        let cells = grid.intervals() * grid.subdivisions() as usize;
        gl5_composite(a, b, cells, |t| (self.delta)(t)) / (b - a)
    }

    /// Positivity of `δ`, `p` at the nodes and `mean(δ) > δ₋ > 0`; returns
    /// the mean.
    pub fn validate(&self, grid: &TimeGrid) -> Result<f64> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidModel(format!(
                "gamma must be >= 0, got {}",
                self.gamma
            )));
        }
        if !(self.delta_minus > 0.0) {
            return Err(Error::InvalidModel(format!(
                "delta_minus must be positive, got {}",
                self.delta_minus
            )));
        }
        for t in grid.times() {
            let (d, p) = ((self.delta)(t), (self.p)(t));
            if !(d > 0.0) || !(p > 0.0) {
                return Err(Error::InvalidModel(format!(
                    "delta and p must be positive: delta({t}) = {d}, p({t}) = {p}"
                )));
            }
        }
        let mean = self.mean_delta(grid);
        if !(mean > self.delta_minus) {
            return Err(Error::MeanTooSmall { mean });
        }
        Ok(mean)
    }

    fn system(&self, grid: &TimeGrid) -> Result<CoefficientSystem> {
        let (delta, p) = (self.delta.clone(), self.p.clone());
        CoefficientSystem::new(
            FnCoefficients::scalar(move |t| -delta(t), |_| 0.0, move |t| p(t)),
            grid,
        )
    }
}

/// A scalar function of time as written in configs: a number, a
/// trigonometric series or an expression in `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarSpec {
    Constant(f64),
    Trig(TrigSeries),
    Expression(String),
}

impl ScalarSpec {
    pub fn build(&self) -> Result<Arc<ScalarFn>> {
        Ok(match self.clone() {
            ScalarSpec::Constant(c) => Arc::new(move |_| c),
            ScalarSpec::Trig(s) => Arc::new(move |t| s.eval(t)),
            ScalarSpec::Expression(src) => {
                let e = Expr::compile(&src, &["t"])?;
                Arc::new(move |t| e.eval(&[t]).unwrap_or(f64::NAN))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LasotaSpec {
    pub delta: ScalarSpec,
    pub p: ScalarSpec,
    pub gamma: f64,
    /// Defaults to half the window mean of `δ`.
    #[serde(default)]
    pub delta_minus: Option<f64>,
}

impl LasotaSpec {
    pub fn params(&self, grid: &TimeGrid) -> Result<LasotaParams> {
        let delta = self.delta.build()?;
        let p = self.p.build()?;
        let mut params = LasotaParams {
            delta,
            p,
            gamma: self.gamma,
            response: Response::Exponential,
            delta_minus: 0.0,
        };
        params.delta_minus = self.delta_minus.unwrap_or_else(|| 0.5 * params.mean_delta(grid));
        Ok(params)
    }
}

/// Forward solution from `y(t_start) = y0`, integrating each interval in
/// closed form with the frozen `y(n)`:
/// `y(t) = e^{-∫_n^t δ} y(n) + ∫_n^t e^{-∫_u^t δ} p(u) du · f(y(n))`.
pub fn simulate(params: &LasotaParams, y0: f64, grid: &TimeGrid) -> Result<HybridSolution> {
    if !(y0 >= 0.0) {
        return Err(Error::NegativeInitial(y0));
    }
    let m = grid.subdivisions();
    let h = grid.step();
    let mut values = Vec::with_capacity(grid.len());
    let mut y = y0;
    values.push(Vector::from_element(1, y));
    for n in grid.t_start()..grid.t_end() {
        let fy = params.response(y);
        let (yn, mut d, mut acc) = (y, 0.0, 0.0);
        for cell in 0..m {
            let a = n as f64 + cell as f64 * h;
            acc += gl5(a, a + h, |u| {
                let du = d + gl5(a, u, |r| (params.delta)(r));
                du.exp() * (params.p)(u)
            });
            d += gl5(a, a + h, |r| (params.delta)(r));
            y = (-d).exp() * (yn + acc * fy);
            values.push(Vector::from_element(1, y));
        }
        if !y.is_finite() {
            return Err(Error::NonFinite {
                t: (n + 1) as f64,
                what: "Lasota–Wazewska trajectory".into(),
            });
        }
    }
    HybridSolution::from_values(*grid, values)
}

#[derive(Debug, Clone, Copy)]
pub struct LasotaOptions {
    /// Fixed-point tolerance in the sup norm.
    pub tol: f64,
    pub max_iterations: usize,
    /// Truncation tolerance of the Green series.
    pub series_tol: f64,
    /// RAP scan of the solution: options and largest integer lag.
    pub scan: Option<(ScanOptions, i64)>,
}

impl Default for LasotaOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iterations: 200,
            series_tol: 1e-12,
            scan: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LasotaSolution {
    /// The fixed point on the target window.
    pub solution: HybridSolution,
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub kappa: f64,
    pub gamma_star: f64,
    pub s_p: f64,
    pub mean_delta: f64,
    pub rap: Option<RapReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LasotaSummary {
    pub gamma: f64,
    pub kappa: f64,
    pub gamma_star: f64,
    pub s_p: f64,
    pub mean_delta: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub min: f64,
    pub max: f64,
    pub rap_verdict: Option<crate::rap::Verdict>,
    pub rap_max_gap: Option<f64>,
}

impl LasotaSolution {
    pub fn min(&self) -> f64 {
        self.solution
            .values()
            .iter()
            .map(|v| v[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.solution
            .values()
            .iter()
            .map(|v| v[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn summary(&self, gamma: f64) -> LasotaSummary {
        LasotaSummary {
            gamma,
            kappa: self.kappa,
            gamma_star: self.gamma_star,
            s_p: self.s_p,
            mean_delta: self.mean_delta,
            iterations: self.iterations,
            final_residual: self.residuals.last().copied().unwrap_or(0.0),
            min: self.min(),
            max: self.max(),
            rap_verdict: self.rap.as_ref().map(|r| r.verdict),
            rap_max_gap: self.rap.as_ref().map(|r| r.max_gap),
        }
    }
}

/// Solver and `S_p` for `(δ, p)` on `target`, shared across `γ`.
#[derive(Debug, Clone)]
pub struct LasotaSolver {
    params: LasotaParams,
    solver: RapSolver,
    linear: HybridSolution,
    s_p: f64,
    mean_delta: f64,
}

impl LasotaSolver {
    pub fn new(params: &LasotaParams, target: &TimeGrid, series_tol: f64) -> Result<Self> {
        let mean_delta = params.validate(target)?;
        let system = params.system(&target.widen(1))?;
        let solver = RapSolver::with_margin(&system, target, &DetectOptions::default(), series_tol)?;
        params.validate(solver.kernel().grid())?;
        let (linear, _) = solver.solve_full()?;
        let (a, b) = linear.trusted();
        let s_p = linear.restrict(a, b)?.sup_norm();
        Ok(Self {
            params: params.clone(),
            solver,
            linear,
            s_p,
            mean_delta,
        })
    }

    pub fn s_p(&self) -> f64 {
        self.s_p
    }

    pub fn gamma_star(&self) -> f64 {
        1.0 / self.s_p
    }

    pub fn rap_solver(&self) -> &RapSolver {
        &self.solver
    }

    /// The `γ = 0` solution `∫_{-∞}^t e^{-∫δ} p` on the full window.
    pub fn linear(&self) -> &HybridSolution {
        &self.linear
    }

    /// Fixed point for the given `γ` (and the stored `δ`, `p`, response).
    pub fn solve(&self, gamma: f64, opts: &LasotaOptions) -> Result<LasotaSolution> {
        let params = self.params.with_gamma(gamma);
        let kappa = gamma * self.s_p;
        if kappa >= 1.0 {
            return Err(Error::GammaTooLarge {
                gamma,
                kappa,
                gamma_star: self.gamma_star(),
            });
        }
        let grid = *self.solver.kernel().grid();
        let mut psi = HybridSolution::from_values(grid, vec![Vector::zeros(1); grid.len()])?;
        let mut residuals = Vec::new();
        let mut trusted;
        loop {
            if residuals.len() >= opts.max_iterations {
                return Err(Error::NonConvergence {
                    iterations: residuals.len(),
                    residual: residuals.last().copied().unwrap_or(f64::NAN),
                });
            }
            let (next, bounded) = self.solver.solve_forcing(|q: &QuadPoint| {
                let anchor = psi.node(q.n, 0)[0];
                Vector::from_element(1, (params.p)(q.u) * params.response(anchor))
            })?;
            trusted = bounded.interior;
            let res = next.distance(&psi);
            residuals.push(res);
            psi = next;
            if res <= opts.tol {
                break;
            }
        }
        let psi = psi.with_trusted(trusted);
        let (a, b) = self.solver.target();
        let solution = psi.restrict(a, b)?;
        let rap = match opts.scan {
            Some((scan, tau_max)) => Some(scan_function(
                &SampledFunction::from_solution(&solution),
                &scan,
                &integer_taus(tau_max),
                ScanMode::Rap,
            )?),
            None => None,
        };
        Ok(LasotaSolution {
            solution,
            iterations: residuals.len(),
            residuals,
            kappa,
            gamma_star: self.gamma_star(),
            s_p: self.s_p,
            mean_delta: self.mean_delta,
            rap,
        })
    }
}

/// The positive bounded solution on `target`.
pub fn rap_positive_solution(
    params: &LasotaParams,
    target: &TimeGrid,
    opts: &LasotaOptions,
) -> Result<LasotaSolution> {
    LasotaSolver::new(params, target, opts.series_tol)?.solve(params.gamma, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub kappa: f64,
    pub converged: bool,
}

/// `γ ↦ (κ, converged)`; failures are recorded, not raised.
pub fn gamma_sweep(solver: &LasotaSolver, gammas: &[f64], opts: &LasotaOptions) -> Vec<SweepRow> {
    let opts = LasotaOptions { scan: None, ..*opts };
    gammas
        .iter()
        .map(|&gamma| SweepRow {
            gamma,
            kappa: gamma * solver.s_p(),
            converged: solver.solve(gamma, &opts).is_ok(),
        })
        .collect()
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ErgodicOptions {
    pub tail_start: i64,
    pub tail_end: i64,
    /// Nodes per unit for the inner quadrature; must be even.
    pub m: u32,
    pub delta_minus: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ErgodicScan {
    /// `(τ, max over the tail of the truncated integral)`.
    pub rows: Vec<(f64, f64)>,
    pub depth: i64,
    pub mean: f64,
    pub window: (i64, i64),
}

impl ErgodicScan {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "proxy"])?;
        for (tau, v) in &self.rows {
            w.write_record([tau.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn proxy(&self, tau: f64) -> Option<f64> {
        self.rows.iter().find(|r| (r.0 - tau).abs() < 1e-9).map(|r| r.1)
    }
}

/// For each `τ`, `max_t ∫_{t-L}^t |e^{-∫_{s+τ}^{t+τ}δ} - e^{-∫_s^t δ}| ds`
/// over integers `T0 <= |t| <= T`, with depth `L = ⌈ln(2/(δ₋ tol))/δ₋⌉` so
/// the neglected part is below `tol`.
pub fn ergodic_kernel_scan(delta: &ScalarFn, taus: &[f64], opts: &ErgodicOptions) -> Result<ErgodicScan> {
    let m = opts.m;
    if m == 0 || !m.is_multiple_of(2) {
        return Err(Error::Config(format!("ergodic scan needs an even m, got {m}")));
    }
    if !(opts.delta_minus > 0.0)
        || !(opts.tol > 0.0)
        || opts.tail_start > opts.tail_end
        || opts.tail_start < 0
    {
        return Err(Error::Config(
            "need delta_minus > 0, tol > 0, 0 <= T0 <= T".into(),
        ));
    }
    let mut shifts = Vec::with_capacity(taus.len());
    for &tau in taus {
        let k = tau * m as f64;
        if (k - k.round()).abs() > 1e-9 {
            return Err(Error::NonGridShift { tau, m });
        }
        shifts.push(k.round() as i64);
    }
    let depth = ((2.0 / (opts.delta_minus * opts.tol)).ln() / opts.delta_minus).ceil() as i64;
    let reach = shifts.iter().map(|k| k.abs()).max().unwrap_or(0);
    let lo = -opts.tail_end - depth - reach / m as i64 - 1;
    let hi = opts.tail_end + reach / m as i64 + 1;
    let h = 1.0 / m as f64;
    let count = ((hi - lo) * m as i64) as usize + 1;
    // cumulative ∫_lo^{lo + k h} δ
    let mut cum = vec![0.0; count];
    for k in 1..count {
        let a = lo as f64 + (k - 1) as f64 * h;
        cum[k] = cum[k - 1] + gl5(a, a + h, delta);
    }
    let span = (hi - lo) as f64;
    let mean = cum[count - 1] / span;
    if !(mean > opts.delta_minus) {
        return Err(Error::MeanTooSmall { mean });
    }
    let idx = |t: i64| ((t - lo) * m as i64) as usize;
    let tail: Vec<i64> = (-opts.tail_end..=-opts.tail_start)
        .chain(opts.tail_start.max(1)..=opts.tail_end)
        .collect();
    let steps = depth as usize * m as usize;
    let rows = taus
        .par_iter()
        .zip(shifts.par_iter())
        .map(|(&tau, &k)| {
            let proxy = tail
                .iter()
                .map(|&t| {
                    let it = idx(t);
                    let is = (it as i64 + k) as usize;
                    // Simpson over s = t - i h, i = 0..steps
                    let mut acc = 0.0;
                    for i in 0..=steps {
                        let a = (cum[is - i] - cum[is]).exp();
                        let b = (cum[it - i] - cum[it]).exp();
                        let w = if i == 0 || i == steps {
                            1.0
                        } else if i % 2 == 1 {
                            4.0
                        } else {
                            2.0
                        };
                        acc += w * (a - b).abs();
                    }
                    acc * h / 3.0
                })
                .fold(0.0, f64::max);
            (tau, proxy)
        })
        .collect();
    Ok(ErgodicScan {
        rows,
        depth,
        mean,
        window: (lo, hi),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn y_star(gamma: f64) -> f64 {
        let (mut a, mut b) = (0.0_f64, 1.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if mid - (-gamma * mid).exp() < 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn equilibrium_and_convergence() {
        let grid = TimeGrid::from_integers(0, 5, 8).unwrap();
        let sol = simulate(&LasotaParams::constant(1.0, 1.0, 0.0), 1.0, &grid).unwrap();
        assert!(sol.values().iter().all(|v| (v[0] - 1.0).abs() < 1e-13));
        let grid = TimeGrid::from_integers(0, 60, 4).unwrap();
        let sol = simulate(&LasotaParams::constant(1.0, 1.0, 0.1), 0.0, &grid).unwrap();
        assert!(sol.values()[1..].iter().all(|v| v[0] > 0.0));
        assert!((sol.node(60, 0)[0] - y_star(0.1)).abs() < 1e-10);
        assert!(matches!(
            simulate(&LasotaParams::constant(1.0, 1.0, 0.1), -1.0, &grid),
            Err(Error::NegativeInitial(_))
        ));
    }

    #[test]
    fn simulate_matches_exact_gamma_zero() {
        // y' = -y + 1: y(t) = 1 + (y0 - 1) e^{-t}
        let grid = TimeGrid::from_integers(0, 3, 5).unwrap();
        let sol = simulate(&LasotaParams::constant(1.0, 1.0, 0.0), 3.0, &grid).unwrap();
        for (t, v) in grid.times().into_iter().zip(sol.values()) {
            assert!((v[0] - (1.0 + 2.0 * (-t).exp())).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_fixed_point() {
        let target = TimeGrid::from_integers(0, 20, 10).unwrap();
        let sol = rap_positive_solution(
            &LasotaParams::constant(1.0, 1.0, 0.1),
            &target,
            &LasotaOptions::default(),
        )
        .unwrap();
        let y = y_star(0.1);
        assert!((y - 0.912_765).abs() < 1e-6);
        let err = sol
            .solution
            .values()
            .iter()
            .map(|v| (v[0] - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        assert!((sol.s_p - 1.0).abs() < 1e-8);
        assert!((sol.kappa - 0.1).abs() < 1e-8);
    }

    #[test]
    fn gamma_zero_is_linear() {
        let target = TimeGrid::from_integers(0, 10, 4).unwrap();
        let params = LasotaParams::new(
            |t| 1.0 + 0.2 * (t * 2f64.sqrt()).cos(),
            |t| 1.0 + 0.1 * t.cos(),
            0.0,
            0.5,
        );
        let solver = LasotaSolver::new(&params, &target, 1e-12).unwrap();
        let sol = solver.solve(0.0, &LasotaOptions::default()).unwrap();
        assert!(sol.iterations <= 2);
        let lin = solver.linear().restrict(0, 10).unwrap();
        assert!(sol.solution.distance(&lin) < 1e-8);
    }

    #[test]
    fn sweep_and_threshold() {
        let target = TimeGrid::from_integers(0, 10, 10).unwrap();
        let solver = LasotaSolver::new(&LasotaParams::constant(1.0, 1.0, 0.1), &target, 1e-12).unwrap();
        assert!(
            (solver.gamma_star() - 1.0).abs() < 1e-8,
            "{}",
            solver.gamma_star()
        );
        let rows = gamma_sweep(&solver, &[0.1, 0.5, 1.5], &LasotaOptions::default());
        assert!(rows[0].converged && rows[1].converged && !rows[2].converged);
        assert!(matches!(
            solver.solve(1.5, &LasotaOptions::default()),
            Err(Error::GammaTooLarge { .. })
        ));
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert!(String::from_utf8(buf)
            .unwrap()
            .starts_with("gamma,kappa,converged\n0.1,"));
    }

    #[test]
    fn ergodic_scan() {
        let opts = ErgodicOptions {
            tail_start: 20,
            tail_end: 60,
            m: 16,
            delta_minus: 0.5,
            tol: 1e-8,
        };
        let flat = ergodic_kernel_scan(&|_| 1.0, &[0.0, 1.0, 2.5], &opts).unwrap();
        assert!(flat.rows.iter().all(|r| r.1 < 1e-14));
        let qp = |t: f64| 1.0 + 0.2 * (2f64.sqrt() * t).cos();
        // 9 ≈ 2·2π/√2 = 8.886
        let scan = ergodic_kernel_scan(&qp, &[0.0, 1.0, 8.875], &opts).unwrap();
        assert_eq!(scan.proxy(0.0), Some(0.0));
        let (one, good) = (scan.proxy(1.0).unwrap(), scan.proxy(8.875).unwrap());
        assert!(one > 0.05 && one < 0.5, "{one}");
        assert!(good < 0.1 * one, "{good} vs {one}");
        assert!(matches!(
            ergodic_kernel_scan(&|_| 0.1, &[0.0], &opts),
            Err(Error::MeanTooSmall { .. })
        ));
    }
}
