//! Finite-window diagnostics for remote almost periodicity.
//!
//! The remote variation of a lag `τ` is `sup ‖f(t+τ) - f(t)‖` over the tail
//! `T0 <= |t| <= T`, a stand-in for the limsup as `|t| → ∞`. A lag is an
//! accepted translation number when its variation is below `ε`, and the
//! accepted set counts as relatively dense when no gap in it (the scan range
//! ends included) exceeds `L`.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::depca::HybridSolution;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Vector;
use crate::sequence::SequenceWindow;

/// Outer-half sup above this multiple of the inner-half sup reads as growth.
const UNBOUNDED_RATIO: f64 = 1.5;
/// A jump at an integer counts as a discontinuity when it exceeds this
/// multiple of the neighbouring within-interval increments.
const JUMP_RATIO: f64 = 10.0;
const JUMP_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScanMode {
    Rap,
    Zrap,
}

#[derive(Debug, Clone, Serialize)]
pub struct RapReport {
    pub epsilon: f64,
    pub taus_found: Vec<f64>,
    /// `(τ, variation)` for every scanned lag.
    pub remote_variation: Vec<(f64, f64)>,
    pub max_gap: f64,
    pub density_bound: f64,
    pub window: (f64, f64),
    pub verdict: Verdict,
    pub mode: Option<ScanMode>,
    /// First integer where a jump was detected (RAP mode only).
    pub discontinuity: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RapSummary<'a> {
    pub epsilon: f64,
    pub accepted: usize,
    pub scanned: usize,
    pub taus_found: &'a [f64],
    pub max_gap: f64,
    pub density_bound: f64,
    pub window: (f64, f64),
    pub verdict: Verdict,
    pub mode: Option<ScanMode>,
    pub discontinuity: Option<f64>,
}

impl RapReport {
    fn build(
        epsilon: f64,
        variation: Vec<(f64, f64)>,
        density_bound: f64,
        window: (f64, f64),
        mode: Option<ScanMode>,
    ) -> Self {
        let lo = variation.first().map_or(0.0, |v| v.0);
        let hi = variation.last().map_or(0.0, |v| v.0);
        let gap_at = |eps: f64| {
            let accepted: Vec<f64> = variation.iter().filter(|v| v.1 < eps).map(|v| v.0).collect();
            max_gap(&accepted, lo, hi)
        };
        let gap = gap_at(epsilon);
        let verdict = if gap <= density_bound {
            Verdict::Pass
        } else if gap_at(2.0 * epsilon) <= density_bound {
            Verdict::Inconclusive
        } else {
            Verdict::Fail
        };
        Self {
            epsilon,
            taus_found: variation.iter().filter(|v| v.1 < epsilon).map(|v| v.0).collect(),
            remote_variation: variation,
            max_gap: gap,
            density_bound,
            window,
            verdict,
            mode,
            discontinuity: None,
        }
    }

    pub fn variation(&self, tau: f64) -> Option<f64> {
        self.remote_variation
            .iter()
            .find(|v| (v.0 - tau).abs() < 1e-9)
            .map(|v| v.1)
    }

    pub fn accepts(&self, tau: f64) -> bool {
        self.taus_found.iter().any(|&t| (t - tau).abs() < 1e-9)
    }

    pub fn summary(&self) -> RapSummary<'_> {
        RapSummary {
            epsilon: self.epsilon,
            accepted: self.taus_found.len(),
            scanned: self.remote_variation.len(),
            taus_found: &self.taus_found,
            max_gap: self.max_gap,
            density_bound: self.density_bound,
            window: self.window,
            verdict: self.verdict,
            mode: self.mode,
            discontinuity: self.discontinuity,
        }
    }

    /// CSV rows `tau, variation, accepted`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "variation", "accepted"])?;
        for (tau, v) in &self.remote_variation {
            w.write_record([tau.to_string(), v.to_string(), (*v < self.epsilon).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, &self.summary())?;
        Ok(())
    }
}

/// Largest gap between consecutive accepted lags, with `lo` and `hi` as
/// sentinels.
fn max_gap(accepted: &[f64], lo: f64, hi: f64) -> f64 {
    let mut prev = lo;
    let mut gap: f64 = 0.0;
    for &t in accepted.iter().chain([hi].iter()) {
        gap = gap.max(t - prev);
        prev = t;
    }
    gap
}

fn dist(a: &Vector, b: &Vector) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Rejects data whose outer half grows past the inner half.
fn check_bounded(norms: impl Iterator<Item = (f64, f64)>, half: f64) -> Result<()> {
    let (mut inner, mut outer) = (0.0_f64, 0.0_f64);
    for (t, v) in norms {
        if t.abs() <= half {
            inner = inner.max(v);
        } else {
            outer = outer.max(v);
        }
    }
    if !outer.is_finite() || outer > UNBOUNDED_RATIO * inner.max(f64::MIN_POSITIVE) {
        return Err(Error::Unbounded { outer, inner });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct ScanOptions {
    pub epsilon: f64,
    pub tail_start: i64,
    pub tail_end: i64,
    /// Relative density bound `L`; defaults to a tenth of the lag range, and
    /// never below one lag step.
    pub density_bound: Option<f64>,
}

/// Scans integer lags `|τ| <= tau_max` of a sequence.
pub fn scan_sequence(u: &SequenceWindow, opts: &ScanOptions, tau_max: i64) -> Result<RapReport> {
    let (t0, t) = (opts.tail_start, opts.tail_end);
    if t0 < 0 || t0 > t || tau_max < 0 {
        return Err(Error::Config(format!(
            "need 0 <= T0 <= T and tau_max >= 0, got T0 = {t0}, T = {t}, tau_max = {tau_max}"
        )));
    }
    let reach = t + tau_max;
    if !u.contains(-reach) || !u.contains(reach) {
        return Err(Error::WindowTooSmall {
            have_min: u.n_min(),
            have_max: u.n_max(),
            need_min: -reach,
            need_max: reach,
            context: "sequence scan".into(),
        });
    }
    let outer = u.n_min().abs().min(u.n_max().abs());
    check_bounded(
        (-outer..=outer).map(|n| (n as f64, u.at(n).norm())),
        outer as f64 / 2.0,
    )?;
    let tail: Vec<i64> = (-t..=-t0)
        .chain(t0.max(if t0 == 0 { 1 } else { t0 })..=t)
        .collect();
    let variation = (-tau_max..=tau_max)
        .into_par_iter()
        .map(|tau| {
            let v = tail
                .iter()
                .map(|&n| dist(u.at(n + tau), u.at(n)))
                .fold(0.0, f64::max);
            (tau as f64, v)
        })
        .collect();
    Ok(RapReport::build(
        opts.epsilon,
        variation,
        opts.density_bound.unwrap_or((tau_max as f64 / 10.0).max(1.0)),
        (t0 as f64, t as f64),
        None,
    ))
}

/// A function sampled on a grid, one table per unit interval; the last
/// entry of each table is the left limit at the next integer, so jumps at
/// integers are representable.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledFunction {
    grid: TimeGrid,
    cells: Vec<Vec<Vector>>,
}

impl SampledFunction {
    pub fn from_fn(grid: TimeGrid, mut f: impl FnMut(f64) -> Vector) -> Self {
        let m = grid.subdivisions();
        let cells = (grid.t_start()..grid.t_end())
            .map(|n| (0..=m).map(|j| f(n as f64 + j as f64 / m as f64)).collect())
            .collect();
        Self { grid, cells }
    }

    /// `g(t)` evaluated with the interval's integer `n = [t]` (left limit
    /// at the right end), e.g. `|t, n| u(n)` for a step function.
    pub fn from_fn_anchored(grid: TimeGrid, mut f: impl FnMut(f64, i64) -> Vector) -> Self {
        let m = grid.subdivisions();
        let cells = (grid.t_start()..grid.t_end())
            .map(|n| (0..=m).map(|j| f(n as f64 + j as f64 / m as f64, n)).collect())
            .collect();
        Self { grid, cells }
    }

    pub fn from_solution(sol: &HybridSolution) -> Self {
        let grid = *sol.grid();
        let m = grid.subdivisions();
        let cells = (grid.t_start()..grid.t_end())
            .map(|n| (0..=m).map(|j| sol.node(n, j).clone()).collect())
            .collect();
        Self { grid, cells }
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Sample `j` of interval `n` (`j = m` is the left limit at `n+1`).
    pub fn sample(&self, n: i64, j: u32) -> &Vector {
        &self.cells[(n - self.grid.t_start()) as usize][j as usize]
    }

    /// Value at a node, taking the right value at integers.
    pub fn node(&self, n: i64, j: u32) -> &Vector {
        let m = self.grid.subdivisions();
        if j == m {
            if n + 1 < self.grid.t_end() {
                return self.sample(n + 1, 0);
            }
            return self.sample(n, m);
        }
        self.sample(n, j)
    }

    /// Value at a grid node time, if any.
    pub fn at(&self, t: f64) -> Option<&Vector> {
        let k = self.grid.locate(t)?;
        let node = self.grid.node(k);
        if node.n == self.grid.t_end() {
            Some(self.sample(node.n - 1, node.m))
        } else {
            Some(self.sample(node.n, node.j))
        }
    }

    /// First integer with a jump larger than both `1e-9` and ten times the
    /// adjacent within-interval increments.
    pub fn first_discontinuity(&self) -> Option<f64> {
        let m = self.grid.subdivisions();
        for n in self.grid.t_start() + 1..self.grid.t_end() {
            let left = self.sample(n - 1, m);
            let right = self.sample(n, 0);
            let jump = dist(left, right);
            let before = dist(self.sample(n - 1, m - 1), left);
            let after = dist(right, self.sample(n, 1));
            if jump > JUMP_FLOOR && jump > JUMP_RATIO * before.max(after) {
                return Some(n as f64);
            }
        }
        None
    }
}

/// `f(t) = u(n) + (t - n)(u(n+1) - u(n))` on a grid with `m` steps per unit.
pub fn interpolate_sequence(u: &SequenceWindow, m: u32) -> Result<SampledFunction> {
    if u.len() < 2 {
        return Err(Error::InvalidSpec(
            "interpolation needs at least two values".into(),
        ));
    }
    let grid = TimeGrid::from_integers(u.n_min(), u.n_max(), m)?;
    Ok(SampledFunction::from_fn_anchored(grid, |t, n| {
        let theta = t - n as f64;
        u.at(n) * (1.0 - theta) + u.at(n + 1) * theta
    }))
}

/// Integer lags `-max..=max`.
pub fn integer_taus(max: i64) -> Vec<f64> {
    (-max..=max).map(|t| t as f64).collect()
}

/// Grid-multiple lags `k/m` with `|k/m| <= max`.
pub fn grid_taus(max: i64, m: u32) -> Vec<f64> {
    let k = max * m as i64;
    (-k..=k).map(|i| i as f64 / m as f64).collect()
}

/// Scans the given lags over the grid nodes with `T0 <= |t| <= T`.
///
/// In ZRAP mode lags must be integers and samples are compared interval
/// by interval (`[t + τ] = [t] + τ`), so jumps at integers are harmless. In
/// RAP mode a jump at an integer fails the scan before any lag is tried.
pub fn scan_function(
    f: &SampledFunction,
    opts: &ScanOptions,
    taus: &[f64],
    mode: ScanMode,
) -> Result<RapReport> {
    let grid = *f.grid();
    let m = grid.subdivisions();
    let (t0, t) = (opts.tail_start, opts.tail_end);
    if taus.is_empty() || t0 < 0 || t0 > t {
        return Err(Error::Config("need lags and 0 <= T0 <= T".into()));
    }
    let mut shifts = Vec::with_capacity(taus.len());
    for &tau in taus {
        let k = tau * m as f64;
        let whole = mode == ScanMode::Zrap && tau.fract() != 0.0;
        if (k - k.round()).abs() > 1e-9 || whole {
            return Err(Error::NonGridShift { tau, m });
        }
        shifts.push(k.round() as i64);
    }
    let tau_lo = taus.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let tau_hi = taus.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let need = (
        (-(t as f64) + tau_lo).floor() as i64,
        (t as f64 + tau_hi).ceil() as i64,
    );
    if need.0 < grid.t_start() || need.1 > grid.t_end() {
        return Err(Error::WindowTooSmall {
            have_min: grid.t_start(),
            have_max: grid.t_end(),
            need_min: need.0,
            need_max: need.1,
            context: "function scan".into(),
        });
    }
    let outer = grid.t_start().abs().min(grid.t_end().abs());
    check_bounded(
        (-outer..outer)
            .flat_map(|n| (0..=m).map(move |j| (n, j)))
            .map(|(n, j)| (n as f64 + j as f64 / m as f64, f.sample(n, j).norm())),
        outer as f64 / 2.0,
    )?;
    let density = opts
        .density_bound
        .unwrap_or(((tau_hi - tau_lo) / 20.0).max(1.0 / m as f64));
    let window = (t0 as f64, t as f64);

    if mode == ScanMode::Rap {
        if let Some(at) = f.first_discontinuity() {
            let variation = taus.iter().map(|&tau| (tau, f64::INFINITY)).collect();
            let mut report = RapReport::build(opts.epsilon, variation, density, window, Some(mode));
            report.verdict = Verdict::Fail;
            report.discontinuity = Some(at);
            return Ok(report);
        }
    }

    // tail nodes as (interval, sample) pairs with T0 <= |t| <= T
    let tail: Vec<(i64, u32)> = (-t..t)
        .flat_map(|n| (0..=m).map(move |j| (n, j)))
        .filter(|&(n, j)| {
            let x = (n as f64 + j as f64 / m as f64).abs();
            x >= t0 as f64 && x <= t as f64
        })
        .collect();
    let variation = taus
        .par_iter()
        .zip(shifts.par_iter())
        .map(|(&tau, &k)| {
            let v = tail
                .iter()
                .map(|&(n, j)| match mode {
                    ScanMode::Zrap => dist(f.sample(n + tau as i64, j), f.sample(n, j)),
                    ScanMode::Rap => {
                        let idx = j as i64 + k;
                        let (sn, sj) = (n + idx.div_euclid(m as i64), idx.rem_euclid(m as i64) as u32);
                        let shifted = if sn == grid.t_end() {
                            f.sample(sn - 1, m)
                        } else {
                            f.node(sn, sj)
                        };
                        dist(shifted, f.node(n, j))
                    }
                })
                .fold(0.0, f64::max);
            (tau, v)
        })
        .collect();
    Ok(RapReport::build(
        opts.epsilon,
        variation,
        density,
        window,
        Some(mode),
    ))
}

/// The demo sequence `cos n + cos √2 n + sin(n + √|n|) + 3n²/(n²+1)`.
pub fn demo_sequence(n_min: i64, n_max: i64) -> Result<SequenceWindow> {
    SequenceWindow::scalar(n_min, n_max, |n| crate::system::rap_demo(n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts(eps: f64, t0: i64, t: i64) -> ScanOptions {
        ScanOptions {
            epsilon: eps,
            tail_start: t0,
            tail_end: t,
            density_bound: None,
        }
    }

    #[test]
    fn constant_sequence_accepts_everything() {
        let u = SequenceWindow::scalar(-30, 30, |_| 1.5).unwrap();
        let r = scan_sequence(&u, &opts(0.1, 5, 20), 10).unwrap();
        assert_eq!(r.taus_found.len(), 21);
        assert!(r.remote_variation.iter().all(|v| v.1 == 0.0));
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.max_gap, 1.0);
    }

    #[test]
    fn growing_sequence_rejected() {
        let u = SequenceWindow::scalar(-40, 40, |n| n as f64).unwrap();
        assert!(matches!(
            scan_sequence(&u, &opts(0.5, 5, 20), 10),
            Err(Error::Unbounded { .. })
        ));
    }

    #[test]
    fn gap_includes_range_ends() {
        assert_eq!(max_gap(&[0.0], -10.0, 10.0), 10.0);
        assert_eq!(max_gap(&[-10.0, 0.0, 10.0], -10.0, 10.0), 10.0);
        assert_eq!(max_gap(&[-9.0, -3.0, 4.0], -10.0, 10.0), 7.0);
    }

    #[test]
    fn alternating_tent() {
        let u = SequenceWindow::scalar(0, 4, |n| (n % 2) as f64).unwrap();
        let f = interpolate_sequence(&u, 2).unwrap();
        assert_eq!(f.at(0.5).unwrap()[0], 0.5);
        assert_eq!(f.at(1.5).unwrap()[0], 0.5);
        assert_eq!(f.at(4.0).unwrap()[0], 0.0);
        assert!(f.first_discontinuity().is_none());
    }

    #[test]
    fn unit_period() {
        let grid = TimeGrid::from_integers(-30, 30, 8).unwrap();
        let f = SampledFunction::from_fn(grid, |t| {
            Vector::from_element(1, (2.0 * std::f64::consts::PI * t).sin())
        });
        let r = scan_function(&f, &opts(1e-9, 5, 20), &integer_taus(5), ScanMode::Rap).unwrap();
        assert!(r.remote_variation.iter().all(|v| v.1 < 1e-12));
        let r = scan_function(&f, &opts(1e-9, 5, 20), &grid_taus(2, 8), ScanMode::Rap).unwrap();
        assert!(r.accepts(1.0) && !r.accepts(0.5));
        assert!(matches!(
            scan_function(&f, &opts(0.1, 5, 20), &[0.3], ScanMode::Rap),
            Err(Error::NonGridShift { .. })
        ));
        assert!(matches!(
            scan_function(&f, &opts(0.1, 5, 20), &[0.5], ScanMode::Zrap),
            Err(Error::NonGridShift { .. })
        ));
    }

    #[test]
    fn step_function_is_zrap_not_rap() {
        let grid = TimeGrid::from_integers(-200, 200, 4).unwrap();
        let f = SampledFunction::from_fn_anchored(grid, |_, n| Vector::from_element(1, (n as f64).sin()));
        let o = ScanOptions {
            epsilon: 0.2,
            tail_start: 50,
            tail_end: 120,
            density_bound: Some(30.0),
        };
        let z = scan_function(&f, &o, &integer_taus(60), ScanMode::Zrap).unwrap();
        assert!(z.accepts(44.0));
        assert_eq!(z.verdict, Verdict::Pass);
        let r = scan_function(&f, &o, &integer_taus(60), ScanMode::Rap).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert!(r.discontinuity.is_some());
    }

    #[test]
    fn csv_and_json() {
        let u = SequenceWindow::scalar(-12, 12, |_| 0.0).unwrap();
        let r = scan_sequence(&u, &opts(0.1, 2, 10), 1).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "tau,variation,accepted\n-1,0,true\n0,0,true\n1,0,true\n"
        );
        let mut buf = Vec::new();
        r.write_json(&mut buf).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["verdict"], "pass");
    }
}
