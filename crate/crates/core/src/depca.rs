//! Continuous solutions of `x' = A(t)x + B(t)x([t]) + f(t)` rebuilt from the
//! integer anchors `x(n)` by
//! `x(t) = Z(t,n)x(n) + ∫_n^t Φ(t,u)f(u)du` on every `[n, n+1]`.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dichotomy::{
    bounded_solution, detect_dichotomy_with, BoundedSolution, DetectOptions, DichotomyData,
};
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{inverse, Matrix, Vector};
use crate::quadrature::GL5_WEIGHTS;
use crate::reduction::{reduce_with, DiscreteSystem};
use crate::sequence::SequenceWindow;
use crate::system::{CoefficientSystem, FnCoefficients};
use crate::transition::{fundamental, hybrid_kernels, ForcingTable, HybridKernel, QuadPoint};

/// Accuracy target of the tabulated kernels; continuity defects above ten
/// times this (relative to the solution size) reject a reconstruction.
pub const QUAD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct HybridSolution {
    grid: TimeGrid,
    values: Vec<Vector>,
    anchors: SequenceWindow,
    trusted: (i64, i64),
}

impl HybridSolution {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Values at every grid node, in grid order.
    pub fn values(&self) -> &[Vector] {
        &self.values
    }

    pub fn anchors(&self) -> &SequenceWindow {
        &self.anchors
    }

    /// Integer range on which the values are certified (the whole grid for
    /// initial value problems, the interior of the series for bounded ones).
    pub fn trusted(&self) -> (i64, i64) {
        self.trusted
    }

    /// `x(n + j/m)`.
    pub fn node(&self, n: i64, j: u32) -> &Vector {
        let k = self
            .grid
            .index_of(n, j)
            .unwrap_or_else(|| panic!("node ({n}, {j}) outside {:?}", self.grid));
        &self.values[k]
    }

    /// Value at a grid node time.
    pub fn at(&self, t: f64) -> Option<&Vector> {
        self.grid.locate(t).map(|k| &self.values[k])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Largest `‖x(t) - y(t)‖` over the common nodes of two solutions on the
    /// same step.
    pub fn distance(&self, other: &Self) -> f64 {
        let lo = self.grid.t_start().max(other.grid.t_start());
        let hi = self.grid.t_end().min(other.grid.t_end());
        let m = self.grid.subdivisions();
        assert_eq!(m, other.grid.subdivisions(), "grids must share the step");
        let mut d: f64 = 0.0;
        for n in lo..hi {
            for j in 0..=m {
                d = d.max((self.node(n, j) - other.node(n, j)).norm());
            }
        }
        d
    }

    /// Restriction to `[a, b]`; the trusted range is clipped accordingly.
    pub fn restrict(&self, a: i64, b: i64) -> Result<Self> {
        let grid = self.grid.sub(a, b)?;
        if grid.t_start() != a || grid.t_end() != b {
            return Err(Error::WindowTooSmall {
                have_min: self.grid.t_start(),
                have_max: self.grid.t_end(),
                need_min: a,
                need_max: b,
                context: "solution restriction".into(),
            });
        }
        let k0 = self.grid.index_of_integer(a).expect("inside");
        let values = self.values[k0..k0 + grid.len()].to_vec();
        Ok(Self {
            grid,
            values,
            anchors: self.anchors.restrict(a, b)?,
            trusted: (self.trusted.0.max(a), self.trusted.1.min(b)),
        })
    }

    /// Builds a solution from node values; anchors are read off the integers.
    pub fn from_values(grid: TimeGrid, values: Vec<Vector>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch {
                expected: grid.len(),
                found: values.len(),
                context: "node values".into(),
            });
        }
        let anchors = SequenceWindow::from_fn(grid.t_start(), grid.t_end(), |n| {
            values[grid.index_of_integer(n).expect("integer node")].clone()
        })?;
        Ok(Self {
            grid,
            values,
            anchors,
            trusted: (grid.t_start(), grid.t_end()),
        })
    }

    pub fn with_trusted(mut self, trusted: (i64, i64)) -> Self {
        self.trusted = (
            trusted.0.max(self.grid.t_start()),
            trusted.1.min(self.grid.t_end()),
        );
        self
    }

    /// Value inside `[n, n+1]` at offset `x = cell + θ` (in grid steps) by
    /// Lagrange interpolation through the nearest `min(3, m) + 1` nodes.
    pub fn interpolate(&self, n: i64, x: f64) -> Vector {
        let m = self.grid.subdivisions() as i64;
        let order = m.min(3);
        let mut j0 = (x - order as f64 / 2.0).round() as i64;
        j0 = j0.clamp(0, m - order);
        let mut acc = Vector::zeros(self.dim());
        for a in j0..=j0 + order {
            let mut w = 1.0;
            for b in j0..=j0 + order {
                if a != b {
                    w *= (x - b as f64) / (a - b) as f64;
                }
            }
            acc += self.node(n, a as u32) * w;
        }
        acc
    }

    /// Value at a quadrature point.
    pub fn at_quad(&self, p: &QuadPoint) -> Vector {
        self.interpolate(p.n, p.cell as f64 + p.theta)
    }

    /// Measured `sup ‖A(t)x(t) + B(t)x([t]) + f(t)‖` over the nodes of the
    /// trusted range: a Lipschitz constant for the solution.
    pub fn lipschitz(&self, system: &CoefficientSystem) -> f64 {
        let (a, b) = self.trusted;
        let m = self.grid.subdivisions();
        let mut sup: f64 = 0.0;
        for n in a..b {
            let anchor = self.node(n, 0);
            for j in 0..=m {
                let t = n as f64 + j as f64 / m as f64;
                let x = self.node(n, j);
                let d = system.a(t, n) * x + system.b(t, n) * anchor + system.f(t, n);
                sup = sup.max(d.norm());
            }
        }
        sup
    }

    /// CSV rows `t, x0, x1, ...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend((0..self.dim()).map(|i| format!("x{i}")));
        w.write_record(header)?;
        for (k, v) in self.values.iter().enumerate() {
            let mut rec = vec![self.grid.t(k).to_string()];
            rec.extend(v.iter().map(|x| x.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// One whitespace-separated `t value` file per component,
    /// `<stem>_x<i>.dat` in `dir`.
    pub fn write_plot_data(&self, dir: &Path, stem: &str) -> Result<()> {
        for i in 0..self.dim() {
            let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join(format!("{stem}_x{i}.dat")))?);
            for (k, v) in self.values.iter().enumerate() {
                writeln!(f, "{} {}", self.grid.t(k), v[i])?;
            }
            f.flush()?;
        }
        Ok(())
    }
}

/// Rebuilds the solution from anchors covering the kernel's grid.
pub fn reconstruct(
    kernel: &HybridKernel,
    system: &CoefficientSystem,
    anchors: &SequenceWindow,
) -> Result<HybridSolution> {
    reconstruct_with(kernel, &kernel.system_forcing(system)?, anchors)
}

pub fn reconstruct_with(
    kernel: &HybridKernel,
    forcing: &ForcingTable,
    anchors: &SequenceWindow,
) -> Result<HybridSolution> {
    let grid = *kernel.grid();
    if !anchors.contains(grid.t_start()) || !anchors.contains(grid.t_end()) {
        return Err(Error::WindowTooSmall {
            have_min: anchors.n_min(),
            have_max: anchors.n_max(),
            need_min: grid.t_start(),
            need_max: grid.t_end(),
            context: "anchors for reconstruction".into(),
        });
    }
    let m = grid.subdivisions();
    let mut values = Vec::with_capacity(grid.len());
    for n in grid.t_start()..grid.t_end() {
        let xn = anchors.at(n);
        for j in 0..m {
            values.push(if j == 0 {
                xn.clone()
            } else {
                kernel.z_local(n, j) * xn + forcing.integral(kernel, n, j)
            });
        }
        let left = kernel.z_local(n, m) * xn + forcing.integral(kernel, n, m);
        let next = anchors.at(n + 1);
        let defect = (&left - next).norm();
        let limit = 10.0 * QUAD_TOL * (1.0 + next.norm());
        if !(defect <= limit) {
            return Err(Error::ContinuityDefect {
                t: (n + 1) as f64,
                defect,
                limit,
            });
        }
    }
    values.push(anchors.at(grid.t_end()).clone());
    let anchors = anchors.restrict(grid.t_start(), grid.t_end())?;
    Ok(HybridSolution {
        grid,
        values,
        anchors,
        trusted: (grid.t_start(), grid.t_end()),
    })
}

/// Initial value problem `x(n0) = x0` solved forward over the kernel's grid.
pub fn solve_initial(
    kernel: &HybridKernel,
    system: &CoefficientSystem,
    x0: &Vector,
) -> Result<HybridSolution> {
    let forcing = kernel.system_forcing(system)?;
    let disc = reduce_with(kernel, &forcing)?;
    let grid = kernel.grid();
    let anchors = crate::reduction::iterate(&disc, x0, grid.t_start(), grid.t_end())?;
    reconstruct_with(kernel, &forcing, &anchors)
}

/// The bounded solution: reduce, sum the Green series, reconstruct.
pub fn rap_solution(
    system: &CoefficientSystem,
    kernel: &HybridKernel,
    dd: &DichotomyData,
    tol: f64,
) -> Result<HybridSolution> {
    let forcing = kernel.system_forcing(system)?;
    let disc = reduce_with(kernel, &forcing)?;
    Ok(bounded_from(kernel, &forcing, &disc, dd, tol)?.0)
}

fn bounded_from(
    kernel: &HybridKernel,
    forcing: &ForcingTable,
    disc: &DiscreteSystem,
    dd: &DichotomyData,
    tol: f64,
) -> Result<(HybridSolution, BoundedSolution)> {
    let bounded = bounded_solution(disc, dd, tol)?;
    let sol = reconstruct_with(kernel, forcing, &bounded.values)?.with_trusted(bounded.interior);
    Ok((sol, bounded))
}

/// Everything needed to produce bounded solutions for one `(A, B)` pair on
/// a window, reusable across forcings.
#[derive(Debug, Clone)]
pub struct RapSolver {
    system: CoefficientSystem,
    kernel: HybridKernel,
    disc: DiscreteSystem,
    forcing: ForcingTable,
    dd: DichotomyData,
    tol: f64,
    target: (i64, i64),
}

/// Intervals added on each side before the required margin is known.
const INITIAL_MARGIN: i64 = 30;

impl RapSolver {
    /// Solver on exactly `grid`.
    pub fn new(system: &CoefficientSystem, grid: &TimeGrid, opts: &DetectOptions, tol: f64) -> Result<Self> {
        let kernel = hybrid_kernels(fundamental(system, grid)?, system)?;
        let forcing = kernel.system_forcing(system)?;
        let disc = reduce_with(&kernel, &forcing)?;
        let dd = detect_dichotomy_with(&disc, opts)?;
        Ok(Self {
            system: system.clone(),
            kernel,
            disc,
            forcing,
            dd,
            tol,
            target: (grid.t_start(), grid.t_end()),
        })
    }

    /// Solver on `target` widened until the series truncation for forcings
    /// of size `max(‖h‖∞, 1)` fits in the margin.
    pub fn with_margin(
        system: &CoefficientSystem,
        target: &TimeGrid,
        opts: &DetectOptions,
        tol: f64,
    ) -> Result<Self> {
        let mut margin = INITIAL_MARGIN;
        for _ in 0..4 {
            let mut solver = Self::new(system, &target.widen(margin), opts, tol)?;
            let h_norm = solver.disc.forcing().sup_norm().max(1.0);
            let need = solver.dd.truncation(h_norm, tol) + 2;
            if need <= margin {
                solver.target = (target.t_start(), target.t_end());
                return Ok(solver);
            }
            margin = need + 2;
        }
        Err(Error::FitRejected {
            reason: "required margin keeps growing with the window".into(),
        })
    }

    pub fn system(&self) -> &CoefficientSystem {
        &self.system
    }

    pub fn kernel(&self) -> &HybridKernel {
        &self.kernel
    }

    pub fn discrete(&self) -> &DiscreteSystem {
        &self.disc
    }

    pub fn dichotomy(&self) -> &DichotomyData {
        &self.dd
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn target(&self) -> (i64, i64) {
        self.target
    }

    /// Bounded solution for the system's own forcing on the full window.
    pub fn solve_full(&self) -> Result<(HybridSolution, BoundedSolution)> {
        bounded_from(&self.kernel, &self.forcing, &self.disc, &self.dd, self.tol)
    }

    /// Bounded solution restricted to the target window.
    pub fn solve(&self) -> Result<HybridSolution> {
        self.solve_full()?.0.restrict(self.target.0, self.target.1)
    }

    /// Bounded solution on the full window for another forcing, sampled at
    /// the quadrature points.
    pub fn solve_forcing<F>(&self, f: F) -> Result<(HybridSolution, BoundedSolution)>
    where
        F: Fn(&QuadPoint) -> Vector + Sync,
    {
        let forcing = self.kernel.forcing_table(f)?;
        let disc = reduce_with(&self.kernel, &forcing)?;
        bounded_from(&self.kernel, &forcing, &disc, &self.dd, self.tol)
    }
}

/// `R(t,s)` and `G(t,u)` for nodes `s <= t`, with `n = [t]`, `p = [s]`:
///
/// ```text
/// R(t,s) = Z(t,n) C(n-1)···C(p) Z(s,p)^-1
/// G(t,u) = Φ(t,u)                           n <= u <= t
///        = Z(t,n) C(n-1)···C(i+1) Φ(i+1,u)  i <= u < i+1 <= n,  i >= p
///        - R(t,s)Φ(s,u)                     additionally for p <= u < s
/// ```
///
/// so that `x(t) = R(t,s)x(s) + ∫_p^t G(t,u)f(u)du`. At integer `u` the
/// left-limit branch is used.
pub struct VariationKernels<'a> {
    kernel: &'a HybridKernel,
}

impl<'a> VariationKernels<'a> {
    pub fn new(kernel: &'a HybridKernel) -> Self {
        Self { kernel }
    }

    fn split_right(&self, t: f64) -> Result<(i64, u32)> {
        // a point n+1 is the right end of interval n only when it is the grid end
        self.kernel.transition().split(t)
    }

    fn c(&self, i: i64) -> &Matrix {
        self.kernel.z_local(i, self.kernel.grid().subdivisions())
    }

    /// `Z(t,n) C(n-1)···C(i+1)`, the factor shared by all middle branches.
    fn chain(&self, n: i64, jt: u32, i: i64) -> Matrix {
        let mut acc = self.kernel.z_local(n, jt).clone();
        for k in (i + 1..n).rev() {
            acc *= self.c(k);
        }
        acc
    }

    pub fn r(&self, t: f64, s: f64) -> Result<Matrix> {
        let (n, jt) = self.split_right(t)?;
        let (p, js) = self.split_right(s)?;
        if (n, jt) < (p, js) {
            return Err(Error::InvalidGrid(format!(
                "R(t,s) needs s <= t, got t = {t}, s = {s}"
            )));
        }
        let zs = self.kernel.z_local(p, js);
        let zs_inv = inverse(zs).ok_or(Error::NearSingularJ {
            t: s,
            s: p as f64,
            condition: f64::INFINITY,
            ceiling: self.kernel.ceiling(),
        })?;
        if n == p {
            return Ok(self.kernel.z_local(n, jt) * zs_inv);
        }
        Ok(self.chain(n, jt, p) * self.c(p) * zs_inv)
    }

    /// `G(t,u)` at a quadrature point `u` in `[p, t]`.
    pub fn g(&self, t: f64, s: f64, u: &QuadPoint) -> Result<Matrix> {
        let tr = self.kernel.transition();
        let (n, jt) = self.split_right(t)?;
        let (p, js) = self.split_right(s)?;
        let i = u.n;
        let mut g = if i == n {
            tr.phi_local(n, jt) * tr.phi_gl_inv(n, u.cell, u.g)
        } else {
            self.chain(n, jt, i) * tr.unit_factor(i) * tr.phi_gl_inv(i, u.cell, u.g)
        };
        if i == p && u.cell < js {
            g -= self.r(t, s)? * tr.phi_local(p, js) * tr.phi_gl_inv(p, u.cell, u.g);
        }
        Ok(g)
    }

    /// `R(t,s)x(s) + ∫_p^t G(t,u)f(u)du` with the integral over the cells up
    /// to `t`.
    pub fn propagate<F>(&self, t: f64, s: f64, xs: &Vector, f: F) -> Result<Vector>
    where
        F: Fn(&QuadPoint) -> Vector,
    {
        let (n, jt) = self.split_right(t)?;
        let (p, _) = self.split_right(s)?;
        let h = self.kernel.grid().step();
        let mut acc = self.r(t, s)? * xs;
        for i in p..=n {
            for pt in self.kernel.transition().quad_points(i) {
                if i == n && pt.cell >= jt {
                    break;
                }
                acc += self.g(t, s, &pt)? * f(&pt) * (GL5_WEIGHTS[pt.g] * h);
            }
        }
        Ok(acc)
    }
}

/// Exact solution of `x' = ax + bx([t]) + c`, `x(0) = x0`, for `t >= 0`.
pub fn closed_form_oracle(a: f64, b: f64, c: f64, x0: f64, t: f64) -> Result<f64> {
    if a == 0.0 {
        return Err(Error::InvalidSpec("closed form needs a != 0".into()));
    }
    if t < 0.0 {
        return Err(Error::InvalidSpec("closed form is for t >= 0".into()));
    }
    let z = |s: f64| (a * s).exp() + b / a * ((a * s).exp() - 1.0);
    let forced = |s: f64| c / a * ((a * s).exp() - 1.0);
    let n = t.floor();
    let mut x = x0;
    for _ in 0..n as i64 {
        x = z(1.0) * x + forced(1.0);
    }
    Ok(z(t - n) * x + forced(t - n))
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleCase {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub x0: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
    pub max_error: f64,
    pub m: u32,
    pub seed: u64,
}

/// Pipeline against the closed form for `count` random scalar systems with
/// `a ∈ [-2, -0.2]`, `b, c ∈ [-1, 1]`, `x0 ∈ [-2, 2]`, skipping
/// `|C| ∈ [0.99, 1.01]`, on `[0, 10]`.
pub fn oracle_suite(count: usize, m: u32, seed: u64) -> Result<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = TimeGrid::from_integers(0, 10, m)?;
    let mut cases = Vec::with_capacity(count);
    while cases.len() < count {
        let a: f64 = rng.gen_range(-2.0..-0.2);
        let b: f64 = rng.gen_range(-1.0..1.0);
        let c: f64 = rng.gen_range(-1.0..1.0);
        let x0: f64 = rng.gen_range(-2.0..2.0);
        let cn: f64 = a.exp() + b / a * (a.exp() - 1.0);
        if (cn.abs() - 1.0).abs() <= 0.01 {
            continue;
        }
        let sys = CoefficientSystem::new(FnCoefficients::scalar(move |_| a, move |_| b, move |_| c), &grid)?;
        let kernel = hybrid_kernels(fundamental(&sys, &grid)?, &sys)?;
        let sol = solve_initial(&kernel, &sys, &Vector::from_element(1, x0))?;
        let mut max_error: f64 = 0.0;
        for (k, v) in sol.values().iter().enumerate() {
            let exact = closed_form_oracle(a, b, c, x0, grid.t(k))?;
            max_error = max_error.max((v[0] - exact).abs());
        }
        cases.push(OracleCase {
            a,
            b,
            c,
            x0,
            max_error,
        });
    }
    let max_error = cases.iter().map(|c| c.max_error).fold(0.0, f64::max);
    Ok(OracleReport {
        cases,
        max_error,
        m,
        seed,
    })
}
