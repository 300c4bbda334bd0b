//! Contraction solvers for perturbed systems near a known solution `ξ`.
//!
//! Writing the unknown as `ψ = ξ + φ`, the correction solves the linear
//! problem forced by the perturbation, `φ = T φ` with
//!
//! ```text
//! (Tφ)(n) = Σ_k G̃(n,k) g(k, ξ(k) + φ(k))                       discrete
//! Tφ      = bounded solution of φ' = Aφ + Bφ([t]) + g(t, ξ+φ, ξ([t])+φ([t]))
//! ```
//!
//! and the iteration starts from `φ = 0`. Lipschitz constants of `g` are
//! measured by sampling on the `r`-ball around `ξ`, and the contraction
//! factor combines them with measured norms of the linear solution
//! operator. The a-priori factor built from `(K0, M, K, α)` is reported too;
//! it is far more pessimistic and is not used to decide.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::depca::{HybridSolution, RapSolver};
use crate::dichotomy::{bounded_solution, DetectOptions, DichotomyData};
use crate::error::{Error, Result};
use crate::linalg::{op_norm, Matrix, Vector};
use crate::quadrature::GL5_WEIGHTS;
use crate::reduction::DiscreteSystem;
use crate::sequence::SequenceWindow;
use crate::system::{CoefficientSystem, Coefficients};
use crate::transition::QuadPoint;

pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_MAX_ITERATIONS: usize = 200;
pub const DEFAULT_TOL: f64 = 1e-9;
/// Allowed excess of observed residual ratios over the contraction factor.
pub const RATIO_SLACK: f64 = 1.1;
/// `g(·,·,·,0)` must vanish to this level on the samples.
const ZERO_TOL: f64 = 1e-12;

pub type PerturbationFn = dyn Fn(f64, &Vector, &Vector, f64) -> Vector + Send + Sync;
pub type VectorField = dyn Fn(f64, &Vector, &Vector) -> Vector + Send + Sync;

/// `g(t, x, y, ν)`, where `y` stands for the state at `[t]`.
#[derive(Clone)]
pub struct Perturbation {
    g: Arc<PerturbationFn>,
    pub nu: f64,
    pub r: f64,
}

impl std::fmt::Debug for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Perturbation")
            .field("nu", &self.nu)
            .field("r", &self.r)
            .finish_non_exhaustive()
    }
}

impl Perturbation {
    pub fn new(
        g: impl Fn(f64, &Vector, &Vector, f64) -> Vector + Send + Sync + 'static,
        nu: f64,
        r: f64,
    ) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) || !(r > 0.0 && r.is_finite()) {
            return Err(Error::Config(format!(
                "need nu >= 0 and r > 0, got nu = {nu}, r = {r}"
            )));
        }
        Ok(Self {
            g: Arc::new(g),
            nu,
            r,
        })
    }

    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::Config(format!("need nu >= 0, got {nu}")));
        }
        Ok(Self {
            g: self.g.clone(),
            nu,
            r: self.r,
        })
    }

    pub fn eval(&self, t: f64, x: &Vector, y: &Vector) -> Vector {
        (self.g)(t, x, y, self.nu)
    }

    pub fn eval_at(&self, t: f64, x: &Vector, y: &Vector, nu: f64) -> Vector {
        (self.g)(t, x, y, nu)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ContractionOptions {
    pub tol: f64,
    pub max_iterations: usize,
    pub samples: usize,
    pub seed: u64,
    /// Truncation tolerance of the Green series inside each step.
    pub series_tol: f64,
}

impl Default for ContractionOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            series_tol: 1e-12,
        }
    }
}

/// Sampled constants of a perturbation on the `r`-ball around `ξ`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Measurement {
    /// Lipschitz constant in the current state.
    pub lip_x: f64,
    /// Lipschitz constant in the state at `[t]`.
    pub lip_y: f64,
    pub g_norm: f64,
    pub samples: usize,
}

impl Measurement {
    /// `M0` with `‖Δg‖ <= M0 (‖Δx‖ + ‖Δy‖)`.
    pub fn m0(&self) -> f64 {
        self.lip_x.max(self.lip_y)
    }
}

/// A sampling site: time, `ξ(t)`, `ξ([t])`.
type Site = (f64, Vector, Vector);

/// Evaluation of the perturbation at a site: `(t, ξ(t), ξ([t]), x, y)`.
type SiteFn<'a> = dyn Fn(f64, &Vector, &Vector, &Vector, &Vector) -> Vector + Sync + 'a;

fn ball_point(rng: &mut ChaCha8Rng, q: usize, r: f64) -> Vector {
    let dir = Vector::from_fn(q, |_, _| StandardNormal.sample(rng));
    let radius = r * rng.gen::<f64>().powf(1.0 / q as f64);
    let norm = dir.norm();
    if norm == 0.0 {
        Vector::zeros(q)
    } else {
        dir * (radius / norm)
    }
}

/// Random pairs in the ball, alternating between the two arguments and
/// between distant and nearby pairs, so both secant and local slopes are
/// seen.
fn measure(eval: &SiteFn, sites: &[Site], r: f64, samples: usize, seed: u64) -> Result<Measurement> {
    let q = sites[0].1.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut lip_x, mut lip_y, mut g_norm) = (0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..samples {
        let (t, xt, xn) = &sites[rng.gen_range(0..sites.len())];
        let z1 = ball_point(&mut rng, q, r);
        let w1 = ball_point(&mut rng, q, r);
        let partner = if i % 4 < 2 {
            ball_point(&mut rng, q, r)
        } else {
            let step = ball_point(&mut rng, q, 1e-4 * r);
            let base = if i % 2 == 0 { &z1 } else { &w1 };
            let p = base + step;
            let n = p.norm();
            if n > r {
                p * (r / n)
            } else {
                p
            }
        };
        let x1 = xt + &z1;
        let y1 = xn + &w1;
        let g1 = eval(*t, xt, xn, &x1, &y1);
        if !g1.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                t: *t,
                what: "perturbation".into(),
            });
        }
        g_norm = g_norm.max(g1.norm());
        if i % 2 == 0 {
            let d = (&z1 - &partner).norm();
            if d > 0.0 {
                let g2 = eval(*t, xt, xn, &(xt + &partner), &y1);
                lip_x = lip_x.max((g1 - g2).norm() / d);
            }
        } else {
            let d = (&w1 - &partner).norm();
            if d > 0.0 {
                let g2 = eval(*t, xt, xn, &x1, &(xn + &partner));
                lip_y = lip_y.max((g1 - g2).norm() / d);
            }
        }
    }
    for (t, xt, xn) in sites.iter().step_by((sites.len() / 64).max(1)) {
        g_norm = g_norm.max(eval(*t, xt, xn, xt, xn).norm());
    }
    Ok(Measurement {
        lip_x,
        lip_y,
        g_norm,
        samples,
    })
}

fn check_vanishes(pert: &Perturbation, sites: &[Site], seed: u64) -> Result<()> {
    let q = sites[0].1.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    for _ in 0..256 {
        let (t, xt, xn) = &sites[rng.gen_range(0..sites.len())];
        let x = xt + ball_point(&mut rng, q, pert.r);
        let y = xn + ball_point(&mut rng, q, pert.r);
        let g0 = pert.eval_at(*t, &x, &y, 0.0);
        if g0.norm() > ZERO_TOL {
            return Err(Error::InvalidModel(format!(
                "perturbation does not vanish at nu = 0 (|g| = {:e} at t = {t})",
                g0.norm()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct ContractionCertificate {
    pub nu: f64,
    pub r: f64,
    /// Measured contraction factor.
    pub kappa: f64,
    /// Factor from the a-priori constants.
    pub kappa_apriori: f64,
    /// `‖solution operator‖`, so that `kappa = gain * Lipschitz`.
    pub gain: f64,
    pub m0: f64,
    pub g_norm: f64,
    /// `gain * ‖g‖ <= r`: the ball is mapped into itself.
    pub radius_check: bool,
    pub iterations: usize,
    pub final_residual: f64,
    pub residuals: Vec<f64>,
    /// Largest `res[k] / res[k-1]` over steps above the noise floor.
    pub max_ratio: Option<f64>,
    pub ratio_check: bool,
    /// `‖ψ - ξ‖∞` on the trusted range.
    pub distance: f64,
    pub samples: usize,
    pub seed: u64,
}

impl ContractionCertificate {
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }
}

struct Iteration<S> {
    value: S,
    residuals: Vec<f64>,
}

fn contract<S>(
    start: S,
    mut step: impl FnMut(&S) -> Result<S>,
    dist: impl Fn(&S, &S) -> f64,
    opts: &ContractionOptions,
) -> Result<Iteration<S>> {
    let mut cur = start;
    let mut residuals = Vec::new();
    for _ in 0..opts.max_iterations {
        let next = step(&cur)?;
        let res = dist(&next, &cur);
        residuals.push(res);
        cur = next;
        if !res.is_finite() {
            break;
        }
        if res <= opts.tol {
            return Ok(Iteration {
                value: cur,
                residuals,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: residuals.len(),
        residual: residuals.last().copied().unwrap_or(f64::NAN),
    })
}

fn ratio_stats(residuals: &[f64], floor: f64, kappa: f64) -> (Option<f64>, bool) {
    let max = residuals
        .windows(2)
        .filter(|w| w[0] > floor)
        .map(|w| w[1] / w[0])
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))));
    (max, max.is_none_or(|m| m <= kappa * RATIO_SLACK))
}

/// `sup_n Σ_k ‖G̃(n,k)‖` over the whole window: summed to `depth`, plus the
/// geometric bound on the rest.
fn green_gain(dd: &DichotomyData) -> f64 {
    let lo = dd.n_min();
    let hi = dd.n_max_index();
    let depth = dd.truncation(1.0, 1e-12).min(hi - lo);
    let e = (-dd.alpha()).exp();
    let tail = 2.0 * dd.k() * e.powi(depth as i32 + 1) / (1.0 - e);
    dd.sup_row_sum(lo, hi, depth) + tail
}

/// Discrete problem `y(n+1) = C(n)y(n) + h(n) + g(n, y(n), y(n), ν)` near
/// the bounded solution `ξ`.
#[derive(Debug, Clone)]
pub struct DiscretePerturbed {
    pub psi: SequenceWindow,
    pub interior: (i64, i64),
    pub certificate: ContractionCertificate,
}

pub fn solve_perturbed_discrete(
    disc: &DiscreteSystem,
    dd: &DichotomyData,
    pert: &Perturbation,
    xi: &SequenceWindow,
    opts: &ContractionOptions,
) -> Result<DiscretePerturbed> {
    let (lo, hi) = (disc.n_min(), disc.n_max() + 1);
    if xi.n_min() > lo || xi.n_max() < hi {
        return Err(Error::WindowTooSmall {
            have_min: xi.n_min(),
            have_max: xi.n_max(),
            need_min: lo,
            need_max: hi,
            context: "reference solution must cover the discrete window".into(),
        });
    }
    let sites: Vec<Site> = (lo..=hi)
        .map(|n| (n as f64, xi.at(n).clone(), xi.at(n).clone()))
        .collect();
    check_vanishes(pert, &sites, opts.seed)?;
    let g = |t: f64, _: &Vector, _: &Vector, x: &Vector, _: &Vector| pert.eval(t, x, x);
    let meas = measure(&g, &sites, pert.r, opts.samples, opts.seed)?;
    let gain = green_gain(dd);
    let kappa = gain * meas.lip_x;
    if kappa >= 1.0 {
        return Err(Error::NoContraction {
            kappa,
            nu: pert.nu,
            r: pert.r,
        });
    }
    let q = disc.dim();
    let zero = SequenceWindow::constant(lo, hi, Vector::zeros(q))?;
    let mut interior = (lo, hi);
    let it = contract(
        zero,
        |phi| {
            let h = (lo..hi)
                .map(|n| {
                    let x = xi.at(n) + phi.at(n);
                    pert.eval(n as f64, &x, &x)
                })
                .collect();
            let b = bounded_solution(&disc.with_forcing(h)?, dd, opts.series_tol)?;
            interior = b.interior;
            Ok(b.values)
        },
        |a, b| a.distance(b),
        opts,
    )?;
    let psi = SequenceWindow::from_fn(lo, hi, |n| xi.at(n) + it.value.at(n))?;
    let distance = it.value.restrict(interior.0, interior.1)?.sup_norm();
    let certificate = certify(
        pert,
        &meas,
        kappa,
        dd.bound_factor() * meas.m0(),
        gain,
        it.residuals,
        distance,
        opts,
    )?;
    Ok(DiscretePerturbed {
        psi,
        interior,
        certificate,
    })
}

#[allow(clippy::too_many_arguments)]
fn certify(
    pert: &Perturbation,
    meas: &Measurement,
    kappa: f64,
    kappa_apriori: f64,
    gain: f64,
    residuals: Vec<f64>,
    distance: f64,
    opts: &ContractionOptions,
) -> Result<ContractionCertificate> {
    let (max_ratio, ratio_check) = ratio_stats(&residuals, 100.0 * opts.tol, kappa);
    if distance > pert.r {
        return Err(Error::OutsideNeighborhood { distance, r: pert.r });
    }
    Ok(ContractionCertificate {
        nu: pert.nu,
        r: pert.r,
        kappa,
        kappa_apriori,
        gain,
        m0: meas.m0(),
        g_norm: meas.g_norm,
        radius_check: gain * meas.g_norm <= pert.r,
        iterations: residuals.len(),
        final_residual: residuals.last().copied().unwrap_or(0.0),
        residuals,
        max_ratio,
        ratio_check,
        distance,
        samples: meas.samples,
        seed: opts.seed,
    })
}

/// Norms of the linear DEPCA solution operator `F ↦ φ` on the solver's
/// window.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DepcaGain {
    /// `sup ‖Z(t, [t])‖`.
    pub z_max: f64,
    /// `sup_n Σ_k ‖G̃(n,k)‖`.
    pub green: f64,
    /// `sup_n ∫_n^{n+1} ‖Φ(n+1, u)‖ du`.
    pub unit: f64,
    /// `sup_t ∫_{[t]}^t ‖Φ(t, u)‖ du`.
    pub partial: f64,
}

impl DepcaGain {
    pub fn measure(solver: &RapSolver) -> Self {
        let hk = solver.kernel();
        let tk = hk.transition();
        let grid = *hk.grid();
        let m = grid.subdivisions();
        let h = grid.step();
        let (z_max, unit, partial) = (grid.t_start()..grid.t_end())
            .into_par_iter()
            .map(|n| {
                let mut z_max: f64 = 0.0;
                let mut partial: f64 = 0.0;
                let mut unit = 0.0;
                for j in 0..=m {
                    z_max = z_max.max(op_norm(hk.z_local(n, j)));
                    let phi = tk.phi_local(n, j);
                    let mut acc = 0.0;
                    for cell in 0..j {
                        for (g, w) in GL5_WEIGHTS.iter().enumerate() {
                            acc += w * h * op_norm(&(phi * tk.phi_gl_inv(n, cell, g)));
                        }
                    }
                    partial = partial.max(acc);
                    if j == m {
                        unit = acc;
                    }
                }
                (z_max, unit, partial)
            })
            .reduce(
                || (0.0, 0.0, 0.0),
                |a, b| (a.0.max(b.0), a.1.max(b.1), a.2.max(b.2)),
            );
        Self {
            z_max,
            green: green_gain(solver.dichotomy()),
            unit,
            partial,
        }
    }

    /// `‖φ‖∞ <= total · ‖F‖∞`.
    pub fn total(&self) -> f64 {
        self.z_max * self.green * self.unit + self.partial
    }
}

/// `2K0[K0(M+1)K(1+e^{-α})(1-e^{-α})^{-1} + 1]M0`.
pub fn apriori_kappa(system: &CoefficientSystem, solver: &RapSolver, m0: f64) -> f64 {
    let k0 = solver.kernel().transition().k0();
    let bracket = k0 * (system.bound() + 1.0) * solver.dichotomy().bound_factor() + 1.0;
    2.0 * k0 * bracket * m0
}

#[derive(Debug, Clone)]
pub struct PerturbedSolution {
    /// `ψ = ξ + φ` on the solver's full window, trusted on the interior.
    pub solution: HybridSolution,
    pub certificate: ContractionCertificate,
    pub gain: DepcaGain,
}

impl PerturbedSolution {
    /// The solution on the solver's target window.
    pub fn target(&self, solver: &RapSolver) -> Result<HybridSolution> {
        let (a, b) = solver.target();
        self.solution.restrict(a, b)
    }
}

/// `x' = A x + B x([t]) + f + g(t, x, x([t]), ν)` near the bounded solution
/// `ξ` of the linear problem, which must live on the solver's grid.
pub fn solve_perturbed_depca(
    solver: &RapSolver,
    xi: &HybridSolution,
    pert: &Perturbation,
    opts: &ContractionOptions,
) -> Result<PerturbedSolution> {
    let sites = depca_sites(xi);
    check_vanishes(pert, &sites, opts.seed)?;
    let eval = |t: f64, _: &Vector, _: &Vector, x: &Vector, y: &Vector| pert.eval(t, x, y);
    solve_depca_with(solver, xi, pert, &eval, &sites, opts)
}

fn depca_sites(xi: &HybridSolution) -> Vec<Site> {
    let (a, b) = xi.trusted();
    let m = xi.grid().subdivisions();
    (a..b.max(a + 1).min(xi.grid().t_end()))
        .flat_map(|n| (0..m).map(move |j| (n, j)))
        .map(|(n, j)| {
            (
                n as f64 + j as f64 / m as f64,
                xi.node(n, j).clone(),
                xi.node(n, 0).clone(),
            )
        })
        .collect()
}

fn solve_depca_with(
    solver: &RapSolver,
    xi: &HybridSolution,
    pert: &Perturbation,
    eval: &SiteFn,
    sites: &[Site],
    opts: &ContractionOptions,
) -> Result<PerturbedSolution> {
    let grid = *solver.kernel().grid();
    if *xi.grid() != grid {
        return Err(Error::Config(
            "reference solution must live on the solver grid".into(),
        ));
    }
    let meas = measure(eval, sites, pert.r, opts.samples, opts.seed)?;
    let gain = DepcaGain::measure(solver);
    let kappa = gain.total() * (meas.lip_x + meas.lip_y);
    let kappa_apriori = apriori_kappa(solver.system(), solver, meas.m0());
    if kappa >= 1.0 {
        return Err(Error::NoContraction {
            kappa,
            nu: pert.nu,
            r: pert.r,
        });
    }
    let q = xi.dim();
    let zero = HybridSolution::from_values(grid, vec![Vector::zeros(q); grid.len()])?;
    let mut trusted = xi.trusted();
    let it = contract(
        zero,
        |phi| {
            let (sol, bounded) = solver.solve_forcing(|p: &QuadPoint| {
                let xt = xi.at_quad(p);
                let xn = xi.node(p.n, 0);
                let x = phi.at_quad(p) + &xt;
                let y = phi.node(p.n, 0) + xn;
                eval(p.u, &xt, xn, &x, &y)
            })?;
            trusted = (
                bounded.interior.0.max(xi.trusted().0),
                bounded.interior.1.min(xi.trusted().1),
            );
            Ok(sol)
        },
        |a, b| a.distance(b),
        opts,
    )?;
    let phi = it.value;
    let values = xi.values().iter().zip(phi.values()).map(|(a, b)| a + b).collect();
    let solution = HybridSolution::from_values(grid, values)?.with_trusted(trusted);
    let distance = phi.restrict(trusted.0, trusted.1)?.sup_norm();
    let certificate = certify(
        pert,
        &meas,
        kappa,
        kappa_apriori,
        gain.total(),
        it.residuals,
        distance,
        opts,
    )?;
    Ok(PerturbedSolution {
        solution,
        certificate,
        gain,
    })
}

/// Relative step of the difference quotients.
const FD_STEP: f64 = 1e-3;

fn column_step(v: f64) -> f64 {
    FD_STEP * v.abs().max(1.0)
}

/// Central-difference Jacobians `(∂f/∂x, ∂f/∂y)` with steps `scale·h_i`.
pub fn central_jacobians(f: &VectorField, t: f64, x: &Vector, y: &Vector, scale: f64) -> (Matrix, Matrix) {
    let q = x.len();
    let mut jx = Matrix::zeros(q, q);
    let mut jy = Matrix::zeros(q, q);
    for i in 0..q {
        let h = scale * column_step(x[i]);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        jx.set_column(i, &((f(t, &xp, y) - f(t, &xm, y)) / (2.0 * h)));
        let h = scale * column_step(y[i]);
        let (mut yp, mut ym) = (y.clone(), y.clone());
        yp[i] += h;
        ym[i] -= h;
        jy.set_column(i, &((f(t, x, &yp) - f(t, x, &ym)) / (2.0 * h)));
    }
    (jx, jy)
}

/// Richardson-extrapolated central differences (step and half step).
pub fn jacobians(f: &VectorField, t: f64, x: &Vector, y: &Vector) -> Result<(Matrix, Matrix)> {
    let (ax, ay) = central_jacobians(f, t, x, y, 1.0);
    let (bx, by) = central_jacobians(f, t, x, y, 0.5);
    let jx = (bx * 4.0 - ax) / 3.0;
    let jy = (by * 4.0 - ay) / 3.0;
    if !jx.iter().chain(jy.iter()).all(|v| v.is_finite()) {
        return Err(Error::JacobianFailure { t });
    }
    Ok((jx, jy))
}

/// `f(t, ξt + z, ξn + w) - f(t, ξt, ξn) - A z - B w` with the Jacobians at
/// `(ξt, ξn)`.
pub fn remainder(
    f: &VectorField,
    jac: &(Matrix, Matrix),
    t: f64,
    xt: &Vector,
    xn: &Vector,
    z: &Vector,
    w: &Vector,
) -> Vector {
    f(t, &(xt + z), &(xn + w)) - f(t, xt, xn) - &jac.0 * z - &jac.1 * w
}

/// The variational coefficients `A(t) = ∂f/∂x`, `B(t) = ∂f/∂y` along `ξ`.
struct Variational {
    f: Arc<VectorField>,
    xi: Arc<HybridSolution>,
}

impl Variational {
    fn xi_at(&self, t: f64, anchor: i64) -> (Vector, Vector) {
        let m = self.xi.grid().subdivisions() as f64;
        let x = ((t - anchor as f64) * m).clamp(0.0, m);
        (self.xi.interpolate(anchor, x), self.xi.node(anchor, 0).clone())
    }

    fn jac(&self, t: f64, anchor: i64) -> (Matrix, Matrix) {
        let (xt, xn) = self.xi_at(t, anchor);
        let q = xt.len();
        jacobians(self.f.as_ref(), t, &xt, &xn).unwrap_or_else(|_| {
            let nan = Matrix::from_element(q, q, f64::NAN);
            (nan.clone(), nan)
        })
    }
}

impl Coefficients for Variational {
    fn dim(&self) -> usize {
        self.xi.dim()
    }
    fn a(&self, t: f64, anchor: i64) -> Matrix {
        self.jac(t, anchor).0
    }
    fn b(&self, t: f64, anchor: i64) -> Matrix {
        self.jac(t, anchor).1
    }
    fn f(&self, _: f64, _: i64) -> Vector {
        Vector::zeros(self.xi.dim())
    }
}

#[derive(Debug, Clone)]
pub struct NonlinearSolution {
    pub perturbed: PerturbedSolution,
    pub solver: RapSolver,
}

/// `y' = f(t, y, y([t])) + g(t, y, y([t]), ν)` near a solution `ξ` of the
/// unperturbed equation. The correction `z = y - ξ` is handled as a
/// perturbation of the variational equation along `ξ`, with the exact
/// Taylor remainder of `f` added to `g`.
pub fn solve_nonlinear(
    f: Arc<VectorField>,
    xi: &HybridSolution,
    pert: &Perturbation,
    detect: &DetectOptions,
    opts: &ContractionOptions,
) -> Result<NonlinearSolution> {
    let grid = *xi.grid();
    let var = Variational {
        f: f.clone(),
        xi: Arc::new(xi.clone()),
    };
    for (t, xt, xn) in depca_sites(xi).iter().step_by(7) {
        jacobians(f.as_ref(), *t, xt, xn)?;
    }
    let system = CoefficientSystem::new(var, &grid).map_err(|e| match e {
        Error::NonFinite { t, .. } => Error::JacobianFailure { t },
        other => other,
    })?;
    let solver = RapSolver::new(&system, &grid, detect, opts.series_tol)?;
    let sites = depca_sites(xi);
    check_vanishes(pert, &sites, opts.seed)?;
    let eval = |t: f64, xt: &Vector, xn: &Vector, x: &Vector, y: &Vector| {
        let jac = jacobians(f.as_ref(), t, xt, xn).expect("checked finite along the reference");
        remainder(f.as_ref(), &jac, t, xt, xn, &(x - xt), &(y - xn)) + pert.eval(t, x, y)
    };
    let perturbed = solve_depca_with(&solver, xi, pert, &eval, &sites, opts)?;
    Ok(NonlinearSolution { perturbed, solver })
}

#[derive(Debug, Clone, Serialize)]
pub struct LadderRow {
    pub nu: f64,
    pub converged: bool,
    pub distance: f64,
    pub kappa: f64,
    pub g_norm: f64,
    pub iterations: usize,
}

/// Runs `solve` for each `ν`; failures are recorded rather than raised.
pub fn nu_ladder(
    nus: &[f64],
    mut solve: impl FnMut(f64) -> Result<ContractionCertificate>,
) -> Vec<LadderRow> {
    nus.iter()
        .map(|&nu| match solve(nu) {
            Ok(c) => LadderRow {
                nu,
                converged: true,
                distance: c.distance,
                kappa: c.kappa,
                g_norm: c.g_norm,
                iterations: c.iterations,
            },
            Err(e) => LadderRow {
                nu,
                converged: false,
                distance: f64::NAN,
                kappa: match e {
                    Error::NoContraction { kappa, .. } => kappa,
                    _ => f64::NAN,
                },
                g_norm: f64::NAN,
                iterations: 0,
            },
        })
        .collect()
}

/// Whether `‖ψ_ν - ξ‖` shrinks strictly along the ladder.
pub fn ladder_shrinks(rows: &[LadderRow]) -> bool {
    rows.iter().all(|r| r.converged) && rows.windows(2).all(|w| w[1].distance < w[0].distance)
}

pub fn write_ladder_csv<W: Write>(rows: &[LadderRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dichotomy::detect_dichotomy;
    use crate::grid::TimeGrid;
    use crate::system::FnCoefficients;

    fn sine(nu: f64) -> Perturbation {
        Perturbation::new(|_, x, _, nu| x.map(|v| nu * v.sin()), nu, 1.0).unwrap()
    }

    fn root(nu: f64) -> f64 {
        // y = 2 + 2ν sin y by bisection
        let (mut a, mut b) = (1.0_f64, 3.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if (mid - 2.0 - 2.0 * nu * mid.sin()) * (a - 2.0 - 2.0 * nu * a.sin()) > 0.0 {
                a = mid;
            } else {
                b = mid;
            }
        }
        0.5 * (a + b)
    }

    fn discrete(nu: f64) -> DiscretePerturbed {
        let disc = DiscreteSystem::scalar(-60, 60, 0.5, 1.0).unwrap();
        let dd = detect_dichotomy(&disc).unwrap();
        let xi = SequenceWindow::scalar(-60, 61, |_| 2.0).unwrap();
        solve_perturbed_discrete(&disc, &dd, &sine(nu), &xi, &ContractionOptions::default()).unwrap()
    }

    #[test]
    fn discrete_root() {
        let sol = discrete(0.1);
        let y = root(0.1);
        assert!((y - 2.165_646).abs() < 1e-6);
        for n in sol.interior.0..=sol.interior.1 {
            assert!((sol.psi.at(n)[0] - y).abs() < 1e-8);
        }
        let c = &sol.certificate;
        assert!(c.kappa < 0.21 && c.kappa > 0.19, "{}", c.kappa);
        assert!(c.ratio_check, "{:?}", c.max_ratio);
    }

    #[test]
    fn zero_nu_is_one_pass() {
        let sol = discrete(0.0);
        assert_eq!(sol.certificate.iterations, 1);
        assert!(sol.psi.values().iter().all(|v| v[0] == 2.0));
    }

    #[test]
    fn nonvanishing_rejected() {
        let disc = DiscreteSystem::scalar(-20, 20, 0.5, 1.0).unwrap();
        let dd = detect_dichotomy(&disc).unwrap();
        let xi = SequenceWindow::scalar(-20, 21, |_| 2.0).unwrap();
        let bad = Perturbation::new(|_, x, _, nu| x.map(|v| nu + v.sin() * 0.1), 0.1, 1.0).unwrap();
        assert!(matches!(
            solve_perturbed_discrete(&disc, &dd, &bad, &xi, &ContractionOptions::default()),
            Err(Error::InvalidModel(_))
        ));
        let strong = sine(0.6);
        assert!(matches!(
            solve_perturbed_discrete(&disc, &dd, &strong, &xi, &ContractionOptions::default()),
            Err(Error::NoContraction { .. })
        ));
    }

    #[test]
    fn richardson_jacobians() {
        let f: Arc<VectorField> = Arc::new(|t: f64, x: &Vector, y: &Vector| {
            Vector::from_vec(vec![x[0].sin() * y[1] + t, x[1] * x[1] - y[0].exp()])
        });
        let x = Vector::from_vec(vec![0.3, -1.2]);
        let y = Vector::from_vec(vec![0.5, 2.0]);
        let (jx, jy) = jacobians(f.as_ref(), 0.7, &x, &y).unwrap();
        let ex = Matrix::from_row_slice(2, 2, &[0.3f64.cos() * 2.0, 0.0, 0.0, -2.4]);
        let ey = Matrix::from_row_slice(2, 2, &[0.0, 0.3f64.sin(), -(0.5f64.exp()), 0.0]);
        assert!((jx - ex).norm() < 1e-9);
        assert!((jy - ey).norm() < 1e-9);
    }

    #[test]
    fn logistic_remainder_is_quadratic() {
        let f: Arc<VectorField> =
            Arc::new(|_, x: &Vector, y: &Vector| x.map(|v| -v) + y.map(|v| v - 0.1 * v * v));
        let (xt, xn) = (Vector::from_element(1, 1.3), Vector::from_element(1, 0.8));
        let jac = jacobians(f.as_ref(), 0.0, &xt, &xn).unwrap();
        for &(z, w) in &[(0.1, 0.2), (-0.3, 0.05), (0.0, -0.4)] {
            let got = remainder(
                f.as_ref(),
                &jac,
                0.0,
                &xt,
                &xn,
                &Vector::from_element(1, z),
                &Vector::from_element(1, w),
            )[0];
            let want = -0.1 * (w + 0.8) * (w + 0.8) + 0.1 * 0.64 + 0.2 * 0.8 * w;
            assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            assert!((got + 0.1 * w * w).abs() < 1e-10);
        }
    }

    #[test]
    fn scalar_depca_fixed_point() {
        // x' = -x + 0.5 x([t]) + 1 + ν sin x: constant solution 0.5y = 1 + ν sin y
        let grid = TimeGrid::from_integers(0, 40, 8).unwrap();
        let target = TimeGrid::from_integers(10, 30, 8).unwrap();
        let sys = CoefficientSystem::new(FnCoefficients::scalar(|_| -1.0, |_| 0.5, |_| 1.0), &grid).unwrap();
        let solver = RapSolver::with_margin(&sys, &target, &DetectOptions::default(), 1e-12).unwrap();
        let (xi, _) = solver.solve_full().unwrap();
        let opts = ContractionOptions {
            samples: 2000,
            ..Default::default()
        };
        let pert = Perturbation::new(|_, x, _, nu| x.map(|v| nu * v.sin()), 0.1, 1.0).unwrap();
        let sol = solve_perturbed_depca(&solver, &xi, &pert, &opts).unwrap();
        let y = root(0.1);
        let psi = sol.target(&solver).unwrap();
        for v in psi.values() {
            assert!((v[0] - y).abs() < 1e-6, "{} vs {y}", v[0]);
        }
        assert!(sol.certificate.kappa < 1.0);
        assert!(sol.certificate.kappa_apriori > sol.certificate.kappa);
        assert!(sol.certificate.ratio_check);
    }

    #[test]
    fn ladder_csv() {
        let rows = nu_ladder(&[0.1, 0.05], |nu| Ok(discrete(nu).certificate));
        assert!(ladder_shrinks(&rows));
        let mut buf = Vec::new();
        write_ladder_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("nu,converged,distance,kappa,g_norm,iterations\n0.1,true,"));
    }
}
