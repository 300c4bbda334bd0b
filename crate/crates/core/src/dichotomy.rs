//! Exponential dichotomy of `x(n+1) = C(n)x(n)`, its Green function
//! `G̃(n,m)`, and the bounded solution of the forced equation.
//!
//! Nothing here forms `Φ(n)PΦ(m)^-1` directly, since unstable directions
//! overflow over long windows. Instead the projections `P(n) = Φ(n)PΦ(n)^-1`
//! are carried along and `G̃` is built from one-step factors, re-projecting
//! after every step:
//!
//! ```text
//! G̃(n,k)   = G̃(n,k+1) C(k) P(k)                  k < n,  G̃(n,n)   = P(n)
//! G̃(n,k+1) = G̃(n,k) C(k)^-1 (I - P(k+1))          k > n,  G̃(n,n+1) = -(I - P(n)) C(n)^-1
//! ```

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    eigen_moduli, inverse, oblique_projection, op_norm, orthonormalize, projection_rank, range_basis,
    stable_projection, Matrix, Vector,
};
use crate::reduction::DiscreteSystem;
use crate::sequence::SequenceWindow;

pub const DEFAULT_GAP: f64 = 1e-6;
pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest excess of `‖G̃‖` over the fitted bound before a fit is rejected.
pub const MAX_FIT_EXCESS: f64 = 0.05;

const CONSTANT_TOL: f64 = 1e-12;
const ALPHA_SHRINK: f64 = 0.95;
/// Largest distance `|n - m|` used when fitting a variable-coefficient bound.
const FIT_DEPTH: i64 = 100;
const TINY: f64 = 1e-250;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    UserSupplied,
    Spectral,
    Fitted,
}

#[derive(Debug, Clone, Default)]
pub struct DetectOptions {
    /// For constant `C`, the projection itself (checked against the
    /// spectral one). For variable `C`, the seed of the subspace iteration;
    /// when absent the spectral projection of the mean of `C` is used.
    pub projection: Option<Matrix>,
    /// Eigenvalues with modulus in `[1 - gap, 1 + gap]` count as critical.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DichotomyData {
    alpha: f64,
    k: f64,
    provenance: Provenance,
    eps_fit: f64,
    n_min: i64,
    c: Vec<Matrix>,
    c_inv: Vec<Matrix>,
    /// `P(n)` for `n` in `[n_min, n_max + 1]`.
    proj: Vec<Matrix>,
    fundamental: Vec<Matrix>,
    base: i64,
}

/// Decides whether `x(n+1) = C(n)x(n)` has an exponential dichotomy on the
/// window and measures `(α, K, P)`.
pub fn detect_dichotomy(disc: &DiscreteSystem) -> Result<DichotomyData> {
    detect_dichotomy_with(disc, &DetectOptions::default())
}

pub fn detect_dichotomy_with(disc: &DiscreteSystem, opts: &DetectOptions) -> Result<DichotomyData> {
    let gap = opts.gap.unwrap_or(DEFAULT_GAP);
    let scale = op_norm(disc.c(disc.n_min())).max(1.0);
    if disc.is_constant(CONSTANT_TOL * scale) {
        constant_dichotomy(disc, opts.projection.as_ref(), gap)
    } else {
        fitted_dichotomy(disc, opts.projection.as_ref(), gap)
    }
}

fn check_gap(c: &Matrix, gap: f64) -> Result<(f64, f64)> {
    let moduli = eigen_moduli(c);
    if let Some(&bad) = moduli.iter().find(|&&r| (r - 1.0).abs() <= gap) {
        return Err(Error::NoDichotomy { modulus: bad, gap });
    }
    let stable = moduli.iter().copied().filter(|&r| r < 1.0).fold(0.0, f64::max);
    let unstable = moduli
        .iter()
        .copied()
        .filter(|&r| r > 1.0)
        .fold(f64::INFINITY, f64::min);
    Ok((stable, unstable))
}

fn inverses(disc: &DiscreteSystem) -> Result<Vec<Matrix>> {
    (disc.n_min()..=disc.n_max())
        .map(|n| {
            inverse(disc.c(n)).ok_or(Error::SingularMatrix {
                what: "C(n)".into(),
                n,
            })
        })
        .collect()
}

fn check_projection(p: &Matrix, q: usize) -> Result<()> {
    if p.nrows() != q || p.ncols() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: p.nrows(),
            context: "projection".into(),
        });
    }
    if (p * p - p).norm() > 1e-10 * p.norm().max(1.0) {
        return Err(Error::InvalidSpec("supplied P is not idempotent".into()));
    }
    Ok(())
}

fn constant_dichotomy(disc: &DiscreteSystem, user: Option<&Matrix>, gap: f64) -> Result<DichotomyData> {
    let c = disc.c(disc.n_min()).clone();
    let q = c.nrows();
    let (rho_s, rho_u) = check_gap(&c, gap)?;
    let spectral = stable_projection(&c).ok_or(Error::NoDichotomy { modulus: 1.0, gap })?;
    let (p, provenance) = match user {
        Some(p) => {
            check_projection(p, q)?;
            if (p - &spectral).norm() > 1e-6 * spectral.norm().max(1.0) {
                return Err(Error::FitRejected {
                    reason: "supplied projection is not the spectral projection of C".into(),
                });
            }
            (p.clone(), Provenance::UserSupplied)
        }
        None => (spectral, Provenance::Spectral),
    };
    let rate_s = if rho_s > 0.0 { -rho_s.ln() } else { f64::INFINITY };
    let rate_u = rho_u.ln();
    let mut alpha = rate_s.min(rate_u);
    if !alpha.is_finite() {
        // nilpotent stable part and no unstable part: any rate works
        alpha = 10.0;
    }
    let c_inv = inverse(&c).ok_or(Error::SingularMatrix {
        what: "C".into(),
        n: disc.n_min(),
    })?;
    let id = Matrix::identity(q, q);
    let step_s = &c * &p;
    let step_u = &c_inv * (&id - &p);
    let mut k = 1.0;
    for _ in 0..200 {
        let horizon = ((20.0 / alpha).ceil() as usize).clamp(50, 5000);
        let (sup, growing) = measure_constant_k(&p, &id, &step_s, &step_u, alpha, horizon);
        k = sup;
        if !growing {
            break;
        }
        alpha *= ALPHA_SHRINK;
    }
    let n_len = (disc.n_max() - disc.n_min() + 2) as usize;
    let data = DichotomyData {
        alpha,
        k,
        provenance,
        eps_fit: 0.0,
        n_min: disc.n_min(),
        c: vec![c; n_len - 1],
        c_inv: vec![c_inv; n_len - 1],
        proj: vec![p; n_len],
        fundamental: Vec::new(),
        base: 0,
    };
    Ok(data.with_fundamental())
}

/// `sup_k ‖G̃(k)‖e^{α|k|}` over `|k| <= horizon` and whether the scaled
/// norms are still increasing near the horizon.
fn measure_constant_k(
    p: &Matrix,
    id: &Matrix,
    step_s: &Matrix,
    step_u: &Matrix,
    alpha: f64,
    horizon: usize,
) -> (f64, bool) {
    let mut sup: f64 = op_norm(p);
    let mut late: f64 = 0.0;
    let mut mid: f64 = 0.0;
    let mut s = p.clone();
    let mut u = id - p;
    for k in 1..=horizon {
        s = step_s * &s;
        u = step_u * &u;
        let v = op_norm(&s).max(op_norm(&u)) * (alpha * k as f64).exp();
        sup = sup.max(v);
        if k == 3 * horizon / 4 {
            mid = v;
        }
        if k > 3 * horizon / 4 {
            late = late.max(v);
        }
    }
    (sup, late > mid * (1.0 + 1e-9) && late >= sup * (1.0 - 1e-12))
}

fn fitted_dichotomy(disc: &DiscreteSystem, user: Option<&Matrix>, gap: f64) -> Result<DichotomyData> {
    let q = disc.dim();
    let n_min = disc.n_min();
    let n_max = disc.n_max();
    let p0 = match user {
        Some(p) => {
            check_projection(p, q)?;
            p.clone()
        }
        None => {
            let count = (n_max - n_min + 1) as f64;
            let mean = (n_min..=n_max).fold(Matrix::zeros(q, q), |acc, n| acc + disc.c(n)) / count;
            check_gap(&mean, gap)?;
            stable_projection(&mean).ok_or(Error::NoDichotomy { modulus: 1.0, gap })?
        }
    };
    let rank = projection_rank(&p0);
    let id = Matrix::identity(q, q);
    let c: Vec<Matrix> = (n_min..=n_max).map(|n| disc.c(n).clone()).collect();
    let c_inv = inverses(disc)?;
    let len = c.len() + 1;

    // stable subspaces by backward iteration, unstable by forward iteration
    let mut stable = vec![Matrix::zeros(q, rank); len];
    stable[len - 1] = orthonormalize(&range_basis(&p0));
    for i in (0..len - 1).rev() {
        stable[i] = orthonormalize(&(&c_inv[i] * &stable[i + 1]));
    }
    let mut unstable = vec![Matrix::zeros(q, q - rank); len];
    unstable[0] = orthonormalize(&range_basis(&(&id - &p0)));
    for i in 0..len - 1 {
        unstable[i + 1] = orthonormalize(&(&c[i] * &unstable[i]));
    }
    let proj = stable
        .iter()
        .zip(&unstable)
        .enumerate()
        .map(|(i, (s, u))| {
            oblique_projection(s, u).ok_or_else(|| Error::FitRejected {
                reason: format!(
                    "stable and unstable subspaces are not complementary at n = {}",
                    n_min + i as i64
                ),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut data = DichotomyData {
        alpha: 0.0,
        k: 0.0,
        provenance: Provenance::Fitted,
        eps_fit: 0.0,
        n_min,
        c,
        c_inv,
        proj,
        fundamental: Vec::new(),
        base: 0,
    };
    data.fit()?;
    Ok(data.with_fundamental())
}

impl DichotomyData {
    fn with_fundamental(mut self) -> Self {
        let n_max = self.n_max_index();
        let base = 0.clamp(self.n_min, n_max);
        let q = self.dim();
        let len = (n_max - self.n_min + 1) as usize;
        let mut f = vec![Matrix::zeros(q, q); len];
        let b = (base - self.n_min) as usize;
        f[b] = Matrix::identity(q, q);
        for i in b..len - 1 {
            f[i + 1] = &self.c[i] * &f[i];
        }
        for i in (0..b).rev() {
            f[i] = &self.c_inv[i] * &f[i + 1];
        }
        self.fundamental = f;
        self.base = base;
        self
    }

    /// Upper envelope of `‖G̃‖` against distance on the inner half of the
    /// window, log-linear fit, then verification on the inner three quarters
    /// (the subspaces near the window ends carry the initial guess).
    fn fit(&mut self) -> Result<()> {
        let lo = self.n_min;
        let hi = self.n_max_index();
        let width = hi - lo;
        if width < 8 {
            return Err(Error::WindowTooSmall {
                have_min: lo,
                have_max: hi,
                need_min: lo,
                need_max: lo + 8,
                context: "dichotomy fit".into(),
            });
        }
        let depth = FIT_DEPTH.min(width / 2);
        let fit_range = (lo + width / 4, hi - width / 4);
        let check_range = (lo + width / 8, hi - width / 8);
        let envelope = self.envelope(fit_range, depth);

        let pts: Vec<(f64, f64)> = envelope
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, &e)| e > TINY)
            .map(|(d, &e)| (d as f64, e.ln()))
            .collect();
        if pts.len() < 2 {
            return Err(Error::FitRejected {
                reason: "Green function vanishes too fast to fit".into(),
            });
        }
        let np = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / np;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / np;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let alpha = -sxy / sxx;
        if !(alpha > 0.0) {
            return Err(Error::FitRejected {
                reason: format!("fitted decay rate {alpha:.3e} is not positive"),
            });
        }
        let k = envelope
            .iter()
            .enumerate()
            .map(|(d, e)| e * (alpha * d as f64).exp())
            .fold(1.0_f64, f64::max);
        let check = self.envelope(check_range, depth);
        let worst = check
            .iter()
            .enumerate()
            .map(|(d, e)| e * (alpha * d as f64).exp() / k)
            .fold(1.0_f64, f64::max);
        let eps = worst - 1.0;
        if !(eps <= MAX_FIT_EXCESS) {
            return Err(Error::FitRejected {
                reason: format!("Green function exceeds the fitted bound by {:.1}%", eps * 100.0),
            });
        }
        self.alpha = alpha;
        self.k = k;
        self.eps_fit = eps;
        Ok(())
    }

    /// `E(d) = max ‖G̃(n,m)‖` over `|n - m| = d` with both indices in `range`.
    fn envelope(&self, range: (i64, i64), depth: i64) -> Vec<f64> {
        let rows: Vec<Vec<f64>> = (range.0..=range.1)
            .into_par_iter()
            .map(|n| {
                let lo = (n - depth).max(range.0);
                let hi = (n + depth).min(range.1);
                let row = self.green_row(n, lo, hi);
                let mut e = vec![0.0; depth as usize + 1];
                for (i, g) in row.iter().enumerate() {
                    let d = (lo + i as i64 - n).unsigned_abs() as usize;
                    e[d] = f64::max(e[d], op_norm(g));
                }
                e
            })
            .collect();
        let mut env = vec![0.0; depth as usize + 1];
        for r in rows {
            for (a, b) in env.iter_mut().zip(r) {
                *a = f64::max(*a, b);
            }
        }
        env
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Measured excess of `‖G̃‖` over `K e^{-α|n-m|}` (zero unless fitted).
    pub fn eps_fit(&self) -> f64 {
        self.eps_fit
    }

    pub fn dim(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    /// Largest index with a state, one past the last `C(n)`.
    pub fn n_max_index(&self) -> i64 {
        self.n_min + self.c.len() as i64
    }

    fn check(&self, n: i64) {
        assert!(
            n >= self.n_min && n <= self.n_max_index(),
            "index {n} outside [{}, {}]",
            self.n_min,
            self.n_max_index()
        );
    }

    /// `P(n) = Φ(n)PΦ(n)^-1`.
    pub fn projection(&self, n: i64) -> &Matrix {
        self.check(n);
        &self.proj[(n - self.n_min) as usize]
    }

    /// The projection `P` at the base index of the fundamental matrix.
    pub fn p(&self) -> &Matrix {
        self.projection(self.base)
    }

    /// `Φ(n)` normalised by `Φ(base) = I`, `base` = 0 when inside the window.
    pub fn fundamental(&self, n: i64) -> &Matrix {
        self.check(n);
        &self.fundamental[(n - self.n_min) as usize]
    }

    pub fn base(&self) -> i64 {
        self.base
    }

    fn c_at(&self, k: i64) -> &Matrix {
        &self.c[(k - self.n_min) as usize]
    }

    fn c_inv_at(&self, k: i64) -> &Matrix {
        &self.c_inv[(k - self.n_min) as usize]
    }

    /// `G̃(n, k)` for `k` in `[lo, hi]`.
    pub fn green_row(&self, n: i64, lo: i64, hi: i64) -> Vec<Matrix> {
        self.check(n);
        self.check(lo);
        self.check(hi);
        let q = self.dim();
        let id = Matrix::identity(q, q);
        let mut row = vec![Matrix::zeros(q, q); (hi - lo + 1).max(0) as usize];
        let mut put = |k: i64, g: &Matrix| {
            if k >= lo && k <= hi {
                row[(k - lo) as usize] = g.clone();
            }
        };
        let mut g = self.projection(n).clone();
        put(n, &g);
        let mut k = n;
        while k > lo {
            k -= 1;
            g = &g * self.c_at(k) * self.projection(k);
            put(k, &g);
        }
        if hi > n {
            let mut g = -(&id - self.projection(n)) * self.c_inv_at(n);
            g = &g * (&id - self.projection(n + 1));
            put(n + 1, &g);
            let mut k = n + 1;
            while k < hi {
                g = &g * self.c_inv_at(k) * (&id - self.projection(k + 1));
                k += 1;
                put(k, &g);
            }
        }
        row
    }

    pub fn green(&self, n: i64, m: i64) -> Matrix {
        self.green_row(n, m, m).pop().expect("one entry")
    }

    /// Series length `N` after which the tail of `Σ G̃ h` is below `tol`.
    pub fn truncation(&self, h_norm: f64, tol: f64) -> i64 {
        if h_norm == 0.0 {
            return 0;
        }
        let num = (self.k * h_norm).ln() - (tol * (1.0 - (-self.alpha).exp())).ln();
        (num / self.alpha).ceil().max(0.0) as i64
    }

    /// `K(1 + e^{-α})/(1 - e^{-α})`.
    pub fn bound_factor(&self) -> f64 {
        let e = (-self.alpha).exp();
        self.k * (1.0 + e) / (1.0 - e)
    }

    /// `sup_n Σ_k ‖G̃(n, k)‖` over `n` in `[lo, hi]`, summing `|n - k| <= depth`.
    pub fn sup_row_sum(&self, lo: i64, hi: i64, depth: i64) -> f64 {
        (lo..=hi)
            .into_par_iter()
            .map(|n| {
                let a = (n - depth).max(self.n_min);
                let b = (n + depth).min(self.n_max_index());
                self.green_row(n, a, b).iter().map(op_norm).sum::<f64>()
            })
            .reduce(|| 0.0, f64::max)
    }
}

/// Bounded solution of `y(n+1) = C(n)y(n) + h(n)` on a finite window.
#[derive(Debug, Clone)]
pub struct BoundedSolution {
    pub values: SequenceWindow,
    /// Indices where the neglected outside-window tail is below `tol`.
    pub interior: (i64, i64),
    pub truncation: i64,
    pub tol: f64,
    pub h_norm: f64,
    /// `K(1+e^{-α})/(1-e^{-α})‖h‖∞`.
    pub bound: f64,
    pub max_residual: f64,
}

impl BoundedSolution {
    pub fn interior_values(&self) -> SequenceWindow {
        self.values
            .restrict(self.interior.0, self.interior.1)
            .expect("interior lies inside the window")
    }

    pub fn bound_holds(&self) -> bool {
        self.values.sup_norm() <= self.bound * (1.0 + 1e-9) + self.tol
    }
}

/// `y(n) = Σ_k G̃(n, k+1)h(k)`, summed over the whole window by the split
/// recursions
///
/// ```text
/// y_s(n+1) = P(n+1)(C(n)y_s(n) + h(n)),           y_s(n_min) = 0
/// y_u(n)   = (I-P(n))C(n)^-1(y_u(n+1) - h(n)),    y_u(n_max+1) = 0
/// ```
///
/// Indices within `N` of either end are outside `interior`.
pub fn bounded_solution(disc: &DiscreteSystem, dd: &DichotomyData, tol: f64) -> Result<BoundedSolution> {
    if disc.n_min() != dd.n_min() || disc.n_max() + 1 != dd.n_max_index() {
        return Err(Error::WindowTooSmall {
            have_min: dd.n_min(),
            have_max: dd.n_max_index(),
            need_min: disc.n_min(),
            need_max: disc.n_max() + 1,
            context: "dichotomy window must match the discrete system".into(),
        });
    }
    let q = disc.dim();
    let id = Matrix::identity(q, q);
    let lo = disc.n_min();
    let hi = disc.n_max() + 1;
    let len = (hi - lo + 1) as usize;
    let h_norm = (lo..hi).map(|n| disc.h(n).norm()).fold(0.0, f64::max);
    let truncation = dd.truncation(h_norm, tol);
    let interior = (lo + truncation + 1, hi - 1 - truncation);
    if interior.0 > interior.1 {
        return Err(Error::WindowTooSmall {
            have_min: lo,
            have_max: hi,
            need_min: -truncation - 1,
            need_max: truncation + 1,
            context: format!("bounded solution needs {truncation} indices of margin on each side"),
        });
    }
    let mut ys = vec![Vector::zeros(q); len];
    for i in 0..len - 1 {
        let n = lo + i as i64;
        ys[i + 1] = dd.projection(n + 1) * (disc.c(n) * &ys[i] + disc.h(n));
    }
    let mut yu = vec![Vector::zeros(q); len];
    for i in (0..len - 1).rev() {
        let n = lo + i as i64;
        yu[i] = (&id - dd.projection(n)) * (dd.c_inv_at(n) * (&yu[i + 1] - disc.h(n)));
    }
    let values: Vec<Vector> = ys.into_iter().zip(yu).map(|(a, b)| a + b).collect();
    let values = SequenceWindow::new(lo, values)?;
    let max_residual = (lo..hi)
        .map(|n| (values.at(n + 1) - disc.c(n) * values.at(n) - disc.h(n)).norm())
        .fold(0.0, f64::max);
    Ok(BoundedSolution {
        values,
        interior,
        truncation,
        tol,
        h_norm,
        bound: dd.bound_factor() * h_norm,
        max_residual,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct BisumRow {
    pub tau: i64,
    pub n: i64,
    pub sum: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BisumScan {
    pub rows: Vec<BisumRow>,
    /// `(τ, max over the outer half of |n|)`.
    pub proxy: Vec<(i64, f64)>,
    pub depth: i64,
    pub window: (i64, i64),
}

impl BisumScan {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["tau", "n", "sum"])?;
        for r in &self.rows {
            w.write_record([r.tau.to_string(), r.n.to_string(), r.sum.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Truncated sums `Σ_k ‖G̃(n+τ, k+τ) - G̃(n, k)‖` over `|n - k| <= N`, with
/// `N` the truncation for unit forcing at `tol`.
pub fn bisummability_scan(
    dd: &DichotomyData,
    taus: &[i64],
    n_scan: (i64, i64),
    tol: f64,
) -> Result<BisumScan> {
    let depth = dd.truncation(1.0, tol);
    let tau_lo = taus.iter().copied().min().unwrap_or(0).min(0);
    let tau_hi = taus.iter().copied().max().unwrap_or(0).max(0);
    let need = (n_scan.0 + tau_lo - depth, n_scan.1 + tau_hi + depth);
    if need.0 < dd.n_min() || need.1 > dd.n_max_index() {
        return Err(Error::WindowTooSmall {
            have_min: dd.n_min(),
            have_max: dd.n_max_index(),
            need_min: need.0,
            need_max: need.1,
            context: "bisummability scan".into(),
        });
    }
    let cells: Vec<(i64, i64)> = taus
        .iter()
        .flat_map(|&tau| (n_scan.0..=n_scan.1).map(move |n| (tau, n)))
        .collect();
    let rows: Vec<BisumRow> = cells
        .into_par_iter()
        .map(|(tau, n)| {
            let base = dd.green_row(n, n - depth, n + depth);
            let shifted = dd.green_row(n + tau, n + tau - depth, n + tau + depth);
            let sum = base.iter().zip(&shifted).map(|(a, b)| op_norm(&(b - a))).sum();
            BisumRow { tau, n, sum }
        })
        .collect();
    let reach = n_scan.0.abs().max(n_scan.1.abs());
    let proxy = taus
        .iter()
        .map(|&tau| {
            let v = rows
                .iter()
                .filter(|r| r.tau == tau && 2 * r.n.abs() >= reach)
                .map(|r| r.sum)
                .fold(0.0, f64::max);
            (tau, v)
        })
        .collect();
    Ok(BisumScan {
        rows,
        proxy,
        depth,
        window: n_scan,
    })
}
