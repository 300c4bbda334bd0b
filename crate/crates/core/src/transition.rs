//! Transition matrix `Φ(t,s)` of `z' = A(t)z` and the hybrid kernels
//! `J(t,s) = I + ∫_s^t Φ(s,u)B(u)du`, `Z(t,s) = Φ(t,s)J(t,s)`.
//!
//! Everything is tabulated per unit interval `[n, n+1]` relative to its left
//! integer: `Φ_n(t) = Φ(t, n)` at the grid nodes and `Φ_n(u)^-1` at the
//! Gauss–Legendre points of every cell. Any `Φ(t,s)` with `t, s` in one
//! interval is `Φ_n(t)Φ_n(s)^-1`; longer spans are chained through the
//! integer factors `Φ_n(n+1)`.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::{all_finite, inverse, op_norm, Matrix, Vector};
use crate::quadrature::{GL5_NODES, GL5_WEIGHTS};
use crate::system::CoefficientSystem;

pub const DEFAULT_SUBSTEPS: u32 = 4;
pub const DEFAULT_J_CEILING: f64 = 1e8;

/// Nodes per interval used when measuring `k0`.
const K0_SAMPLES: usize = 10;

#[derive(Debug, Clone)]
struct UnitTable {
    /// `Φ(n + j/m, n)` for `j = 0..=m`.
    phi: Vec<Matrix>,
    phi_inv: Vec<Matrix>,
    /// `Φ(u, n)^-1` at the Gauss–Legendre points, five per cell.
    gl_inv: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct TransitionKernel {
    grid: TimeGrid,
    q: usize,
    substeps: u32,
    tables: Vec<UnitTable>,
    k0: f64,
}

/// A quadrature point inside cell `cell` of the unit interval starting at `n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadPoint {
    pub n: i64,
    pub cell: u32,
    pub g: usize,
    pub u: f64,
    /// Position of `u` inside the cell, in `(0, 1)`.
    pub theta: f64,
}

fn rk4_step(sys: &CoefficientSystem, anchor: i64, t: f64, h: f64, y: &Matrix) -> Matrix {
    let a1 = sys.a(t, anchor);
    let am = sys.a(t + 0.5 * h, anchor);
    let a2 = sys.a(t + h, anchor);
    let k1 = &a1 * y;
    let k2 = &am * (y + &k1 * (0.5 * h));
    let k3 = &am * (y + &k2 * (0.5 * h));
    let k4 = &a2 * (y + &k3 * h);
    y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn integrate(sys: &CoefficientSystem, anchor: i64, t0: f64, t1: f64, steps: u32, y0: &Matrix) -> Matrix {
    let h = (t1 - t0) / steps as f64;
    let mut y = y0.clone();
    for k in 0..steps {
        y = rk4_step(sys, anchor, t0 + k as f64 * h, h, &y);
    }
    y
}

fn unit_table(sys: &CoefficientSystem, grid: &TimeGrid, n: i64, substeps: u32) -> Result<UnitTable> {
    let q = sys.dim();
    let m = grid.subdivisions();
    let h = grid.step();
    let mut phi = Vec::with_capacity(m as usize + 1);
    let mut gl_inv = Vec::with_capacity(5 * m as usize);
    phi.push(Matrix::identity(q, q));
    for j in 0..m {
        let t = n as f64 + j as f64 * h;
        let left = &phi[j as usize];
        for x in GL5_NODES {
            let at_gl = integrate(sys, n, t, t + x * h, substeps, left);
            gl_inv.push(inverse(&at_gl).ok_or(Error::IntegratorBlowUp { n })?);
        }
        let next = integrate(sys, n, t, t + h, substeps, left);
        if !all_finite(&next) {
            return Err(Error::IntegratorBlowUp { n });
        }
        phi.push(next);
    }
    let phi_inv = phi
        .iter()
        .map(inverse)
        .collect::<Option<Vec<_>>>()
        .ok_or(Error::IntegratorBlowUp { n })?;
    if !gl_inv.iter().all(all_finite) || !phi_inv.iter().all(all_finite) {
        return Err(Error::IntegratorBlowUp { n });
    }
    Ok(UnitTable { phi, phi_inv, gl_inv })
}

/// Tabulates `Φ` on `grid` with a fixed-step classical Runge–Kutta scheme,
/// `substeps` steps per grid step.
pub fn fundamental(system: &CoefficientSystem, grid: &TimeGrid) -> Result<TransitionKernel> {
    fundamental_with(system, grid, DEFAULT_SUBSTEPS)
}

pub fn fundamental_with(
    system: &CoefficientSystem,
    grid: &TimeGrid,
    substeps: u32,
) -> Result<TransitionKernel> {
    if substeps == 0 {
        return Err(Error::InvalidGrid("substeps must be >= 1".into()));
    }
    let tables = (grid.t_start()..grid.t_end())
        .into_par_iter()
        .map(|n| unit_table(system, grid, n, substeps))
        .collect::<Result<Vec<_>>>()?;
    let mut kernel = TransitionKernel {
        grid: *grid,
        q: system.dim(),
        substeps,
        tables,
        k0: 0.0,
    };
    kernel.k0 = kernel.measure_k0();
    Ok(kernel)
}

impl TransitionKernel {
    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.q
    }

    pub fn integrator_order(&self) -> u32 {
        4
    }

    pub fn substeps(&self) -> u32 {
        self.substeps
    }

    /// Measured `sup ‖Φ(t,s)‖` over sampled node pairs with `|t - s| <= 1`.
    pub fn k0(&self) -> f64 {
        self.k0
    }

    fn table(&self, n: i64) -> &UnitTable {
        &self.tables[(n - self.grid.t_start()) as usize]
    }

    /// Splits a node time into `(n, j)` with `t = n + j/m` and
    /// `n` an interval of the grid (`j = m` only at the right end).
    pub fn split(&self, t: f64) -> Result<(i64, u32)> {
        let k = self
            .grid
            .locate(t)
            .ok_or_else(|| Error::InvalidGrid(format!("{t} is not a node of {:?}", self.grid)))?;
        let node = self.grid.node(k);
        if node.n == self.grid.t_end() {
            Ok((node.n - 1, node.m))
        } else {
            Ok((node.n, node.j))
        }
    }

    /// `Φ(n + j/m, n)`.
    pub fn phi_local(&self, n: i64, j: u32) -> &Matrix {
        &self.table(n).phi[j as usize]
    }

    /// `Φ(n + j/m, n)^-1 = Φ(n, n + j/m)`.
    pub fn phi_local_inv(&self, n: i64, j: u32) -> &Matrix {
        &self.table(n).phi_inv[j as usize]
    }

    /// `Φ(u, n)^-1` at quadrature point `g` of `cell`.
    pub fn phi_gl_inv(&self, n: i64, cell: u32, g: usize) -> &Matrix {
        &self.table(n).gl_inv[cell as usize * 5 + g]
    }

    /// `Φ(n+1, n)`.
    pub fn unit_factor(&self, n: i64) -> &Matrix {
        self.phi_local(n, self.grid.subdivisions())
    }

    /// `Φ(t, s)` for grid nodes `t`, `s` (either order).
    pub fn phi(&self, t: f64, s: f64) -> Result<Matrix> {
        let (nt, jt) = self.split(t)?;
        let (ns, js) = self.split(s)?;
        Ok(self.phi_nodes(nt, jt, ns, js))
    }

    pub(crate) fn phi_nodes(&self, nt: i64, jt: u32, ns: i64, js: u32) -> Matrix {
        if nt == ns {
            return self.phi_local(nt, jt) * self.phi_local_inv(ns, js);
        }
        if nt > ns {
            // Φ(t, nt) Φ(nt, ns+1) Φ(ns+1, s)
            let mut acc = self.unit_factor(ns) * self.phi_local_inv(ns, js);
            for i in ns + 1..nt {
                acc = self.unit_factor(i) * acc;
            }
            self.phi_local(nt, jt) * acc
        } else {
            self.phi_nodes(ns, js, nt, jt)
                .try_inverse()
                .expect("transition matrices are invertible")
        }
    }

    /// Quadrature points of every cell of interval `n`, in order.
    pub fn quad_points(&self, n: i64) -> impl Iterator<Item = QuadPoint> + '_ {
        let m = self.grid.subdivisions();
        let h = self.grid.step();
        (0..m).flat_map(move |cell| {
            (0..5).map(move |g| QuadPoint {
                n,
                cell,
                g,
                u: n as f64 + (cell as f64 + GL5_NODES[g]) * h,
                theta: GL5_NODES[g],
            })
        })
    }

    fn measure_k0(&self) -> f64 {
        let m = self.grid.subdivisions();
        let stride = (m as usize / K0_SAMPLES).max(1) as u32;
        let picks: Vec<u32> = (0..=m).step_by(stride as usize).chain([m]).collect();
        let mut sup: f64 = 1.0;
        for n in self.grid.t_start()..self.grid.t_end() {
            for &jt in &picks {
                for &js in &picks {
                    sup = sup.max(op_norm(&self.phi_nodes(n, jt, n, js)));
                    // t in the next interval with t - s <= 1
                    if n + 1 < self.grid.t_end() && jt <= js {
                        sup = sup.max(op_norm(&self.phi_nodes(n + 1, jt, n, js)));
                        sup = sup.max(op_norm(&self.phi_nodes(n, js, n + 1, jt)));
                    }
                }
            }
        }
        sup
    }

    /// Writes `Φ(t, n)` for every node as CSV rows `t, s, entries...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(matrix_header(self.q))?;
        for n in self.grid.t_start()..self.grid.t_end() {
            for j in 0..=self.grid.subdivisions() {
                write_matrix_row(&mut w, &[self.node_t(n, j), n as f64], self.phi_local(n, j))?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub(crate) fn node_t(&self, n: i64, j: u32) -> f64 {
        n as f64 + j as f64 / self.grid.subdivisions() as f64
    }
}

pub(crate) fn matrix_header(q: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "s".to_string()];
    for i in 0..q {
        for j in 0..q {
            h.push(format!("m{i}{j}"));
        }
    }
    h
}

pub(crate) fn write_matrix_row<W: Write>(w: &mut csv::Writer<W>, lead: &[f64], m: &Matrix) -> Result<()> {
    let mut rec: Vec<String> = lead.iter().map(|x| x.to_string()).collect();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            rec.push(m[(i, j)].to_string());
        }
    }
    w.write_record(rec)?;
    Ok(())
}

/// `max(‖J‖, 1)·‖J^-1‖`: the usual condition number, except that a scalar
/// `J` shrinking towards zero is also flagged (J starts at the identity).
fn j_condition(j: &Matrix) -> f64 {
    match inverse(j) {
        Some(inv) => op_norm(j).max(1.0) * op_norm(&inv),
        None => f64::INFINITY,
    }
}

/// `J(t, n)` and `Z(t, n)` at every node together with `Φ`.
#[derive(Debug, Clone)]
pub struct HybridKernel {
    phi: TransitionKernel,
    j: Vec<Vec<Matrix>>,
    z: Vec<Vec<Matrix>>,
    j_condition: Vec<Vec<f64>>,
    ceiling: f64,
}

pub fn hybrid_kernels(kernel: TransitionKernel, system: &CoefficientSystem) -> Result<HybridKernel> {
    hybrid_kernels_with(kernel, system, DEFAULT_J_CEILING)
}

pub fn hybrid_kernels_with(
    kernel: TransitionKernel,
    system: &CoefficientSystem,
    ceiling: f64,
) -> Result<HybridKernel> {
    let grid = *kernel.grid();
    let m = grid.subdivisions();
    let h = grid.step();
    let q = kernel.dim();
    let per_interval = (grid.t_start()..grid.t_end())
        .into_par_iter()
        .map(|n| {
            let mut js = Vec::with_capacity(m as usize + 1);
            let mut zs = Vec::with_capacity(m as usize + 1);
            let mut conds = Vec::with_capacity(m as usize + 1);
            let mut acc = Matrix::identity(q, q);
            for j in 0..=m {
                if j > 0 {
                    let cell = j - 1;
                    for (g, w) in GL5_WEIGHTS.iter().enumerate() {
                        let u = n as f64 + (cell as f64 + GL5_NODES[g]) * h;
                        acc += kernel.phi_gl_inv(n, cell, g) * system.b(u, n) * (w * h);
                    }
                }
                let cond = j_condition(&acc);
                if !(cond <= ceiling) {
                    return Err(Error::NearSingularJ {
                        t: kernel.node_t(n, j),
                        s: n as f64,
                        condition: cond,
                        ceiling,
                    });
                }
                zs.push(kernel.phi_local(n, j) * &acc);
                js.push(acc.clone());
                conds.push(cond);
            }
            Ok((js, zs, conds))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut j = Vec::new();
    let mut z = Vec::new();
    let mut j_condition = Vec::new();
    for (a, b, c) in per_interval {
        j.push(a);
        z.push(b);
        j_condition.push(c);
    }
    Ok(HybridKernel {
        phi: kernel,
        j,
        z,
        j_condition,
        ceiling,
    })
}

impl HybridKernel {
    pub fn transition(&self) -> &TransitionKernel {
        &self.phi
    }

    pub fn grid(&self) -> &TimeGrid {
        self.phi.grid()
    }

    pub fn dim(&self) -> usize {
        self.phi.dim()
    }

    pub fn ceiling(&self) -> f64 {
        self.ceiling
    }

    fn idx(&self, n: i64) -> usize {
        (n - self.grid().t_start()) as usize
    }

    /// `J(n + j/m, n)`.
    pub fn j_local(&self, n: i64, j: u32) -> &Matrix {
        &self.j[self.idx(n)][j as usize]
    }

    /// `Z(n + j/m, n)`.
    pub fn z_local(&self, n: i64, j: u32) -> &Matrix {
        &self.z[self.idx(n)][j as usize]
    }

    pub fn j_condition_local(&self, n: i64, j: u32) -> f64 {
        self.j_condition[self.idx(n)][j as usize]
    }

    /// Largest recorded condition number of `J(t, [t])`.
    pub fn max_j_condition(&self) -> f64 {
        self.j_condition.iter().flatten().fold(1.0_f64, |a, &b| a.max(b))
    }

    /// `J(t, s)` for nodes `s <= t` in one closed unit interval:
    /// `J(t,s) = I + Φ(s,n)(J(t,n) - J(s,n))`.
    pub fn j(&self, t: f64, s: f64) -> Result<Matrix> {
        let (n, jt, js) = self.same_interval(t, s)?;
        let q = self.dim();
        Ok(Matrix::identity(q, q) + self.phi.phi_local(n, js) * (self.j_local(n, jt) - self.j_local(n, js)))
    }

    /// `Z(t, s) = Φ(t, s)J(t, s)` for nodes in one closed unit interval.
    pub fn z(&self, t: f64, s: f64) -> Result<Matrix> {
        let (n, jt, js) = self.same_interval(t, s)?;
        let phi = self.phi.phi_local(n, jt) * self.phi.phi_local_inv(n, js);
        Ok(phi * self.j(t, s)?)
    }

    fn same_interval(&self, t: f64, s: f64) -> Result<(i64, u32, u32)> {
        let (ns, js) = self.phi.split(s)?;
        let (mut nt, mut jt) = self.phi.split(t)?;
        let m = self.grid().subdivisions();
        // the right endpoint n+1 belongs to interval n as j = m
        if nt == ns + 1 && jt == 0 {
            nt = ns;
            jt = m;
        }
        if nt != ns || jt < js {
            return Err(Error::InvalidGrid(format!(
                "J(t,s) needs s <= t in one unit interval, got t = {t}, s = {s}"
            )));
        }
        Ok((ns, jt, js))
    }

    /// Tabulates `w_n(t) = ∫_n^t Φ(u,n)^-1 f(u) du` at every node, with `f`
    /// sampled at the quadrature points.
    pub fn forcing_table<F>(&self, f: F) -> Result<ForcingTable>
    where
        F: Fn(&QuadPoint) -> Vector + Sync,
    {
        let grid = *self.grid();
        let h = grid.step();
        let q = self.dim();
        let w = (grid.t_start()..grid.t_end())
            .into_par_iter()
            .map(|n| {
                let mut acc = Vector::zeros(q);
                let mut col = vec![acc.clone()];
                let mut points = self.phi.quad_points(n).peekable();
                while points.peek().is_some() {
                    for _ in 0..5 {
                        let p = points.next().expect("five points per cell");
                        let fv = f(&p);
                        if fv.len() != q || !fv.iter().all(|x| x.is_finite()) {
                            return Err(Error::NonFinite {
                                t: p.u,
                                what: "forcing".into(),
                            });
                        }
                        acc += self.phi.phi_gl_inv(n, p.cell, p.g) * fv * (GL5_WEIGHTS[p.g] * h);
                    }
                    col.push(acc.clone());
                }
                Ok(col)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ForcingTable {
            t_start: grid.t_start(),
            w,
        })
    }

    /// Forcing table of the system's own `f`.
    pub fn system_forcing(&self, system: &CoefficientSystem) -> Result<ForcingTable> {
        self.forcing_table(|p| system.f(p.u, p.n))
    }

    /// Writes `J(t, n)` and `Z(t, n)` as CSV rows `kind, t, s, entries...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["kind".to_string()];
        header.extend(matrix_header(self.dim()));
        header.push("j_condition".into());
        w.write_record(header)?;
        let grid = *self.grid();
        for (kind, table) in [("J", &self.j), ("Z", &self.z)] {
            for n in grid.t_start()..grid.t_end() {
                for j in 0..=grid.subdivisions() {
                    let m = &table[self.idx(n)][j as usize];
                    let mut rec = vec![kind.to_string(), self.phi.node_t(n, j).to_string(), n.to_string()];
                    for r in 0..m.nrows() {
                        for c in 0..m.ncols() {
                            rec.push(m[(r, c)].to_string());
                        }
                    }
                    rec.push(self.j_condition_local(n, j).to_string());
                    w.write_record(rec)?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// `w_n(t_j) = ∫_n^{t_j} Φ(u,n)^-1 f(u) du` per interval.
#[derive(Debug, Clone)]
pub struct ForcingTable {
    t_start: i64,
    w: Vec<Vec<Vector>>,
}

impl ForcingTable {
    pub fn w(&self, n: i64, j: u32) -> &Vector {
        &self.w[(n - self.t_start) as usize][j as usize]
    }

    /// `∫_n^{n+j/m} Φ(n+j/m, u) f(u) du`.
    pub fn integral(&self, kernel: &HybridKernel, n: i64, j: u32) -> Vector {
        kernel.transition().phi_local(n, j) * self.w(n, j)
    }
}
