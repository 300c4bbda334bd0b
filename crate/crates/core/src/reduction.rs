//! The difference equation `x(n+1) = C(n)x(n) + h(n)` with
//! `C(n) = Z(n+1, n)` and `h(n) = ∫_n^{n+1} Φ(n+1, u)f(u)du`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{condition_number, inverse, Matrix, Vector};
use crate::sequence::SequenceWindow;
use crate::system::CoefficientSystem;
use crate::transition::{ForcingTable, HybridKernel, DEFAULT_J_CEILING};

/// `C(n)`, `h(n)` for `n` in `[n_min, n_max]`; trajectories live on
/// `[n_min, n_max + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteSystem {
    n_min: i64,
    c: Vec<Matrix>,
    h: Vec<Vector>,
}

impl DiscreteSystem {
    pub fn new(n_min: i64, c: Vec<Matrix>, h: Vec<Vector>) -> Result<Self> {
        if c.is_empty() || c.len() != h.len() {
            return Err(Error::InvalidSpec(format!(
                "discrete system needs matching non-empty C and h ({} vs {})",
                c.len(),
                h.len()
            )));
        }
        let q = c[0].nrows();
        for (i, (cn, hn)) in c.iter().zip(&h).enumerate() {
            let n = n_min + i as i64;
            if cn.nrows() != q || cn.ncols() != q || hn.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    found: hn.len(),
                    context: format!("C({n}), h({n})"),
                });
            }
            if !cn.iter().chain(hn.iter()).all(|x| x.is_finite()) {
                return Err(Error::NonFinite {
                    t: n as f64,
                    what: "C or h".into(),
                });
            }
            if !(condition_number(cn) <= DEFAULT_J_CEILING) {
                return Err(Error::SingularMatrix {
                    what: "C(n)".into(),
                    n,
                });
            }
        }
        Ok(Self { n_min, c, h })
    }

    pub fn from_fn(
        n_min: i64,
        n_max: i64,
        mut c: impl FnMut(i64) -> Matrix,
        mut h: impl FnMut(i64) -> Vector,
    ) -> Result<Self> {
        Self::new(
            n_min,
            (n_min..=n_max).map(&mut c).collect(),
            (n_min..=n_max).map(&mut h).collect(),
        )
    }

    pub fn constant(n_min: i64, n_max: i64, c: Matrix, h: Vector) -> Result<Self> {
        Self::from_fn(n_min, n_max, |_| c.clone(), |_| h.clone())
    }

    /// Scalar constant system.
    pub fn scalar(n_min: i64, n_max: i64, c: f64, h: f64) -> Result<Self> {
        Self::constant(
            n_min,
            n_max,
            Matrix::from_element(1, 1, c),
            Vector::from_element(1, h),
        )
    }

    pub fn dim(&self) -> usize {
        self.c[0].nrows()
    }

    pub fn n_min(&self) -> i64 {
        self.n_min
    }

    /// Last `n` with `C(n)` defined.
    pub fn n_max(&self) -> i64 {
        self.n_min + self.c.len() as i64 - 1
    }

    pub fn c(&self, n: i64) -> &Matrix {
        &self.c[self.idx(n)]
    }

    pub fn h(&self, n: i64) -> &Vector {
        &self.h[self.idx(n)]
    }

    fn idx(&self, n: i64) -> usize {
        assert!(
            n >= self.n_min && n <= self.n_max(),
            "n = {n} outside [{}, {}]",
            self.n_min,
            self.n_max()
        );
        (n - self.n_min) as usize
    }

    /// `h` as a sequence window over `[n_min, n_max]`.
    pub fn forcing(&self) -> SequenceWindow {
        SequenceWindow::new(self.n_min, self.h.clone()).expect("h is non-empty")
    }

    /// Same `C` with a different forcing.
    pub fn with_forcing(&self, h: Vec<Vector>) -> Result<Self> {
        Self::new(self.n_min, self.c.clone(), h)
    }

    /// Whether all `C(n)` coincide to `tol`.
    pub fn is_constant(&self, tol: f64) -> bool {
        self.c.iter().all(|c| (c - &self.c[0]).norm() <= tol)
    }

    /// Restriction to `[n_min, n_max]`.
    pub fn restrict(&self, n_min: i64, n_max: i64) -> Result<Self> {
        if n_min < self.n_min || n_max > self.n_max() || n_min > n_max {
            return Err(Error::WindowTooSmall {
                have_min: self.n_min,
                have_max: self.n_max(),
                need_min: n_min,
                need_max: n_max,
                context: "discrete system restriction".into(),
            });
        }
        let (a, b) = (self.idx(n_min), self.idx(n_max));
        Ok(Self {
            n_min,
            c: self.c[a..=b].to_vec(),
            h: self.h[a..=b].to_vec(),
        })
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let q = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["n".to_string()];
        for i in 0..q {
            for j in 0..q {
                header.push(format!("c{i}{j}"));
            }
        }
        for i in 0..q {
            header.push(format!("h{i}"));
        }
        w.write_record(header)?;
        for n in self.n_min..=self.n_max() {
            let mut rec = vec![n.to_string()];
            let c = self.c(n);
            for i in 0..q {
                for j in 0..q {
                    rec.push(c[(i, j)].to_string());
                }
            }
            rec.extend(self.h(n).iter().map(|x| x.to_string()));
            w.write_record(rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reduces the system over every unit interval of the kernel's grid.
pub fn reduce(kernel: &HybridKernel, system: &CoefficientSystem) -> Result<DiscreteSystem> {
    reduce_with(kernel, &kernel.system_forcing(system)?)
}

/// Reduction with an explicit forcing table.
pub fn reduce_with(kernel: &HybridKernel, forcing: &ForcingTable) -> Result<DiscreteSystem> {
    let grid = kernel.grid();
    let m = grid.subdivisions();
    DiscreteSystem::from_fn(
        grid.t_start(),
        grid.t_end() - 1,
        |n| kernel.z_local(n, m).clone(),
        |n| forcing.integral(kernel, n, m),
    )
}

/// Runs the recursion from `x(n0) = x0` to `n1`; backwards through `C(n)^-1`
/// when `n1 < n0`.
pub fn iterate(disc: &DiscreteSystem, x0: &Vector, n0: i64, n1: i64) -> Result<SequenceWindow> {
    let (lo, hi) = (n0.min(n1), n0.max(n1));
    if lo < disc.n_min() || hi > disc.n_max() + 1 {
        return Err(Error::WindowTooSmall {
            have_min: disc.n_min(),
            have_max: disc.n_max() + 1,
            need_min: lo,
            need_max: hi,
            context: "discrete iteration".into(),
        });
    }
    if x0.len() != disc.dim() {
        return Err(Error::DimensionMismatch {
            expected: disc.dim(),
            found: x0.len(),
            context: "initial value".into(),
        });
    }
    let mut values = vec![x0.clone()];
    if n1 >= n0 {
        for n in n0..n1 {
            let next = disc.c(n) * values.last().unwrap() + disc.h(n);
            values.push(next);
        }
        SequenceWindow::new(n0, values)
    } else {
        for n in (n1..n0).rev() {
            let inv = inverse(disc.c(n)).ok_or(Error::SingularMatrix {
                what: "C(n)".into(),
                n,
            })?;
            let prev = inv * (values.last().unwrap() - disc.h(n));
            values.push(prev);
        }
        values.reverse();
        SequenceWindow::new(n1, values)
    }
}
