//! Coefficient systems `x'(t) = A(t)x(t) + B(t)x([t]) + f(t)`.
//!
//! Coefficients are evaluated together with the anchor `n` of the unit
//! interval `[n, n+1]` being integrated, so that data depending on `x([t])`
//! (variational systems, frozen forcing) take their left limit at `t = n+1`.
//! Plain time-dependent coefficients ignore the anchor.
//!
//! Purity is a contract: the same `(t, anchor)` must give the same value.
//! Nothing downstream holds if it does not.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::TimeGrid;
use crate::linalg::{op_norm, Matrix, Vector};

pub trait Coefficients: Send + Sync {
    fn dim(&self) -> usize;
    fn a(&self, t: f64, anchor: i64) -> Matrix;
    fn b(&self, t: f64, anchor: i64) -> Matrix;
    fn f(&self, t: f64, anchor: i64) -> Vector;
}

type MatFn = Box<dyn Fn(f64) -> Matrix + Send + Sync>;
type VecFn = Box<dyn Fn(f64) -> Vector + Send + Sync>;

/// Coefficients given by closures of `t` alone.
pub struct FnCoefficients {
    q: usize,
    a: MatFn,
    b: MatFn,
    f: VecFn,
}

impl FnCoefficients {
    pub fn new(
        q: usize,
        a: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        b: impl Fn(f64) -> Matrix + Send + Sync + 'static,
        f: impl Fn(f64) -> Vector + Send + Sync + 'static,
    ) -> Self {
        Self {
            q,
            a: Box::new(a),
            b: Box::new(b),
            f: Box::new(f),
        }
    }

    pub fn constant(a: Matrix, b: Matrix, f: Vector) -> Self {
        let q = a.nrows();
        Self::new(q, move |_| a.clone(), move |_| b.clone(), move |_| f.clone())
    }

    /// One-dimensional system from scalar closures.
    pub fn scalar(
        a: impl Fn(f64) -> f64 + Send + Sync + 'static,
        b: impl Fn(f64) -> f64 + Send + Sync + 'static,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(
            1,
            move |t| Matrix::from_element(1, 1, a(t)),
            move |t| Matrix::from_element(1, 1, b(t)),
            move |t| Vector::from_element(1, f(t)),
        )
    }
}

impl Coefficients for FnCoefficients {
    fn dim(&self) -> usize {
        self.q
    }
    fn a(&self, t: f64, _anchor: i64) -> Matrix {
        (self.a)(t)
    }
    fn b(&self, t: f64, _anchor: i64) -> Matrix {
        (self.b)(t)
    }
    fn f(&self, t: f64, _anchor: i64) -> Vector {
        (self.f)(t)
    }
}

/// Samples per grid step used when measuring the uniform bound.
const BOUND_OVERSAMPLING: usize = 8;
const BOUND_SAFETY: f64 = 1.01;
const BOUND_FLOOR: f64 = 1e-12;

/// A validated coefficient system with its measured uniform bound `M`.
#[derive(Clone)]
pub struct CoefficientSystem {
    coeffs: Arc<dyn Coefficients>,
    bound: f64,
    window: TimeGrid,
}

impl std::fmt::Debug for CoefficientSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CoefficientSystem")
            .field("q", &self.dim())
            .field("bound", &self.bound)
            .field("window", &self.window)
            .finish()
    }
}

impl CoefficientSystem {
    /// Checks finiteness and dimensions on `grid` and measures
    /// `M = 1.01 * sup max(|A|, |B|, |f|)` on an oversampled grid.
    pub fn new(coeffs: impl Coefficients + 'static, grid: &TimeGrid) -> Result<Self> {
        Self::from_arc(Arc::new(coeffs), grid)
    }

    pub fn from_arc(coeffs: Arc<dyn Coefficients>, grid: &TimeGrid) -> Result<Self> {
        let q = coeffs.dim();
        if q == 0 {
            return Err(Error::InvalidSpec("dimension q must be positive".into()));
        }
        let h = grid.step() / BOUND_OVERSAMPLING as f64;
        let mut sup: f64 = 0.0;
        for n in grid.t_start()..grid.t_end() {
            let samples = grid.subdivisions() as usize * BOUND_OVERSAMPLING;
            for i in 0..=samples {
                let t = n as f64 + i as f64 * h;
                let a = coeffs.a(t, n);
                let b = coeffs.b(t, n);
                let f = coeffs.f(t, n);
                check_shape(&a, q, "A", t)?;
                check_shape(&b, q, "B", t)?;
                if f.len() != q {
                    return Err(Error::DimensionMismatch {
                        expected: q,
                        found: f.len(),
                        context: format!("f({t})"),
                    });
                }
                if !f.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFinite { t, what: "f".into() });
                }
                sup = sup.max(op_norm(&a)).max(op_norm(&b)).max(f.norm());
            }
        }
        Ok(Self {
            coeffs,
            bound: (sup * BOUND_SAFETY).max(BOUND_FLOOR),
            window: *grid,
        })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim()
    }

    /// Measured uniform bound `M`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// Window on which the bound was measured.
    pub fn window(&self) -> &TimeGrid {
        &self.window
    }

    pub fn coefficients(&self) -> &Arc<dyn Coefficients> {
        &self.coeffs
    }

    pub fn a(&self, t: f64, anchor: i64) -> Matrix {
        self.coeffs.a(t, anchor)
    }

    pub fn b(&self, t: f64, anchor: i64) -> Matrix {
        self.coeffs.b(t, anchor)
    }

    pub fn f(&self, t: f64, anchor: i64) -> Vector {
        self.coeffs.f(t, anchor)
    }
}

fn check_shape(m: &Matrix, q: usize, name: &str, t: f64) -> Result<()> {
    if m.nrows() != q || m.ncols() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: m.nrows().max(m.ncols()),
            context: format!("{name}({t}) is {}x{}", m.nrows(), m.ncols()),
        });
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite { t, what: name.into() });
    }
    Ok(())
}

/// The demo sequence `cos n + cos(√2 n) + sin(n + √|n|) + 3n²/(n²+1)`,
/// evaluated at real arguments.
pub fn rap_demo(t: f64) -> f64 {
    t.cos() + (std::f64::consts::SQRT_2 * t).cos() + (t + t.abs().sqrt()).sin() + 3.0 * t * t / (t * t + 1.0)
}

// ---------------------------------------------------------------------------
// Configuration form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: i64,
    pub end: i64,
    pub m: u32,
}

impl WindowSpec {
    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_integers(self.start, self.end, self.m)
    }
}

/// Coefficient specification as read from JSON:
/// `{"kind", "q", "params", "window": {"start", "end", "m"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSpec {
    pub kind: CoefficientKind,
    pub q: usize,
    #[serde(default)]
    pub params: serde_json::Value,
    pub window: WindowSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoefficientKind {
    Constant,
    TrigSum,
    RapDemo,
    Expression,
}

/// A single entry or a full row-major table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Table<T> {
    One(T),
    Rows(Vec<Vec<T>>),
}

/// A single entry or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum List<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> Table<T> {
    fn square(&self, q: usize, name: &str) -> Result<Vec<Vec<T>>> {
        let rows = match self {
            Table::One(x) if q == 1 => vec![vec![x.clone()]],
            Table::One(_) => {
                return Err(Error::InvalidSpec(format!(
                    "{name}: scalar entry only allowed for q = 1"
                )))
            }
            Table::Rows(r) => r.clone(),
        };
        if rows.len() != q || rows.iter().any(|r| r.len() != q) {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: rows.len(),
                context: format!("{name} must be {q}x{q}"),
            });
        }
        Ok(rows)
    }
}

impl<T: Clone> List<T> {
    fn vector(&self, q: usize, name: &str) -> Result<Vec<T>> {
        let v = match self {
            List::One(x) if q == 1 => vec![x.clone()],
            List::One(_) => {
                return Err(Error::InvalidSpec(format!(
                    "{name}: scalar entry only allowed for q = 1"
                )))
            }
            List::Many(v) => v.clone(),
        };
        if v.len() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                found: v.len(),
                context: format!("{name} must have {q} entries"),
            });
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Deserialize)]
struct ConstantParams {
    #[serde(default)]
    a: Option<Table<f64>>,
    #[serde(default)]
    b: Option<Table<f64>>,
    #[serde(default)]
    f: Option<List<f64>>,
}

/// `offset + Σ amplitude * cos(frequency * t + phase)` (or `sin`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub terms: Vec<TrigTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigTerm {
    pub amplitude: f64,
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub sine: bool,
}

impl TrigSeries {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset
            + self
                .terms
                .iter()
                .map(|term| {
                    let arg = term.frequency * t + term.phase;
                    term.amplitude * if term.sine { arg.sin() } else { arg.cos() }
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone, Deserialize)]
struct TrigParams {
    #[serde(default)]
    a: Option<Table<TrigSeries>>,
    #[serde(default)]
    b: Option<Table<TrigSeries>>,
    #[serde(default)]
    f: Option<List<TrigSeries>>,
}

#[derive(Debug, Clone, Deserialize)]
struct RapDemoParams {
    a: f64,
    #[serde(default)]
    b: f64,
    #[serde(default = "one")]
    scale: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Deserialize)]
struct ExpressionParams {
    #[serde(default)]
    a: Option<Table<String>>,
    #[serde(default)]
    b: Option<Table<String>>,
    #[serde(default)]
    f: Option<List<String>>,
}

/// Entry-wise coefficient tables evaluated by a per-entry function.
struct TableCoefficients<E> {
    q: usize,
    a: Option<Vec<Vec<E>>>,
    b: Option<Vec<Vec<E>>>,
    f: Option<Vec<E>>,
    eval: fn(&E, f64) -> f64,
}

impl<E: Send + Sync> Coefficients for TableCoefficients<E> {
    fn dim(&self) -> usize {
        self.q
    }
    fn a(&self, t: f64, _: i64) -> Matrix {
        match &self.a {
            Some(rows) => Matrix::from_fn(self.q, self.q, |i, j| (self.eval)(&rows[i][j], t)),
            None => Matrix::zeros(self.q, self.q),
        }
    }
    fn b(&self, t: f64, _: i64) -> Matrix {
        match &self.b {
            Some(rows) => Matrix::from_fn(self.q, self.q, |i, j| (self.eval)(&rows[i][j], t)),
            None => Matrix::zeros(self.q, self.q),
        }
    }
    fn f(&self, t: f64, _: i64) -> Vector {
        match &self.f {
            Some(v) => Vector::from_fn(self.q, |i, _| (self.eval)(&v[i], t)),
            None => Vector::zeros(self.q),
        }
    }
}

fn eval_expr(e: &Expr, t: f64) -> f64 {
    e.eval(&[t]).unwrap_or(f64::NAN)
}

fn compile_table(rows: Vec<Vec<String>>) -> Result<Vec<Vec<Expr>>> {
    rows.into_iter()
        .map(|r| r.iter().map(|s| Expr::compile(s, &["t"])).collect())
        .collect()
}

impl CoefficientSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        self.window.grid()
    }

    fn params<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        let value = if self.params.is_null() {
            serde_json::Value::Object(Default::default())
        } else {
            self.params.clone()
        };
        serde_json::from_value(value)
            .map_err(|e| Error::InvalidSpec(format!("params for {:?}: {e}", self.kind)))
    }

    /// Builds the coefficient functions without measuring bounds.
    pub fn build(&self) -> Result<Arc<dyn Coefficients>> {
        let q = self.q;
        if q == 0 {
            return Err(Error::InvalidSpec("q must be positive".into()));
        }
        Ok(match self.kind {
            CoefficientKind::Constant => {
                let p: ConstantParams = self.params()?;
                Arc::new(TableCoefficients {
                    q,
                    a: p.a.map(|t| t.square(q, "a")).transpose()?,
                    b: p.b.map(|t| t.square(q, "b")).transpose()?,
                    f: p.f.map(|v| v.vector(q, "f")).transpose()?,
                    eval: |x: &f64, _| *x,
                })
            }
            CoefficientKind::TrigSum => {
                let p: TrigParams = self.params()?;
                Arc::new(TableCoefficients {
                    q,
                    a: p.a.map(|t| t.square(q, "a")).transpose()?,
                    b: p.b.map(|t| t.square(q, "b")).transpose()?,
                    f: p.f.map(|v| v.vector(q, "f")).transpose()?,
                    eval: |s: &TrigSeries, t| s.eval(t),
                })
            }
            CoefficientKind::RapDemo => {
                if q != 1 {
                    return Err(Error::InvalidSpec("rap-demo is scalar (q = 1)".into()));
                }
                let p: RapDemoParams = self.params()?;
                Arc::new(FnCoefficients::scalar(
                    move |_| p.a,
                    move |_| p.b,
                    move |t| p.scale * rap_demo(t),
                ))
            }
            CoefficientKind::Expression => {
                let p: ExpressionParams = self.params()?;
                Arc::new(TableCoefficients {
                    q,
                    a: p.a
                        .map(|t| t.square(q, "a").and_then(compile_table))
                        .transpose()?,
                    b: p.b
                        .map(|t| t.square(q, "b").and_then(compile_table))
                        .transpose()?,
                    f: p.f
                        .map(|v| {
                            v.vector(q, "f")
                                .and_then(|v| v.iter().map(|s| Expr::compile(s, &["t"])).collect())
                        })
                        .transpose()?,
                    eval: eval_expr,
                })
            }
        })
    }
}

/// Parses `spec` and measures its bound on `grid`.
pub fn validate_system(spec: &CoefficientSpec, grid: &TimeGrid) -> Result<CoefficientSystem> {
    CoefficientSystem::from_arc(spec.build()?, grid)
}
