use thiserror::Error;

/// Errors produced by the laboratory.
///
/// Variants fall in two families: usage/configuration problems, and
/// numerical evidence that a structural hypothesis (dichotomy, contraction,
/// invertibility of `J`) does not hold on the window. The CLI maps the
/// second family to exit status 2, see [`Error::is_hypothesis_failure`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid coefficient specification: {0}")]
    InvalidSpec(String),

    #[error("dimension mismatch: expected {expected}, found {found} ({context})")]
    DimensionMismatch {
        expected: usize,
        found: usize,
        context: String,
    },

    #[error("non-finite value at t = {t}: {what}")]
    NonFinite { t: f64, what: String },

    #[error("integrator blow-up on interval [{n}, {}]", n + 1)]
    IntegratorBlowUp { n: i64 },

    #[error(
        "J({t}, {s}) is numerically singular (condition {condition:.3e} > ceiling {ceiling:.1e}); invertibility hypothesis on J fails"
    )]
    NearSingularJ {
        t: f64,
        s: f64,
        condition: f64,
        ceiling: f64,
    },

    #[error("singular matrix {what} at n = {n}")]
    SingularMatrix { what: String, n: i64 },

    #[error(
        "exponential dichotomy not verified: eigenvalue modulus {modulus} within {gap:e} of the unit circle"
    )]
    NoDichotomy { modulus: f64, gap: f64 },

    #[error("exponential dichotomy not verified: fitted bound rejected ({reason})")]
    FitRejected { reason: String },

    #[error("window [{have_min}, {have_max}] too small: need [{need_min}, {need_max}] ({context})")]
    WindowTooSmall {
        have_min: i64,
        have_max: i64,
        need_min: i64,
        need_max: i64,
        context: String,
    },

    #[error("sequence is not bounded on the window (outer sup {outer:.3e} vs inner sup {inner:.3e})")]
    Unbounded { outer: f64, inner: f64 },

    #[error("contraction hypothesis not verified: kappa = {kappa:.4} >= 1 (nu = {nu}, r = {r})")]
    NoContraction { kappa: f64, nu: f64, r: f64 },

    #[error("contraction hypothesis not verified: gamma = {gamma} gives kappa = {kappa:.4} >= 1 (threshold gamma* = {gamma_star:.4})")]
    GammaTooLarge { gamma: f64, kappa: f64, gamma_star: f64 },

    #[error("fixed-point iteration did not converge in {iterations} iterations (last step {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("solution left the r-neighbourhood: sup distance {distance:.4e} > r = {r}")]
    OutsideNeighborhood { distance: f64, r: f64 },

    #[error("finite-difference Jacobian failed at t = {t}")]
    JacobianFailure { t: f64 },

    #[error(
        "continuity defect {defect:.3e} at t = {t} exceeds {limit:.3e}; anchors inconsistent with the kernel"
    )]
    ContinuityDefect { t: f64, defect: f64, limit: f64 },

    #[error("initial value must be non-negative, got {0}")]
    NegativeInitial(f64),

    #[error("model data invalid: {0}")]
    InvalidModel(String),

    #[error("mean of delta ({mean:.4e}) too close to zero for exponential truncation")]
    MeanTooSmall { mean: f64 },

    #[error("requested translation {tau} is not aligned with the grid step 1/{m}")]
    NonGridShift { tau: f64, m: u32 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that report a failed structural hypothesis rather than
    /// bad input.
    pub fn is_hypothesis_failure(&self) -> bool {
        matches!(
            self,
            Error::NearSingularJ { .. }
                | Error::NoDichotomy { .. }
                | Error::FitRejected { .. }
                | Error::NoContraction { .. }
                | Error::GammaTooLarge { .. }
                | Error::NonConvergence { .. }
                | Error::OutsideNeighborhood { .. }
                | Error::MeanTooSmall { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
