//! Config-driven batch runner behind the `depca-lab` binary.
//!
//! Every subcommand reads one JSON config, writes CSV/JSON artifacts and a
//! `run_manifest.json` into the output directory, and exits with 0 on
//! success, 2 when a hypothesis of the method fails numerically and 1 on
//! usage or configuration errors. See the README for the config schema.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::depca::{oracle_suite, solve_initial, RapSolver};
use crate::dichotomy::{
    bisummability_scan, bounded_solution, detect_dichotomy_with, DetectOptions, DichotomyData,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::grid::TimeGrid;
use crate::lasota::{
    ergodic_kernel_scan, gamma_sweep, simulate, write_sweep_csv, ErgodicOptions, LasotaOptions, LasotaSolver,
    LasotaSpec,
};
use crate::linalg::{Matrix, Vector};
use crate::perturb::{
    ladder_shrinks, nu_ladder, solve_nonlinear, solve_perturbed_depca, solve_perturbed_discrete,
    write_ladder_csv, ContractionOptions, Perturbation, VectorField,
};
use crate::rap::{
    demo_sequence, integer_taus, interpolate_sequence, scan_function, scan_sequence, RapReport,
    SampledFunction, ScanMode, ScanOptions,
};
use crate::reduction::{reduce, DiscreteSystem};
use crate::sequence::SequenceWindow;
use crate::system::{validate_system, CoefficientKind, CoefficientSpec, CoefficientSystem, WindowSpec};
use crate::transition::{fundamental, hybrid_kernels_with, DEFAULT_J_CEILING};

pub const THREADS_ENV: &str = "DEPCA_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "depca-lab",
    version,
    about = "Numerical laboratory for equations with piecewise constant argument"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Subcommand)]
pub enum Command {
    /// Solve the linear equation (initial value problem or bounded solution).
    Solve(Common),
    /// Tabulate kernels and the reduced difference equation.
    Reduce(Common),
    /// Detect an exponential dichotomy and sum the Green series.
    Dichotomy(Common),
    /// Remote-translation scan of a sequence or solution.
    RapScan(Common),
    /// Contraction solve of a perturbed linear problem.
    Perturb(Common),
    /// Contraction solve of a nonlinear equation near a known solution.
    Nonlinear(Common),
    /// Lasota–Wazewska positive bounded solution, γ sweep and scans.
    Lasota(Common),
    /// Pipeline against the closed-form scalar solution.
    OracleCheck(Common),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Reduce(_) => "reduce",
            Command::Dichotomy(_) => "dichotomy",
            Command::RapScan(_) => "rap-scan",
            Command::Perturb(_) => "perturb",
            Command::Nonlinear(_) => "nonlinear",
            Command::Lasota(_) => "lasota",
            Command::OracleCheck(_) => "oracle-check",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Command::Solve(c)
            | Command::Reduce(c)
            | Command::Dichotomy(c)
            | Command::RapScan(c)
            | Command::Perturb(c)
            | Command::Nonlinear(c)
            | Command::Lasota(c)
            | Command::OracleCheck(c) => c,
        }
    }
}

/// Flags shared by all subcommands; they override config scalars.
#[derive(Debug, Clone, Copy, Default, PartialEq, Args)]
pub struct Common {
    #[arg(short, long, value_name = "FILE")]
    pub config: Option<ConfigPath>,
    #[arg(short, long, value_name = "DIR")]
    pub out: Option<ConfigPath>,
    #[arg(long)]
    pub m: Option<u32>,
    /// Integer window `START:END`.
    #[arg(long, value_parser = parse_window, allow_hyphen_values = true)]
    pub window: Option<(i64, i64)>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Interned path so that [`Common`] stays `Copy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigPath(&'static str);

impl ConfigPath {
    pub fn path(&self) -> &'static Path {
        Path::new(self.0)
    }
}

impl std::str::FromStr for ConfigPath {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(Self(Box::leak(s.to_owned().into_boxed_str())))
    }
}

fn parse_window(s: &str) -> std::result::Result<(i64, i64), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected START:END, got `{s}`"))?;
    let a = a.trim().parse().map_err(|e| format!("{a}: {e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{b}: {e}"))?;
    Ok((a, b))
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

const DEFAULT_WINDOW: WindowSpec = WindowSpec {
    start: -200,
    end: 200,
    m: 10,
};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub kind: Option<CoefficientKind>,
    pub q: Option<usize>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub params: serde_json::Value,
    pub window: Option<WindowSpec>,
    pub tol: Option<f64>,
    pub seed: Option<u64>,
    pub j_ceiling: Option<f64>,
    /// Initial value at the window start; `solve` then runs forward
    /// instead of computing the bounded solution.
    pub initial: Option<Vec<f64>>,
    pub discrete: Option<DiscreteSection>,
    pub dichotomy: Option<DichotomySection>,
    pub rap: Option<RapSection>,
    pub perturbation: Option<PerturbationSection>,
    pub nonlinear: Option<NonlinearSection>,
    pub lasota: Option<LasotaSection>,
    pub oracle: Option<OracleSection>,
}

/// An explicit constant difference equation `x(n+1) = C x(n) + h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteSection {
    pub c: Vec<Vec<f64>>,
    pub h: Vec<f64>,
    pub n_min: i64,
    pub n_max: i64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DichotomySection {
    pub projection: Option<Vec<Vec<f64>>>,
    pub gap: Option<f64>,
    pub bisum: Option<BisumSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BisumSection {
    pub taus: Vec<i64>,
    pub range: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RapSource {
    /// The demo sequence `cos n + cos √2n + sin(n + √|n|) + 3n²/(n²+1)`.
    Demo,
    /// A sequence given by `expression` in `n`.
    Expression,
    /// The bounded solution of the configured system.
    System,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RapSection {
    pub source: RapSource,
    pub expression: Option<String>,
    pub epsilon: f64,
    pub tail_start: i64,
    pub tail_end: i64,
    pub tau_max: i64,
    pub density_bound: Option<f64>,
    /// Function scans only.
    pub mode: Option<ScanMode>,
    /// Also scan the piecewise-linear interpolant (sequences) on a grid
    /// with this many nodes per unit, at the same `ε`, against the
    /// sequence scan at `ε/3`.
    pub interpolate: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerturbationSection {
    /// `g` componentwise, in `t`, `x0..`, `y0..` (`x`, `y` when `q = 1`)
    /// and `nu`.
    pub g: Vec<String>,
    pub nu: f64,
    pub r: f64,
    pub ladder: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub max_iterations: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearSection {
    /// `f(t, x, y)` componentwise, same variables as `g` minus `nu`.
    pub f: Vec<String>,
    /// Constant reference solution; must solve the unperturbed equation.
    pub xi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LasotaSection {
    #[serde(flatten)]
    pub model: LasotaSpec,
    /// `γ` values as fractions of the measured threshold `γ*`.
    pub sweep_fractions: Option<Vec<f64>>,
    pub scan: Option<LasotaScan>,
    pub ergodic: Option<ErgodicSection>,
    /// Forward simulation from this initial value.
    pub y0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LasotaScan {
    pub epsilon: f64,
    pub tail_start: i64,
    pub tail_end: i64,
    pub tau_max: i64,
    pub density_bound: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErgodicSection {
    pub taus: Vec<f64>,
    pub tail_start: i64,
    pub tail_end: i64,
    #[serde(default = "ergodic_m")]
    pub m: u32,
    #[serde(default = "ergodic_tol")]
    pub tol: f64,
}

fn ergodic_m() -> u32 {
    16
}

fn ergodic_tol() -> f64 {
    1e-8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub count: usize,
    pub m: u32,
}

impl Config {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Applies the command-line overrides.
    pub fn apply(&mut self, c: &Common) {
        if c.m.is_some() || c.window.is_some() {
            let mut w = self.window.unwrap_or(DEFAULT_WINDOW);
            if let Some(m) = c.m {
                w.m = m;
            }
            if let Some((a, b)) = c.window {
                w.start = a;
                w.end = b;
            }
            self.window = Some(w);
        }
        if c.tol.is_some() {
            self.tol = c.tol;
        }
        if c.seed.is_some() {
            self.seed = c.seed;
        }
        if let Some(nu) = c.nu {
            if let Some(p) = &mut self.perturbation {
                p.nu = nu;
            }
        }
        if let Some(gamma) = c.gamma {
            if let Some(l) = &mut self.lasota {
                l.model.gamma = gamma;
            }
        }
        if let Some(eps) = c.epsilon {
            if let Some(r) = &mut self.rap {
                r.epsilon = eps;
            }
            if let Some(s) = self.lasota.as_mut().and_then(|l| l.scan.as_mut()) {
                s.epsilon = eps;
            }
        }
    }

    pub fn window(&self) -> WindowSpec {
        self.window.unwrap_or(DEFAULT_WINDOW)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        self.window().grid()
    }

    pub fn tol(&self) -> f64 {
        self.tol.unwrap_or(1e-10)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn coefficient_spec(&self) -> Result<CoefficientSpec> {
        let kind = self
            .kind
            .ok_or_else(|| Error::Config("config needs a coefficient `kind`".into()))?;
        Ok(CoefficientSpec {
            kind,
            q: self.q.unwrap_or(1),
            params: self.params.clone(),
            window: self.window(),
        })
    }

    pub fn system(&self) -> Result<CoefficientSystem> {
        let spec = self.coefficient_spec()?;
        validate_system(&spec, &spec.grid()?)
    }

    fn detect_options(&self) -> Result<DetectOptions> {
        let d = self.dichotomy.clone().unwrap_or_default();
        Ok(DetectOptions {
            projection: d.projection.as_ref().map(|rows| matrix(rows)).transpose()?,
            gap: d.gap,
        })
    }
}

fn matrix(rows: &[Vec<f64>]) -> Result<Matrix> {
    let q = rows.len();
    if q == 0 || rows.iter().any(|r| r.len() != q) {
        return Err(Error::Config("matrix must be square and non-empty".into()));
    }
    Ok(Matrix::from_fn(q, q, |i, j| rows[i][j]))
}

fn matrix_rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| m.row(i).iter().copied().collect())
        .collect()
}

/// Variables `t, x0.., y0.. [, nu]`, plus `x`, `y` aliases for `q = 1`.
fn state_vars(q: usize, with_nu: bool) -> Vec<String> {
    let mut vars = vec!["t".to_string()];
    vars.extend((0..q).map(|i| format!("x{i}")));
    vars.extend((0..q).map(|i| format!("y{i}")));
    if with_nu {
        vars.push("nu".into());
    }
    if q == 1 {
        vars.push("x".into());
        vars.push("y".into());
    }
    vars
}

fn compile_field(exprs: &[String], q: usize, with_nu: bool) -> Result<Vec<Expr>> {
    if exprs.len() != q {
        return Err(Error::DimensionMismatch {
            expected: q,
            found: exprs.len(),
            context: "expression components".into(),
        });
    }
    let vars = state_vars(q, with_nu);
    let names: Vec<&str> = vars.iter().map(String::as_str).collect();
    exprs.iter().map(|s| Expr::compile(s, &names)).collect()
}

fn eval_field(exprs: &[Expr], t: f64, x: &Vector, y: &Vector, nu: Option<f64>) -> Vector {
    let q = x.len();
    let mut vals = Vec::with_capacity(2 * q + 4);
    vals.push(t);
    vals.extend(x.iter());
    vals.extend(y.iter());
    if let Some(nu) = nu {
        vals.push(nu);
    }
    if q == 1 {
        vals.push(x[0]);
        vals.push(y[0]);
    }
    Vector::from_fn(q, |i, _| exprs[i].eval(&vals).unwrap_or(f64::NAN))
}

fn perturbation(section: &PerturbationSection, q: usize) -> Result<Perturbation> {
    let exprs = compile_field(&section.g, q, true)?;
    Perturbation::new(
        move |t, x, y, nu| eval_field(&exprs, t, x, y, Some(nu)),
        section.nu,
        section.r,
    )
}

fn contraction_options(cfg: &Config, section: &PerturbationSection) -> ContractionOptions {
    let d = ContractionOptions::default();
    ContractionOptions {
        tol: cfg.tol.unwrap_or(d.tol),
        max_iterations: section.max_iterations.unwrap_or(d.max_iterations),
        samples: section.samples.unwrap_or(d.samples),
        seed: cfg.seed(),
        series_tol: d.series_tol,
    }
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub out: String,
    pub seed: u64,
    pub version: String,
    pub wall_time_s: f64,
    pub artifacts: Vec<String>,
}

struct Out {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Out {
    fn new(dir: PathBuf) -> Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            artifacts: Vec::new(),
        })
    }

    fn file(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(File::create(self.dir.join(name))?))
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        serde_json::to_writer_pretty(self.file(name)?, value)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

/// Runs one parsed command and returns its manifest.
pub fn run(cli: &Cli) -> Result<RunManifest> {
    let start = Instant::now();
    let cmd = cli.command;
    let common = cmd.common();
    let mut cfg = match common.config {
        Some(p) => Config::load(p.path())?,
        None if matches!(cmd, Command::OracleCheck(_)) => Config::default(),
        None => return Err(Error::Config(format!("{} needs --config", cmd.name()))),
    };
    cfg.apply(common);
    let dir = common
        .out
        .map(|p| p.path().to_path_buf())
        .unwrap_or_else(|| PathBuf::from("depca-lab-out").join(cmd.name()));
    let mut out = Out::new(dir)?;
    match cmd {
        Command::Solve(_) => cmd_solve(&cfg, &mut out)?,
        Command::Reduce(_) => cmd_reduce(&cfg, &mut out)?,
        Command::Dichotomy(_) => cmd_dichotomy(&cfg, &mut out)?,
        Command::RapScan(_) => cmd_rap_scan(&cfg, &mut out)?,
        Command::Perturb(_) => cmd_perturb(&cfg, &mut out)?,
        Command::Nonlinear(_) => cmd_nonlinear(&cfg, &mut out)?,
        Command::Lasota(_) => cmd_lasota(&cfg, &mut out)?,
        Command::OracleCheck(_) => cmd_oracle(&cfg, &mut out)?,
    }
    let manifest = RunManifest {
        subcommand: cmd.name().into(),
        config: common.config.map(|p| p.path().display().to_string()),
        out: out.dir.display().to_string(),
        seed: cfg.seed(),
        version: env!("CARGO_PKG_VERSION").into(),
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: out.artifacts.clone(),
    };
    serde_json::to_writer_pretty(File::create(out.dir.join("run_manifest.json"))?, &manifest)?;
    Ok(manifest)
}

fn solver(cfg: &Config, system: &CoefficientSystem) -> Result<RapSolver> {
    RapSolver::with_margin(system, &cfg.grid()?, &cfg.detect_options()?, cfg.tol())
}

#[derive(Serialize)]
struct SolveSummary {
    mode: &'static str,
    window: (i64, i64),
    trusted: (i64, i64),
    sup_norm: f64,
    bound_m: f64,
    k0: f64,
    max_j_condition: f64,
    dichotomy: Option<DichotomySummary>,
}

#[derive(Serialize)]
struct DichotomySummary {
    alpha: f64,
    k: f64,
    provenance: crate::dichotomy::Provenance,
    eps_fit: f64,
    projection: Vec<Vec<f64>>,
    bound_factor: f64,
}

fn dichotomy_summary(dd: &DichotomyData) -> DichotomySummary {
    DichotomySummary {
        alpha: dd.alpha(),
        k: dd.k(),
        provenance: dd.provenance(),
        eps_fit: dd.eps_fit(),
        projection: matrix_rows(dd.projection(dd.n_min())),
        bound_factor: dd.bound_factor(),
    }
}

fn cmd_solve(cfg: &Config, out: &mut Out) -> Result<()> {
    let system = cfg.system()?;
    let grid = cfg.grid()?;
    let (sol, kernel, dd) = match &cfg.initial {
        Some(x0) => {
            let ceiling = cfg.j_ceiling.unwrap_or(DEFAULT_J_CEILING);
            let kernel = hybrid_kernels_with(fundamental(&system, &grid)?, &system, ceiling)?;
            let sol = solve_initial(&kernel, &system, &Vector::from_column_slice(x0))?;
            (sol, kernel, None)
        }
        None => {
            let s = solver(cfg, &system)?;
            let sol = s.solve()?;
            (sol, s.kernel().clone(), Some(dichotomy_summary(s.dichotomy())))
        }
    };
    sol.write_csv(out.file("trajectory.csv")?)?;
    let summary = SolveSummary {
        mode: if dd.is_some() { "bounded" } else { "initial-value" },
        window: (grid.t_start(), grid.t_end()),
        trusted: sol.trusted(),
        sup_norm: sol.sup_norm(),
        bound_m: system.bound(),
        k0: kernel.transition().k0(),
        max_j_condition: kernel.max_j_condition(),
        dichotomy: dd,
    };
    out.json("summary.json", &summary)
}

fn cmd_reduce(cfg: &Config, out: &mut Out) -> Result<()> {
    let system = cfg.system()?;
    let grid = cfg.grid()?;
    let ceiling = cfg.j_ceiling.unwrap_or(DEFAULT_J_CEILING);
    let kernel = hybrid_kernels_with(fundamental(&system, &grid)?, &system, ceiling)?;
    let disc = reduce(&kernel, &system)?;
    disc.write_csv(out.file("discrete.csv")?)?;
    kernel.transition().write_csv(out.file("transition.csv")?)?;
    kernel.write_csv(out.file("hybrid.csv")?)?;
    #[derive(Serialize)]
    struct Summary {
        window: (i64, i64),
        m: u32,
        k0: f64,
        max_j_condition: f64,
        j_ceiling: f64,
        constant: bool,
    }
    out.json(
        "summary.json",
        &Summary {
            window: (grid.t_start(), grid.t_end()),
            m: grid.subdivisions(),
            k0: kernel.transition().k0(),
            max_j_condition: kernel.max_j_condition(),
            j_ceiling: ceiling,
            constant: disc.is_constant(1e-12),
        },
    )
}

fn discrete_system(cfg: &Config) -> Result<DiscreteSystem> {
    match &cfg.discrete {
        Some(d) => DiscreteSystem::constant(d.n_min, d.n_max, matrix(&d.c)?, Vector::from_column_slice(&d.h)),
        None => {
            let system = cfg.system()?;
            let grid = cfg.grid()?;
            let ceiling = cfg.j_ceiling.unwrap_or(DEFAULT_J_CEILING);
            let kernel = hybrid_kernels_with(fundamental(&system, &grid)?, &system, ceiling)?;
            reduce(&kernel, &system)
        }
    }
}

fn write_sequence_csv(
    seq: &SequenceWindow,
    interior: Option<(i64, i64)>,
    out: impl std::io::Write,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["n".to_string()];
    header.extend((0..seq.dim()).map(|i| format!("y{i}")));
    if interior.is_some() {
        header.push("interior".into());
    }
    w.write_record(header)?;
    for (n, v) in seq.iter() {
        let mut rec = vec![n.to_string()];
        rec.extend(v.iter().map(|x| x.to_string()));
        if let Some((a, b)) = interior {
            rec.push((n >= a && n <= b).to_string());
        }
        w.write_record(rec)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_dichotomy(cfg: &Config, out: &mut Out) -> Result<()> {
    let disc = discrete_system(cfg)?;
    let dd = detect_dichotomy_with(&disc, &cfg.detect_options()?)?;
    let bounded = bounded_solution(&disc, &dd, cfg.tol())?;
    write_sequence_csv(&bounded.values, Some(bounded.interior), out.file("bounded.csv")?)?;
    #[derive(Serialize)]
    struct Summary {
        dichotomy: DichotomySummary,
        window: (i64, i64),
        truncation: i64,
        interior: (i64, i64),
        max_residual: f64,
        bound: f64,
        bound_holds: bool,
        bisum_proxy: Option<Vec<(i64, f64)>>,
    }
    let mut bisum_proxy = None;
    if let Some(b) = cfg.dichotomy.as_ref().and_then(|d| d.bisum.as_ref()) {
        let scan = bisummability_scan(&dd, &b.taus, b.range, cfg.tol())?;
        scan.write_csv(out.file("bisum.csv")?)?;
        bisum_proxy = Some(scan.proxy);
    }
    out.json(
        "dichotomy.json",
        &Summary {
            dichotomy: dichotomy_summary(&dd),
            window: (disc.n_min(), disc.n_max() + 1),
            truncation: bounded.truncation,
            interior: bounded.interior,
            max_residual: bounded.max_residual,
            bound: bounded.bound,
            bound_holds: bounded.bound_holds(),
            bisum_proxy,
        },
    )
}

fn scan_options(r: &RapSection, epsilon: f64) -> ScanOptions {
    ScanOptions {
        epsilon,
        tail_start: r.tail_start,
        tail_end: r.tail_end,
        density_bound: r.density_bound,
    }
}

fn write_report(out: &mut Out, stem: &str, report: &RapReport) -> Result<()> {
    report.write_csv(out.file(&format!("{stem}.csv"))?)?;
    report.write_json(out.file(&format!("{stem}.json"))?)
}

fn cmd_rap_scan(cfg: &Config, out: &mut Out) -> Result<()> {
    let r = cfg
        .rap
        .clone()
        .ok_or_else(|| Error::Config("rap-scan needs a `rap` section".into()))?;
    let reach = r.tail_end + r.tau_max;
    let sequence = match r.source {
        RapSource::Demo => Some(demo_sequence(-reach, reach)?),
        RapSource::Expression => {
            let src = r
                .expression
                .as_deref()
                .ok_or_else(|| Error::Config("expression source needs `expression`".into()))?;
            let e = Expr::compile(src, &["n"])?;
            Some(SequenceWindow::scalar(-reach, reach, |n| {
                e.eval(&[n as f64]).unwrap_or(f64::NAN)
            })?)
        }
        RapSource::System => None,
    };
    match sequence {
        Some(u) => {
            let report = scan_sequence(&u, &scan_options(&r, r.epsilon), r.tau_max)?;
            write_report(out, "rap_scan", &report)?;
            if let Some(m) = r.interpolate {
                let third = scan_sequence(&u, &scan_options(&r, r.epsilon / 3.0), r.tau_max)?;
                let f = interpolate_sequence(&u, m)?;
                let interp = scan_function(
                    &f,
                    &scan_options(&r, r.epsilon),
                    &integer_taus(r.tau_max),
                    ScanMode::Rap,
                )?;
                write_report(out, "interpolant_scan", &interp)?;
                let counterexamples: Vec<f64> = third
                    .taus_found
                    .iter()
                    .copied()
                    .filter(|&tau| !interp.accepts(tau))
                    .collect();
                #[derive(Serialize)]
                struct Inclusion {
                    accepted_at_third: usize,
                    counterexamples: Vec<f64>,
                }
                out.json(
                    "inclusion.json",
                    &Inclusion {
                        accepted_at_third: third.taus_found.len(),
                        counterexamples,
                    },
                )?;
            }
        }
        None => {
            let system = cfg.system()?;
            let sol = solver(cfg, &system)?.solve()?;
            let f = SampledFunction::from_solution(&sol);
            let mode = r.mode.unwrap_or(ScanMode::Rap);
            let report = scan_function(&f, &scan_options(&r, r.epsilon), &integer_taus(r.tau_max), mode)?;
            write_report(out, "rap_scan", &report)?;
        }
    }
    Ok(())
}

fn cmd_perturb(cfg: &Config, out: &mut Out) -> Result<()> {
    let section = cfg
        .perturbation
        .clone()
        .ok_or_else(|| Error::Config("perturb needs a `perturbation` section".into()))?;
    let opts = contraction_options(cfg, &section);
    if let Some(d) = &cfg.discrete {
        let disc = discrete_system(cfg)?;
        let dd = detect_dichotomy_with(&disc, &cfg.detect_options()?)?;
        let xi = bounded_solution(&disc, &dd, opts.series_tol)?.values;
        let pert = perturbation(&section, d.h.len())?;
        let solve = |p: &Perturbation| solve_perturbed_discrete(&disc, &dd, p, &xi, &opts);
        let sol = solve(&pert)?;
        write_sequence_csv(&sol.psi, Some(sol.interior), out.file("psi.csv")?)?;
        out.json("certificate.json", &sol.certificate)?;
        if let Some(nus) = &section.ladder {
            let rows = nu_ladder(nus, |nu| Ok(solve(&pert.with_nu(nu)?)?.certificate));
            write_ladder_csv(&rows, out.file("nu_ladder.csv")?)?;
            out.json(
                "nu_ladder.json",
                &serde_json::json!({ "shrinks": ladder_shrinks(&rows) }),
            )?;
        }
        return Ok(());
    }
    let system = cfg.system()?;
    let s = solver(cfg, &system)?;
    let (xi, _) = s.solve_full()?;
    let pert = perturbation(&section, system.dim())?;
    let sol = solve_perturbed_depca(&s, &xi, &pert, &opts)?;
    sol.target(&s)?.write_csv(out.file("psi.csv")?)?;
    out.json("certificate.json", &sol.certificate)?;
    if let Some(nus) = &section.ladder {
        let rows = nu_ladder(nus, |nu| {
            Ok(solve_perturbed_depca(&s, &xi, &pert.with_nu(nu)?, &opts)?.certificate)
        });
        write_ladder_csv(&rows, out.file("nu_ladder.csv")?)?;
        out.json(
            "nu_ladder.json",
            &serde_json::json!({ "shrinks": ladder_shrinks(&rows) }),
        )?;
    }
    Ok(())
}

/// Largest `‖f(t, ξ, ξ)‖` over the grid nodes for a constant `ξ`.
fn constant_defect(f: &VectorField, xi: &Vector, grid: &TimeGrid) -> f64 {
    grid.times()
        .into_iter()
        .map(|t| f(t, xi, xi).norm())
        .fold(0.0, f64::max)
}

fn cmd_nonlinear(cfg: &Config, out: &mut Out) -> Result<()> {
    let nl = cfg
        .nonlinear
        .clone()
        .ok_or_else(|| Error::Config("nonlinear needs a `nonlinear` section".into()))?;
    let section = cfg
        .perturbation
        .clone()
        .ok_or_else(|| Error::Config("nonlinear needs a `perturbation` section".into()))?;
    let q = nl.xi.len();
    let exprs = compile_field(&nl.f, q, false)?;
    let f: Arc<VectorField> = Arc::new(move |t, x, y| eval_field(&exprs, t, x, y, None));
    let grid = cfg.grid()?;
    let xi_value = Vector::from_column_slice(&nl.xi);
    let defect = constant_defect(f.as_ref(), &xi_value, &grid);
    if defect > 1e-8 {
        return Err(Error::Config(format!(
            "xi does not solve the unperturbed equation (|f(t, xi, xi)| up to {defect:.3e})"
        )));
    }
    let xi = crate::depca::HybridSolution::from_values(grid, vec![xi_value; grid.len()])?;
    let pert = perturbation(&section, q)?;
    let opts = contraction_options(cfg, &section);
    let sol = solve_nonlinear(f, &xi, &pert, &cfg.detect_options()?, &opts)?;
    sol.perturbed.solution.write_csv(out.file("psi.csv")?)?;
    out.json("certificate.json", &sol.perturbed.certificate)?;
    out.json("variational.json", &dichotomy_summary(sol.solver.dichotomy()))
}

fn cmd_lasota(cfg: &Config, out: &mut Out) -> Result<()> {
    let l = cfg
        .lasota
        .clone()
        .ok_or_else(|| Error::Config("lasota needs a `lasota` section".into()))?;
    let grid = cfg.grid()?;
    let params = l.model.params(&grid)?;
    let solver = LasotaSolver::new(&params, &grid, 1e-12)?;
    let opts = LasotaOptions {
        tol: cfg.tol(),
        scan: l.scan.map(|s| {
            (
                ScanOptions {
                    epsilon: s.epsilon,
                    tail_start: s.tail_start,
                    tail_end: s.tail_end,
                    density_bound: s.density_bound,
                },
                s.tau_max,
            )
        }),
        ..Default::default()
    };
    let sol = solver.solve(params.gamma, &opts)?;
    sol.solution.write_csv(out.file("lasota_psi.csv")?)?;
    if let Some(rap) = &sol.rap {
        write_report(out, "lasota_rap", rap)?;
    }
    out.json("lasota_summary.json", &sol.summary(params.gamma))?;
    if let Some(fracs) = &l.sweep_fractions {
        let gammas: Vec<f64> = fracs.iter().map(|f| f * solver.gamma_star()).collect();
        let rows = gamma_sweep(&solver, &gammas, &opts);
        write_sweep_csv(&rows, out.file("gamma_sweep.csv")?)?;
    }
    if let Some(e) = &l.ergodic {
        let scan = ergodic_kernel_scan(
            params.delta.as_ref(),
            &e.taus,
            &ErgodicOptions {
                tail_start: e.tail_start,
                tail_end: e.tail_end,
                m: e.m,
                delta_minus: params.delta_minus,
                tol: e.tol,
            },
        )?;
        scan.write_csv(out.file("ergodic_scan.csv")?)?;
    }
    if let Some(y0) = l.y0 {
        simulate(&params, y0, &grid)?.write_csv(out.file("simulation.csv")?)?;
    }
    Ok(())
}

fn cmd_oracle(cfg: &Config, out: &mut Out) -> Result<()> {
    let o = cfg.oracle.unwrap_or(OracleSection { count: 50, m: 100 });
    let m = cfg.window.map_or(o.m, |w| w.m);
    let report = oracle_suite(o.count, m, cfg.seed())?;
    println!(
        "oracle-check: {} cases, m = {}, max error {:.3e}",
        report.cases.len(),
        report.m,
        report.max_error
    );
    out.json("oracle.json", &report)
}

/// Caps rayon's global pool from `DEPCA_LAB_THREADS`.
fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    main_from(std::env::args_os())
}

/// [`main`] with explicit arguments (the first is the program name).
pub fn main_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = init_threads().and_then(|_| run(&cli));
    match result {
        Ok(m) => {
            println!(
                "{}: wrote {} artifacts to {}",
                m.subcommand,
                m.artifacts.len(),
                m.out
            );
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_hypothesis_failure() {
                2
            } else {
                1
            }
        }
    }
}
