//! Problem files: TOML with `[coefficients]`, `[grid]`, `[initial]`,
//! `[boundary]`, optional `[solver]`, `[probe]` and `[output]` sections.
//!
//! Data entries are DSL strings or `{ table = "file.csv" }` references to
//! space-time tables. Paths are relative to the problem file. Unknown keys
//! are errors.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsl::{self, parse, CheckOutcome, CoefficientSet, DomainBox, Expr, ValidationOptions, ValidationReport};
use crate::field::{Field, Grid, PointFunction};
use crate::geometry::Point;
use crate::io::{self, IoError, Table};
use crate::probe::{PoincareConfig, ProbeConfig};
use crate::reduction::{transform_coeffs, transformed_grid, PushedData, ReductionError, TransformedCoefficients};
use crate::solver::{solve, B0Scheme, Checkpoints, CoeffValues, Coefficients, EquationClass, Problem, Solution, SolverError};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("{field}: {message}")]
    Expr { field: String, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableRef {
    pub table: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source {
    Expr(String),
    Table(TableRef),
}

impl Source {
    fn expr(s: &str) -> Self {
        Source::Expr(s.to_string())
    }
}

fn zero() -> Source {
    Source::expr("0")
}

fn x_source() -> Source {
    Source::expr("x")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    pub a: Source,
    #[serde(default = "zero")]
    pub b0: Source,
    #[serde(default = "x_source")]
    pub b: Source,
    pub mu: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub x: (f64, f64),
    pub y: (f64, f64),
    pub nx: usize,
    pub ny: usize,
    pub t0: f64,
    pub t1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

impl GridSection {
    pub fn grid(&self) -> Grid {
        Grid { dt: self.dt, ..Grid::new(self.x, self.y, self.nx, self.ny, self.t0, self.t1) }
    }

    pub fn from_grid(g: &Grid) -> Self {
        Self { x: g.x_range, y: g.y_range, nx: g.nx, ny: g.ny, t0: g.t0, t1: g.t1, dt: g.dt }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub value: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryKind {
    #[default]
    Dirichlet,
    /// Periodic in `y`; `value` still supplies the `x` walls.
    PeriodicY,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySection {
    #[serde(default)]
    pub kind: BoundaryKind,
    #[serde(default = "zero")]
    pub value: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    #[default]
    Auto,
    Centered,
    Upwind,
}

fn default_samples() -> usize {
    dsl::MIN_SAMPLES
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    #[serde(default)]
    pub b0_scheme: SchemeName,
    #[serde(default = "default_samples")]
    pub validation_samples: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        Self { b0_scheme: SchemeName::Auto, validation_samples: default_samples() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub center: (f64, f64, f64),
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub beta: Option<f64>,
    #[serde(default)]
    pub p: Option<f64>,
    #[serde(default)]
    pub radii: Option<Vec<f64>>,
    #[serde(default)]
    pub h_levels: Option<Vec<f64>>,
    #[serde(default)]
    pub poincare: Option<PoincareConfig>,
}

impl ProbeSection {
    pub fn center(&self) -> Point {
        Point::new(self.center.0, self.center.1, self.center.2)
    }

    pub fn config(&self) -> ProbeConfig {
        let d = ProbeConfig::default();
        ProbeConfig {
            theta: self.theta.unwrap_or(d.theta),
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            p: self.p.unwrap_or(d.p),
            radii: self.radii.clone().unwrap_or(d.radii),
            h_levels: self.h_levels.clone().unwrap_or(d.h_levels),
            poincare: self.poincare,
        }
    }
}

fn default_out() -> String {
    "traj".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out")]
    pub dir: String,
    /// Checkpoint times; `t0` and `t1` are always written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub times: Option<Vec<f64>>,
    /// Alternatively, every n-th step.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub every: Option<usize>,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: default_out(), times: None, every: None }
    }
}

fn general() -> EquationClass {
    EquationClass::General
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    #[serde(default = "general")]
    pub equation_class: EquationClass,
    pub coefficients: CoefficientSection,
    pub grid: GridSection,
    pub initial: InitialSection,
    #[serde(default = "default_boundary")]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeSection>,
    #[serde(default)]
    pub output: OutputSection,
}

fn default_boundary() -> BoundarySection {
    BoundarySection { kind: BoundaryKind::Dirichlet, value: zero() }
}

impl ProblemFile {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ProblemError> {
        toml::from_str(text).map_err(|e| ProblemError::Syntax { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("problem files serialize")
    }
}

/// A parsed expression or a loaded table.
#[derive(Debug, Clone)]
pub enum Data {
    Expr(Expr),
    Table(Table),
}

impl Data {
    pub fn as_expr(&self) -> Option<&Expr> {
        match self {
            Data::Expr(e) => Some(e),
            Data::Table(_) => None,
        }
    }
}

impl PointFunction for Data {
    fn value(&self, p: Point) -> Result<f64, String> {
        match self {
            Data::Expr(e) => e.value(p),
            Data::Table(t) => Ok(t.interpolate(p)),
        }
    }

    fn time_dependent(&self) -> bool {
        match self {
            Data::Expr(e) => e.time_dependent(),
            Data::Table(t) => PointFunction::time_dependent(t),
        }
    }
}

/// `(a, b₀, b)` from expressions or tables.
#[derive(Debug, Clone)]
pub struct DataCoefficients {
    pub a: Data,
    pub b0: Data,
    pub b: Data,
    pub mu: f64,
}

impl DataCoefficients {
    /// The all-expression case.
    pub fn as_set(&self) -> Option<CoefficientSet> {
        Some(CoefficientSet { a: self.a.as_expr()?.clone(), b0: self.b0.as_expr()?.clone(), b: self.b.as_expr()?.clone(), mu: self.mu })
    }
}

impl Coefficients for DataCoefficients {
    fn eval(&self, p: Point) -> Result<CoeffValues, String> {
        Ok(CoeffValues { a: self.a.value(p)?, b0: self.b0.value(p)?, b: self.b.value(p)? })
    }

    fn time_dependent(&self) -> bool {
        self.a.time_dependent() || self.b0.time_dependent() || self.b.time_dependent()
    }
}

/// A problem file with its expressions parsed and tables loaded.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub file: ProblemFile,
    /// Directory against which relative paths resolve.
    pub base: PathBuf,
    pub grid: Grid,
    pub coefficients: DataCoefficients,
    pub initial: Data,
    pub boundary: Data,
    pub spec_hash: String,
}

fn load_source(src: &Source, field: &str, base: &Path, hasher: &mut Sha256) -> Result<Data, ProblemError> {
    match src {
        Source::Expr(s) => parse(s).map(Data::Expr).map_err(|e| ProblemError::Expr { field: field.into(), message: e.to_string() }),
        Source::Table(r) => {
            let path = base.join(&r.table);
            let bytes = fs::read(&path).map_err(|source| ProblemError::Read { path: path.clone(), source })?;
            hasher.update(field.as_bytes());
            hasher.update(Sha256::digest(&bytes));
            Ok(Data::Table(Table::read(&path)?))
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// First 64 bits of SHA-256, hex encoded; the form used for every hash.
pub fn content_hash(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes)[..8])
}

impl LoadedProblem {
    pub fn load(path: &Path) -> Result<Self, ProblemError> {
        let text = fs::read_to_string(path).map_err(|source| ProblemError::Read { path: path.to_path_buf(), source })?;
        let file = ProblemFile::from_toml(&text, path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_file(file, base)
    }

    /// The hash covers the parsed content (not its formatting) and the bytes
    /// of referenced tables, so comments and whitespace do not change it.
    pub fn from_file(file: ProblemFile, base: PathBuf) -> Result<Self, ProblemError> {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(&file).expect("problem files serialize"));
        let c = &file.coefficients;
        if !(c.mu > 0.0 && c.mu < 1.0) {
            return Err(ProblemError::Invalid(format!("mu must lie in (0, 1), got {}", c.mu)));
        }
        let coefficients = DataCoefficients {
            a: load_source(&c.a, "coefficients.a", &base, &mut hasher)?,
            b0: load_source(&c.b0, "coefficients.b0", &base, &mut hasher)?,
            b: load_source(&c.b, "coefficients.b", &base, &mut hasher)?,
            mu: c.mu,
        };
        let initial = load_source(&file.initial.value, "initial.value", &base, &mut hasher)?;
        let boundary = load_source(&file.boundary.value, "boundary.value", &base, &mut hasher)?;
        let grid = file.grid.grid();
        grid.check().map_err(ProblemError::Invalid)?;
        if let Some(times) = &file.output.times {
            if file.output.every.is_some() {
                return Err(ProblemError::Invalid("output: give either times or every, not both".into()));
            }
            if times.iter().any(|t| !t.is_finite()) {
                return Err(ProblemError::Invalid("output.times must be finite".into()));
            }
        }
        if let Some(p) = &file.probe {
            p.config().check(None).map_err(|e| ProblemError::Invalid(format!("probe: {e}")))?;
        }
        let spec_hash = hex(&hasher.finalize()[..8]);
        Ok(Self { file, base, grid, coefficients, initial, boundary, spec_hash })
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base.join(&self.file.output.dir)
    }

    pub fn checkpoints(&self) -> Checkpoints {
        match (&self.file.output.times, self.file.output.every) {
            (Some(t), _) => Checkpoints::Times(t.clone()),
            (None, Some(n)) => Checkpoints::Every(n),
            (None, None) => Checkpoints::Times(Vec::new()),
        }
    }

    pub fn periodic_y(&self) -> bool {
        self.file.boundary.kind == BoundaryKind::PeriodicY
    }

    pub fn problem(&self) -> Problem<'_> {
        let mut p = Problem::new(self.grid, &self.coefficients, &self.initial, &self.boundary);
        p.periodic_y = self.periodic_y();
        p.b0_scheme = match self.file.solver.b0_scheme {
            SchemeName::Auto => B0Scheme::Auto,
            SchemeName::Centered => B0Scheme::Centered,
            SchemeName::Upwind => B0Scheme::Upwind,
        };
        p
    }

    pub fn domain(&self) -> DomainBox {
        let g = &self.grid;
        DomainBox::new(Point::new(g.x_range.0, g.y_range.0, g.t0), Point::new(g.x_range.1, g.y_range.1, g.t1))
    }

    /// Coefficient hypotheses and the equation class. Tabulated `a`, `b₀`
    /// are range-checked at their nodes; `b` must be an expression.
    pub fn validate(&self) -> Result<ValidationReport, ProblemError> {
        let c = &self.coefficients;
        let opts = ValidationOptions { samples: self.file.solver.validation_samples, ..Default::default() };
        if let Some(cs) = c.as_set() {
            self.file.equation_class.check(&cs).map_err(ProblemError::Invalid)?;
            return Ok(dsl::validate(&cs, &self.domain(), &opts));
        }
        let b = c.b.as_expr().ok_or_else(|| ProblemError::Invalid("b must be an expression".into()))?.clone();
        let need_x = matches!(self.file.equation_class, EquationClass::L0 | EquationClass::L1 | EquationClass::L2);
        if need_x && b != parse("x").expect("literal parses") {
            return Err(ProblemError::Invalid(format!("equation class {} requires b = x", self.file.equation_class.name())));
        }
        if matches!(self.file.equation_class, EquationClass::L0 | EquationClass::L1) {
            return Err(ProblemError::Invalid("classes L0 and L1 need expression coefficients".into()));
        }
        let stand_in = CoefficientSet { a: Expr::num(1.0), b0: Expr::num(0.0), b, mu: c.mu };
        let mut report = dsl::validate(&stand_in, &self.domain(), &opts);
        for (data, name) in [(&c.a, "a"), (&c.b0, "b0")] {
            let Data::Table(t) = data else { continue };
            let (lo, hi) = t.min_max();
            let inv = 1.0 / c.mu;
            let outcome = |name: &'static str, passed: bool, worst: f64, bound: f64| CheckOutcome {
                name,
                passed,
                worst,
                bound,
                witness: None,
                violations: usize::from(!passed),
                detail: "checked at table nodes".into(),
            };
            report.checks.retain(|k| !(name == "a" && k.name.starts_with("a_") || name == "b0" && k.name == "b0_bound"));
            if name == "a" {
                report.checks.push(outcome("a_lower", lo > c.mu, lo, c.mu));
                report.checks.push(outcome("a_upper", hi < inv, hi, inv));
                report.inf_a = lo;
                report.sup_a = hi;
            } else {
                let m = lo.abs().max(hi.abs());
                report.checks.push(outcome("b0_bound", m <= inv, m, inv));
                report.sup_abs_b0 = m;
            }
        }
        Ok(report)
    }

    pub fn solve(&self) -> Result<Solution, SolverError> {
        solve(&self.problem(), &self.checkpoints())
    }

    pub fn probe(&self) -> Option<(Point, ProbeConfig)> {
        self.file.probe.as_ref().map(|p| (p.center(), p.config()))
    }
}

/// Result of [`emit_transformed`].
#[derive(Debug, Clone, Serialize)]
pub struct TransformManifest {
    pub tool: String,
    pub version: String,
    pub source_spec_hash: String,
    pub problem: String,
    pub grid: Grid,
    /// Search interval for `x(ξ, η, τ)`.
    pub inversion_range: (f64, f64),
    pub mu: f64,
    pub tables: Vec<TableInfo>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TableInfo {
    pub name: String,
    pub file: String,
    pub nodes: [usize; 3],
    pub min: f64,
    pub max: f64,
}

/// Time levels used for tabulating time-dependent data.
pub const TABLE_TIME_LEVELS: usize = 33;

/// Writes the canonical-form problem obtained from `ξ = b(x, y, t)`: tables of
/// `ã`, `b̃₀`, the pushed initial and boundary data, a problem file at
/// `out` using them and a manifest beside the tables.
///
/// Tables sit on the cell centers of the transformed grid plus one ghost
/// layer, so the solver reads them exactly in space. `μ` is lowered when
/// needed so that `ã`, `b̃₀` and `b = ξ` satisfy the hypotheses on the new box.
pub fn emit_transformed(src: &LoadedProblem, out: &Path) -> Result<TransformManifest, ProblemError> {
    let cs = src.coefficients.as_set().ok_or_else(|| ProblemError::Invalid("transform needs expression coefficients".into()))?;
    let g = src.grid;
    let half = 0.5 * (g.x_range.1 - g.x_range.0);
    let inversion = (g.x_range.0 - half, g.x_range.1 + half);
    let tc: TransformedCoefficients = transform_coeffs(&cs, inversion);
    let tg = Grid { dt: src.grid.dt, ..transformed_grid(&cs, &g, 0.0)? };

    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("transformed").to_string();
    let dir_name = format!("{stem}_tables");
    let base = out.parent().map(Path::to_path_buf).unwrap_or_default();
    let dir = base.join(&dir_name);

    let xs: Vec<f64> = (-1..=tg.nx as isize).map(|i| tg.xc(i)).collect();
    let ys: Vec<f64> = (-1..=tg.ny as isize).map(|j| tg.yc(j)).collect();
    let levels = |dependent: bool| -> Vec<f64> {
        if dependent {
            (0..TABLE_TIME_LEVELS).map(|k| tg.t0 + (tg.t1 - tg.t0) * k as f64 / (TABLE_TIME_LEVELS - 1) as f64).collect()
        } else {
            vec![tg.t0]
        }
    };
    let err = |e: ReductionError| e.to_string();
    let coeff_ts = levels(cs.time_dependent());
    let a_t = Table::sample(xs.clone(), ys.clone(), coeff_ts.clone(), |p| tc.values(p).map(|v| v.a_tilde).map_err(err)).map_err(ProblemError::Invalid)?;
    let b0_t = Table::sample(xs.clone(), ys.clone(), coeff_ts, |p| tc.values(p).map(|v| v.b0_tilde).map_err(err)).map_err(ProblemError::Invalid)?;
    let pushed_init = PushedData { data: &src.initial, map: &tc };
    let init_t = Table::sample(xs.clone(), ys.clone(), vec![tg.t0], |p| pushed_init.value(p)).map_err(ProblemError::Invalid)?;
    let pushed_bc = PushedData { data: &src.boundary, map: &tc };
    let bc_t = Table::sample(xs, ys, levels(pushed_bc.time_dependent()), |p| pushed_bc.value(p)).map_err(ProblemError::Invalid)?;

    let (a_lo, a_hi) = a_t.min_max();
    let (b0_lo, b0_hi) = b0_t.min_max();
    let xi_max = tg.x_range.0.abs().max(tg.x_range.1.abs()) + tg.dx();
    let sup = (1.0 / a_lo).max(a_hi).max(b0_lo.abs()).max(b0_hi.abs()).max(xi_max);
    let mu = if sup < 1.0 / cs.mu { cs.mu } else { 0.9 / sup };

    let mut tables = Vec::new();
    for (name, t) in [("a", &a_t), ("b0", &b0_t), ("initial", &init_t), ("boundary", &bc_t)] {
        let file = format!("{name}.csv");
        io::write_file(&dir.join(&file), &t.to_csv(&src.spec_hash, name))?;
        let (min, max) = t.min_max();
        tables.push(TableInfo { name: name.into(), file: format!("{dir_name}/{file}"), nodes: [t.xs.len(), t.ys.len(), t.ts.len()], min, max });
    }
    let table = |name: &str| Source::Table(TableRef { table: format!("{dir_name}/{name}.csv") });
    let file = ProblemFile {
        equation_class: EquationClass::L2,
        coefficients: CoefficientSection { a: table("a"), b0: table("b0"), b: x_source(), mu },
        grid: GridSection::from_grid(&tg),
        initial: InitialSection { value: table("initial") },
        boundary: BoundarySection { kind: src.file.boundary.kind, value: table("boundary") },
        solver: src.file.solver,
        probe: None,
        output: OutputSection { dir: format!("{stem}_traj"), ..src.file.output.clone() },
    };
    let text = format!("# kolmo {} transformed from spec_hash={}\n{}", io::VERSION, src.spec_hash, file.to_toml());
    io::write_file(out, &text)?;
    let manifest = TransformManifest {
        tool: io::TOOL.into(),
        version: io::VERSION.into(),
        source_spec_hash: src.spec_hash.clone(),
        problem: out.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string(),
        grid: tg,
        inversion_range: inversion,
        mu,
        tables,
    };
    io::write_file(&dir.join(io::MANIFEST), &io::to_json(&manifest))?;
    Ok(manifest)
}

/// Samples the transformed solution back onto the source grid.
pub fn pull_back(v: &Field, src: &LoadedProblem) -> Result<crate::reduction::MaskedField, ProblemError> {
    let cs = src.coefficients.as_set().ok_or_else(|| ProblemError::Invalid("pull-back needs an expression b".into()))?;
    let tc = transform_coeffs(&cs, src.grid.x_range);
    Ok(crate::reduction::pullback_field(v, &tc, &src.grid))
}
