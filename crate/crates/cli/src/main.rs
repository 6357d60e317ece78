//! `kolmo`: one entry point for the toolkit.
//!
//! Exit codes: 0 success, 1 validation or run failure, 2 usage error.
//! Logs go to stderr, data to files and stdout.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use kolmo::gamma::{gamma, gamma_dx};
use kolmo::io::{self, IoError, SolveInfo, Table, TOOL, VERSION};
use kolmo::potential::{kernel_by_name, target_exponent, ConvolutionPlan, Gain};
use kolmo::probe::{probe, PoincareConfig, ProbeConfig, ProbeReport};
use kolmo::problem::{emit_transformed, LoadedProblem, TransformManifest};
use kolmo::verify;
use kolmo::Point;

#[derive(Parser)]
#[command(name = "kolmo", version, about = "Kolmogorov-type ultraparabolic equations: geometry, Γ, solver, probes")]
struct Cli {
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// More logging (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate or check the fundamental solution of L₀.
    Gamma {
        #[command(subcommand)]
        action: GammaAction,
    },
    /// Solve a problem file and write a trajectory directory.
    Solve {
        /// Problem file (TOML).
        #[arg(long)]
        problem: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Skip the coefficient hypotheses (exploratory rough-b runs).
        #[arg(long)]
        no_validate: bool,
    },
    /// Emit the canonical-form problem obtained from ξ = b(x, y, t).
    Transform {
        /// Problem file with a general `b`.
        #[arg(long)]
        problem: PathBuf,
        /// Path of the new problem file; tables go beside it.
        #[arg(long)]
        emit: PathBuf,
        /// Skip the coefficient hypotheses of the source problem.
        #[arg(long)]
        no_validate: bool,
    },
    /// Regularity measurements on a trajectory.
    Probe(ProbeArgs),
    /// Apply a potential to a space-time field and report the gain.
    Potential {
        /// `gamma` or `gamma-dx`.
        #[arg(long)]
        kernel: String,
        /// CSV with header `x,y,t,value` on a uniform lattice.
        #[arg(long)]
        input: PathBuf,
        /// Exponent of the input norm.
        #[arg(long)]
        p: f64,
        /// Defaults to the exponent with 1/q = 1/p − α/6.
        #[arg(long)]
        q: Option<f64>,
        /// Output field CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every identity and property suite.
    Verify {
        /// Write the report here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GammaAction {
    /// Γ(z, ζ); ζ defaults to the origin.
    Eval {
        /// `x,y,t`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Point,
        /// `ξ,η,τ`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        pole: Option<Point>,
    },
    /// Normalization, homogeneity, translation and residual-order checks.
    Check,
}

#[derive(Args)]
struct ProbeArgs {
    /// Trajectory directory written by `solve`.
    #[arg(long)]
    traj: PathBuf,
    /// Take center and settings from this problem's `[probe]` section.
    #[arg(long)]
    problem: Option<PathBuf>,
    /// `x,y,t`; overrides the problem's center.
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    center: Option<Point>,
    /// Comma-separated, decreasing.
    #[arg(long, value_parser = parse_floats, allow_hyphen_values = true)]
    radii: Option<Floats>,
    /// Shrink factor of the oscillation ratio.
    #[arg(long)]
    theta: Option<f64>,
    /// Exponent of the Moser ratio.
    #[arg(long)]
    p: Option<f64>,
    /// Level-set window starts at t − α r².
    #[arg(long)]
    alpha: Option<f64>,
    /// Level-set cube half-width β r.
    #[arg(long)]
    beta: Option<f64>,
    /// Levels h for the fraction {u ≥ h}, comma-separated.
    #[arg(long, value_parser = parse_floats)]
    h_levels: Option<Floats>,
    /// Radius of the Poincaré check; enables it.
    #[arg(long)]
    poincare_r: Option<f64>,
    /// Level h in w = ln⁺(h/(u + h^{9/8})).
    #[arg(long, default_value_t = 0.4)]
    poincare_h: f64,
    /// Cut-off θ; needs θ^{1/6} < 1/2.
    #[arg(long, default_value_t = 1.0 / 128.0)]
    poincare_theta: f64,
    /// Report path; stdout only when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `(r, osc, ratio)` table; defaults to `<traj>/probe.csv`.
    #[arg(long)]
    csv: Option<PathBuf>,
}

/// A comma-separated list. The wrapper stops clap from reading `Vec` as a
/// repeated flag.
#[derive(Clone, Debug)]
struct Floats(Vec<f64>);

fn parse_floats(s: &str) -> Result<Floats, String> {
    parse_list(s).map(Floats)
}

fn parse_list(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| format!("{v:?} is not a number; expected a comma-separated list like 0.4,0.2"))).collect()
}

fn parse_point(s: &str) -> Result<Point, String> {
    match parse_list(s)?.as_slice() {
        [x, y, t] => Ok(Point::new(*x, *y, *t)),
        _ => Err("expected three comma-separated numbers x,y,t".into()),
    }
}

/// A failure that maps to exit code 1.
#[derive(Debug)]
struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type Outcome = Result<bool, Failure>;

fn print_json<T: Serialize>(value: &T) {
    print!("{}", io::to_json(value));
}

fn load_validated(path: &Path, no_validate: bool) -> Result<Option<LoadedProblem>, Failure> {
    let lp = LoadedProblem::load(path)?;
    if no_validate {
        log::warn!("coefficient validation skipped");
        return Ok(Some(lp));
    }
    let report = lp.validate()?;
    if !report.passed() {
        for c in report.failures() {
            log::error!("validation {}: worst {} vs bound {} ({} violations) {}", c.name, c.worst, c.bound, c.violations, c.detail);
        }
        eprintln!("kolmo: {} fails coefficient validation; rerun with --no-validate to skip", path.display());
        return Ok(None);
    }
    Ok(Some(lp))
}

#[derive(Serialize)]
struct GammaEval {
    point: Point,
    pole: Point,
    value: f64,
    dxi: f64,
}

#[derive(Serialize)]
struct SolveSummary {
    tool: &'static str,
    version: &'static str,
    spec_hash: String,
    out: String,
    frames: usize,
    info: SolveInfo,
}

fn run_solve(problem: &Path, out: Option<PathBuf>, no_validate: bool) -> Outcome {
    let Some(lp) = load_validated(problem, no_validate)? else { return Ok(false) };
    let dir = out.unwrap_or_else(|| lp.output_dir());
    log::info!("solving {} (spec_hash {})", problem.display(), lp.spec_hash);
    let sol = lp.solve()?;
    let info = SolveInfo { steps: sol.steps, dt: sol.dt, stable_dt: sol.stable_dt, upwind_cells: sol.upwind_cells, warnings: sol.warnings };
    let manifest = io::write_trajectory(&dir, &sol.trajectory, &lp.spec_hash, Some(info.clone()))?;
    print_json(&SolveSummary {
        tool: TOOL,
        version: VERSION,
        spec_hash: lp.spec_hash.clone(),
        out: dir.display().to_string(),
        frames: manifest.files.len(),
        info,
    });
    Ok(true)
}

fn run_transform(problem: &Path, emit: &Path, no_validate: bool) -> Outcome {
    let Some(lp) = load_validated(problem, no_validate)? else { return Ok(false) };
    let manifest: TransformManifest = emit_transformed(&lp, emit)?;
    print_json(&manifest);
    Ok(true)
}

#[derive(Serialize)]
struct ProbeOutput {
    tool: &'static str,
    version: &'static str,
    spec_hash: String,
    config: ProbeConfig,
    report: ProbeReport,
}

fn run_probe(a: ProbeArgs) -> Outcome {
    let (traj, manifest) = io::read_trajectory(&a.traj)?;
    let (mut center, mut cfg) = (None, ProbeConfig::default());
    if let Some(path) = &a.problem {
        if let Some((c, pc)) = LoadedProblem::load(path)?.probe() {
            center = Some(c);
            cfg = pc;
        }
    }
    let center = a.center.or(center).ok_or_else(|| Failure("no probe center: pass --center or a problem with a [probe] section".into()))?;
    if let Some(Floats(r)) = a.radii {
        cfg.radii = r;
    }
    cfg.theta = a.theta.unwrap_or(cfg.theta);
    cfg.p = a.p.unwrap_or(cfg.p);
    cfg.alpha = a.alpha.unwrap_or(cfg.alpha);
    cfg.beta = a.beta.unwrap_or(cfg.beta);
    if let Some(Floats(h)) = a.h_levels {
        cfg.h_levels = h;
    }
    if let Some(r) = a.poincare_r {
        cfg.poincare = Some(PoincareConfig { theta: a.poincare_theta, r, h: a.poincare_h, z_lattice: 3 });
    }
    let report = probe(&traj, center, &cfg)?;
    let mut csv = format!("# {TOOL} {VERSION} spec_hash={}\nr,osc,ratio\n", manifest.spec_hash);
    for row in &report.rows {
        csv.push_str(&format!("{},{},{}\n", io::fmt_f64(row.r), io::fmt_f64(row.osc), io::fmt_f64(row.ratio)));
    }
    io::write_file(&a.csv.unwrap_or_else(|| a.traj.join("probe.csv")), &csv)?;
    let out = ProbeOutput { tool: TOOL, version: VERSION, spec_hash: manifest.spec_hash, config: cfg, report };
    if let Some(path) = &a.out {
        io::write_file(path, &io::to_json(&out))?;
    }
    print_json(&out);
    Ok(true)
}

#[derive(Serialize)]
struct PotentialOutput {
    tool: &'static str,
    version: &'static str,
    spec_hash: String,
    kernel: String,
    lattice: kolmo::potential::Lattice,
    gain: Gain,
}

fn run_potential(kernel: &str, input: &Path, p: f64, q: Option<f64>, out: Option<PathBuf>) -> Result<Result<bool, String>, Failure> {
    let Some(k) = kernel_by_name(kernel) else {
        return Ok(Err(format!("unknown kernel {kernel:?}; expected gamma or gamma-dx")));
    };
    let bytes = std::fs::read(input).map_err(|e| IoError::Fs { path: input.to_path_buf(), source: e })?;
    let spec_hash = kolmo::problem::content_hash(&bytes);
    let table = Table::read(input)?;
    let f = io::table_to_space_time(&table, input)?;
    let q = match q.or_else(|| target_exponent(p, k.alpha())) {
        Some(q) => q,
        None => return Err(Failure(format!("no admissible q for p = {p} and α = {}", k.alpha()))),
    };
    let plan = ConvolutionPlan::new(k.as_ref(), f.lattice)?;
    let gain = kolmo::potential::gain_ratio(&plan, &f, p, q)?;
    if let Some(path) = out {
        let g = plan.apply(&f)?;
        io::write_file(&path, &io::space_time_to_table(&g).to_csv(&spec_hash, kernel))?;
    }
    print_json(&PotentialOutput { tool: TOOL, version: VERSION, spec_hash, kernel: kernel.into(), lattice: f.lattice, gain });
    Ok(Ok(true))
}

fn run_verify(seed: u64, out: Option<PathBuf>) -> Outcome {
    let report = verify::run(seed);
    let text = io::to_json(&report);
    if let Some(path) = out {
        io::write_file(&path, &text)?;
    }
    print!("{text}");
    for s in report.suites.iter().filter(|s| !s.passed) {
        for c in s.checks.iter().filter(|c| !c.passed) {
            log::error!("{}::{} failed: {} > {}", s.name, c.name, c.value, c.tolerance);
        }
    }
    Ok(report.passed)
}

fn usage_error(message: &str) -> ExitCode {
    eprintln!("error: {message}\n\nFor more information, try '--help'.");
    ExitCode::from(2)
}

fn init(cli: &Cli) {
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().target(env_logger::Target::Stderr).init();
    if let Some(n) = std::env::var("KOLMO_THREADS").ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|n| *n > 0) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("KOLMO_THREADS ignored: {e}");
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    init(&cli);
    let result: Outcome = match cli.command {
        Command::Gamma { action: GammaAction::Eval { point, pole } } => {
            let pole = pole.unwrap_or(Point::ORIGIN);
            print_json(&GammaEval { point, pole, value: gamma(point, pole), dxi: gamma_dx(point, pole) });
            Ok(true)
        }
        Command::Gamma { action: GammaAction::Check } => {
            let suite = verify::run_suite("fundamental_solution", cli.seed).expect("suite exists");
            print_json(&suite);
            Ok(suite.passed)
        }
        Command::Solve { problem, out, no_validate } => run_solve(&problem, out, no_validate),
        Command::Transform { problem, emit, no_validate } => run_transform(&problem, &emit, no_validate),
        Command::Probe(a) => {
            if a.poincare_r.is_some_and(|r| r.is_nan() || r <= 0.0) {
                return usage_error("--poincare-r must be positive");
            }
            run_probe(a)
        }
        Command::Potential { kernel, input, p, q, out } => match run_potential(&kernel, &input, p, q, out) {
            Ok(Ok(ok)) => Ok(ok),
            Ok(Err(usage)) => return usage_error(&format!("--kernel: {usage}")),
            Err(e) => Err(e),
        },
        Command::Verify { out } => run_verify(cli.seed, out),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure(message)) => {
            eprintln!("kolmo: {message}");
            ExitCode::from(1)
        }
    }
}
