//! Command-line front end: CSV ingestion, argument validation and the
//! `fit`, `path`, `select`, `infer` and `simulate` commands.
//!
//! Exit codes: 0 on success, 1 on a runtime error, 2 on a usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::inference::{self, InferenceReport};
use crate::model::{self, Dataset, StandardizationInfo};
use crate::path::{self, FusionPath, GridSpacing, PathConfig, PathSummary, DEFAULT_LAMBDA_MIN_RATIO, DEFAULT_LAMBDA_STAR};
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::sim::{self, DgpSpec, Example, StudyConfig, StudyReport};
use crate::subgroup::{self, BicFactor, GroupingRule, SubgroupJson, SubgroupResult};

#[derive(Debug, Parser)]
#[command(name = "cfusion", version, about = "Subgroup analysis of treatment effects by concave pairwise fusion")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit at a single lambda, starting from the ridge-fusion initial value.
    Fit(FitArgs),
    /// Compute the warm-started solution path (fusiongram).
    Path(PathArgs),
    /// Select lambda by BIC and report the estimated subgroups.
    Select(SelectArgs),
    /// Select, then report standard errors, confidence intervals and the
    /// heterogeneity F-test.
    Infer(InferArgs),
    /// Run a simulation study on one of the built-in designs.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Response column.
    #[arg(long)]
    pub response: String,
    /// Treatment columns, comma separated; their effects vary by subject.
    #[arg(long, value_delimiter = ',', required = true)]
    pub treat: Vec<String>,
    /// Nuisance covariate columns, comma separated. An intercept is always added.
    #[arg(long, value_delimiter = ',')]
    pub covar: Vec<String>,
    /// Fit on the raw columns instead of rescaled ones.
    #[arg(long)]
    pub no_standardize: bool,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    /// Concavity parameter; defaults to 3.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// ADMM penalty parameter.
    #[arg(long, default_value_t = 1.0)]
    pub vartheta: f64,
    /// Residual tolerance; defaults to 1e-5 * sqrt(number of constraint entries).
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    /// Ridge-fusion tuning parameter of the initial value.
    #[arg(long, default_value_t = DEFAULT_LAMBDA_STAR)]
    pub lambda_star: f64,
    /// Fusion tolerance; defaults to 1e-3 * max(1, median ||beta_i||).
    #[arg(long)]
    pub eps_fuse: Option<f64>,
    #[arg(long, value_enum, default_value_t = GroupingArg::Delta)]
    pub grouping: GroupingArg,
    #[arg(long, value_enum, default_value_t = BicArg::Modified)]
    pub bic: BicArg,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[arg(long)]
    pub lambda_min: Option<f64>,
    /// Defaults to an automatic search for the smallest power of two that fuses all subjects.
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// lambda_min = ratio * lambda_max when --lambda-min is absent.
    #[arg(long, default_value_t = DEFAULT_LAMBDA_MIN_RATIO)]
    pub lambda_min_ratio: f64,
    #[arg(long, default_value_t = 100)]
    pub grid_size: usize,
    #[arg(long, value_enum, default_value_t = SpacingArg::Log)]
    pub grid_spacing: SpacingArg,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// JSON output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Print a human-readable table to standard output.
    #[arg(long)]
    pub pretty: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "mcp")]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub lambda: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct PathArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "mcp")]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Long-format CSV of every beta_i along the path.
    #[arg(long)]
    pub fusiongram: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = "mcp")]
    pub penalty: PenaltyKind,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Fusiongram CSV; defaults to `<out>.fusiongram.csv` when --out is given.
    #[arg(long)]
    pub fusiongram: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[command(flatten)]
    pub select: SelectArgs,
    /// Confidence level of the intervals.
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_parser = ["1", "2", "3"])]
    pub example: String,
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Magnitude of the group effects.
    #[arg(long, default_value_t = 2.0)]
    pub alpha_scale: f64,
    #[arg(long, value_delimiter = ',', default_value = "mcp,scad")]
    pub penalties: Vec<PenaltyKind>,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Per-replication CSV ledger.
    #[arg(long)]
    pub ledger: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GroupingArg {
    Delta,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BicArg {
    Modified,
    Classic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpacingArg {
    Log,
    Linear,
}

/// Parse and validate `argv` (program name first).
pub fn parse_config<I, T>(argv: I) -> std::result::Result<Cli, clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    validate(&cli).map_err(|msg| Cli::command().error(ErrorKind::ValueValidation, msg))?;
    Ok(cli)
}

fn validate(cli: &Cli) -> std::result::Result<(), String> {
    match &cli.command {
        Command::Fit(a) => {
            check_solver(&a.solver, &[a.penalty])?;
            positive("--lambda", a.lambda, true)
        }
        Command::Path(a) => check_solver(&a.solver, &[a.penalty]).and(check_grid(&a.grid)),
        Command::Select(a) => check_solver(&a.solver, &[a.penalty]).and(check_grid(&a.grid)),
        Command::Infer(a) => {
            check_solver(&a.select.solver, &[a.select.penalty])?;
            check_grid(&a.select.grid)?;
            check_level(a.level)
        }
        Command::Simulate(a) => {
            check_solver(&a.solver, &a.penalties)?;
            check_grid(&a.grid)?;
            check_level(a.level)?;
            if a.penalties.is_empty() {
                return Err("--penalties needs at least one penalty".into());
            }
            if a.reps == 0 || a.threads == 0 {
                return Err("--reps and --threads must be at least 1".into());
            }
            if a.n < 10 {
                return Err(format!("--n must be at least 10, got {}", a.n));
            }
            positive("--alpha-scale", a.alpha_scale, false)
        }
    }
}

fn positive(flag: &str, v: f64, allow_zero: bool) -> std::result::Result<(), String> {
    if v.is_finite() && (v > 0.0 || (allow_zero && v == 0.0)) {
        Ok(())
    } else {
        Err(format!("{flag} must be {}, got {v}", if allow_zero { "finite and >= 0" } else { "finite and > 0" }))
    }
}

fn check_level(level: f64) -> std::result::Result<(), String> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(format!("--level must lie in (0, 1), got {level}"))
    }
}

fn check_solver(s: &SolverArgs, kinds: &[PenaltyKind]) -> std::result::Result<(), String> {
    positive("--vartheta", s.vartheta, false)?;
    positive("--lambda-star", s.lambda_star, false)?;
    if let Some(t) = s.tol {
        positive("--tol", t, false)?;
    }
    if let Some(e) = s.eps_fuse {
        positive("--eps-fuse", e, true)?;
    }
    if s.max_iter == 0 {
        return Err("--max-iter must be at least 1".into());
    }
    for &kind in kinds {
        let spec = PenaltySpec {
            kind,
            lambda: 1.0,
            gamma: s.gamma.unwrap_or(kind.default_gamma()),
        };
        spec.check_compatible(s.vartheta).map_err(|e| format!("--gamma: {e}"))?;
    }
    Ok(())
}

fn check_grid(g: &GridArgs) -> std::result::Result<(), String> {
    if g.grid_size < 2 {
        return Err(format!("--grid-size must be at least 2, got {}", g.grid_size));
    }
    if let Some(v) = g.lambda_min {
        positive("--lambda-min", v, false)?;
    }
    if let Some(v) = g.lambda_max {
        positive("--lambda-max", v, false)?;
    }
    if let (Some(lo), Some(hi)) = (g.lambda_min, g.lambda_max) {
        if lo >= hi {
            return Err(format!("--lambda-min ({lo}) must be below --lambda-max ({hi})"));
        }
    }
    if !(g.lambda_min_ratio > 0.0 && g.lambda_min_ratio < 1.0) {
        return Err(format!("--lambda-min-ratio must lie in (0, 1), got {}", g.lambda_min_ratio));
    }
    Ok(())
}

/// Parse, run and map the outcome to an exit code. Diagnostics go to stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match parse_config(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Path(a) => cmd_path(a),
        Command::Select(a) => cmd_select(a).map(|_| ()),
        Command::Infer(a) => cmd_infer(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}

/// Read the named columns of a CSV file into a dataset with an intercept.
pub fn load_csv(path: &Path, response: &str, treat: &[String], covar: &[String]) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(io::BufReader::new(file));
    let headers = reader.headers()?.clone();
    let index = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("{}: no column named {name:?}", path.display())))
    };
    let y_col = index(response)?;
    let x_cols = treat.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;
    let z_cols = covar.iter().map(|c| index(c)).collect::<Result<Vec<_>>>()?;

    let (mut y, mut x, mut z) = (Vec::new(), Vec::new(), Vec::new());
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("").trim();
            raw.parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!(
                    "{}: data row {}, column {:?}: cannot parse {raw:?} as a number",
                    path.display(),
                    row + 1,
                    &headers[col]
                ))
            })
        };
        y.push(field(y_col)?);
        for &c in &x_cols {
            x.push(field(c)?);
        }
        for &c in &z_cols {
            z.push(field(c)?);
        }
    }
    let n = y.len();
    let x = DMatrix::from_row_slice(n, x_cols.len(), &x);
    let z = DMatrix::from_row_slice(n, z_cols.len(), &z);
    Dataset::with_intercept(DVector::from_vec(y), &z, x)
}

/// The dataset as read, the one the solver sees, and the map between them.
struct Prepared {
    raw: Dataset,
    fit: Dataset,
    info: StandardizationInfo,
}

fn prepare(a: &DataArgs) -> Result<Prepared> {
    let raw = load_csv(&a.data, &a.response, &a.treat, &a.covar)?;
    let (fit, info) = if a.no_standardize {
        let info = StandardizationInfo::identity(raw.q(), raw.p());
        (raw.clone(), info)
    } else {
        model::standardize(&raw)?
    };
    Ok(Prepared { raw, fit, info })
}

fn path_config(kind: PenaltyKind, s: &SolverArgs, g: Option<&GridArgs>) -> PathConfig {
    let mut cfg = PathConfig {
        gamma: s.gamma.unwrap_or(kind.default_gamma()),
        vartheta: s.vartheta,
        tol: s.tol,
        max_iter: s.max_iter,
        lambda_star: s.lambda_star,
        eps_fuse: s.eps_fuse,
        grouping: match s.grouping {
            GroupingArg::Delta => GroupingRule::Delta,
            GroupingArg::Beta => GroupingRule::Beta,
        },
        bic: match s.bic {
            BicArg::Modified => BicFactor::Modified,
            BicArg::Classic => BicFactor::Classic,
        },
        ..PathConfig::with_penalty(kind)
    };
    if let Some(g) = g {
        cfg.lambda_min = g.lambda_min;
        cfg.lambda_max = g.lambda_max;
        cfg.lambda_min_ratio = g.lambda_min_ratio;
        cfg.grid_size = g.grid_size;
        cfg.grid_spacing = match g.grid_spacing {
            SpacingArg::Log => GridSpacing::Log,
            SpacingArg::Linear => GridSpacing::Linear,
        };
    }
    cfg
}

/// Bring every point of a path fitted on rescaled data back to the raw scale.
fn path_to_raw(path: &FusionPath, info: &StandardizationInfo) -> FusionPath {
    let points = path
        .points
        .iter()
        .map(|pt| {
            let (eta_hat, beta_hat) = model::unstandardize(&pt.eta_hat, &pt.beta_hat, info);
            path::PathPoint {
                eta_hat,
                beta_hat,
                ..pt.clone()
            }
        })
        .collect();
    FusionPath { points }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn open_out(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// JSON to `--out`, or to stdout unless a table was requested.
fn emit<T: Serialize>(value: &T, output: &OutputArgs, table: impl FnOnce() -> String) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    if let Some(path) = &output.out {
        let mut w = open_out(path)?;
        writeln!(w, "{json}").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    }
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    let text = if output.pretty {
        table()
    } else if output.out.is_none() {
        format!("{json}\n")
    } else {
        return Ok(());
    };
    lock.write_all(text.as_bytes()).map_err(|e| Error::io("<stdout>", e))
}

#[derive(Debug, Serialize)]
struct FitJson {
    lambda: f64,
    penalty: PenaltyKind,
    k_hat: usize,
    groups: Vec<Vec<usize>>,
    alpha_hat: Vec<Vec<f64>>,
    eta_hat: Vec<f64>,
    beta_hat: Vec<Vec<f64>>,
    bic: f64,
    iterations: usize,
    converged: bool,
    primal_norm: f64,
    dual_norm: f64,
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let prep = prepare(&a.data)?;
    let cfg = path_config(a.penalty, &a.solver, None);
    let pt = path::fit_single(&prep.fit, &cfg, a.lambda)?;
    let (eta, beta) = model::unstandardize(&pt.eta_hat, &pt.beta_hat, &prep.info);
    let alpha = subgroup::group_estimates(&beta, &pt.partition);
    let out = FitJson {
        lambda: pt.lambda,
        penalty: a.penalty,
        k_hat: pt.k_hat,
        groups: pt.partition.blocks().to_vec(),
        alpha_hat: rows(&alpha),
        eta_hat: eta.iter().copied().collect(),
        beta_hat: rows(&beta),
        bic: pt.bic,
        iterations: pt.iterations,
        converged: pt.converged,
        primal_norm: pt.primal_norm,
        dual_norm: pt.dual_norm,
    };
    if !pt.converged {
        eprintln!("warning: ADMM stopped after {} iterations without meeting the tolerance", pt.iterations);
    }
    emit(&out, &a.output, || {
        let mut s = format!(
            "lambda {}  penalty {}  K {}  BIC {:.6}  iterations {}  converged {}\n",
            out.lambda, out.penalty, out.k_hat, out.bic, out.iterations, out.converged
        );
        s += &group_table(&out.groups, &out.alpha_hat);
        s += &eta_line(&out.eta_hat);
        s
    })
}

fn compute(prep: &Prepared, kind: PenaltyKind, solver: &SolverArgs, grid: &GridArgs) -> Result<FusionPath> {
    let cfg = path_config(kind, solver, Some(grid));
    let path = path::compute_path(&prep.fit, &cfg)?;
    let unconverged = path.points.iter().filter(|pt| !pt.converged).count();
    if unconverged > 0 {
        eprintln!("warning: {unconverged} of {} path points did not converge", path.points.len());
    }
    Ok(path_to_raw(&path, &prep.info))
}

fn write_fusiongram_csv(path: &FusionPath, file: &Path) -> Result<()> {
    let mut w = open_out(file)?;
    path::export_fusiongram(path, &mut w, io::sink())?;
    w.flush().map_err(|e| Error::io(file, e))
}

fn cmd_path(a: &PathArgs) -> Result<()> {
    let prep = prepare(&a.data)?;
    let path = compute(&prep, a.penalty, &a.solver, &a.grid)?;
    if let Some(file) = &a.fusiongram {
        write_fusiongram_csv(&path, file)?;
    }
    let summary = PathSummary::from(&path);
    emit(&summary, &a.output, || {
        let mut s = format!("{:>14} {:>5} {:>14} {:>10} {:>9}\n", "lambda", "K", "BIC", "iters", "converged");
        for pt in &summary.points {
            s += &format!("{:>14.6} {:>5} {:>14.6} {:>10} {:>9}\n", pt.lambda, pt.k_hat, pt.bic, pt.iterations, pt.converged);
        }
        s
    })
}

fn sidecar(explicit: Option<&PathBuf>, out: Option<&PathBuf>) -> Option<PathBuf> {
    explicit.cloned().or_else(|| {
        out.map(|o| {
            let mut name = o.file_stem().unwrap_or_default().to_os_string();
            name.push(".fusiongram.csv");
            o.with_file_name(name)
        })
    })
}

/// Path plus BIC selection, on the raw scale.
fn select(a: &SelectArgs) -> Result<(Prepared, SubgroupResult)> {
    let prep = prepare(&a.data)?;
    let path = compute(&prep, a.penalty, &a.solver, &a.grid)?;
    if let Some(file) = sidecar(a.fusiongram.as_ref(), a.output.out.as_ref()) {
        write_fusiongram_csv(&path, &file)?;
    }
    let result = subgroup::select_model(&path)?;
    Ok((prep, result))
}

fn cmd_select(a: &SelectArgs) -> Result<SubgroupJson> {
    let (_, result) = select(a)?;
    let out = result.to_json();
    emit(&out, &a.output, || subgroup_table(&out))?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct InferJson {
    subgroup: SubgroupJson,
    inference: InferenceReport,
}

fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (prep, result) = select(&a.select)?;
    let report = inference::infer(&prep.raw, &result, a.level, None)?;
    let out = InferJson {
        subgroup: result.to_json(),
        inference: report,
    };
    emit(&out, &a.select.output, || {
        let r = &out.inference;
        let p = prep.raw.p();
        let pct = 100.0 * r.level;
        let mut s = subgroup_table(&out.subgroup);
        s += &format!("sigma2_hat {:.6}\n", r.sigma2_hat);
        s += &format!("{:>10} {:>12} {:>10} {:>12} {:>12}\n", "parameter", "estimate", "ASD", "lower", "upper");
        for (j, ci) in r.ci_alpha.iter().enumerate() {
            let name = format!("alpha[{},{}]", j / p, j % p);
            s += &format!("{name:>10} {:>12.6} {:>10.6} {:>12.6} {:>12.6}\n", r.alpha_hat[j], r.asd_alpha[j], ci.lower, ci.upper);
        }
        for (l, ci) in r.ci_eta.iter().enumerate() {
            let name = format!("eta[{l}]");
            s += &format!("{name:>10} {:>12.6} {:>10.6} {:>12.6} {:>12.6}\n", r.eta_hat[l], r.asd_eta[l], ci.lower, ci.upper);
        }
        s += &format!("({pct}% intervals)\n");
        match (r.f_stat, r.dof, r.p_value) {
            (Some(f), Some((d1, d2)), Some(pv)) => s += &format!("F-test, two largest groups: F = {f:.6} on ({d1}, {d2}) df, p = {pv:.6e}\n"),
            _ => s += "single group: no heterogeneity test\n",
        }
        s
    })
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let example: Example = a.example.parse()?;
    let spec = DgpSpec {
        alpha_scale: a.alpha_scale,
        ..DgpSpec::new(example, a.n, a.seed)
    };
    let cfg = StudyConfig {
        path: path_config(PenaltyKind::Mcp, &a.solver, Some(&a.grid)),
        gamma: a.solver.gamma,
        level: a.level,
        threads: a.threads,
        ..StudyConfig::new(a.reps, a.penalties.clone())
    };
    let report = sim::run_study(&spec, &cfg)?;
    if let Some(file) = &a.ledger {
        let mut w = open_out(file)?;
        sim::write_ledger(&report, &mut w)?;
        w.flush().map_err(|e| Error::io(file, e))?;
    }
    for s in report.summaries.iter().filter(|s| s.failures > 0) {
        eprintln!("warning: {} of {} replications failed for {}", s.failures, s.reps, s.penalty);
    }
    emit(&report, &a.output, || study_table(&report))
}

fn group_table(groups: &[Vec<usize>], alpha: &[Vec<f64>]) -> String {
    let mut s = format!("{:>6} {:>6}  alpha\n", "group", "size");
    for (k, (g, a)) in groups.iter().zip(alpha).enumerate() {
        let vals: Vec<String> = a.iter().map(|v| format!("{v:.6}")).collect();
        s += &format!("{k:>6} {:>6}  {}\n", g.len(), vals.join(" "));
    }
    s
}

fn eta_line(eta: &[f64]) -> String {
    let vals: Vec<String> = eta.iter().map(|v| format!("{v:.6}")).collect();
    format!("eta  {}\n", vals.join(" "))
}

fn subgroup_table(r: &SubgroupJson) -> String {
    let mut s = format!("selected lambda {}  K {}  BIC {:.6}\n", r.lambda, r.k_hat, r.bic);
    s += &group_table(&r.groups, &r.alpha_hat);
    s += &eta_line(&r.eta_hat);
    s
}

fn study_table(r: &StudyReport) -> String {
    let mut s = format!("example {:?}, n = {}, {} replications, seed {}\n", r.dgp.example, r.dgp.n, r.reps, r.dgp.seed);
    s += &format!(
        "{:>8} {:>8} {:>8} {:>8} {:>8} {:>10} {:>12} {:>12}\n",
        "penalty", "mean K", "median", "sd", "per", "eta MSE", "mean p", "median p"
    );
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3e}"));
    for m in &r.summaries {
        s += &format!(
            "{:>8} {:>8.3} {:>8.1} {:>8.3} {:>8.3} {:>10.5} {:>12} {:>12}\n",
            m.penalty.to_string(),
            m.k_hat_mean,
            m.k_hat_median,
            m.k_hat_sd,
            m.pct_correct_k,
            m.eta_mse_mean,
            opt(m.p_value_mean),
            opt(m.p_value_median)
        );
    }
    s += &format!("{:>8} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10}\n", "penalty", "group", "coord", "true", "mean", "ASD", "ESD");
    let stats = r
        .summaries
        .iter()
        .flat_map(|m| m.alpha_stats.iter().map(move |a| (m.penalty.to_string(), a)))
        .chain(r.oracle.alpha_stats.iter().map(|a| ("oracle".to_string(), a)));
    for (name, a) in stats {
        s += &format!(
            "{name:>8} {:>6} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>10.4}\n",
            a.group, a.coordinate, a.true_value, a.mean, a.asd_mean, a.esd
        );
    }
    s
}
