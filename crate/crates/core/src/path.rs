//! Ridge-fusion start, lambda grids and warm-started solution paths.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::{self, AdmmState, AdmmWorkspace, StopRule};
use crate::error::{Error, Result};
use crate::inference::GroupDesign;
use crate::model::Dataset;
use crate::penalty::{PenaltyKind, PenaltySpec};
use crate::subgroup::{self, BicFactor, GroupingRule, Partition};

pub const DEFAULT_LAMBDA_STAR: f64 = 0.001;
pub const DEFAULT_LAMBDA_MIN_RATIO: f64 = 0.4;
const LAMBDA_MAX_CAP: f64 = 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridSpacing {
    #[default]
    Log,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    /// `None` means: `lambda_max * lambda_min_ratio`.
    pub lambda_min: Option<f64>,
    pub lambda_min_ratio: f64,
    /// `None` means: doubling search for the smallest `2^j` that fuses everything.
    pub lambda_max: Option<f64>,
    pub grid_size: usize,
    pub grid_spacing: GridSpacing,
    pub penalty: PenaltyKind,
    pub gamma: f64,
    /// ADMM penalty parameter.
    pub vartheta: f64,
    /// `None` selects [`admm::default_tolerance`].
    pub tol: Option<f64>,
    pub max_iter: usize,
    pub lambda_star: f64,
    pub grouping: GroupingRule,
    /// `None` selects [`subgroup::default_eps_fuse`] per point.
    pub eps_fuse: Option<f64>,
    pub bic: BicFactor,
}

impl Default for PathConfig {
    fn default() -> Self {
        PathConfig {
            lambda_min: None,
            lambda_min_ratio: DEFAULT_LAMBDA_MIN_RATIO,
            lambda_max: None,
            grid_size: 100,
            grid_spacing: GridSpacing::Log,
            penalty: PenaltyKind::Mcp,
            gamma: 3.0,
            vartheta: 1.0,
            tol: None,
            max_iter: 5000,
            lambda_star: DEFAULT_LAMBDA_STAR,
            grouping: GroupingRule::Delta,
            eps_fuse: None,
            bic: BicFactor::Modified,
        }
    }
}

impl PathConfig {
    pub fn with_penalty(kind: PenaltyKind) -> Self {
        PathConfig {
            penalty: kind,
            gamma: kind.default_gamma(),
            ..Self::default()
        }
    }

    pub fn spec(&self, lambda: f64) -> PenaltySpec {
        PenaltySpec::new(self.penalty, lambda, self.gamma)
    }

    fn stop_rule(&self, n: usize, p: usize) -> StopRule {
        StopRule {
            tol: self.tol.unwrap_or_else(|| admm::default_tolerance(n, p)),
            max_iter: self.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathPoint {
    pub lambda: f64,
    pub eta_hat: DVector<f64>,
    pub beta_hat: DMatrix<f64>,
    pub k_hat: usize,
    pub partition: Partition,
    /// `-inf` for a perfect fit.
    pub bic: f64,
    pub iterations: usize,
    pub converged: bool,
    pub primal_norm: f64,
    pub dual_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FusionPath {
    pub points: Vec<PathPoint>,
}

impl FusionPath {
    /// Smallest grid lambda at which all subjects are in one group.
    pub fn first_full_fusion(&self) -> Option<f64> {
        self.points.iter().find(|pt| pt.k_hat == 1).map(|pt| pt.lambda)
    }
}

/// Ridge-fusion pilot fit, binned into `floor(sqrt n)` groups and refitted
/// by least squares; the refit seeds `delta` and `upsilon = 0`.
pub fn ridge_initialize(d: &Dataset, lambda_star: f64) -> Result<AdmmState> {
    let beta_r = ridge_fusion(d, lambda_star)?;
    let n = d.n();
    let medians: Vec<f64> = (0..n).map(|i| median(beta_r.row(i).iter().copied().collect())).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| medians[a].total_cmp(&medians[b]).then(a.cmp(&b)));
    let k_star = (n as f64).sqrt().floor() as usize;
    let mut labels = vec![0; n];
    for (rank, &i) in order.iter().enumerate() {
        labels[i] = rank * k_star / n;
    }
    let part = Partition::from_labels(&labels);
    let gd = GroupDesign::new(d, &part)?;
    let (eta, alpha) = gd.least_squares(d.y())?;
    let labels = part.labels();
    let beta = DMatrix::from_fn(n, d.p(), |i, c| alpha[(labels[i], c)]);
    Ok(AdmmState::from_beta(eta, beta))
}

/// `beta_R = (X'Q_Z X + lambda* A'A)^-1 X'Q_Z y`.
pub fn ridge_fusion(d: &Dataset, lambda_star: f64) -> Result<DMatrix<f64>> {
    if !(lambda_star > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda_star must be > 0, got {lambda_star}")));
    }
    let ws = AdmmWorkspace::new(d, lambda_star)?;
    Ok(ws.solve_system(ws.xqy()))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len();
    if m % 2 == 1 {
        v[m / 2]
    } else {
        0.5 * (v[m / 2 - 1] + v[m / 2])
    }
}

pub fn make_lambda_grid(cfg: &PathConfig) -> Result<Vec<f64>> {
    let (Some(lo), Some(hi)) = (cfg.lambda_min, cfg.lambda_max) else {
        return Err(Error::InvalidRange("lambda_min and lambda_max must both be set".into()));
    };
    lambda_grid(lo, hi, cfg.grid_size, cfg.grid_spacing)
}

pub fn lambda_grid(lo: f64, hi: f64, size: usize, spacing: GridSpacing) -> Result<Vec<f64>> {
    if size < 2 {
        return Err(Error::InvalidRange(format!("grid size {size} < 2")));
    }
    if !(lo > 0.0 && lo < hi && hi.is_finite()) {
        return Err(Error::InvalidRange(format!("need 0 < lambda_min < lambda_max, got [{lo}, {hi}]")));
    }
    let last = (size - 1) as f64;
    let mut grid: Vec<f64> = (0..size)
        .map(|k| {
            let t = k as f64 / last;
            match spacing {
                GridSpacing::Linear => lo + (hi - lo) * t,
                GridSpacing::Log => (lo.ln() + (hi.ln() - lo.ln()) * t).exp(),
            }
        })
        .collect();
    grid[0] = lo;
    grid[size - 1] = hi;
    Ok(grid)
}

/// Solve at one lambda, folding a non-converged run into a flagged state.
fn solve_flagged(ws: &AdmmWorkspace, spec: &PenaltySpec, init: AdmmState, stop: StopRule) -> Result<AdmmState> {
    match admm::solve(ws, spec, init, stop) {
        Ok(state) => Ok(state),
        Err(Error::NotConverged(state)) => Ok(*state),
        Err(e) => Err(e),
    }
}

fn partition_of(state: &AdmmState, cfg: &PathConfig) -> Result<Partition> {
    let eps = cfg.eps_fuse.unwrap_or_else(|| subgroup::default_eps_fuse(&state.beta));
    match cfg.grouping {
        GroupingRule::Delta => subgroup::extract_groups(&state.beta, &state.delta, eps),
        GroupingRule::Beta => Ok(subgroup::extract_groups_by_beta(&state.beta, eps)),
    }
}

fn make_point(d: &Dataset, lambda: f64, state: &AdmmState, cfg: &PathConfig) -> Result<PathPoint> {
    let partition = partition_of(state, cfg)?;
    let k_hat = partition.k();
    let bic = match subgroup::bic(d, &state.eta, &state.beta, k_hat, cfg.bic) {
        Ok(v) => v,
        Err(Error::PerfectFit) => f64::NEG_INFINITY,
        Err(e) => return Err(e),
    };
    Ok(PathPoint {
        lambda,
        eta_hat: state.eta.clone(),
        beta_hat: state.beta.clone(),
        k_hat,
        partition,
        bic,
        iterations: state.iter,
        converged: state.converged,
        primal_norm: state.primal_norm,
        dual_norm: state.dual_norm,
    })
}

/// Solve a single lambda from the ridge-fusion start.
pub fn fit_single(d: &Dataset, cfg: &PathConfig, lambda: f64) -> Result<PathPoint> {
    let spec = cfg.spec(lambda);
    spec.check_compatible(cfg.vartheta)?;
    let ws = AdmmWorkspace::new(d, cfg.vartheta)?;
    let init = ridge_initialize(d, cfg.lambda_star)?;
    let state = solve_flagged(&ws, &spec, init, cfg.stop_rule(d.n(), d.p()))?;
    make_point(d, lambda, &state, cfg)
}

fn find_lambda_max(d: &Dataset, ws: &AdmmWorkspace, init: &AdmmState, cfg: &PathConfig) -> Result<f64> {
    let stop = cfg.stop_rule(d.n(), d.p());
    let mut lambda = 1.0;
    let mut state = init.clone();
    while lambda < LAMBDA_MAX_CAP {
        let spec = cfg.spec(lambda);
        spec.check_compatible(cfg.vartheta)?;
        state = solve_flagged(ws, &spec, state.warm_start(), stop)?;
        if partition_of(&state, cfg)?.k() == 1 {
            return Ok(lambda);
        }
        lambda *= 2.0;
    }
    Ok(LAMBDA_MAX_CAP)
}

fn trace_grid(d: &Dataset, ws: &AdmmWorkspace, init: &AdmmState, cfg: &PathConfig, lo: f64, hi: f64) -> Result<FusionPath> {
    let grid = lambda_grid(lo, hi, cfg.grid_size, cfg.grid_spacing)?;
    let stop = cfg.stop_rule(d.n(), d.p());
    let mut state = init.clone();
    let mut points = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        state = solve_flagged(ws, &cfg.spec(lambda), state.warm_start(), stop)?;
        points.push(make_point(d, lambda, &state, cfg)?);
    }
    Ok(FusionPath { points })
}

/// Warm-started path over the configured grid, from the ridge-fusion start
/// at the smallest lambda.
///
/// Without an explicit `lambda_max`, the upper end starts at the smallest
/// power of two that fuses everything from the ridge start and keeps doubling
/// until the warm-started path itself ends in a single group.
pub fn compute_path(d: &Dataset, cfg: &PathConfig) -> Result<FusionPath> {
    cfg.spec(1.0).check_compatible(cfg.vartheta)?;
    if cfg.grid_size < 2 {
        return Err(Error::InvalidRange(format!("grid size {} < 2", cfg.grid_size)));
    }
    let ws = AdmmWorkspace::new(d, cfg.vartheta)?;
    let init = ridge_initialize(d, cfg.lambda_star)?;
    let lo_for = |hi: f64| cfg.lambda_min.unwrap_or(hi * cfg.lambda_min_ratio);
    match cfg.lambda_max {
        Some(hi) => trace_grid(d, &ws, &init, cfg, lo_for(hi), hi),
        None => {
            let mut hi = find_lambda_max(d, &ws, &init, cfg)?;
            let lo = lo_for(hi);
            loop {
                let path = trace_grid(d, &ws, &init, cfg, lo, hi)?;
                if hi >= LAMBDA_MAX_CAP || path.points.last().is_some_and(|pt| pt.k_hat == 1) {
                    return Ok(path);
                }
                hi *= 2.0;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSummary {
    pub lambda: f64,
    pub k_hat: usize,
    pub bic: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSummary {
    pub points: Vec<PointSummary>,
}

impl From<&FusionPath> for PathSummary {
    fn from(path: &FusionPath) -> Self {
        PathSummary {
            points: path
                .points
                .iter()
                .map(|pt| PointSummary {
                    lambda: pt.lambda,
                    k_hat: pt.k_hat,
                    bic: pt.bic,
                    converged: pt.converged,
                    iterations: pt.iterations,
                })
                .collect(),
        }
    }
}

/// Long-format CSV `lambda,subject,coordinate,beta_value` and the per-point
/// JSON summary. Subjects and coordinates are 0-based.
pub fn export_fusiongram(path: &FusionPath, csv_sink: impl Write, json_sink: impl Write) -> Result<()> {
    if path.points.is_empty() {
        return Err(Error::EmptyPath);
    }
    let mut w = csv::Writer::from_writer(csv_sink);
    w.write_record(["lambda", "subject", "coordinate", "beta_value"])?;
    for pt in &path.points {
        let lambda = pt.lambda.to_string();
        for i in 0..pt.beta_hat.nrows() {
            for c in 0..pt.beta_hat.ncols() {
                w.write_record([lambda.as_str(), &i.to_string(), &c.to_string(), &pt.beta_hat[(i, c)].to_string()])?;
            }
        }
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    serde_json::to_writer(json_sink, &PathSummary::from(path))?;
    Ok(())
}

/// [`export_fusiongram`] to files.
pub fn write_fusiongram(path: &FusionPath, csv_path: &std::path::Path, json_path: &std::path::Path) -> Result<()> {
    let csv_file = std::fs::File::create(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let json_file = std::fs::File::create(json_path).map_err(|e| Error::io(json_path, e))?;
    export_fusiongram(path, std::io::BufWriter::new(csv_file), std::io::BufWriter::new(json_file))
}
