//! ADMM for the concave pairwise fusion problem.
//!
//! The fusion constraint `beta_i - beta_j = delta_ij` is split off and handled
//! with the usual scaled augmented Lagrangian. Each iteration performs
//!
//! 1. a quadratic `beta` step solving `(X'Q_Z X + rho A'A) beta = X'Q_Z y + A'(rho delta - upsilon)`,
//! 2. the exact least-squares `eta` step on the partial residual,
//! 3. a groupwise proximal `delta` step, independently for every pair,
//! 4. the dual ascent `upsilon += rho (A beta - delta)`.
//!
//! `A` is the pairwise-difference operator `D (x) I_p`. It is never formed:
//! products with `A` and `A'` are pair loops, and the system matrix is
//! factored through the identity `A'A = n I - (1_n (x) I_p)(1_n (x) I_p)'`,
//! which makes it block diagonal minus a low-rank term.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::penalty::{PenaltyKind, PenaltySpec};

/// Bijection between ordered pairs `i < j` and dense indices.
/// Pairs are enumerated row by row: (0,1), (0,2), ..., (0,n-1), (1,2), ...
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairIndex {
    n: usize,
}

impl PairIndex {
    pub fn new(n: usize) -> Self {
        PairIndex { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.n * self.n.saturating_sub(1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Dense index of the pair `(i, j)`, `i < j < n`.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < j && j < self.n);
        i * (2 * self.n - i - 1) / 2 + (j - i - 1)
    }

    /// Inverse of [`index`](Self::index).
    pub fn pair(&self, mut k: usize) -> (usize, usize) {
        debug_assert!(k < self.len());
        let mut i = 0;
        loop {
            let row = self.n - i - 1;
            if k < row {
                return (i, i + 1 + k);
            }
            k -= row;
            i += 1;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
    }

    /// `A beta`: row `k = (i, j)` holds `beta_i - beta_j`.
    pub fn apply_a(&self, beta: &DMatrix<f64>) -> DMatrix<f64> {
        let p = beta.ncols();
        let mut out = DMatrix::zeros(self.len(), p);
        for c in 0..p {
            let b = beta.column(c);
            let mut k = 0;
            for i in 0..self.n {
                for j in i + 1..self.n {
                    out[(k, c)] = b[i] - b[j];
                    k += 1;
                }
            }
        }
        out
    }

    /// `A' w`: each pair row is added to subject `i` and subtracted from subject `j`.
    pub fn apply_at(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let p = w.ncols();
        let mut out = DMatrix::zeros(self.n, p);
        for c in 0..p {
            let src = w.column(c);
            let mut dst = out.column_mut(c);
            let mut k = 0;
            for i in 0..self.n {
                for j in i + 1..self.n {
                    dst[i] += src[k];
                    dst[j] -= src[k];
                    k += 1;
                }
            }
        }
        out
    }

    /// `A'A beta = n beta_i - sum_j beta_j`, computed in O(np).
    pub fn apply_ata(&self, beta: &DMatrix<f64>) -> DMatrix<f64> {
        let nf = self.n as f64;
        let mut out = beta * nf;
        for c in 0..beta.ncols() {
            let total = beta.column(c).sum();
            out.column_mut(c).add_scalar_mut(-total);
        }
        out
    }
}

/// Factored form of `X'Q_Z X + w A'A` for a fusion weight `w > 0`.
///
/// Writing `beta` subject-major (`beta_1', ..., beta_n'`), the matrix equals
/// `B - V S V'` with `B = diag(x_i x_i' + w n I_p)`, `V = [X'Z, 1_n (x) I_p]`
/// and `S = diag((Z'Z)^-1, w I_p)`. Woodbury reduces every solve to `n`
/// p x p block solves plus one `(q+p)`-dimensional Cholesky solve.
#[derive(Debug, Clone)]
pub(crate) struct FusionSystem {
    n: usize,
    p: usize,
    /// Inverses of the diagonal blocks, subject-major, each p x p column-major.
    block_inv: Vec<f64>,
    /// `B^-1 V`, np x r.
    binv_v: DMatrix<f64>,
    /// `V`, np x r.
    v: DMatrix<f64>,
    capacitance: Cholesky<f64, Dyn>,
}

impl FusionSystem {
    pub(crate) fn new(x: &DMatrix<f64>, z: Option<(&DMatrix<f64>, &DMatrix<f64>)>, weight: f64) -> Result<Self> {
        let (n, p) = (x.nrows(), x.ncols());
        let np = n * p;
        let q = z.map_or(0, |(z, _)| z.ncols());
        let r = q + p;

        let mut block_inv = Vec::with_capacity(n * p * p);
        for i in 0..n {
            let xi = x.row(i).transpose();
            let mut blk = &xi * xi.transpose();
            for c in 0..p {
                blk[(c, c)] += weight * n as f64;
            }
            let inv = blk
                .try_inverse()
                .ok_or_else(|| Error::SingularSystem(format!("diagonal block {i} is singular")))?;
            block_inv.extend_from_slice(inv.as_slice());
        }

        let mut v = DMatrix::zeros(np, r);
        if let Some((z, _)) = z {
            for i in 0..n {
                for c in 0..p {
                    for l in 0..q {
                        v[(i * p + c, l)] = x[(i, c)] * z[(i, l)];
                    }
                }
            }
        }
        for i in 0..n {
            for c in 0..p {
                v[(i * p + c, q + c)] = 1.0;
            }
        }

        let mut binv_v = DMatrix::zeros(np, r);
        for col in 0..r {
            let src: Vec<f64> = v.column(col).iter().copied().collect();
            let dst = apply_blocks(&block_inv, n, p, &src);
            binv_v.set_column(col, &DVector::from_vec(dst));
        }

        // capacitance = S^-1 - V' B^-1 V
        let mut cap = -(v.transpose() * &binv_v);
        if let Some((_, ztz)) = z {
            for a in 0..q {
                for b in 0..q {
                    cap[(a, b)] += ztz[(a, b)];
                }
            }
        }
        for c in 0..p {
            cap[(q + c, q + c)] += 1.0 / weight;
        }
        let cap = 0.5 * (&cap + cap.transpose());
        let capacitance = Cholesky::new(cap)
            .ok_or_else(|| Error::SingularSystem("fusion system is not positive definite".into()))?;

        Ok(FusionSystem {
            n,
            p,
            block_inv,
            binv_v,
            v,
            capacitance,
        })
    }

    /// Solve for a right-hand side given as an n x p matrix (row i belongs to subject i).
    pub(crate) fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let (n, p) = (self.n, self.p);
        let mut b = vec![0.0; n * p];
        for i in 0..n {
            for c in 0..p {
                b[i * p + c] = rhs[(i, c)];
            }
        }
        let u = apply_blocks(&self.block_inv, n, p, &b);
        let u = DVector::from_vec(u);
        let t = self.v.tr_mul(&u);
        let s = self.capacitance.solve(&t);
        let w = u + &self.binv_v * s;
        DMatrix::from_fn(n, p, |i, c| w[i * p + c])
    }
}

fn apply_blocks(block_inv: &[f64], n: usize, p: usize, b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        let blk = &block_inv[i * p * p..(i + 1) * p * p];
        for r in 0..p {
            let mut acc = 0.0;
            for c in 0..p {
                acc += blk[c * p + r] * b[i * p + c];
            }
            out[i * p + r] = acc;
        }
    }
    out
}

/// Reusable per-(dataset, rho) state: the `Z` projection and the factored
/// `beta` system. Immutable; one workspace serves every lambda on a path.
#[derive(Debug, Clone)]
pub struct AdmmWorkspace {
    x: DMatrix<f64>,
    z: Option<DMatrix<f64>>,
    ztz: Option<Cholesky<f64, Dyn>>,
    system: FusionSystem,
    /// `X'Q_Z y` arranged n x p.
    xqy: DMatrix<f64>,
    y: DVector<f64>,
    rho: f64,
    pairs: PairIndex,
}

impl AdmmWorkspace {
    /// Workspace for a validated dataset.
    pub fn new(d: &Dataset, rho: f64) -> Result<Self> {
        Self::build(d.x(), Some(d.z()), d.y(), rho)
    }

    /// Workspace for the model without nuisance covariates (`Q_Z = I`).
    pub fn without_nuisance(x: &DMatrix<f64>, y: &DVector<f64>, rho: f64) -> Result<Self> {
        Self::build(x, None, y, rho)
    }

    fn build(x: &DMatrix<f64>, z: Option<&DMatrix<f64>>, y: &DVector<f64>, rho: f64) -> Result<Self> {
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidConfig(format!("rho must be finite and > 0, got {rho}")));
        }
        let n = x.nrows();
        if y.len() != n || z.is_some_and(|z| z.nrows() != n) {
            return Err(Error::ShapeMismatch("design row counts differ".into()));
        }
        let (ztz, ztz_mat) = match z {
            Some(z) => {
                let m = z.tr_mul(z);
                (Some(Cholesky::new(m.clone()).ok_or(Error::SingularZ)?), Some(m))
            }
            None => (None, None),
        };
        let system = FusionSystem::new(x, z.zip(ztz_mat.as_ref()), rho)?;
        let mut ws = AdmmWorkspace {
            x: x.clone(),
            z: z.cloned(),
            ztz,
            system,
            xqy: DMatrix::zeros(n, x.ncols()),
            y: y.clone(),
            rho,
            pairs: PairIndex::new(n),
        };
        let qy = ws.project_out_z(y);
        ws.xqy = DMatrix::from_fn(n, x.ncols(), |i, c| x[(i, c)] * qy[i]);
        Ok(ws)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn pairs(&self) -> PairIndex {
        self.pairs
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }

    /// `Q_Z v = v - Z (Z'Z)^-1 Z' v`.
    pub fn project_out_z(&self, v: &DVector<f64>) -> DVector<f64> {
        match (&self.z, &self.ztz) {
            (Some(z), Some(chol)) => {
                let coef = chol.solve(&z.tr_mul(v));
                v - z * coef
            }
            _ => v.clone(),
        }
    }

    /// Solve `(X'Q_Z X + rho A'A) w = b` with `b` given n x p.
    pub fn solve_system(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.system.solve(b)
    }

    /// `(X'Q_Z X + rho A'A) w`, evaluated matrix-free.
    pub fn apply_system(&self, w: &DMatrix<f64>) -> DMatrix<f64> {
        let n = self.n();
        let xw = DVector::from_fn(n, |i, _| self.x.row(i).dot(&w.row(i)));
        let qxw = self.project_out_z(&xw);
        let mut out = DMatrix::from_fn(n, self.p(), |i, c| self.x[(i, c)] * qxw[i]);
        out += self.pairs.apply_ata(w) * self.rho;
        out
    }

    /// `X'Q_Z y`, n x p.
    pub fn xqy(&self) -> &DMatrix<f64> {
        &self.xqy
    }

    /// Right-hand side of the `beta` step for the given splitting variables.
    pub fn beta_rhs(&self, delta: &DMatrix<f64>, upsilon: &DMatrix<f64>) -> DMatrix<f64> {
        let w = delta * self.rho - upsilon;
        &self.xqy + self.pairs.apply_at(&w)
    }

    fn eta_for(&self, beta: &DMatrix<f64>) -> DVector<f64> {
        match (&self.z, &self.ztz) {
            (Some(z), Some(chol)) => {
                let partial = DVector::from_fn(self.n(), |i, _| self.y[i] - self.x.row(i).dot(&beta.row(i)));
                chol.solve(&z.tr_mul(&partial))
            }
            _ => DVector::zeros(0),
        }
    }
}

/// Build the workspace for a dataset and ADMM parameter `rho`.
pub fn build_workspace(d: &Dataset, rho: f64) -> Result<AdmmWorkspace> {
    AdmmWorkspace::new(d, rho)
}

/// One ADMM iterate together with its residual diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub eta: DVector<f64>,
    /// n x p; row i is `beta_i`.
    pub beta: DMatrix<f64>,
    /// pairs x p; row `PairIndex::index(i, j)` is `delta_ij`.
    pub delta: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub iter: usize,
    pub primal_norm: f64,
    pub dual_norm: f64,
    pub converged: bool,
}

impl AdmmState {
    /// State with `delta = A beta` and zero multipliers.
    pub fn from_beta(eta: DVector<f64>, beta: DMatrix<f64>) -> Self {
        let pairs = PairIndex::new(beta.nrows());
        let delta = pairs.apply_a(&beta);
        let upsilon = DMatrix::zeros(delta.nrows(), delta.ncols());
        AdmmState {
            eta,
            beta,
            delta,
            upsilon,
            iter: 0,
            primal_norm: 0.0,
            dual_norm: 0.0,
            converged: false,
        }
    }

    pub fn zeros(n: usize, p: usize, q: usize) -> Self {
        Self::from_beta(DVector::zeros(q), DMatrix::zeros(n, p))
    }

    /// Restart point for the next lambda: keeps every variable, resets the counters.
    pub fn warm_start(&self) -> Self {
        AdmmState {
            iter: 0,
            converged: false,
            ..self.clone()
        }
    }
}

/// Default stopping tolerance: `1e-5 * sqrt(number of constraint entries)`.
pub fn default_tolerance(n: usize, p: usize) -> f64 {
    1e-5 * ((PairIndex::new(n).len() * p) as f64).sqrt()
}

/// `beta` step.
pub fn update_beta(ws: &AdmmWorkspace, state: &AdmmState) -> DMatrix<f64> {
    ws.solve_system(&ws.beta_rhs(&state.delta, &state.upsilon))
}

/// `eta` step: least-squares coefficient of `y - X beta` on `Z`.
pub fn update_eta(ws: &AdmmWorkspace, beta_new: &DMatrix<f64>) -> DVector<f64> {
    ws.eta_for(beta_new)
}

/// `delta` step: `delta_ij = prox(beta_i - beta_j + upsilon_ij / rho)`.
/// Uses `state.beta` and `state.upsilon`, so call it on a state whose `beta`
/// has already been refreshed.
pub fn update_delta(state: &AdmmState, spec: &PenaltySpec, rho: f64) -> Result<DMatrix<f64>> {
    spec.check_compatible(rho)?;
    let (n, p) = (state.beta.nrows(), state.beta.ncols());
    let pairs = PairIndex::new(n);
    let mut out = DMatrix::zeros(pairs.len(), p);
    let mut zeta = vec![0.0; p];
    for (k, (i, j)) in pairs.iter().enumerate() {
        let mut ss = 0.0;
        for c in 0..p {
            let z = state.beta[(i, c)] - state.beta[(j, c)] + state.upsilon[(k, c)] / rho;
            zeta[c] = z;
            ss += z * z;
        }
        let scale = spec.prox_scale(ss.sqrt(), rho);
        for c in 0..p {
            out[(k, c)] = scale * zeta[c];
        }
    }
    Ok(out)
}

/// Dual step `upsilon_ij += rho (beta_i - beta_j - delta_ij)` using `state.beta`.
pub fn update_upsilon(state: &AdmmState, delta_new: &DMatrix<f64>, rho: f64) -> DMatrix<f64> {
    let pairs = PairIndex::new(state.beta.nrows());
    let r = pairs.apply_a(&state.beta) - delta_new;
    &state.upsilon + r * rho
}

/// Norms of the primal residual `A beta - delta` and the dual residual
/// `rho A'(delta - prev_delta)`.
pub fn residuals(prev_delta: &DMatrix<f64>, state: &AdmmState, rho: f64) -> (f64, f64) {
    let pairs = PairIndex::new(state.beta.nrows());
    let primal = (pairs.apply_a(&state.beta) - &state.delta).norm();
    let dual = pairs.apply_at(&(&state.delta - prev_delta)).norm() * rho;
    (primal, dual)
}

/// Stopping controls for [`solve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopRule {
    pub tol: f64,
    pub max_iter: usize,
}

/// Run ADMM from `init` until both residual norms fall below `tol` or
/// `max_iter` iterations have been taken.
///
/// Only `init.delta` and `init.upsilon` influence the iterates; `beta` and
/// `eta` are recomputed in the first step. An unconverged run is reported
/// as [`Error::NotConverged`] carrying the final state.
pub fn solve(ws: &AdmmWorkspace, spec: &PenaltySpec, init: AdmmState, stop: StopRule) -> Result<AdmmState> {
    spec.check_compatible(ws.rho)?;
    if !(stop.tol > 0.0) {
        return Err(Error::InvalidConfig(format!("tolerance must be > 0, got {}", stop.tol)));
    }
    let (n, p) = (ws.n(), ws.p());
    let pairs = ws.pairs;
    let m = pairs.len();
    if init.delta.shape() != (m, p) || init.upsilon.shape() != (m, p) {
        return Err(Error::ShapeMismatch(format!(
            "initial state has delta {:?}, upsilon {:?}; expected ({m}, {p})",
            init.delta.shape(),
            init.upsilon.shape()
        )));
    }
    let rho = ws.rho;
    let mut state = init;
    state.converged = false;

    // A'(rho delta - upsilon), maintained across iterations by the pair kernel.
    let mut at_w = pairs.apply_at(&(&state.delta * rho - &state.upsilon));
    let mut at_dd = DMatrix::zeros(n, p);
    let kernel = ProxKernel::new(spec, rho);

    for it in 1..=stop.max_iter {
        let rhs = ws.xqy() + &at_w;
        state.beta = ws.solve_system(&rhs);
        state.eta = ws.eta_for(&state.beta);

        at_w.fill(0.0);
        at_dd.fill(0.0);
        let sweep = PairSweep {
            n,
            p,
            rho,
            beta: state.beta.as_slice(),
            delta: state.delta.as_mut_slice(),
            upsilon: state.upsilon.as_mut_slice(),
            at_w: at_w.as_mut_slice(),
            at_dd: at_dd.as_mut_slice(),
        };
        let primal_ss = match kernel {
            ProxKernel::Lasso { t } => sweep.run(|norm| if norm <= t { 0.0 } else { 1.0 - t / norm }),
            ProxKernel::Mcp { t, gl, inv } => sweep.run(|norm| {
                if norm > gl {
                    1.0
                } else if norm <= t {
                    0.0
                } else {
                    (1.0 - t / norm) * inv
                }
            }),
            ProxKernel::Scad { t, lo, gl, t2, inv } => sweep.run(|norm| {
                if norm > gl {
                    1.0
                } else if norm <= lo {
                    if norm <= t { 0.0 } else { 1.0 - t / norm }
                } else if norm <= t2 {
                    0.0
                } else {
                    (1.0 - t2 / norm) * inv
                }
            }),
        };
        state.iter = it;
        state.primal_norm = primal_ss.sqrt();
        state.dual_norm = rho * at_dd.norm();
        if state.primal_norm < stop.tol && state.dual_norm < stop.tol {
            state.converged = true;
            return Ok(state);
        }
    }
    Err(Error::NotConverged(Box::new(state)))
}

/// [`PenaltySpec::prox_scale`] with its constants hoisted out of the pair loop.
#[derive(Debug, Clone, Copy)]
enum ProxKernel {
    Lasso { t: f64 },
    Mcp { t: f64, gl: f64, inv: f64 },
    Scad { t: f64, lo: f64, gl: f64, t2: f64, inv: f64 },
}

impl ProxKernel {
    fn new(spec: &PenaltySpec, rho: f64) -> Self {
        let (lam, g) = (spec.lambda, spec.gamma);
        match spec.kind {
            PenaltyKind::Lasso => ProxKernel::Lasso { t: lam / rho },
            PenaltyKind::Mcp => ProxKernel::Mcp {
                t: lam / rho,
                gl: g * lam,
                inv: 1.0 / (1.0 - 1.0 / (g * rho)),
            },
            PenaltyKind::Scad => ProxKernel::Scad {
                t: lam / rho,
                lo: lam + lam / rho,
                gl: g * lam,
                t2: g * lam / ((g - 1.0) * rho),
                inv: 1.0 / (1.0 - 1.0 / ((g - 1.0) * rho)),
            },
        }
    }
}

/// One pass over all pairs: the `delta` and `upsilon` updates, fused with
/// accumulation of `A'(rho delta - upsilon)` and `A'(delta_new - delta_old)`.
/// Returns the squared primal residual.
struct PairSweep<'a> {
    n: usize,
    p: usize,
    rho: f64,
    beta: &'a [f64],
    delta: &'a mut [f64],
    upsilon: &'a mut [f64],
    at_w: &'a mut [f64],
    at_dd: &'a mut [f64],
}

impl PairSweep<'_> {
    #[inline(always)]
    fn run(self, scale: impl Fn(f64) -> f64) -> f64 {
        let (n, p, rho) = (self.n, self.p, self.rho);
        let inv_rho = 1.0 / rho;
        let m = n * (n - 1) / 2;
        let mut primal_ss = 0.0;
        if p == 1 {
            let mut k = 0;
            for i in 0..n {
                let bi = self.beta[i];
                let (mut wi, mut ddi) = (0.0, 0.0);
                for j in i + 1..n {
                    let diff = bi - self.beta[j];
                    let z = diff + self.upsilon[k] * inv_rho;
                    let d_new = scale(z.abs()) * z;
                    let r = diff - d_new;
                    primal_ss += r * r;
                    let u_new = self.upsilon[k] + rho * r;
                    let dd = d_new - self.delta[k];
                    self.delta[k] = d_new;
                    self.upsilon[k] = u_new;
                    let w = rho * d_new - u_new;
                    ddi += dd;
                    wi += w;
                    self.at_dd[j] -= dd;
                    self.at_w[j] -= w;
                    k += 1;
                }
                self.at_dd[i] += ddi;
                self.at_w[i] += wi;
            }
            return primal_ss;
        }
        let mut zeta = vec![0.0; p];
        let mut k = 0;
        for i in 0..n {
            for j in i + 1..n {
                let mut ss = 0.0;
                for c in 0..p {
                    let z = self.beta[c * n + i] - self.beta[c * n + j] + self.upsilon[c * m + k] * inv_rho;
                    zeta[c] = z;
                    ss += z * z;
                }
                let sc = scale(ss.sqrt());
                for c in 0..p {
                    let idx = c * m + k;
                    let d_new = sc * zeta[c];
                    let r = self.beta[c * n + i] - self.beta[c * n + j] - d_new;
                    primal_ss += r * r;
                    let u_new = self.upsilon[idx] + rho * r;
                    let dd = d_new - self.delta[idx];
                    self.delta[idx] = d_new;
                    self.upsilon[idx] = u_new;
                    self.at_dd[c * n + i] += dd;
                    self.at_dd[c * n + j] -= dd;
                    let w = rho * d_new - u_new;
                    self.at_w[c * n + i] += w;
                    self.at_w[c * n + j] -= w;
                }
                k += 1;
            }
        }
        primal_ss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Dense `A = D (x) I_p` in subject-major column order.
    fn dense_a(n: usize, p: usize) -> DMatrix<f64> {
        let pairs = PairIndex::new(n);
        let mut a = DMatrix::zeros(pairs.len() * p, n * p);
        for (k, (i, j)) in pairs.iter().enumerate() {
            for c in 0..p {
                a[(k * p + c, i * p + c)] = 1.0;
                a[(k * p + c, j * p + c)] = -1.0;
            }
        }
        a
    }

    fn vec_subject_major(m: &DMatrix<f64>) -> DVector<f64> {
        let p = m.ncols();
        DVector::from_fn(m.nrows() * p, |r, _| m[(r / p, r % p)])
    }

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn random_dataset(rng: &mut ChaCha8Rng, n: usize, q: usize, p: usize) -> Dataset {
        let z = DMatrix::from_fn(n, q, |_, c| if c == 0 { 1.0 } else { rng.random::<f64>() * 2.0 - 1.0 });
        Dataset::new(DVector::from_fn(n, |_, _| rng.random::<f64>() * 4.0 - 2.0), z, random_matrix(rng, n, p))
            .unwrap()
    }

    #[test]
    fn pair_index_is_bijective() {
        for n in 2..9 {
            let pairs = PairIndex::new(n);
            assert_eq!(pairs.len(), n * (n - 1) / 2);
            for (k, (i, j)) in pairs.iter().enumerate() {
                assert_eq!(pairs.index(i, j), k);
                assert_eq!(pairs.pair(k), (i, j));
            }
        }
    }

    #[test]
    fn two_subject_ata() {
        let a = dense_a(2, 1);
        let ata = a.transpose() * &a;
        assert_eq!(ata, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn constants_in_null_space() {
        let pairs = PairIndex::new(5);
        let beta = DMatrix::from_fn(5, 3, |_, c| c as f64 + 0.5);
        assert!(pairs.apply_ata(&beta).amax() < 1e-14);
    }

    #[test]
    fn structured_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 2..=8 {
            for p in 1..=3 {
                let pairs = PairIndex::new(n);
                let a = dense_a(n, p);
                let ata = a.transpose() * &a;
                let ones = DMatrix::from_fn(n * p, p, |r, c| if r % p == c { 1.0 } else { 0.0 });
                let identity = DMatrix::identity(n * p, n * p) * n as f64 - &ones * ones.transpose();
                assert!((&ata - &identity).amax() < 1e-12);

                let beta = random_matrix(&mut rng, n, p);
                let dense = &ata * vec_subject_major(&beta);
                assert!((vec_subject_major(&pairs.apply_ata(&beta)) - dense).amax() < 1e-12);

                let w = random_matrix(&mut rng, pairs.len(), p);
                let dense = a.transpose() * vec_subject_major(&w);
                assert!((vec_subject_major(&pairs.apply_at(&w)) - dense).amax() < 1e-12);
                let dense = &a * vec_subject_major(&beta);
                assert!((vec_subject_major(&pairs.apply_a(&beta)) - dense).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn qz_with_intercept_centers() {
        let d = Dataset::new(
            DVector::from_vec(vec![1.0, 2.0, 6.0]),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::from_vec(3, 1, vec![1.0, 2.0, 3.0]),
        )
        .unwrap();
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let v = DVector::from_vec(vec![1.0, 2.0, 6.0]);
        let out = ws.project_out_z(&v);
        assert!((out - DVector::from_vec(vec![-2.0, -1.0, 3.0])).amax() < 1e-14);
    }

    #[test]
    fn qz_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let d = random_dataset(&mut rng, 15, 3, 2);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let v = DVector::from_fn(15, |_, _| rng.random::<f64>());
        let once = ws.project_out_z(&v);
        assert!((ws.project_out_z(&once) - &once).amax() < 1e-10);
    }

    #[test]
    fn woodbury_solve_inverts_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for &(n, q, p, rho) in &[(6, 1, 1, 1.0), (10, 3, 2, 0.5), (25, 2, 3, 2.0), (40, 4, 1, 0.001)] {
            let d = random_dataset(&mut rng, n, q, p);
            let ws = AdmmWorkspace::new(&d, rho).unwrap();
            let b = random_matrix(&mut rng, n, p);
            let w = ws.solve_system(&b);
            let back = ws.apply_system(&w);
            assert!((back - &b).amax() < 1e-8 * b.amax().max(1.0), "n={n} q={q} p={p}");
        }
    }

    #[test]
    fn beta_step_two_subjects_no_nuisance() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let ws = AdmmWorkspace::without_nuisance(&x, &y, 1.0).unwrap();
        // dense oracle: [[2,-1],[-1,2]] beta = (1,3)
        let dense = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]);
        let expect = dense.lu().solve(&y).unwrap();
        let state = AdmmState::zeros(2, 1, 0);
        let beta = update_beta(&ws, &state);
        assert!((beta[0] - 5.0 / 3.0).abs() < 1e-12 && (beta[1] - 7.0 / 3.0).abs() < 1e-12);
        assert!((beta.column(0) - expect).amax() < 1e-12);
    }

    #[test]
    fn beta_step_at_full_fusion_gives_pooled_fit() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let d = random_dataset(&mut rng, 12, 2, 1);
        // pooled OLS on (Z, x)
        let u = DMatrix::from_fn(12, 3, |i, c| if c < 2 { d.z()[(i, c)] } else { d.x()[(i, 0)] });
        let coef = (u.transpose() * &u).cholesky().unwrap().solve(&(u.transpose() * d.y()));
        let pooled = DMatrix::from_element(12, 1, coef[2]);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        // multiplier of the fully fused fixed point: A'upsilon = X'Q_Z(y - X beta)
        let pairs = ws.pairs();
        let g = ws.xqy() - DMatrix::from_fn(12, 1, |i, _| {
            let xb = DVector::from_fn(12, |j, _| d.x()[(j, 0)] * pooled[(j, 0)]);
            d.x()[(i, 0)] * ws.project_out_z(&xb)[i]
        });
        let mut state = AdmmState::from_beta(DVector::zeros(2), pooled.clone());
        state.upsilon = pairs.apply_a(&g) / 12.0;
        assert!((pairs.apply_at(&state.upsilon) - &g).amax() < 1e-10);
        let beta = update_beta(&ws, &state);
        assert!((beta - pooled).amax() < 1e-10);
    }

    #[test]
    fn beta_step_solves_normal_equations() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let d = random_dataset(&mut rng, 20, 3, 2);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let m = ws.pairs().len();
        let mut state = AdmmState::zeros(20, 2, 3);
        state.delta = random_matrix(&mut rng, m, 2);
        state.upsilon = random_matrix(&mut rng, m, 2);
        let rhs = ws.beta_rhs(&state.delta, &state.upsilon);
        let beta = update_beta(&ws, &state);
        assert!((ws.apply_system(&beta) - &rhs).norm() <= 1e-8 * rhs.norm());
    }

    #[test]
    fn eta_step_examples() {
        let d = Dataset::new(
            DVector::from_vec(vec![1.0, 2.0, 3.0]),
            DMatrix::from_element(3, 1, 1.0),
            DMatrix::from_vec(3, 1, vec![1.0, 1.0, 2.0]),
        )
        .unwrap();
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let eta = update_eta(&ws, &DMatrix::zeros(3, 1));
        assert!((eta[0] - 2.0).abs() < 1e-14);
        // y - X beta = (1,-2,1) is orthogonal to the ones column
        let eta = update_eta(&ws, &DMatrix::from_vec(3, 1, vec![0.0, 4.0, 1.0]));
        assert!(eta[0].abs() < 1e-14);
    }

    #[test]
    fn eta_step_matches_qr_least_squares() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let d = random_dataset(&mut rng, 20, 3, 2);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let beta = random_matrix(&mut rng, 20, 2);
        let eta = update_eta(&ws, &beta);
        let partial = DVector::from_fn(20, |i, _| d.y()[i] - d.x().row(i).dot(&beta.row(i)));
        let qr = d.z().clone().qr();
        let oracle = qr.r().solve_upper_triangular(&(qr.q().transpose() * &partial)).unwrap();
        assert!((&eta - oracle).amax() < 1e-10);
        let resid = partial - d.z() * &eta;
        assert!(d.z().tr_mul(&resid).norm() <= 1e-8 * d.z().tr_mul(d.y()).norm());
    }

    #[test]
    fn delta_step_examples() {
        let spec = PenaltySpec::mcp(1.0, 3.0);
        let mut state = AdmmState::zeros(4, 2, 1);
        state.beta = DMatrix::from_element(4, 2, 0.7);
        assert_eq!(update_delta(&state, &spec, 1.0).unwrap().amax(), 0.0);

        state.beta = DMatrix::from_row_slice(2, 2, &[5.0, 0.0, 0.0, 0.0]);
        state.upsilon = DMatrix::zeros(1, 2);
        let out = update_delta(&state, &spec, 1.0).unwrap();
        assert_eq!(out.row(0).iter().copied().collect::<Vec<_>>(), vec![5.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut state = AdmmState::zeros(6, 2, 1);
        state.beta = random_matrix(&mut rng, 6, 2);
        state.upsilon = random_matrix(&mut rng, 15, 2);
        let out = update_delta(&state, &PenaltySpec::scad(0.0, 3.7), 1.0).unwrap();
        let zeta = PairIndex::new(6).apply_a(&state.beta) + &state.upsilon;
        assert!((out - zeta).amax() < 1e-15);

        assert!(update_delta(&state, &PenaltySpec::mcp(1.0, 0.9), 1.0).is_err());
    }

    #[test]
    fn upsilon_step_examples() {
        let mut state = AdmmState::zeros(2, 1, 1);
        state.beta = DMatrix::from_vec(2, 1, vec![1.0, 0.5]);
        state.delta = DMatrix::from_element(1, 1, 0.5);
        // no violation: unchanged
        assert_eq!(update_upsilon(&state, &state.delta, 1.0), state.upsilon);
        let zero = DMatrix::zeros(1, 1);
        let u1 = update_upsilon(&state, &zero, 1.0);
        assert_eq!(u1[(0, 0)], 0.5);
        state.upsilon = u1;
        let u2 = update_upsilon(&state, &zero, 2.0);
        assert_eq!(u2[(0, 0)], 0.5 + 2.0 * 0.5);
    }

    #[test]
    fn residual_examples() {
        let mut state = AdmmState::zeros(3, 1, 1);
        state.beta = DMatrix::from_vec(3, 1, vec![1.0, 2.0, 4.0]);
        state.delta = DMatrix::zeros(3, 1);
        let (primal, dual) = residuals(&state.delta.clone(), &state, 1.0);
        assert!((primal - 14f64.sqrt()).abs() < 1e-14);
        assert_eq!(dual, 0.0);
        state.delta = PairIndex::new(3).apply_a(&state.beta);
        let (primal, _) = residuals(&DMatrix::zeros(3, 1), &state, 1.0);
        assert_eq!(primal, 0.0);
    }

    #[test]
    fn fused_kernel_matches_step_functions() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let d = random_dataset(&mut rng, 9, 2, 2);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let spec = PenaltySpec::scad(0.3, 3.7);
        let mut init = AdmmState::zeros(9, 2, 2);
        init.delta = random_matrix(&mut rng, 36, 2);
        init.upsilon = random_matrix(&mut rng, 36, 2) * 0.1;

        let mut manual = init.clone();
        for _ in 0..3 {
            let prev = manual.delta.clone();
            manual.beta = update_beta(&ws, &manual);
            manual.eta = update_eta(&ws, &manual.beta);
            manual.delta = update_delta(&manual, &spec, 1.0).unwrap();
            manual.upsilon = update_upsilon(&manual, &manual.delta, 1.0);
            let (pr, du) = residuals(&prev, &manual, 1.0);
            manual.primal_norm = pr;
            manual.dual_norm = du;
        }
        let stop = StopRule { tol: 1e-300, max_iter: 3 };
        let fused = match solve(&ws, &spec, init, stop) {
            Err(Error::NotConverged(s)) => *s,
            other => panic!("unexpected {other:?}"),
        };
        assert_eq!(fused.iter, 3);
        assert!((&fused.beta - &manual.beta).amax() < 1e-10);
        assert!((&fused.eta - &manual.eta).amax() < 1e-10);
        assert!((&fused.delta - &manual.delta).amax() < 1e-10);
        assert!((&fused.upsilon - &manual.upsilon).amax() < 1e-10);
        assert!((fused.primal_norm - manual.primal_norm).abs() < 1e-10);
        assert!((fused.dual_norm - manual.dual_norm).abs() < 1e-10);
    }

    #[test]
    fn solve_meets_tolerance_and_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = random_dataset(&mut rng, 20, 1, 2);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let stop = StopRule { tol: 1e-6, max_iter: 5000 };
        for kind in [PenaltyKind::Lasso, PenaltyKind::Mcp, PenaltyKind::Scad] {
            let spec = PenaltySpec::new(kind, 0.2, 3.7);
            let a = solve(&ws, &spec, AdmmState::zeros(20, 2, 1), stop).unwrap();
            assert!(a.converged && a.primal_norm < 1e-6 && a.dual_norm < 1e-6);
            let b = solve(&ws, &spec, AdmmState::zeros(20, 2, 1), stop).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn large_lambda_fuses_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let d = random_dataset(&mut rng, 15, 2, 1);
        let ws = AdmmWorkspace::new(&d, 1.0).unwrap();
        let s = solve(&ws, &PenaltySpec::lasso(50.0), AdmmState::zeros(15, 1, 2), StopRule { tol: 1e-8, max_iter: 5000 })
            .unwrap();
        let b = s.beta.column(0);
        assert!(b.max() - b.min() < 1e-6);
        assert!(s.delta.amax() == 0.0);
    }
}
