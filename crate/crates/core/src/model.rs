//! Dataset representation, validation and the standardization contract.
//!
//! A [`Dataset`] holds the response `y`, the nuisance design `Z` (first column
//! is the intercept) and the treatment design `X`. Row `i` of `X` carries the
//! covariates whose coefficients `beta_i` are allowed to vary by subject.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used by the rank check on `Z`.
const RANK_TOL: f64 = 1e-10;

/// Validated regression data. Immutable once constructed.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: DVector<f64>,
    z: DMatrix<f64>,
    x: DMatrix<f64>,
}

impl Dataset {
    /// Assemble and validate a dataset. `z` must already contain the intercept
    /// as its first column.
    pub fn new(y: DVector<f64>, z: DMatrix<f64>, x: DMatrix<f64>) -> Result<Self> {
        validate_dataset(Dataset { y, z, x })
    }

    /// Build a dataset from a response, nuisance covariates (without intercept)
    /// and treatment covariates. Constant covariate columns are dropped and a
    /// column of ones is inserted as the first column of `Z`.
    pub fn with_intercept(
        y: DVector<f64>,
        covariates: &DMatrix<f64>,
        x: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if covariates.nrows() != n && covariates.ncols() > 0 {
            return Err(Error::ShapeMismatch(format!(
                "covariates have {} rows, response has {n}",
                covariates.nrows()
            )));
        }
        let keep: Vec<usize> = (0..covariates.ncols())
            .filter(|&c| !is_constant(covariates.column(c).iter().copied()))
            .collect();
        let mut z = DMatrix::from_element(n, keep.len() + 1, 1.0);
        for (dst, &src) in keep.iter().enumerate() {
            z.set_column(dst + 1, &covariates.column(src));
        }
        Dataset::new(y, z, x)
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// Fitted values `z_i' eta + x_i' beta_i` for a subject-level coefficient
    /// matrix `beta` (n x p, row i is `beta_i`).
    pub fn fitted(&self, eta: &DVector<f64>, beta: &DMatrix<f64>) -> Result<DVector<f64>> {
        self.check_coefficients(eta, beta)?;
        let mut fit = &self.z * eta;
        for i in 0..self.n() {
            fit[i] += self.x.row(i).dot(&beta.row(i));
        }
        Ok(fit)
    }

    /// Residual sum of squares of a subject-level fit.
    pub fn sse(&self, eta: &DVector<f64>, beta: &DMatrix<f64>) -> Result<f64> {
        let fit = self.fitted(eta, beta)?;
        Ok((&self.y - fit).norm_squared())
    }

    pub(crate) fn check_coefficients(&self, eta: &DVector<f64>, beta: &DMatrix<f64>) -> Result<()> {
        if eta.len() != self.q() {
            return Err(Error::ShapeMismatch(format!(
                "eta has length {}, expected q = {}",
                eta.len(),
                self.q()
            )));
        }
        if beta.nrows() != self.n() || beta.ncols() != self.p() {
            return Err(Error::ShapeMismatch(format!(
                "beta is {}x{}, expected {}x{}",
                beta.nrows(),
                beta.ncols(),
                self.n(),
                self.p()
            )));
        }
        Ok(())
    }
}

/// Check every dataset invariant, returning the dataset unchanged on success.
pub fn validate_dataset(raw: Dataset) -> Result<Dataset> {
    let n = raw.y.len();
    if raw.z.nrows() != n || raw.x.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "y has {n} rows, Z has {}, X has {}",
            raw.z.nrows(),
            raw.x.nrows()
        )));
    }
    if n < 2 {
        return Err(Error::ShapeMismatch(format!("need at least 2 observations, got {n}")));
    }
    if raw.x.ncols() == 0 || raw.z.ncols() == 0 {
        return Err(Error::ShapeMismatch("X and Z need at least one column".into()));
    }
    for i in 0..n {
        if !raw.y[i].is_finite() {
            return Err(Error::NonFinite { row: i, col: 0 });
        }
    }
    // Columns are numbered response first, then Z, then X.
    for (offset, m) in [(1, &raw.z), (1 + raw.z.ncols(), &raw.x)] {
        for c in 0..m.ncols() {
            for r in 0..n {
                if !m[(r, c)].is_finite() {
                    return Err(Error::NonFinite { row: r, col: offset + c });
                }
            }
        }
    }
    if raw.z.column(0).iter().any(|&v| v != 1.0) {
        return Err(Error::ShapeMismatch("first column of Z must be the intercept (all ones)".into()));
    }
    let rank = numerical_rank(&raw.z);
    if rank < raw.z.ncols() {
        return Err(Error::RankDeficientZ {
            rank,
            cols: raw.z.ncols(),
        });
    }
    Ok(raw)
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

fn is_constant(mut it: impl Iterator<Item = f64>) -> bool {
    match it.next() {
        None => true,
        Some(first) => it.all(|v| v == first),
    }
}

/// Per-column transform applied by [`standardize`]: non-intercept `Z` columns
/// first, then the `X` columns. `X` columns are rescaled but never centered,
/// so their recorded mean is always zero.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StandardizationInfo {
    pub column_means: Vec<f64>,
    pub column_scales: Vec<f64>,
    pub q: usize,
    pub p: usize,
}

impl StandardizationInfo {
    pub fn identity(q: usize, p: usize) -> Self {
        let len = q - 1 + p;
        StandardizationInfo {
            column_means: vec![0.0; len],
            column_scales: vec![1.0; len],
            q,
            p,
        }
    }
}

/// Rescale to the `sum v^2 = n` convention.
///
/// Non-intercept `Z` columns are centered and scaled. `X` columns are scaled
/// only: centering a treatment column changes a subject-specific model
/// (`x_i beta_i` gains a subject-specific offset), so fitted values could not
/// be reproduced on the raw scale.
pub fn standardize(d: &Dataset) -> Result<(Dataset, StandardizationInfo)> {
    let n = d.n();
    let nf = n as f64;
    let (q, p) = (d.q(), d.p());
    let mut info = StandardizationInfo::identity(q, p);
    let mut z = d.z.clone();
    for c in 1..q {
        let mut col = z.column_mut(c);
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let ss = col.norm_squared();
        if ss <= f64::EPSILON * nf * mean.abs().max(1.0) {
            return Err(Error::ZeroVarianceColumn(c));
        }
        let scale = (ss / nf).sqrt();
        col /= scale;
        info.column_means[c - 1] = mean;
        info.column_scales[c - 1] = scale;
    }
    let mut x = d.x.clone();
    for c in 0..p {
        let mut col = x.column_mut(c);
        let ss = col.norm_squared();
        if ss == 0.0 {
            return Err(Error::ZeroVarianceColumn(q + c));
        }
        let scale = (ss / nf).sqrt();
        col /= scale;
        info.column_scales[q - 1 + c] = scale;
    }
    let out = validate_dataset(Dataset {
        y: d.y.clone(),
        z,
        x,
    })?;
    Ok((out, info))
}

/// Map coefficients estimated on standardized data back to the raw scale.
/// The intercept absorbs the centering of the nuisance columns, so fitted
/// values are identical on both scales.
pub fn unstandardize(
    eta_hat: &DVector<f64>,
    alpha_hat: &DMatrix<f64>,
    info: &StandardizationInfo,
) -> (DVector<f64>, DMatrix<f64>) {
    let q = info.q;
    let mut eta = eta_hat.clone();
    for l in 1..q {
        let (m, s) = (info.column_means[l - 1], info.column_scales[l - 1]);
        eta[l] = eta_hat[l] / s;
        eta[0] -= eta[l] * m;
    }
    let mut alpha = alpha_hat.clone();
    for c in 0..info.p {
        let s = info.column_scales[q - 1 + c];
        alpha.column_mut(c).unscale_mut(s);
    }
    (eta, alpha)
}

/// Simulation truth: the partition of subjects and the group effects.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueModel {
    pub partition: Vec<Vec<usize>>,
    pub alpha: DMatrix<f64>,
    pub eta: DVector<f64>,
    pub sigma: f64,
}

impl TrueModel {
    pub fn k(&self) -> usize {
        self.partition.len()
    }

    /// Group label of every subject.
    pub fn labels(&self, n: usize) -> Vec<usize> {
        let mut labels = vec![usize::MAX; n];
        for (k, block) in self.partition.iter().enumerate() {
            for &i in block {
                labels[i] = k;
            }
        }
        labels
    }

    /// Subject-level coefficients `beta_i = alpha_{k(i)}`.
    pub fn beta(&self, n: usize) -> DMatrix<f64> {
        let labels = self.labels(n);
        DMatrix::from_fn(n, self.alpha.ncols(), |i, c| self.alpha[(labels[i], c)])
    }
}
