//! Fusion penalties and their groupwise proximal maps.
//!
//! Every proximal map here is radial: the minimizer of
//! `(rho/2)||zeta - d||^2 + p(||d||, lambda)` is `c * zeta` for a scalar
//! `c >= 0` that depends only on `||zeta||`. The ADMM kernel uses that scalar
//! directly through [`PenaltySpec::prox_scale`].

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyKind {
    Lasso,
    Mcp,
    Scad,
}

impl PenaltyKind {
    pub fn name(self) -> &'static str {
        match self {
            PenaltyKind::Lasso => "lasso",
            PenaltyKind::Mcp => "mcp",
            PenaltyKind::Scad => "scad",
        }
    }

    /// Default concavity parameter: 3 for MCP and SCAD.
    pub fn default_gamma(self) -> f64 {
        3.0
    }
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PenaltyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "lasso" | "l1" => Ok(PenaltyKind::Lasso),
            "mcp" => Ok(PenaltyKind::Mcp),
            "scad" => Ok(PenaltyKind::Scad),
            other => Err(format!("unknown penalty '{other}' (expected lasso, mcp or scad)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub kind: PenaltyKind,
    pub lambda: f64,
    /// Concavity parameter; ignored for the lasso.
    pub gamma: f64,
}

impl PenaltySpec {
    pub fn new(kind: PenaltyKind, lambda: f64, gamma: f64) -> Self {
        PenaltySpec { kind, lambda, gamma }
    }

    pub fn lasso(lambda: f64) -> Self {
        PenaltySpec::new(PenaltyKind::Lasso, lambda, f64::NAN)
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Self {
        PenaltySpec::new(PenaltyKind::Mcp, lambda, gamma)
    }

    pub fn scad(lambda: f64, gamma: f64) -> Self {
        PenaltySpec::new(PenaltyKind::Scad, lambda, gamma)
    }

    pub fn with_lambda(self, lambda: f64) -> Self {
        PenaltySpec { lambda, ..self }
    }

    /// The proximal map is a well-defined single-valued thresholding rule only
    /// when the concavity is dominated by the quadratic term: MCP needs
    /// `gamma > 1/rho`, SCAD needs `gamma > 1 + 1/rho`.
    pub fn check_compatible(&self, rho: f64) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidConfig(format!("lambda must be finite and >= 0, got {}", self.lambda)));
        }
        if !(rho > 0.0) || !rho.is_finite() {
            return Err(Error::InvalidConfig(format!("rho must be finite and > 0, got {rho}")));
        }
        let bound = match self.kind {
            PenaltyKind::Lasso => return Ok(()),
            PenaltyKind::Mcp => 1.0 / rho,
            PenaltyKind::Scad => 1.0 + 1.0 / rho,
        };
        if self.gamma > bound {
            Ok(())
        } else {
            Err(Error::IncompatibleGamma {
                kind: self.kind.name(),
                gamma: self.gamma,
                rho,
                bound,
            })
        }
    }

    /// Closed form of `p(t, lambda)` for `t >= 0`, without argument checks.
    #[inline]
    pub fn value_unchecked(&self, t: f64) -> f64 {
        let (lam, g) = (self.lambda, self.gamma);
        match self.kind {
            PenaltyKind::Lasso => lam * t,
            PenaltyKind::Mcp => {
                if t <= g * lam {
                    lam * t - t * t / (2.0 * g)
                } else {
                    0.5 * g * lam * lam
                }
            }
            PenaltyKind::Scad => {
                if t <= lam {
                    lam * t
                } else if t <= g * lam {
                    (2.0 * g * lam * t - t * t - lam * lam) / (2.0 * (g - 1.0))
                } else {
                    0.5 * lam * lam * (g + 1.0)
                }
            }
        }
    }

    /// Multiplier `c` with `prox(zeta) = c * zeta`, given `norm = ||zeta||`.
    /// Assumes [`check_compatible`](Self::check_compatible) passed for `rho`.
    /// Boundary ties resolve to the lower branch.
    #[inline]
    pub fn prox_scale(&self, norm: f64, rho: f64) -> f64 {
        if norm == 0.0 {
            return 0.0;
        }
        let (lam, g) = (self.lambda, self.gamma);
        let soft = |t: f64| (1.0 - t / norm).max(0.0);
        match self.kind {
            PenaltyKind::Lasso => soft(lam / rho),
            PenaltyKind::Mcp => {
                if norm <= g * lam {
                    soft(lam / rho) / (1.0 - 1.0 / (g * rho))
                } else {
                    1.0
                }
            }
            PenaltyKind::Scad => {
                if norm <= lam + lam / rho {
                    soft(lam / rho)
                } else if norm <= g * lam {
                    let gm1 = g - 1.0;
                    soft(g * lam / (gm1 * rho)) / (1.0 - 1.0 / (gm1 * rho))
                } else {
                    1.0
                }
            }
        }
    }
}

/// `p(t, lambda)` evaluated in closed form.
pub fn penalty_value(spec: &PenaltySpec, t: f64) -> Result<f64> {
    if t < 0.0 || t.is_nan() {
        return Err(Error::NegativeArgument(t));
    }
    Ok(spec.value_unchecked(t))
}

/// Groupwise soft thresholding `(1 - t/||z||)_+ z`.
pub fn group_soft_threshold(z: &DVector<f64>, t: f64) -> DVector<f64> {
    let norm = z.norm();
    if norm <= t || norm == 0.0 {
        return DVector::zeros(z.len());
    }
    z * (1.0 - t / norm)
}

/// Exact minimizer of `(rho/2)||zeta - d||^2 + p(||d||, lambda)` over `d`.
pub fn prox(zeta: &DVector<f64>, spec: &PenaltySpec, rho: f64) -> Result<DVector<f64>> {
    spec.check_compatible(rho)?;
    Ok(zeta * spec.prox_scale(zeta.norm(), rho))
}

/// The fusion objective
/// `1/2 sum_i (y_i - z_i'eta - x_i'beta_i)^2 + sum_{i<j} p(||beta_i - beta_j||, lambda)`.
pub fn objective(d: &Dataset, eta: &DVector<f64>, beta: &DMatrix<f64>, spec: &PenaltySpec) -> Result<f64> {
    let sse = d.sse(eta, beta)?;
    let (n, p) = (d.n(), d.p());
    let mut pen = 0.0;
    if spec.lambda != 0.0 {
        for i in 0..n {
            for j in i + 1..n {
                let mut ss = 0.0;
                for c in 0..p {
                    let diff = beta[(i, c)] - beta[(j, c)];
                    ss += diff * diff;
                }
                pen += spec.value_unchecked(ss.sqrt());
            }
        }
    }
    Ok(0.5 * sse + pen)
}
