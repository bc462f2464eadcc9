//! Subgroup-specific treatment effects by concave pairwise fusion.
//!
//! The model `y_i = z_i'eta + x_i'beta_i + eps_i` lets every subject carry its
//! own treatment coefficients. A concave penalty (MCP or SCAD, or the lasso)
//! on all pairwise differences `||beta_i - beta_j||` fuses them into a small
//! number of groups. The problem is solved by ADMM along a warm-started
//! lambda path, the path point is chosen by a modified BIC, and the selected
//! partition feeds least-squares style inference.

pub mod admm;
pub mod error;
pub mod inference;
pub mod model;
pub mod path;
pub mod penalty;
pub mod sim;
pub mod subgroup;

pub mod cli;

pub use error::{Error, Result};
pub use model::{Dataset, StandardizationInfo, TrueModel};
pub use penalty::{PenaltyKind, PenaltySpec};
