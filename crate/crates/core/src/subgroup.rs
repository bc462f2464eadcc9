//! From a fitted path point to subgroups: partition extraction, group
//! effects, the modified BIC and model selection.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::admm::PairIndex;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::path::FusionPath;

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns `true` when `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }
}

/// A partition of `{0, ..., n-1}`. Blocks are sorted internally and ordered
/// by their smallest member, so equal partitions compare equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    blocks: Vec<Vec<usize>>,
    n: usize,
}

impl Partition {
    /// Canonicalize and validate a list of blocks over `0..n`.
    pub fn new(mut blocks: Vec<Vec<usize>>, n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidConfig("partition has an empty block".into()));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i >= n || seen[i] {
                    return Err(Error::InvalidConfig(format!("subject {i} out of range or repeated")));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::InvalidConfig("partition does not cover every subject".into()));
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        Ok(Partition { blocks, n })
    }

    /// Partition induced by group labels.
    pub fn from_labels(labels: &[usize]) -> Self {
        let mut uf = UnionFind::new(labels.len());
        let mut first: std::collections::HashMap<usize, usize> = Default::default();
        for (i, &l) in labels.iter().enumerate() {
            let root = *first.entry(l).or_insert(i);
            uf.union(root, i);
        }
        Self::from_union_find(&mut uf, labels.len())
    }

    fn from_union_find(uf: &mut UnionFind, n: usize) -> Self {
        let mut slot = vec![usize::MAX; n];
        let mut blocks: Vec<Vec<usize>> = Vec::new();
        for i in 0..n {
            let r = uf.find(i);
            if slot[r] == usize::MAX {
                slot[r] = blocks.len();
                blocks.push(Vec::new());
            }
            blocks[slot[r]].push(i);
        }
        // scanning i upward already yields sorted blocks ordered by minimum
        Partition { blocks, n }
    }

    pub fn single(n: usize) -> Self {
        Partition {
            blocks: vec![(0..n).collect()],
            n,
        }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Indices of the two largest blocks, ascending; ties go to the lower index.
    pub fn largest_two(&self) -> Option<(usize, usize)> {
        if self.k() < 2 {
            return None;
        }
        let mut order: Vec<usize> = (0..self.k()).collect();
        order.sort_by(|&a, &b| self.blocks[b].len().cmp(&self.blocks[a].len()).then(a.cmp(&b)));
        Some((order[0].min(order[1]), order[0].max(order[1])))
    }

    /// Block index of every subject.
    pub fn labels(&self) -> Vec<usize> {
        let mut labels = vec![0; self.n];
        for (k, block) in self.blocks.iter().enumerate() {
            for &i in block {
                labels[i] = k;
            }
        }
        labels
    }
}

/// Which relation defines "same group".
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupingRule {
    /// `||delta_ij|| <= eps` links `i` and `j`.
    #[default]
    Delta,
    /// `||beta_i - beta_j|| <= eps` links `i` and `j`.
    Beta,
}

/// Default fusion tolerance `1e-3 * max(1, median ||beta_i||)`.
pub fn default_eps_fuse(beta_hat: &DMatrix<f64>) -> f64 {
    let mut norms: Vec<f64> = (0..beta_hat.nrows()).map(|i| beta_hat.row(i).norm()).collect();
    if norms.is_empty() {
        return 1e-3;
    }
    norms.sort_by(f64::total_cmp);
    let m = norms.len();
    let median = if m % 2 == 1 {
        norms[m / 2]
    } else {
        0.5 * (norms[m / 2 - 1] + norms[m / 2])
    };
    1e-3 * median.max(1.0)
}

fn link_pairs(n: usize, eps: f64, mut dist2: impl FnMut(usize, usize, usize) -> f64) -> Partition {
    let pairs = PairIndex::new(n);
    let mut uf = UnionFind::new(n);
    let eps2 = eps * eps;
    for (k, (i, j)) in pairs.iter().enumerate() {
        if dist2(k, i, j) <= eps2 {
            uf.union(i, j);
        }
    }
    Partition::from_union_find(&mut uf, n)
}

/// Connected components of the graph with an edge wherever `||delta_ij|| <= eps_fuse`.
pub fn extract_groups(beta_hat: &DMatrix<f64>, delta_hat: &DMatrix<f64>, eps_fuse: f64) -> Result<Partition> {
    let n = beta_hat.nrows();
    let pairs = PairIndex::new(n);
    if delta_hat.nrows() != pairs.len() || delta_hat.ncols() != beta_hat.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "delta is {}x{}, expected {}x{}",
            delta_hat.nrows(),
            delta_hat.ncols(),
            pairs.len(),
            beta_hat.ncols()
        )));
    }
    Ok(link_pairs(n, eps_fuse, |k, _, _| delta_hat.row(k).norm_squared()))
}

/// Groups from the distinct values of `beta_hat`, up to `eps_fuse`.
pub fn extract_groups_by_beta(beta_hat: &DMatrix<f64>, eps_fuse: f64) -> Partition {
    let p = beta_hat.ncols();
    link_pairs(beta_hat.nrows(), eps_fuse, |_, i, j| {
        (0..p).map(|c| (beta_hat[(i, c)] - beta_hat[(j, c)]).powi(2)).sum()
    })
}

/// Row `k` is the mean of the `beta_hat` rows in block `k`.
pub fn group_estimates(beta_hat: &DMatrix<f64>, part: &Partition) -> DMatrix<f64> {
    let p = beta_hat.ncols();
    let mut alpha = DMatrix::zeros(part.k(), p);
    for (k, block) in part.blocks().iter().enumerate() {
        for &i in block {
            for c in 0..p {
                alpha[(k, c)] += beta_hat[(i, c)];
            }
        }
        let size = block.len() as f64;
        alpha.row_mut(k).unscale_mut(size);
    }
    alpha
}

/// Model-size multiplier in the BIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BicFactor {
    /// `C_n = log(np + q)`.
    #[default]
    Modified,
    /// `C_n = 1`, the classical BIC.
    Classic,
}

impl BicFactor {
    pub fn value(self, n: usize, p: usize, q: usize) -> f64 {
        match self {
            BicFactor::Modified => ((n * p + q) as f64).ln(),
            BicFactor::Classic => 1.0,
        }
    }
}

/// `log(SSE/n) + C_n (log n / n)(K p + q)` with `C_n = log(np + q)`.
pub fn modified_bic(d: &Dataset, eta_hat: &DVector<f64>, beta_hat: &DMatrix<f64>, k_hat: usize) -> Result<f64> {
    bic(d, eta_hat, beta_hat, k_hat, BicFactor::Modified)
}

pub fn bic(d: &Dataset, eta_hat: &DVector<f64>, beta_hat: &DMatrix<f64>, k_hat: usize, factor: BicFactor) -> Result<f64> {
    let sse = d.sse(eta_hat, beta_hat)?;
    bic_from_sse(sse, d.n(), d.p(), d.q(), k_hat, factor)
}

pub fn bic_from_sse(sse: f64, n: usize, p: usize, q: usize, k_hat: usize, factor: BicFactor) -> Result<f64> {
    if sse <= 0.0 {
        return Err(Error::PerfectFit);
    }
    let nf = n as f64;
    let cn = factor.value(n, p, q);
    Ok((sse / nf).ln() + cn * nf.ln() / nf * (k_hat * p + q) as f64)
}

/// The selected model.
#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupResult {
    pub partition: Partition,
    /// K x p group effects.
    pub alpha_hat: DMatrix<f64>,
    pub eta_hat: DVector<f64>,
    /// Subject-level estimates at the selected lambda.
    pub beta_hat: DMatrix<f64>,
    pub lambda_selected: f64,
    pub bic: f64,
}

impl SubgroupResult {
    pub fn k_hat(&self) -> usize {
        self.partition.k()
    }

    pub fn to_json(&self) -> SubgroupJson {
        SubgroupJson {
            lambda: self.lambda_selected,
            k_hat: self.k_hat(),
            groups: self.partition.blocks().to_vec(),
            alpha_hat: rows(&self.alpha_hat),
            eta_hat: self.eta_hat.iter().copied().collect(),
            bic: self.bic,
        }
    }
}

pub(crate) fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

/// Serialized form of [`SubgroupResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubgroupJson {
    pub lambda: f64,
    pub k_hat: usize,
    pub groups: Vec<Vec<usize>>,
    pub alpha_hat: Vec<Vec<f64>>,
    pub eta_hat: Vec<f64>,
    pub bic: f64,
}

/// Index of the converged point with minimal BIC; ties go to the larger lambda.
pub fn select_index(path: &FusionPath) -> Result<usize> {
    let mut best: Option<usize> = None;
    for (idx, pt) in path.points.iter().enumerate() {
        if !pt.converged {
            continue;
        }
        match best {
            Some(b) if pt.bic > path.points[b].bic => {}
            Some(b) if pt.bic == path.points[b].bic && pt.lambda <= path.points[b].lambda => {}
            _ => best = Some(idx),
        }
    }
    best.ok_or(Error::NoConvergedPoint)
}

/// Minimize BIC over the converged path points.
pub fn select_model(path: &FusionPath) -> Result<SubgroupResult> {
    let idx = select_index(path)?;
    let pt = &path.points[idx];
    Ok(SubgroupResult {
        alpha_hat: group_estimates(&pt.beta_hat, &pt.partition),
        partition: pt.partition.clone(),
        eta_hat: pt.eta_hat.clone(),
        beta_hat: pt.beta_hat.clone(),
        lambda_selected: pt.lambda,
        bic: pt.bic,
    })
}
