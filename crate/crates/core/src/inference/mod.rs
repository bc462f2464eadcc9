//! Inference with the estimated partition held fixed: error variance,
//! Schur-complement standard deviations, normal intervals and the F-test for
//! a difference between groups.

mod special;

pub use special::{f_cdf, incomplete_beta, ln_gamma, normal_quantile};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::subgroup::{Partition, SubgroupResult};

/// The design with `beta_i` constrained constant within blocks:
/// `U = (Z, X_tilde)`, where row `i` of `X_tilde` holds `x_i'` in the
/// column block of its group.
#[derive(Debug, Clone)]
pub struct GroupDesign {
    labels: Vec<usize>,
    k: usize,
    p: usize,
    q: usize,
    u: DMatrix<f64>,
}

impl GroupDesign {
    pub fn new(d: &Dataset, part: &Partition) -> Result<Self> {
        if part.n() != d.n() {
            return Err(Error::ShapeMismatch(format!("partition over {} subjects, data has {}", part.n(), d.n())));
        }
        let (n, p, q, k) = (d.n(), d.p(), d.q(), part.k());
        let labels = part.labels();
        let mut u = DMatrix::zeros(n, q + k * p);
        u.columns_mut(0, q).copy_from(d.z());
        for i in 0..n {
            for c in 0..p {
                u[(i, q + labels[i] * p + c)] = d.x()[(i, c)];
            }
        }
        Ok(GroupDesign { labels, k, p, q, u })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// n x K group indicator matrix.
    pub fn w_tilde(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.labels.len(), self.k, |i, g| if self.labels[i] == g { 1.0 } else { 0.0 })
    }

    pub fn x_tilde(&self) -> DMatrix<f64> {
        self.u.columns(self.q, self.k * self.p).into_owned()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn gram(&self) -> DMatrix<f64> {
        self.u.tr_mul(&self.u)
    }

    /// Least squares on `U`: returns `eta` and the K x p group effects.
    pub fn least_squares(&self, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let chol = Cholesky::new(self.gram())
            .ok_or_else(|| Error::SingularSystem("grouped design U'U".into()))?;
        let coef = chol.solve(&self.u.tr_mul(y));
        let eta = coef.rows(0, self.q).into_owned();
        let alpha = DMatrix::from_fn(self.k, self.p, |g, c| coef[self.q + g * self.p + c]);
        Ok((eta, alpha))
    }

    fn blocks(&self) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let g = self.gram();
        let q = self.q;
        let m = self.k * self.p;
        (
            g.view((0, 0), (q, q)).into_owned(),
            g.view((0, q), (q, m)).into_owned(),
            g.view((q, q), (m, m)).into_owned(),
        )
    }

    /// `Z'Z - Z'X_tilde (X_tilde'X_tilde)^-1 X_tilde'Z`.
    pub fn schur_eta(&self) -> Result<DMatrix<f64>> {
        let (zz, zx, xx) = self.blocks();
        let chol = Cholesky::new(xx).ok_or(Error::SingularSchur)?;
        Ok(&zz - &zx * chol.solve(&zx.transpose()))
    }

    /// `Sigma_n = X_tilde'X_tilde - X_tilde'Z (Z'Z)^-1 Z'X_tilde`.
    pub fn schur_alpha(&self) -> Result<DMatrix<f64>> {
        let (zz, zx, xx) = self.blocks();
        let chol = Cholesky::new(zz).ok_or(Error::SingularSchur)?;
        Ok(&xx - zx.transpose() * chol.solve(&zx))
    }

    fn schur(&self, target: Target) -> Result<Cholesky<f64, Dyn>> {
        let s = match target {
            Target::Eta => self.schur_eta()?,
            Target::Alpha => self.schur_alpha()?,
        };
        Cholesky::new(s).ok_or(Error::SingularSchur)
    }
}

/// Which coefficient block a standard deviation refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    Eta,
    /// `vec(alpha)`, group-major: entry `k * p + c`.
    Alpha,
}

/// `SSE / (n - q - K p)`.
pub fn sigma2_hat(d: &Dataset, eta_hat: &DVector<f64>, beta_hat: &DMatrix<f64>, k_hat: usize) -> Result<f64> {
    let dof = d.n() as i64 - d.q() as i64 - (k_hat * d.p()) as i64;
    if dof <= 0 {
        return Err(Error::NonPositiveDof(dof));
    }
    Ok(d.sse(eta_hat, beta_hat)? / dof as f64)
}

/// `sigma * sqrt(a' S^-1 a)` for the Schur complement `S` of the target block.
pub fn asymptotic_sd(gd: &GroupDesign, sigma2: f64, a: &DVector<f64>, target: Target) -> Result<f64> {
    let chol = gd.schur(target)?;
    let expected = chol.l().nrows();
    if a.len() != expected {
        return Err(Error::ShapeMismatch(format!("direction has length {}, expected {expected}", a.len())));
    }
    Ok((sigma2 * a.dot(&chol.solve(a))).sqrt())
}

/// Standard deviations of every coordinate of the target block.
pub fn asymptotic_sds(gd: &GroupDesign, sigma2: f64, target: Target) -> Result<DVector<f64>> {
    let inv = gd.schur(target)?.inverse();
    Ok(DVector::from_iterator(inv.nrows(), inv.diagonal().iter().map(|v| (sigma2 * v).sqrt())))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

/// `estimate +- z_{(1+level)/2} * asd`.
pub fn confidence_intervals(estimates: &[f64], asds: &[f64], level: f64) -> Result<Vec<Interval>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidLevel(level));
    }
    if estimates.len() != asds.len() {
        return Err(Error::ShapeMismatch(format!("{} estimates, {} standard deviations", estimates.len(), asds.len())));
    }
    let z = normal_quantile(0.5 + 0.5 * level);
    Ok(estimates
        .iter()
        .zip(asds)
        .map(|(&e, &s)| Interval {
            lower: e - z * s,
            upper: e + z * s,
        })
        .collect())
}

/// `[0 .. I_p (block a) .. -I_p (block b) .. 0]`, a p x Kp contrast.
pub fn default_contrast(k: usize, p: usize, a: usize, b: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(p, k * p);
    for c in 0..p {
        l[(c, a * p + c)] = 1.0;
        l[(c, b * p + c)] = -1.0;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FTest {
    pub f_stat: f64,
    pub dof: (usize, usize),
    pub p_value: f64,
}

/// `F = (L a)'(sigma2 L Sigma_n^-1 L')^-1 (L a) / r` on `(r, n - pK - q - 1)`
/// degrees of freedom, where `r` is the number of contrast rows (`p` for
/// [`default_contrast`]).
pub fn f_test(gd: &GroupDesign, alpha_hat: &DMatrix<f64>, sigma2: f64, l: &DMatrix<f64>) -> Result<FTest> {
    let (k, p) = (gd.k, gd.p);
    if alpha_hat.shape() != (k, p) || l.ncols() != k * p || l.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "alpha {:?} and contrast {:?} for K = {k}, p = {p}",
            alpha_hat.shape(),
            l.shape()
        )));
    }
    let n = gd.labels.len() as i64;
    let dof2 = n - (p * k) as i64 - gd.q as i64 - 1;
    if dof2 <= 0 {
        return Err(Error::NonPositiveDof(dof2));
    }
    let r = l.nrows();
    let a = DVector::from_fn(k * p, |j, _| alpha_hat[(j / p, j % p)]);
    let la = l * a;
    let sigma = gd.schur(Target::Alpha)?;
    let cov = l * sigma.solve(&l.transpose());
    let cov = Cholesky::new(cov).ok_or(Error::SingularContrastCovariance)?;
    let quad = la.dot(&cov.solve(&la));
    let f_stat = if quad == 0.0 {
        0.0
    } else {
        quad / (sigma2 * r as f64)
    };
    let p_value = if f_stat.is_infinite() {
        0.0
    } else {
        1.0 - f_cdf(f_stat, r as f64, dof2 as f64)?
    };
    Ok(FTest {
        f_stat,
        dof: (r, dof2 as usize),
        p_value,
    })
}

/// Everything reported for a selected model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub level: f64,
    pub sigma2_hat: f64,
    pub eta_hat: Vec<f64>,
    /// `vec(alpha_hat)`, group-major.
    pub alpha_hat: Vec<f64>,
    pub asd_eta: Vec<f64>,
    pub asd_alpha: Vec<f64>,
    pub ci_eta: Vec<Interval>,
    pub ci_alpha: Vec<Interval>,
    /// Absent when a single group was selected.
    pub f_stat: Option<f64>,
    pub dof: Option<(usize, usize)>,
    pub p_value: Option<f64>,
}

/// Inference for a selected model. With two or more groups the F-test
/// compares the two largest blocks unless `contrast` is given.
pub fn infer(d: &Dataset, result: &SubgroupResult, level: f64, contrast: Option<&DMatrix<f64>>) -> Result<InferenceReport> {
    let gd = GroupDesign::new(d, &result.partition)?;
    let k = result.k_hat();
    let sigma2 = sigma2_hat(d, &result.eta_hat, &result.beta_hat, k)?;
    let asd_eta: Vec<f64> = asymptotic_sds(&gd, sigma2, Target::Eta)?.iter().copied().collect();
    let asd_alpha: Vec<f64> = asymptotic_sds(&gd, sigma2, Target::Alpha)?.iter().copied().collect();
    let eta_hat: Vec<f64> = result.eta_hat.iter().copied().collect();
    let alpha_hat: Vec<f64> = (0..k * d.p()).map(|j| result.alpha_hat[(j / d.p(), j % d.p())]).collect();
    let ci_eta = confidence_intervals(&eta_hat, &asd_eta, level)?;
    let ci_alpha = confidence_intervals(&alpha_hat, &asd_alpha, level)?;
    let default = result.partition.largest_two().map(|(a, b)| default_contrast(k, d.p(), a, b));
    let test = match contrast.or(default.as_ref()) {
        Some(l) => Some(f_test(&gd, &result.alpha_hat, sigma2, l)?),
        None => None,
    };
    Ok(InferenceReport {
        level,
        sigma2_hat: sigma2,
        eta_hat,
        alpha_hat,
        asd_eta,
        asd_alpha,
        ci_eta,
        ci_alpha,
        f_stat: test.map(|t| t.f_stat),
        dof: test.map(|t| t.dof),
        p_value: test.map(|t| t.p_value),
    })
}

/// Least squares with the partition known: `(eta_or, alpha_or)`.
pub fn oracle_estimate(d: &Dataset, part: &Partition) -> Result<(DVector<f64>, DMatrix<f64>)> {
    GroupDesign::new(d, part)?.least_squares(d.y())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_case(seed: u64, n: usize, q: usize, p: usize, k: usize) -> (Dataset, Partition) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut z = DMatrix::from_fn(n, q, |_, _| rng.sample::<f64, _>(StandardNormal));
        z.column_mut(0).fill(1.0);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        (Dataset::new(y, z, x).unwrap(), Partition::from_labels(&labels))
    }

    fn dense_sds(gd: &GroupDesign, sigma2: f64) -> DVector<f64> {
        let inv = gd.gram().try_inverse().unwrap();
        inv.diagonal().map(|v| (sigma2 * v).sqrt())
    }

    #[test]
    fn design_shapes() {
        let (d, part) = random_case(1, 12, 2, 2, 3);
        let gd = GroupDesign::new(&d, &part).unwrap();
        let w = gd.w_tilde();
        assert!((0..12).all(|i| w.row(i).sum() == 1.0));
        let xt = gd.x_tilde();
        let xtx = xt.tr_mul(&xt);
        for a in 0..6 {
            for b in 0..6 {
                if a / 2 != b / 2 {
                    assert_eq!(xtx[(a, b)], 0.0);
                }
            }
        }
    }

    #[test]
    fn sigma2_example() {
        let n = 100;
        let z = DMatrix::from_fn(n, 5, |i, c| if c == 0 { 1.0 } else { ((i * i * (c + 3) + c * i) % 17) as f64 });
        let x = DMatrix::from_element(n, 1, 1.0);
        let mut y = DVector::from_element(n, 0.5);
        let d = Dataset::new(y.clone(), z.clone(), x.clone()).unwrap();
        let v = sigma2_hat(&d, &DVector::zeros(5), &DMatrix::zeros(n, 1), 2).unwrap();
        assert!((v - 25.0 / 93.0).abs() < 1e-15);
        y.fill(0.0);
        let d = Dataset::new(y, z, x).unwrap();
        assert_eq!(sigma2_hat(&d, &DVector::zeros(5), &DMatrix::zeros(n, 1), 2).unwrap(), 0.0);
        assert!(matches!(sigma2_hat(&d, &DVector::zeros(5), &DMatrix::zeros(n, 1), 95), Err(Error::NonPositiveDof(0))));
    }

    #[test]
    fn orthogonal_design_sd() {
        // Z = intercept only, x = +-1 balanced inside each group, so Z'X_tilde = 0
        let n = 12;
        let z = DMatrix::from_element(n, 1, 1.0);
        let x = DMatrix::from_fn(n, 1, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let d = Dataset::new(DVector::zeros(n), z, x).unwrap();
        let part = Partition::new(vec![(0..4).collect(), (4..12).collect()], n).unwrap();
        let gd = GroupDesign::new(&d, &part).unwrap();
        let e1 = DVector::from_vec(vec![0.0, 1.0]);
        let sd = asymptotic_sd(&gd, 4.0, &e1, Target::Alpha).unwrap();
        assert!((sd - 2.0 / 8f64.sqrt()).abs() < 1e-14);
        let sd2 = asymptotic_sd(&gd, 16.0, &e1, Target::Alpha).unwrap();
        assert!((sd2 - 2.0 * sd).abs() < 1e-14);
    }

    #[test]
    fn schur_sds_match_dense_inverse() {
        for seed in 0..10 {
            let (d, part) = random_case(seed, 40, 2, 1, 2);
            let gd = GroupDesign::new(&d, &part).unwrap();
            let dense = dense_sds(&gd, 0.7);
            let eta = asymptotic_sds(&gd, 0.7, Target::Eta).unwrap();
            let alpha = asymptotic_sds(&gd, 0.7, Target::Alpha).unwrap();
            for (j, v) in eta.iter().chain(alpha.iter()).enumerate() {
                assert!((v - dense[j]).abs() <= 1e-9 * dense[j]);
            }
        }
    }

    #[test]
    fn intervals() {
        let ci = confidence_intervals(&[1.0, 2.0], &[0.5, 0.0], 0.95).unwrap();
        assert!((ci[0].upper - 1.0 - 1.959_964 * 0.5).abs() < 1e-6);
        assert_eq!(ci[1], Interval { lower: 2.0, upper: 2.0 });
        let mut last = f64::INFINITY;
        for level in [0.9, 0.5, 0.1, 0.01, 1e-6] {
            let w = confidence_intervals(&[0.0], &[1.0], level).unwrap()[0].upper;
            assert!(w < last);
            last = w;
        }
        assert!(last < 1e-5);
        assert!(matches!(confidence_intervals(&[0.0], &[1.0], 1.0), Err(Error::InvalidLevel(_))));
    }

    #[test]
    fn f_test_null_and_scaling() {
        let (d, part) = random_case(3, 30, 2, 1, 2);
        let gd = GroupDesign::new(&d, &part).unwrap();
        let l = default_contrast(2, 1, 0, 1);
        let same = DMatrix::from_element(2, 1, 1.3);
        let t = f_test(&gd, &same, 0.5, &l).unwrap();
        assert_eq!((t.f_stat, t.p_value, t.dof), (0.0, 1.0, (1, 30 - 2 - 2 - 1)));
        let alpha = DMatrix::from_vec(2, 1, vec![1.0, -0.4]);
        let t1 = f_test(&gd, &alpha, 0.5, &l).unwrap();
        let t2 = f_test(&gd, &alpha, 0.5, &(&l * -3.5)).unwrap();
        assert!((t1.f_stat - t2.f_stat).abs() <= 1e-12 * t1.f_stat);
        assert!((0.0..=1.0).contains(&t1.p_value));
    }

    #[test]
    fn oracle_matches_normal_equations() {
        let (d, part) = random_case(5, 25, 3, 2, 2);
        let gd = GroupDesign::new(&d, &part).unwrap();
        let (eta, alpha) = gd.least_squares(d.y()).unwrap();
        let coef = DVector::from_iterator(3 + 4, eta.iter().copied().chain((0..4).map(|j| alpha[(j / 2, j % 2)])));
        let resid = d.y() - gd.u() * coef;
        assert!(gd.u().tr_mul(&resid).amax() < 1e-10);
    }

    proptest! {
        #[test]
        fn f_invariant_to_row_mixing(seed in 0u64..500, m in prop::collection::vec(-2.0f64..2.0, 4), a in prop::collection::vec(-2.0f64..2.0, 6)) {
            let (d, part) = random_case(seed, 30, 2, 2, 3);
            let gd = GroupDesign::new(&d, &part).unwrap();
            let mix = DMatrix::from_vec(2, 2, m.clone());
            prop_assume!(mix.determinant().abs() > 0.1);
            let l = default_contrast(3, 2, 0, 2);
            let alpha = DMatrix::from_vec(3, 2, a);
            let t1 = f_test(&gd, &alpha, 0.8, &l).unwrap();
            let t2 = f_test(&gd, &alpha, 0.8, &(mix * &l)).unwrap();
            prop_assert!((t1.f_stat - t2.f_stat).abs() <= 1e-9 * t1.f_stat.max(1e-12));
        }

        #[test]
        fn intervals_contain_estimates(e in prop::collection::vec(-10.0f64..10.0, 1..5), s in 0.0f64..3.0, level in 0.01f64..0.99) {
            let asds = vec![s; e.len()];
            for (ci, &v) in confidence_intervals(&e, &asds, level).unwrap().iter().zip(&e) {
                prop_assert!(ci.contains(v));
            }
        }
    }
}
