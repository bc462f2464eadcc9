//! Seeded data-generating processes and the replication study harness.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{self, GroupDesign};
use crate::model::{Dataset, TrueModel};
use crate::path::{self, PathConfig};
use crate::penalty::PenaltyKind;
use crate::subgroup::{self, Partition, SubgroupResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Example {
    /// One normal treatment variable, two groups at `+-alpha_scale`.
    One,
    /// Three treatment variables (one normal, two standardized binary),
    /// two groups at `+-alpha_scale` in every coordinate.
    Two,
    /// One normal treatment variable with a common effect `alpha_scale`.
    Three,
}

impl std::str::FromStr for Example {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "1" | "one" => Ok(Example::One),
            "2" | "two" => Ok(Example::Two),
            "3" | "three" => Ok(Example::Three),
            _ => Err(Error::InvalidConfig(format!("unknown example {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    pub example: Example,
    pub n: usize,
    pub alpha_scale: f64,
    pub seed: u64,
    /// Nuisance columns including the intercept.
    pub q: usize,
    pub sigma: f64,
    /// Exchangeable correlation of the non-intercept nuisance columns.
    pub rho_z: f64,
}

impl DgpSpec {
    pub fn new(example: Example, n: usize, seed: u64) -> Self {
        DgpSpec {
            example,
            n,
            alpha_scale: 2.0,
            seed,
            q: 5,
            sigma: 0.5,
            rho_z: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 10 {
            return Err(Error::InvalidConfig(format!("n = {} < 10", self.n)));
        }
        if !(self.alpha_scale > 0.0) {
            return Err(Error::InvalidConfig(format!("alpha_scale must be > 0, got {}", self.alpha_scale)));
        }
        if self.q == 0 || !(self.sigma >= 0.0) || !(0.0..1.0).contains(&self.rho_z) {
            return Err(Error::InvalidConfig("need q >= 1, sigma >= 0 and 0 <= rho_z < 1".into()));
        }
        Ok(())
    }

    /// Same design, seed for replication `rep`.
    pub fn replication(&self, rep: u64) -> Self {
        DgpSpec {
            seed: replication_seed(self.seed, rep),
            ..self.clone()
        }
    }
}

/// Seed of replication `rep`: first word of ChaCha stream `rep` under the study seed.
pub fn replication_seed(seed: u64, rep: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng.next_u64()
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Centered binary column with squared norm n; redrawn if constant.
fn standardized_binary(rng: &mut ChaCha8Rng, n: usize, prob: f64) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| if rng.random_bool(prob) { 1.0 } else { 0.0 }).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        let centered: Vec<f64> = v.iter().map(|x| x - mean).collect();
        let ss: f64 = centered.iter().map(|x| x * x).sum();
        if ss > 0.0 {
            let scale = (n as f64 / ss).sqrt();
            return centered.iter().map(|x| x * scale).collect();
        }
    }
}

/// Draw a dataset and its truth; fully determined by `spec.seed`.
pub fn generate(spec: &DgpSpec) -> Result<(Dataset, TrueModel)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, q) = (spec.n, spec.q);
    let eta = DVector::from_fn(q, |_, _| 1.0 + rng.random::<f64>());

    let (a, b) = (spec.rho_z.sqrt(), (1.0 - spec.rho_z).sqrt());
    let mut z = DMatrix::from_element(n, q, 1.0);
    for i in 0..n {
        let shared = normal(&mut rng);
        for l in 1..q {
            z[(i, l)] = a * shared + b * normal(&mut rng);
        }
    }

    let p = if spec.example == Example::Two { 3 } else { 1 };
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        x[(i, 0)] = normal(&mut rng);
    }
    for c in 1..p {
        let col = standardized_binary(&mut rng, n, 0.7);
        x.column_mut(c).copy_from_slice(&col);
    }

    let s = spec.alpha_scale;
    let (partition, alpha) = if spec.example == Example::Three {
        (vec![(0..n).collect::<Vec<_>>()], DMatrix::from_element(1, p, s))
    } else {
        let mut blocks = vec![Vec::new(), Vec::new()];
        for i in 0..n {
            blocks[if rng.random_bool(0.5) { 0 } else { 1 }].push(i);
        }
        let values = [s, -s];
        let keep: Vec<usize> = (0..2).filter(|&g| !blocks[g].is_empty()).collect();
        let alpha = DMatrix::from_fn(keep.len(), p, |g, _| values[keep[g]]);
        (keep.into_iter().map(|g| std::mem::take(&mut blocks[g])).collect(), alpha)
    };

    let truth = TrueModel {
        partition,
        alpha,
        eta,
        sigma: spec.sigma,
    };
    let beta = truth.beta(n);
    let mut y = &z * &truth.eta;
    for i in 0..n {
        y[i] += x.row(i).dot(&beta.row(i)) + spec.sigma * normal(&mut rng);
    }
    Ok((Dataset::new(y, z, x)?, truth))
}

/// Estimated block sharing the most members with each true group (ties to the lower index).
pub fn match_groups(truth: &TrueModel, est: &Partition) -> Vec<usize> {
    let labels = est.labels();
    truth
        .partition
        .iter()
        .map(|block| {
            let mut counts = vec![0usize; est.k()];
            for &i in block {
                counts[labels[i]] += 1;
            }
            let best = counts.iter().copied().max().unwrap_or(0);
            counts.iter().position(|&c| c == best).unwrap_or(0)
        })
        .collect()
}

/// Outcome of one penalty on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: u64,
    pub penalty: PenaltyKind,
    /// `None` when the replication failed.
    pub fit: Option<RepFit>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepFit {
    pub k_hat: usize,
    pub lambda: f64,
    /// Matched group effects, true-group-major (`k * p + c`).
    pub alpha: Vec<f64>,
    pub asd: Vec<f64>,
    pub eta_mse: f64,
    pub p_value: Option<f64>,
    /// Smallest grid lambda with a single group.
    pub full_fusion_lambda: Option<f64>,
}

/// Least squares with the true partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub rep: u64,
    pub alpha: Vec<f64>,
    pub asd: Vec<f64>,
    pub eta_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaStat {
    pub group: usize,
    pub coordinate: usize,
    pub true_value: f64,
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub asd_mean: f64,
    pub esd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationSummary {
    pub penalty: PenaltyKind,
    pub reps: usize,
    pub failures: usize,
    pub k_hat_mean: f64,
    pub k_hat_median: f64,
    pub k_hat_sd: f64,
    pub pct_correct_k: f64,
    /// Over every successful replication.
    pub alpha_stats: Vec<AlphaStat>,
    /// Over replications with the correct number of groups.
    pub alpha_stats_correct_k: Vec<AlphaStat>,
    pub eta_mse_distribution: Vec<f64>,
    pub eta_mse_mean: f64,
    /// Over replications with at least two estimated groups.
    pub p_value_mean: Option<f64>,
    pub p_value_median: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub failures: usize,
    pub alpha_stats: Vec<AlphaStat>,
    pub eta_mse_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub dgp: DgpSpec,
    pub reps: usize,
    pub oracle: OracleSummary,
    pub summaries: Vec<ReplicationSummary>,
    #[serde(skip)]
    pub records: Vec<RepRecord>,
    #[serde(skip)]
    pub oracle_fits: Vec<OracleFit>,
}

impl StudyReport {
    pub fn summary(&self, kind: PenaltyKind) -> Option<&ReplicationSummary> {
        self.summaries.iter().find(|s| s.penalty == kind)
    }

    pub fn records_for(&self, kind: PenaltyKind) -> impl Iterator<Item = &RepRecord> {
        self.records.iter().filter(move |r| r.penalty == kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub reps: usize,
    pub penalties: Vec<PenaltyKind>,
    /// Penalty kind and gamma are overridden per entry of `penalties`.
    pub path: PathConfig,
    /// `None` keeps each penalty's default gamma.
    pub gamma: Option<f64>,
    pub level: f64,
    pub threads: usize,
}

impl StudyConfig {
    pub fn new(reps: usize, penalties: Vec<PenaltyKind>) -> Self {
        StudyConfig {
            reps,
            penalties,
            path: PathConfig::default(),
            gamma: None,
            level: 0.95,
            threads: 1,
        }
    }

    fn path_for(&self, kind: PenaltyKind) -> PathConfig {
        PathConfig {
            penalty: kind,
            gamma: self.gamma.unwrap_or(kind.default_gamma()),
            ..self.path.clone()
        }
    }
}

fn eta_mse(eta_hat: &DVector<f64>, eta: &DVector<f64>) -> f64 {
    (eta_hat - eta).norm() / (eta.len() as f64).sqrt()
}

fn oracle_fit(d: &Dataset, truth: &TrueModel, rep: u64) -> Result<OracleFit> {
    let part = Partition::new(truth.partition.clone(), d.n())?;
    let gd = GroupDesign::new(d, &part)?;
    let (eta, alpha) = gd.least_squares(d.y())?;
    let beta = DMatrix::from_fn(d.n(), d.p(), |i, c| alpha[(part.labels()[i], c)]);
    let sigma2 = inference::sigma2_hat(d, &eta, &beta, part.k())?;
    let sds = inference::asymptotic_sds(&gd, sigma2, inference::Target::Alpha)?;
    // canonical block order may differ from the truth's order
    let order = match_groups(truth, &part);
    let p = d.p();
    let pick = |v: &dyn Fn(usize, usize) -> f64| -> Vec<f64> {
        order.iter().flat_map(|&b| (0..p).map(move |c| (b, c))).map(|(b, c)| v(b, c)).collect()
    };
    Ok(OracleFit {
        rep,
        alpha: pick(&|b, c| alpha[(b, c)]),
        asd: pick(&|b, c| sds[b * p + c]),
        eta_mse: eta_mse(&eta, &truth.eta),
    })
}

fn penalized_fit(d: &Dataset, truth: &TrueModel, cfg: &PathConfig, level: f64) -> Result<RepFit> {
    let path = path::compute_path(d, cfg)?;
    let sel: SubgroupResult = subgroup::select_model(&path)?;
    let p = d.p();
    let contrast = sel.partition.largest_two().map(|(a, b)| inference::default_contrast(sel.k_hat(), p, a, b));
    let report = inference::infer(d, &sel, level, contrast.as_ref())?;
    let order = match_groups(truth, &sel.partition);
    let idx: Vec<usize> = order.iter().flat_map(|&b| (0..p).map(move |c| b * p + c)).collect();
    Ok(RepFit {
        k_hat: sel.k_hat(),
        lambda: sel.lambda_selected,
        alpha: idx.iter().map(|&j| report.alpha_hat[j]).collect(),
        asd: idx.iter().map(|&j| report.asd_alpha[j]).collect(),
        eta_mse: eta_mse(&sel.eta_hat, &truth.eta),
        p_value: report.p_value,
        full_fusion_lambda: path.first_full_fusion(),
    })
}

fn run_replication(spec: &DgpSpec, cfg: &StudyConfig, rep: u64) -> (Result<OracleFit>, Vec<RepRecord>) {
    let generated = generate(&spec.replication(rep));
    let (d, truth) = match generated {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            let records = cfg
                .penalties
                .iter()
                .map(|&penalty| RepRecord {
                    rep,
                    penalty,
                    fit: None,
                    error: Some(msg.clone()),
                })
                .collect();
            return (Err(e), records);
        }
    };
    let oracle = oracle_fit(&d, &truth, rep);
    let records = cfg
        .penalties
        .iter()
        .map(|&penalty| match penalized_fit(&d, &truth, &cfg.path_for(penalty), cfg.level) {
            Ok(fit) => RepRecord {
                rep,
                penalty,
                fit: Some(fit),
                error: None,
            },
            Err(e) => RepRecord {
                rep,
                penalty,
                fit: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    (oracle, records)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len();
    if m % 2 == 1 {
        s[m / 2]
    } else {
        0.5 * (s[m / 2 - 1] + s[m / 2])
    }
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn alpha_stats(truth_alpha: &DMatrix<f64>, fits: &[(&[f64], &[f64])]) -> Vec<AlphaStat> {
    let p = truth_alpha.ncols();
    let mut out = Vec::new();
    for g in 0..truth_alpha.nrows() {
        for c in 0..p {
            let j = g * p + c;
            let vals: Vec<f64> = fits.iter().filter(|f| f.0.len() > j).map(|f| f.0[j]).collect();
            let asds: Vec<f64> = fits.iter().filter(|f| f.1.len() > j).map(|f| f.1[j]).collect();
            if vals.is_empty() {
                continue;
            }
            out.push(AlphaStat {
                group: g,
                coordinate: c,
                true_value: truth_alpha[(g, c)],
                count: vals.len(),
                mean: mean(&vals),
                median: median(&vals),
                asd_mean: mean(&asds),
                esd: sd(&vals),
            });
        }
    }
    out
}

/// Nominal group effects of the design (group 0 positive when two groups).
fn nominal_alpha(spec: &DgpSpec) -> DMatrix<f64> {
    let p = if spec.example == Example::Two { 3 } else { 1 };
    match spec.example {
        Example::Three => DMatrix::from_element(1, p, spec.alpha_scale),
        _ => DMatrix::from_fn(2, p, |g, _| if g == 0 { spec.alpha_scale } else { -spec.alpha_scale }),
    }
}

fn summarize(kind: PenaltyKind, records: &[&RepRecord], true_alpha: &DMatrix<f64>) -> ReplicationSummary {
    let fits: Vec<&RepFit> = records.iter().filter_map(|r| r.fit.as_ref()).collect();
    let k_true = true_alpha.nrows();
    let ks: Vec<f64> = fits.iter().map(|f| f.k_hat as f64).collect();
    let all: Vec<(&[f64], &[f64])> = fits.iter().map(|f| (f.alpha.as_slice(), f.asd.as_slice())).collect();
    let correct: Vec<(&[f64], &[f64])> = fits
        .iter()
        .filter(|f| f.k_hat == k_true)
        .map(|f| (f.alpha.as_slice(), f.asd.as_slice()))
        .collect();
    let pv: Vec<f64> = fits.iter().filter_map(|f| f.p_value).collect();
    let eta: Vec<f64> = fits.iter().map(|f| f.eta_mse).collect();
    let nan_if_empty = |v: &[f64], f: fn(&[f64]) -> f64| if v.is_empty() { f64::NAN } else { f(v) };
    ReplicationSummary {
        penalty: kind,
        reps: records.len(),
        failures: records.len() - fits.len(),
        k_hat_mean: nan_if_empty(&ks, mean),
        k_hat_median: nan_if_empty(&ks, median),
        k_hat_sd: sd(&ks),
        pct_correct_k: if fits.is_empty() {
            0.0
        } else {
            correct.len() as f64 / fits.len() as f64
        },
        alpha_stats: alpha_stats(true_alpha, &all),
        alpha_stats_correct_k: alpha_stats(true_alpha, &correct),
        eta_mse_mean: nan_if_empty(&eta, mean),
        eta_mse_distribution: eta,
        p_value_mean: (!pv.is_empty()).then(|| mean(&pv)),
        p_value_median: (!pv.is_empty()).then(|| median(&pv)),
    }
}

/// Run `cfg.reps` replications. Per-replication failures are counted, never
/// fatal; results do not depend on `cfg.threads`.
pub fn run_study(spec: &DgpSpec, cfg: &StudyConfig) -> Result<StudyReport> {
    spec.validate()?;
    if cfg.reps == 0 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    if cfg.penalties.is_empty() {
        return Err(Error::InvalidConfig("no penalty selected".into()));
    }
    let threads = cfg.threads.clamp(1, cfg.reps);
    let mut results: Vec<(u64, Result<OracleFit>, Vec<RepRecord>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|t| {
                scope.spawn(move || {
                    (t..cfg.reps)
                        .step_by(threads)
                        .map(|r| {
                            let (o, recs) = run_replication(spec, cfg, r as u64);
                            (r as u64, o, recs)
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("replication worker panicked")).collect()
    });
    results.sort_by_key(|r| r.0);

    let mut oracle_fits = Vec::new();
    let mut oracle_failures = 0;
    let mut records = Vec::new();
    for (_, oracle, recs) in results {
        match oracle {
            Ok(o) => oracle_fits.push(o),
            Err(_) => oracle_failures += 1,
        }
        records.extend(recs);
    }
    let true_alpha = nominal_alpha(spec);
    let summaries = cfg
        .penalties
        .iter()
        .map(|&kind| {
            let recs: Vec<&RepRecord> = records.iter().filter(|r| r.penalty == kind).collect();
            summarize(kind, &recs, &true_alpha)
        })
        .collect();
    let oracle_pairs: Vec<(&[f64], &[f64])> = oracle_fits.iter().map(|o| (o.alpha.as_slice(), o.asd.as_slice())).collect();
    let oracle_eta: Vec<f64> = oracle_fits.iter().map(|o| o.eta_mse).collect();
    Ok(StudyReport {
        dgp: spec.clone(),
        reps: cfg.reps,
        oracle: OracleSummary {
            failures: oracle_failures,
            alpha_stats: alpha_stats(&true_alpha, &oracle_pairs),
            eta_mse_mean: if oracle_eta.is_empty() { f64::NAN } else { mean(&oracle_eta) },
        },
        summaries,
        records,
        oracle_fits,
    })
}

/// Per-replication CSV ledger, one row per (replication, penalty).
pub fn write_ledger(report: &StudyReport, sink: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["rep", "penalty", "k_hat", "lambda", "alpha", "asd", "eta_mse", "p_value", "full_fusion_lambda", "error"])?;
    let join = |v: &[f64]| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in &report.records {
        let row = match &r.fit {
            Some(f) => [
                r.rep.to_string(),
                r.penalty.to_string(),
                f.k_hat.to_string(),
                f.lambda.to_string(),
                join(&f.alpha),
                join(&f.asd),
                f.eta_mse.to_string(),
                opt(f.p_value),
                opt(f.full_fusion_lambda),
                String::new(),
            ],
            None => {
                let mut row: [String; 10] = Default::default();
                row[0] = r.rep.to_string();
                row[1] = r.penalty.to_string();
                row[9] = r.error.clone().unwrap_or_default();
                row
            }
        };
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

/// `x_i'beta_i` under the truth, the fitted `beta_hat` and a homogeneous
/// least-squares fit, one row per subject.
pub fn write_ols_comparison(d: &Dataset, truth: &TrueModel, beta_hat: &DMatrix<f64>, sink: impl Write) -> Result<()> {
    let n = d.n();
    let (_, alpha_ols) = GroupDesign::new(d, &Partition::single(n))?.least_squares(d.y())?;
    let beta_true = truth.beta(n);
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["subject", "true", "fitted", "ols"])?;
    for i in 0..n {
        let x = d.x().row(i);
        w.write_record([
            i.to_string(),
            x.dot(&beta_true.row(i)).to_string(),
            x.dot(&beta_hat.row(i)).to_string(),
            x.dot(&alpha_ols.row(0)).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_one_shape() {
        let (d, truth) = generate(&DgpSpec::new(Example::One, 200, 42)).unwrap();
        assert_eq!((d.n(), d.q(), d.p()), (200, 5, 1));
        assert!(d.z().column(0).iter().all(|&v| v == 1.0));
        assert_eq!(truth.k(), 2);
        assert_eq!(truth.alpha.as_slice(), &[2.0, -2.0]);
        assert!(truth.eta.iter().all(|&e| (1.0..=2.0).contains(&e)));
    }

    #[test]
    fn example_three_is_homogeneous() {
        let (_, truth) = generate(&DgpSpec::new(Example::Three, 200, 1)).unwrap();
        assert_eq!(truth.k(), 1);
        assert_eq!(truth.alpha.as_slice(), &[2.0]);
    }

    #[test]
    fn seeded_determinism() {
        let spec = DgpSpec::new(Example::Two, 50, 9);
        let (a, ta) = generate(&spec).unwrap();
        let (b, tb) = generate(&spec).unwrap();
        assert_eq!(a.y().as_slice(), b.y().as_slice());
        assert_eq!(a.x().as_slice(), b.x().as_slice());
        assert_eq!(ta, tb);
        let (c, _) = generate(&spec.replication(1)).unwrap();
        assert_ne!(a.y().as_slice(), c.y().as_slice());
    }

    #[test]
    fn binary_columns_standardized() {
        for seed in 0..5 {
            let (d, _) = generate(&DgpSpec::new(Example::Two, 60, seed)).unwrap();
            for c in 1..3 {
                let col = d.x().column(c);
                assert!(col.sum().abs() < 1e-10);
                assert!((col.norm_squared() - 60.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noise_sd() {
        let mut spec = DgpSpec::new(Example::Three, 100_000, 7);
        spec.q = 1;
        let (d, truth) = generate(&spec).unwrap();
        let resid = d.y() - d.fitted(&truth.eta, &truth.beta(d.n())).unwrap();
        let s = sd(resid.as_slice());
        assert!((s - 0.5).abs() < 0.005);
    }

    #[test]
    fn group_fraction_binomial() {
        let n = 400;
        let bound = 3.0 * (0.25 / n as f64).sqrt();
        for seed in 0..20 {
            let (_, truth) = generate(&DgpSpec::new(Example::One, n, seed)).unwrap();
            let frac = truth.partition[0].len() as f64 / n as f64;
            assert!((frac - 0.5).abs() < bound, "seed {seed}: {frac}");
        }
    }

    #[test]
    fn nuisance_correlation() {
        let mut spec = DgpSpec::new(Example::One, 20_000, 3);
        spec.q = 3;
        let (d, _) = generate(&spec).unwrap();
        let (a, b) = (d.z().column(1), d.z().column(2));
        let r = a.dot(&b) / (a.norm() * b.norm());
        assert!((r - 0.3).abs() < 0.03);
    }

    #[test]
    fn invalid_specs() {
        assert!(generate(&DgpSpec::new(Example::One, 9, 0)).is_err());
        let mut s = DgpSpec::new(Example::One, 20, 0);
        s.alpha_scale = 0.0;
        assert!(generate(&s).is_err());
    }

    #[test]
    fn matching_and_largest_groups() {
        let truth = TrueModel {
            partition: vec![vec![0, 1, 2], vec![3, 4]],
            alpha: DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
            eta: DVector::zeros(1),
            sigma: 1.0,
        };
        let est = Partition::from_labels(&[0, 1, 1, 2, 2]);
        assert_eq!(match_groups(&truth, &est), vec![1, 2]);
        assert_eq!(est.largest_two(), Some((1, 2)));
        assert_eq!(Partition::single(5).largest_two(), None);
    }

    #[test]
    fn study_is_thread_independent() {
        let spec = DgpSpec::new(Example::One, 40, 5);
        let mut cfg = StudyConfig::new(3, vec![PenaltyKind::Mcp]);
        cfg.path.grid_size = 15;
        let one = run_study(&spec, &cfg).unwrap();
        cfg.threads = 2;
        let two = run_study(&spec, &cfg).unwrap();
        assert_eq!(one.records, two.records);
        assert_eq!(serde_json::to_string(&one).unwrap(), serde_json::to_string(&two).unwrap());
        let s = one.summary(PenaltyKind::Mcp).unwrap();
        assert_eq!(s.reps, 3);
        assert!((0.0..=1.0).contains(&s.pct_correct_k));
        let mut buf = Vec::new();
        write_ledger(&one, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 4);
    }
}
