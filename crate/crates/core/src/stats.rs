//! Permutation two-sample tests with trained distance statistics.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::ProcessSpec;
use crate::error::{arg_err, shape_err, Result};
use crate::hrpcf::develop_rank2_all;
use crate::path::{develop_all, epcfd, mean_matrix, Dataset, MapEnsemble};
use crate::seed::{derive_seed, rng_from_seed};
use crate::train::{train_discriminator, train_rank1, AscentConfig, DiscConfig, Discriminator};
use crate::unitary::{hs_distance_sq, sample_map_ensemble, CMat};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    #[default]
    Hrpcfd,
    /// Rank-1 baseline: EPCFD over trained maps.
    Pcfd,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StatConfig {
    pub kind: StatisticKind,
    pub disc: DiscConfig,
}

#[derive(Clone, Debug)]
pub enum TestStatistic {
    Trained(Box<Discriminator>),
    Rank1 { ens: MapEnsemble, time_augment: bool },
}

pub fn fit_test_statistic(x_train: &Dataset, y_train: &Dataset, cfg: &StatConfig) -> Result<TestStatistic> {
    match cfg.kind {
        StatisticKind::Hrpcfd => Ok(TestStatistic::Trained(Box::new(train_discriminator(x_train, y_train, &cfg.disc)?))),
        StatisticKind::Pcfd => {
            let c = &cfg.disc;
            c.validate()?;
            if x_train.dim() != y_train.dim() || x_train.path_len() != y_train.path_len() {
                return shape_err("X and Y must share dimension and length");
            }
            let (xa, ya) = if c.time_augment {
                (x_train.time_augment(), y_train.time_augment())
            } else {
                (x_train.clone(), y_train.clone())
            };
            let mut ens = sample_map_ensemble(xa.dim(), c.n, c.k1, c.init_std, derive_seed(c.seed, 10))?;
            let asc = AscentConfig {
                lr: c.lr1,
                iterations: c.iter1,
                optimizer: c.optimizer,
                backtracking: c.backtracking,
                max_halvings: c.max_halvings,
            };
            train_rank1(&xa, &ya, &mut ens, &asc, c.batch, derive_seed(c.seed, 12))?;
            Ok(TestStatistic::Rank1 { ens, time_augment: c.time_augment })
        }
    }
}

/// Which fitted law's regressions produce a sample's conditional paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    X,
    Y,
}

/// Per-sample unitary features, fixed before any relabelling; the statistic
/// of a split `(A, B)` is `√(mean_k ‖mean_A f_k − mean_B f_k‖²)`.
struct FeatureTable {
    f: Vec<Vec<CMat>>,
    dim: usize,
}

impl FeatureTable {
    fn statistic(&self, a: &[usize], b: &[usize]) -> f64 {
        let total: f64 = self
            .f
            .iter()
            .map(|f| {
                let ma = mean_matrix(a.iter().map(|&s| &f[s]), self.dim);
                let mb = mean_matrix(b.iter().map(|&s| &f[s]), self.dim);
                hs_distance_sq(&ma, &mb).unwrap_or(f64::NAN)
            })
            .sum();
        (total / self.f.len() as f64).sqrt()
    }
}

impl TestStatistic {
    pub fn evaluate(&self, x: &Dataset, y: &Dataset) -> Result<f64> {
        match self {
            TestStatistic::Trained(d) => d.statistic(x, y),
            TestStatistic::Rank1 { ens, time_augment } => {
                if *time_augment {
                    epcfd(ens, &x.time_augment(), &y.time_augment())
                } else {
                    epcfd(ens, x, y)
                }
            }
        }
    }

    /// Upper bound `2√m` of the statistic.
    pub fn bound(&self) -> f64 {
        2.0 * (self.dim() as f64).sqrt()
    }

    fn features(&self, data: &Dataset, side: Side) -> Result<Vec<Vec<CMat>>> {
        match self {
            TestStatistic::Trained(d) => {
                let regs = match side {
                    Side::X => &d.reg_x,
                    Side::Y => &d.reg_y,
                };
                let mut out = Vec::new();
                for paths in d.cond_paths(data, regs)? {
                    for m2 in d.m2_ens.maps() {
                        out.push(develop_rank2_all(m2, &paths)?);
                    }
                }
                Ok(out)
            }
            TestStatistic::Rank1 { ens, time_augment } => {
                let data = if *time_augment { data.time_augment() } else { data.clone() };
                ens.maps().iter().map(|m| develop_all(m, &data)).collect()
            }
        }
    }

    fn dim(&self) -> usize {
        match self {
            TestStatistic::Trained(d) => d.m2_ens.maps()[0].lie_dim(),
            TestStatistic::Rank1 { ens, .. } => ens.maps()[0].lie_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub statistic: f64,
    pub quantile: f64,
    pub reject: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimate {
    /// A single test.
    Single,
    Power,
    TypeI,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub estimate: Estimate,
    pub alpha: f64,
    pub perms: usize,
    pub n_runs: usize,
    pub runs: Vec<RunRecord>,
    /// Fraction of rejections across `runs`.
    pub rejection_rate: f64,
    /// Matched null tests (one process against a fresh sample of itself), when run.
    pub null_runs: Vec<RunRecord>,
    pub null_rejection_rate: Option<f64>,
    /// Sorted permutation distribution of a single test.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub permutation_distribution: Vec<f64>,
}

impl TestReport {
    /// Fixed-width text table of the runs.
    pub fn summary(&self) -> String {
        let mut s = format!("{:>5} {:>12} {:>12} {:>7}\n", "run", "statistic", "quantile", "reject");
        for r in &self.runs {
            s.push_str(&format!("{:>5} {:>12.6} {:>12.6} {:>7}\n", r.run, r.statistic, r.quantile, r.reject));
        }
        let label = match self.estimate {
            Estimate::Single => "rejection",
            Estimate::Power => "power",
            Estimate::TypeI => "type-I",
        };
        s.push_str(&format!("{label:>18} {:>12.4} (runs {}, alpha {})\n", self.rejection_rate, self.n_runs, self.alpha));
        if let Some(t) = self.null_rejection_rate {
            s.push_str(&format!("{:>18} {:>12.4} (matched null)\n", "type-I", t));
        }
        s
    }
}

/// Empirical `(1−α)` quantile `sorted[⌈(1−α)M⌉ − 1]`.
pub fn permutation_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let m = sorted.len();
    let k = (((1.0 - alpha) * m as f64).ceil() as usize).clamp(1, m);
    sorted[k - 1]
}

/// Observed statistic, sorted permutation distribution and verdict.
pub struct PermutationOutcome {
    pub statistic: f64,
    pub quantile: f64,
    pub reject: bool,
    pub distribution: Vec<f64>,
}

/// [`permutation_outcome_with`] where `x` follows the X-law and `y` the Y-law.
pub fn permutation_outcome(stat: &TestStatistic, x: &Dataset, y: &Dataset, perms: usize, alpha: f64, seed: u64) -> Result<PermutationOutcome> {
    permutation_outcome_with(stat, x, y, (Side::X, Side::Y), perms, alpha, seed)
}

/// Features are computed once per sample, `x` through the `sides.0`
/// regressions and `y` through `sides.1`, then the pooled features are
/// re-split `perms` times. The pool is put in a canonical order first, so the
/// permutation sequence depends only on the multiset of paths and the seed.
pub fn permutation_outcome_with(
    stat: &TestStatistic,
    x: &Dataset,
    y: &Dataset,
    sides: (Side, Side),
    perms: usize,
    alpha: f64,
    seed: u64,
) -> Result<PermutationOutcome> {
    if perms < 20 {
        return arg_err("at least 20 permutations are required");
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return arg_err("alpha must lie in (0, 1)");
    }
    if x.len() + y.len() < 10 {
        return arg_err("m + n must be at least 10 for a meaningful quantile");
    }
    let pooled = x.concat(y)?;
    let mut f = stat.features(x, sides.0)?;
    for (fk, gk) in f.iter_mut().zip(stat.features(y, sides.1)?) {
        fk.extend(gk);
    }
    let table = FeatureTable { f, dim: stat.dim() };
    let statistic = table.statistic(&(0..x.len()).collect::<Vec<_>>(), &(x.len()..pooled.len()).collect::<Vec<_>>());

    let mut order: Vec<usize> = (0..pooled.len()).collect();
    let s = pooled.samples();
    order.sort_by(|&a, &b| {
        s[a].values().iter().zip(s[b].values()).map(|(u, v)| u.total_cmp(v)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut distribution: Vec<f64> = (0..perms)
        .into_par_iter()
        .map(|r| {
            let mut idx = order.clone();
            idx.shuffle(&mut rng_from_seed(derive_seed(seed, r as u64)));
            let (a, b) = idx.split_at(x.len());
            table.statistic(a, b)
        })
        .collect();
    distribution.sort_by(f64::total_cmp);
    let quantile = permutation_quantile(&distribution, alpha);
    Ok(PermutationOutcome { statistic, quantile, reject: statistic > quantile, distribution })
}

pub fn permutation_test(stat: &TestStatistic, x: &Dataset, y: &Dataset, perms: usize, alpha: f64, seed: u64) -> Result<TestReport> {
    let o = permutation_outcome(stat, x, y, perms, alpha, seed)?;
    Ok(TestReport {
        estimate: Estimate::Single,
        alpha,
        perms,
        n_runs: 1,
        runs: vec![RunRecord { run: 0, seed, statistic: o.statistic, quantile: o.quantile, reject: o.reject }],
        rejection_rate: if o.reject { 1.0 } else { 0.0 },
        null_runs: Vec::new(),
        null_rejection_rate: None,
        permutation_distribution: o.distribution,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerConfig {
    pub n_runs: usize,
    pub perms: usize,
    pub alpha: f64,
    /// Training samples per group.
    pub n_train: usize,
    /// Held-out samples per group.
    pub n_test: usize,
    /// Also test one process against a fresh sample of itself.
    pub matched_null: bool,
    /// Process used by the matched null; both groups go through its regressions.
    pub null_side: Side,
    pub stat: StatConfig,
    pub seed: u64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig {
            n_runs: 5,
            perms: 200,
            alpha: 0.05,
            n_train: 200,
            n_test: 200,
            matched_null: true,
            null_side: Side::Y,
            stat: StatConfig::default(),
            seed: 0,
        }
    }
}

/// Per run: sample training sets, fit the statistic, sample held-out sets and test.
pub fn power_study(a: &ProcessSpec, b: &ProcessSpec, cfg: &PowerConfig) -> Result<TestReport> {
    if cfg.n_runs == 0 || cfg.n_train == 0 {
        return arg_err("n_runs and n_train must be positive");
    }
    a.validate()?;
    b.validate()?;
    let mut runs = Vec::with_capacity(cfg.n_runs);
    let mut null_runs = Vec::new();
    for r in 0..cfg.n_runs {
        let rs = derive_seed(cfg.seed, r as u64);
        let xa = a.simulate(cfg.n_train, derive_seed(rs, 1))?;
        let xb = b.simulate(cfg.n_train, derive_seed(rs, 2))?;
        let mut sc = cfg.stat.clone();
        sc.disc.seed = derive_seed(rs, 6);
        let stat = fit_test_statistic(&xa, &xb, &sc)?;
        let ta = a.simulate(cfg.n_test, derive_seed(rs, 3))?;
        let tb = b.simulate(cfg.n_test, derive_seed(rs, 4))?;
        let ps = derive_seed(rs, 7);
        let o = permutation_outcome(&stat, &ta, &tb, cfg.perms, cfg.alpha, ps)?;
        runs.push(RunRecord { run: r, seed: ps, statistic: o.statistic, quantile: o.quantile, reject: o.reject });
        if cfg.matched_null {
            let (spec, held) = match cfg.null_side {
                Side::X => (a, &ta),
                Side::Y => (b, &tb),
            };
            let fresh = spec.simulate(cfg.n_test, derive_seed(rs, 5))?;
            let ns = derive_seed(rs, 8);
            let o = permutation_outcome_with(&stat, held, &fresh, (cfg.null_side, cfg.null_side), cfg.perms, cfg.alpha, ns)?;
            null_runs.push(RunRecord { run: r, seed: ns, statistic: o.statistic, quantile: o.quantile, reject: o.reject });
        }
    }
    let rate = |v: &[RunRecord]| v.iter().filter(|r| r.reject).count() as f64 / v.len() as f64;
    Ok(TestReport {
        estimate: if a == b { Estimate::TypeI } else { Estimate::Power },
        alpha: cfg.alpha,
        perms: cfg.perms,
        n_runs: cfg.n_runs,
        rejection_rate: rate(&runs),
        null_rejection_rate: (!null_runs.is_empty()).then(|| rate(&null_runs)),
        runs,
        null_runs,
        permutation_distribution: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{simulate_fbm, ProcessKind};
    use crate::nn::OptimizerKind;
    use crate::regression::RegressionConfig;

    fn rank1(d: usize, seed: u64) -> TestStatistic {
        TestStatistic::Rank1 { ens: sample_map_ensemble(d + 1, 3, 4, 0.5, seed).unwrap(), time_augment: true }
    }

    fn small_disc() -> DiscConfig {
        DiscConfig {
            m: 5,
            k2: 3,
            iter1: 20,
            iter3: 10,
            batch: 64,
            regression: RegressionConfig { hidden: vec![8], iterations: 30, ..Default::default() },
            ..Default::default()
        }
    }

    #[test]
    fn quantile_indexing() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(permutation_quantile(&v, 0.05), 19.0);
        assert_eq!(permutation_quantile(&v, 0.5), 10.0);
        assert_eq!(permutation_quantile(&v, 0.999), 1.0);
    }

    #[test]
    fn observed_at_maximum_rejects() {
                let x = simulate_fbm(0.5, 3, 5, 20, 1).unwrap();
        let y = Dataset::new(
            x.samples().iter().map(|s| crate::PiecewisePath::new(s.times().to_vec(), s.values().iter().map(|v| v * 4.0).collect(), 3).unwrap()).collect(),
        )
        .unwrap();
        let o = permutation_outcome(&rank1(3, 2), &x, &y, 40, 0.05, 3).unwrap();
        assert!(o.statistic >= *o.distribution.last().unwrap());
        assert!(o.reject);
    }

    #[test]
    fn argument_checks() {
        let x = simulate_fbm(0.5, 1, 5, 4, 1).unwrap();
        let y = simulate_fbm(0.5, 1, 5, 4, 2).unwrap();
        let s = TestStatistic::Rank1 { ens: sample_map_ensemble(2, 3, 1, 0.5, 0).unwrap(), time_augment: true };
        assert!(permutation_test(&s, &x, &y, 50, 0.05, 0).is_err());
        let y = simulate_fbm(0.5, 1, 5, 6, 2).unwrap();
        assert!(permutation_test(&s, &x, &y, 19, 0.05, 0).is_err());
        assert!(permutation_test(&s, &x, &y, 20, 1.0, 0).is_err());
        assert!(permutation_test(&s, &x, &y, 20, 0.05, 0).is_ok());
    }

    #[test]
    fn deterministic_and_relabel_invariant() {
        let x = simulate_fbm(0.5, 3, 5, 15, 1).unwrap();
        let y = simulate_fbm(0.3, 3, 5, 15, 2).unwrap();
        let s = rank1(3, 4);
        let a = permutation_test(&s, &x, &y, 50, 0.05, 9).unwrap();
        assert_eq!(a, permutation_test(&s, &x, &y, 50, 0.05, 9).unwrap());
        let b = permutation_test(&s, &y, &x, 50, 0.05, 9).unwrap();
        assert_eq!(a.permutation_distribution, b.permutation_distribution);
        assert_eq!(a.runs[0].statistic, b.runs[0].statistic);
        let bound = s.bound();
        assert!(a.permutation_distribution.iter().all(|v| *v >= 0.0 && *v <= bound + 1e-9));
    }

    #[test]
    fn feature_statistic_matches_direct_evaluation() {
        let x = simulate_fbm(0.5, 2, 5, 30, 1).unwrap();
        let y = simulate_fbm(0.3, 2, 5, 30, 2).unwrap();
        let s = rank1(2, 4);
        let o = permutation_outcome(&s, &x, &y, 20, 0.05, 0).unwrap();
        assert!((o.statistic - s.evaluate(&x, &y).unwrap()).abs() < 1e-12);

        let cfg = StatConfig { kind: StatisticKind::Hrpcfd, disc: small_disc() };
        let t = fit_test_statistic(&x, &y, &cfg).unwrap();
        let o = permutation_outcome(&t, &x, &y, 20, 0.05, 0).unwrap();
        assert!((o.statistic - t.evaluate(&x, &y).unwrap()).abs() < 1e-10);
        assert!(o.distribution.iter().all(|v| *v >= 0.0 && *v <= t.bound() + 1e-9));
    }

    #[test]
    fn equal_training_sets_give_zero_on_equal_held_out() {
        let x = simulate_fbm(0.5, 2, 5, 30, 1).unwrap();
        let held = simulate_fbm(0.5, 2, 5, 20, 3).unwrap();
        let t = fit_test_statistic(&x, &x, &StatConfig { kind: StatisticKind::Hrpcfd, disc: small_disc() }).unwrap();
        assert_eq!(t.evaluate(&held, &held).unwrap(), 0.0);
    }

    #[test]
    fn null_rejection_rate_near_alpha() {
        // one pooled generator, fixed statistic, 100 repetitions
        let s = rank1(2, 5);
        let mut rejects = 0;
        for r in 0..100u64 {
            let x = simulate_fbm(0.5, 2, 5, 20, derive_seed(r, 1)).unwrap();
            let y = simulate_fbm(0.5, 2, 5, 20, derive_seed(r, 2)).unwrap();
            rejects += permutation_test(&s, &x, &y, 50, 0.05, r).unwrap().runs[0].reject as usize;
        }
        assert!(rejects as f64 / 100.0 <= 0.05 + 0.05, "{rejects} rejections");
    }

    #[test]
    fn small_power_study_runs() {
        let a = ProcessSpec::new(ProcessKind::Bm, 2, 5);
        let b = ProcessSpec::new(ProcessKind::Fbm { hurst: 0.2 }, 2, 5);
        let cfg = PowerConfig {
            n_runs: 2,
            perms: 40,
            n_train: 60,
            n_test: 60,
            stat: StatConfig { kind: StatisticKind::Pcfd, disc: DiscConfig { optimizer: OptimizerKind::Sgd, iter1: 30, ..Default::default() } },
            ..Default::default()
        };
        let rep = power_study(&a, &b, &cfg).unwrap();
        assert_eq!(rep.estimate, Estimate::Power);
        assert_eq!(rep.runs.len(), 2);
        assert!((0.0..=1.0).contains(&rep.rejection_rate));
        assert!(rep.null_rejection_rate.is_some());
        assert!(rep.summary().contains("power"));
    }
}
