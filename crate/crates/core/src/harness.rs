//! Monte Carlo experiments: size tables, power curves, rank-consistency
//! frequencies and null-distribution checks.
//!
//! Every replication draws its data from a generator seeded by
//! `hash(master_seed, experiment id, n, replication)`, so results do not
//! depend on scheduling. Aggregation only counts outcomes.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::chisq_cdf;
use crate::entrygame::{
    equilibrium, estimate_reduced_form, population, simulate_at, GameConfig, GameModel, GameParams,
};
use crate::error::{Error, Result};
use crate::inference::{md_pipeline, t_test, LambdaRule, ReducedFormEstimate, TestOptions};
use crate::linalg::DEFAULT_THRESHOLD_EXPONENT;
use crate::model::LinearModel;
use crate::rng::{mix_seed, rng_from};
use crate::solver::SolverOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Size,
    Power,
    Rank,
    NullDist,
}

impl ExperimentKind {
    fn id(self) -> u64 {
        match self {
            ExperimentKind::Size => 1,
            ExperimentKind::Power => 2,
            ExperimentKind::Rank => 3,
            ExperimentKind::NullDist => 4,
        }
    }
}

/// A named design or explicit game parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DgpSpec {
    Named(String),
    Params(GameParams),
}

impl Default for DgpSpec {
    fn default() -> Self {
        DgpSpec::Named("identified".into())
    }
}

impl DgpSpec {
    pub fn params(&self) -> Result<GameParams> {
        match self {
            DgpSpec::Params(p) => {
                p.validate().map_err(|e| Error::Config(e.to_string()))?;
                Ok(p.clone())
            }
            DgpSpec::Named(name) => match name.as_str() {
                "identified" | "dgp1" => Ok(GameParams::identified()),
                "unidentified" | "dgp2" => Ok(GameParams::unidentified()),
                other => Err(Error::Config(format!(
                    "unknown design '{other}' (expected identified or unidentified)"
                ))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestKind {
    Oracle,
    Robust,
    #[serde(rename = "T-test")]
    TTest,
}

impl TestKind {
    pub fn label(self) -> &'static str {
        match self {
            TestKind::Oracle => "Oracle",
            TestKind::Robust => "Robust",
            TestKind::TTest => "T-test",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputPaths {
    pub csv: Option<String>,
    pub json: Option<String>,
}

impl Default for OutputPaths {
    fn default() -> Self {
        Self { csv: None, json: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub model: String,
    pub dgp: DgpSpec,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub tau: f64,
    pub b: f64,
    pub master_seed: u64,
    pub experiment: ExperimentKind,
    /// Data-generating values of `beta` for power curves.
    pub beta_grid: Vec<f64>,
    /// Null value under test; defaults to the design's `beta`.
    pub beta0: Option<f64>,
    /// Degrees of freedom for the oracle test; defaults to the population value.
    pub oracle_df: Option<usize>,
    pub tests: Vec<TestKind>,
    /// Box for the entry game's nuisance parameters; defaults to `[-5, 5]^3`.
    pub alpha_bounds: Option<Vec<(f64, f64)>>,
    /// Box for `beta` in the joint t-test fit; defaults to `[-5, 5]`.
    pub beta_bounds: Option<Vec<(f64, f64)>>,
    pub lambda: LambdaRule,
    pub solver: SolverOptions,
    /// Largest tolerated fraction of failed replications per cell.
    pub max_failure_rate: f64,
    pub output: OutputPaths,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            model: "entry_game".into(),
            dgp: DgpSpec::default(),
            sample_sizes: vec![1000],
            replications: 2000,
            tau: 0.05,
            b: DEFAULT_THRESHOLD_EXPONENT,
            master_seed: 20_240_101,
            experiment: ExperimentKind::Size,
            beta_grid: Vec::new(),
            beta0: None,
            oracle_df: None,
            tests: vec![TestKind::Oracle, TestKind::Robust, TestKind::TTest],
            alpha_bounds: None,
            beta_bounds: None,
            lambda: LambdaRule::default(),
            solver: SolverOptions::default(),
            max_failure_rate: 0.01,
            output: OutputPaths::default(),
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 50) {
            return Err(Error::Config("sample sizes must be non-empty and each at least 50".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1), got {}", self.tau)));
        }
        if !(self.b > 0.0 && self.b < 1.0) {
            return Err(Error::Config(format!("b must lie in (0, 1), got {}", self.b)));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("max_failure_rate must lie in [0, 1]".into()));
        }
        match self.experiment {
            ExperimentKind::NullDist => {}
            _ if self.model != "entry_game" => {
                return Err(Error::Config(format!(
                    "{:?} experiments simulate the entry game; model '{}' is not supported",
                    self.experiment, self.model
                )))
            }
            _ => {}
        }
        if self.experiment == ExperimentKind::Power && self.beta_grid.is_empty() {
            return Err(Error::Config("power experiments need a non-empty beta_grid".into()));
        }
        if self.experiment != ExperimentKind::NullDist {
            self.dgp.params()?;
        }
        Ok(())
    }

    fn test_options(&self, seed: u64) -> TestOptions {
        TestOptions {
            b: self.b,
            lambda: self.lambda.clone(),
            solver: self.solver.clone(),
            seed,
        }
    }

    /// The entry-game model for `params` with this configuration's boxes.
    pub fn game_model(&self, params: &GameParams) -> Result<GameModel> {
        let defaults = GameConfig::default();
        GameModel::from_config(&GameConfig {
            states: params.states,
            alpha_bounds: self.alpha_bounds.clone().unwrap_or(defaults.alpha_bounds),
            beta_bounds: self.beta_bounds.clone().unwrap_or(defaults.beta_bounds),
        })
    }

    fn allowed_failures(&self) -> usize {
        (self.max_failure_rate * self.replications as f64).floor() as usize
    }
}

/// Seed of replication `rep` in cell `n` of an experiment.
pub fn replication_seed(master: u64, kind: ExperimentKind, n: usize, rep: usize) -> u64 {
    mix_seed(&[master, kind.id(), n as u64, rep as u64])
}

#[derive(Clone, Debug, Default)]
struct Outcome {
    robust: Option<bool>,
    oracle: Option<bool>,
    ttest: Option<bool>,
    df_hat: Option<i64>,
    r_alpha: Option<usize>,
    r_sigma: Option<usize>,
    error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeRow {
    pub test: String,
    pub n: usize,
    /// Value of `beta` in the data-generating process.
    pub beta_dgp: f64,
    pub beta0: f64,
    pub replications: usize,
    pub successes: usize,
    pub failures: usize,
    pub rejection_rate: f64,
    pub mc_std_error: f64,
    pub mean_df_hat: f64,
    pub mean_r_alpha_hat: f64,
    pub freq_df_correct: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankRow {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub true_r_alpha: usize,
    pub true_r_sigma: usize,
    pub freq_r_alpha_correct: f64,
    pub freq_r_sigma_correct: f64,
    pub freq_df_correct: f64,
    pub mean_r_alpha_hat: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NullDistRow {
    pub n: usize,
    pub replications: usize,
    pub failures: usize,
    pub df: usize,
    pub ks_statistic: f64,
    pub ks_critical_1pct: f64,
    pub ks_pass: bool,
    pub freq_df_correct: f64,
    pub rejection_rate: f64,
    pub mean_statistic: f64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum ExperimentRows {
    Size(Vec<SizeRow>),
    Rank(Vec<RankRow>),
    NullDist(Vec<NullDistRow>),
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub kind: ExperimentKind,
    pub rows: ExperimentRows,
    pub total_failures: usize,
    pub wall_time_secs: f64,
    /// Population degrees of freedom used by the oracle test.
    pub oracle_df: Option<usize>,
    /// Raw statistics of null-distribution runs, one vector per sample size.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub statistics: Vec<Vec<f64>>,
}

fn oracle_df_for(cfg: &McConfig, params: &GameParams) -> Result<usize> {
    if let Some(d) = cfg.oracle_df {
        return Ok(d);
    }
    let pop = population(params)?;
    let d = pop.df();
    if d <= 0 {
        return Err(Error::Config(format!("design has non-positive degrees of freedom {d}")));
    }
    Ok(d as usize)
}

fn run_replication(
    cfg: &McConfig,
    model: &GameModel,
    params: &GameParams,
    theta_eq: &DVector<f64>,
    beta0: &DVector<f64>,
    n: usize,
    seed: u64,
    oracle_df: usize,
    with_tests: bool,
) -> Outcome {
    let mut out = Outcome::default();
    let rf = match simulate_at(params, theta_eq, n, seed).and_then(|d| estimate_reduced_form(&d)) {
        Ok(rf) => rf,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let opts = cfg.test_options(mix_seed(&[seed, 0x7e57]));
    let wants = |k: TestKind| with_tests && cfg.tests.contains(&k);
    let need_pipeline = !with_tests || wants(TestKind::Robust) || wants(TestKind::Oracle);
    if need_pipeline {
        match md_pipeline(model, &rf, beta0, &opts) {
            Ok(pipe) => {
                out.df_hat = Some(pipe.df_hat());
                out.r_alpha = Some(pipe.r_alpha.rank);
                out.r_sigma = Some(pipe.r_sigma.rank);
                if wants(TestKind::Robust) {
                    out.robust = pipe.decide_estimated(cfg.tau).ok().map(|r| r.reject);
                }
                if wants(TestKind::Oracle) {
                    out.oracle = pipe.decide(oracle_df, cfg.tau).ok().map(|r| r.reject);
                }
            }
            Err(e) => {
                out.error = Some(e.to_string());
                return out;
            }
        }
    }
    if wants(TestKind::TTest) {
        match t_test(model, &rf, beta0, cfg.tau, &opts) {
            Ok(t) => out.ttest = Some(t.reject_any()),
            Err(e) => out.error = Some(e.to_string()),
        }
    }
    out
}

fn run_cell(
    cfg: &McConfig,
    kind: ExperimentKind,
    model: &GameModel,
    params: &GameParams,
    beta0: &DVector<f64>,
    n: usize,
    oracle_df: usize,
    with_tests: bool,
    cell_salt: u64,
) -> Result<Vec<Outcome>> {
    let eq = equilibrium(params)?;
    let outcomes: Vec<Outcome> = (0..cfg.replications)
        .into_par_iter()
        .map(|rep| {
            let seed = mix_seed(&[replication_seed(cfg.master_seed, kind, n, rep), cell_salt]);
            run_replication(cfg, model, params, &eq.theta, beta0, n, seed, oracle_df, with_tests)
        })
        .collect();
    Ok(outcomes)
}

fn check_budget(cfg: &McConfig, outcomes: &[Outcome]) -> Result<usize> {
    let failures = outcomes.iter().filter(|o| o.error.is_some()).count();
    if failures > cfg.allowed_failures() {
        if let Some(first) = outcomes.iter().find_map(|o| o.error.clone()) {
            log::error!("first replication failure: {first}");
        }
        return Err(Error::ErrorBudget {
            failures,
            replications: cfg.replications,
            allowed: cfg.allowed_failures(),
        });
    }
    Ok(failures)
}

fn mean<I: Iterator<Item = f64>>(it: I) -> f64 {
    let (s, c) = it.fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
    if c == 0 {
        f64::NAN
    } else {
        s / c as f64
    }
}

fn size_rows(
    cfg: &McConfig,
    outcomes: &[Outcome],
    n: usize,
    beta_dgp: f64,
    beta0: f64,
    true_df: usize,
) -> Vec<SizeRow> {
    let mean_df = mean(outcomes.iter().filter_map(|o| o.df_hat.map(|d| d as f64)));
    let mean_ra = mean(outcomes.iter().filter_map(|o| o.r_alpha.map(|d| d as f64)));
    let with_df: Vec<i64> = outcomes.iter().filter_map(|o| o.df_hat).collect();
    let freq_df = if with_df.is_empty() {
        f64::NAN
    } else {
        with_df.iter().filter(|&&d| d == true_df as i64).count() as f64 / with_df.len() as f64
    };
    let mut tests = cfg.tests.clone();
    tests.sort();
    tests.dedup();
    tests
        .into_iter()
        .map(|test| {
            let decisions: Vec<bool> = outcomes
                .iter()
                .filter_map(|o| match test {
                    TestKind::Oracle => o.oracle,
                    TestKind::Robust => o.robust,
                    TestKind::TTest => o.ttest,
                })
                .collect();
            let successes = decisions.len();
            let rate = if successes == 0 {
                f64::NAN
            } else {
                decisions.iter().filter(|&&r| r).count() as f64 / successes as f64
            };
            SizeRow {
                test: test.label().into(),
                n,
                beta_dgp,
                beta0,
                replications: cfg.replications,
                successes,
                failures: cfg.replications - successes,
                rejection_rate: rate,
                mc_std_error: (rate * (1.0 - rate) / successes.max(1) as f64).sqrt(),
                mean_df_hat: mean_df,
                mean_r_alpha_hat: mean_ra,
                freq_df_correct: freq_df,
            }
        })
        .collect()
}

/// Rejection rates of the selected tests at the true `beta`.
pub fn run_size_experiment(cfg: &McConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let params = cfg.dgp.params()?;
    let model = cfg.game_model(&params)?;
    let beta0 = cfg.beta0.unwrap_or(params.beta);
    let d = oracle_df_for(cfg, &params)?;
    let b0 = DVector::from_element(1, beta0);
    let mut rows = Vec::new();
    let mut total = 0;
    for &n in &cfg.sample_sizes {
        let outcomes = run_cell(cfg, ExperimentKind::Size, &model, &params, &b0, n, d, true, 0)?;
        total += check_budget(cfg, &outcomes)?;
        rows.extend(size_rows(cfg, &outcomes, n, params.beta, beta0, d));
    }
    Ok(ExperimentReport {
        kind: ExperimentKind::Size,
        rows: ExperimentRows::Size(rows),
        total_failures: total,
        wall_time_secs: start.elapsed().as_secs_f64(),
        oracle_df: Some(d),
        statistics: Vec::new(),
    })
}

/// Rejection rates of `H0: beta = beta0` with data generated at each grid value.
pub fn run_power_experiment(cfg: &McConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let null_params = cfg.dgp.params()?;
    let model = cfg.game_model(&null_params)?;
    let beta0 = cfg.beta0.unwrap_or(null_params.beta);
    let d = oracle_df_for(cfg, &null_params)?;
    let b0 = DVector::from_element(1, beta0);
    let mut rows = Vec::new();
    let mut total = 0;
    for &n in &cfg.sample_sizes {
        for (gi, &beta_alt) in cfg.beta_grid.iter().enumerate() {
            let params = GameParams {
                beta: beta_alt,
                ..null_params.clone()
            };
            let outcomes = run_cell(cfg, ExperimentKind::Power, &model, &params, &b0, n, d, true, gi as u64)?;
            total += check_budget(cfg, &outcomes)?;
            rows.extend(size_rows(cfg, &outcomes, n, beta_alt, beta0, d));
        }
    }
    Ok(ExperimentReport {
        kind: ExperimentKind::Power,
        rows: ExperimentRows::Size(rows),
        total_failures: total,
        wall_time_secs: start.elapsed().as_secs_f64(),
        oracle_df: Some(d),
        statistics: Vec::new(),
    })
}

/// Frequencies with which the estimated ranks hit the population ranks.
pub fn run_rank_consistency(cfg: &McConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let params = cfg.dgp.params()?;
    let model = cfg.game_model(&params)?;
    let pop = population(&params)?;
    let beta0 = DVector::from_element(1, cfg.beta0.unwrap_or(params.beta));
    let mut rows = Vec::new();
    let mut total = 0;
    for &n in &cfg.sample_sizes {
        let outcomes = run_cell(cfg, ExperimentKind::Rank, &model, &params, &beta0, n, 1, false, 0)?;
        let failures = check_budget(cfg, &outcomes)?;
        total += failures;
        let ok: Vec<&Outcome> = outcomes.iter().filter(|o| o.error.is_none()).collect();
        let freq = |f: &dyn Fn(&Outcome) -> bool| ok.iter().filter(|o| f(o)).count() as f64 / ok.len().max(1) as f64;
        rows.push(RankRow {
            n,
            replications: cfg.replications,
            failures,
            true_r_alpha: pop.r_alpha,
            true_r_sigma: pop.r_sigma,
            freq_r_alpha_correct: freq(&|o| o.r_alpha == Some(pop.r_alpha)),
            freq_r_sigma_correct: freq(&|o| o.r_sigma == Some(pop.r_sigma)),
            freq_df_correct: freq(&|o| o.df_hat == Some(pop.df())),
            mean_r_alpha_hat: mean(ok.iter().filter_map(|o| o.r_alpha.map(|r| r as f64))),
        });
    }
    Ok(ExperimentReport {
        kind: ExperimentKind::Rank,
        rows: ExperimentRows::Rank(rows),
        total_failures: total,
        wall_time_secs: start.elapsed().as_secs_f64(),
        oracle_df: Some(pop.df().max(0) as usize),
        statistics: Vec::new(),
    })
}

/// Affine fixed-point design with Gaussian reduced-form data.
#[derive(Clone, Debug)]
pub struct LinearGaussianDesign {
    pub model: LinearModel,
    pub theta0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub alpha0: DVector<f64>,
    pub beta0: DVector<f64>,
    /// `rank(Sigma) - rank(D)`.
    pub df: usize,
}

/// `m = 5`, `q = 3`, `rank(D) = 2` (third column is the sum of the first two), so `d = 3`.
pub fn linear_gaussian_design() -> LinearGaussianDesign {
    let k = DMatrix::from_row_slice(
        5,
        5,
        &[
            0.0, 0.2, 0.0, 0.0, 0.1, //
            0.1, 0.0, 0.0, 0.2, 0.0, //
            0.0, 0.0, 0.0, 0.1, 0.0, //
            0.0, 0.1, 0.2, 0.0, 0.0, //
            0.2, 0.0, 0.0, 0.0, 0.0,
        ],
    );
    let d1 = [1.0, 0.5, -0.3, 0.2, 0.8];
    let d2 = [-0.4, 1.0, 0.6, 0.3, -0.2];
    let d = DMatrix::from_fn(5, 3, |i, j| match j {
        0 => d1[i],
        1 => d2[i],
        _ => d1[i] + d2[i],
    });
    let e = DMatrix::from_column_slice(5, 1, &[0.5, -0.3, 0.8, 0.1, 0.4]);
    let theta0 = DVector::from_vec(vec![0.4, -0.2, 0.7, 0.1, 0.3]);
    let alpha0 = DVector::from_vec(vec![0.3, -0.2, 0.1]);
    let beta0 = DVector::from_element(1, 0.5);
    // c chosen so theta0 is the fixed point at (alpha0, beta0).
    let c = &theta0 - &k * &theta0 - &d * &alpha0 - &e * &beta0;
    let model = LinearModel::new(k, d, e, c)
        .expect("static design dimensions are consistent")
        .with_alpha_bounds(vec![(-10.0, 10.0); 3]);
    let l = DMatrix::from_row_slice(
        5,
        5,
        &[
            1.0, 0.0, 0.0, 0.0, 0.0, //
            0.3, 0.9, 0.0, 0.0, 0.0, //
            -0.2, 0.1, 1.1, 0.0, 0.0, //
            0.0, 0.4, -0.3, 0.8, 0.0, //
            0.1, 0.0, 0.2, 0.3, 0.7,
        ],
    );
    LinearGaussianDesign {
        model,
        theta0,
        sigma0: &l * l.transpose(),
        alpha0,
        beta0,
        df: 3,
    }
}

/// Sample mean and covariance of `n` draws from `N(theta0, sigma0)`.
pub fn simulate_gaussian_reduced_form(
    theta0: &DVector<f64>,
    sigma0: &DMatrix<f64>,
    n: usize,
    seed: u64,
) -> Result<ReducedFormEstimate> {
    let m = theta0.len();
    let chol = sigma0
        .clone()
        .cholesky()
        .ok_or_else(|| Error::InvalidMatrix("covariance is not positive definite".into()))?;
    let l = chol.l();
    let mut rng = rng_from(seed);
    let mut draws = DMatrix::zeros(m, n);
    for i in 0..n {
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        draws.set_column(i, &(theta0 + &l * z));
    }
    let mean = draws.column_mean();
    let centered = DMatrix::from_fn(m, n, |r, c| draws[(r, c)] - mean[r]);
    let cov = &centered * centered.transpose() / (n as f64 - 1.0);
    ReducedFormEstimate::new(mean, 0.5 * (&cov + cov.transpose()), n)
}

/// Robust statistics on the linear-Gaussian design, checked against chi-squared by KS.
pub fn run_null_distribution(cfg: &McConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let start = Instant::now();
    let design = linear_gaussian_design();
    let mut rows = Vec::new();
    let mut stats_out = Vec::new();
    let mut total = 0;
    for &n in &cfg.sample_sizes {
        let outcomes: Vec<std::result::Result<(f64, i64, bool), String>> = (0..cfg.replications)
            .into_par_iter()
            .map(|rep| {
                let seed = replication_seed(cfg.master_seed, ExperimentKind::NullDist, n, rep);
                let rf = simulate_gaussian_reduced_form(&design.theta0, &design.sigma0, n, seed)
                    .map_err(|e| e.to_string())?;
                let opts = cfg.test_options(mix_seed(&[seed, 0x7e57]));
                let pipe = md_pipeline(&design.model, &rf, &design.beta0, &opts).map_err(|e| e.to_string())?;
                let reject = pipe
                    .decide_estimated(cfg.tau)
                    .map(|r| r.reject)
                    .map_err(|e| e.to_string())?;
                Ok((pipe.statistic, pipe.df_hat(), reject))
            })
            .collect();
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        if failures > cfg.allowed_failures() {
            return Err(Error::ErrorBudget {
                failures,
                replications: cfg.replications,
                allowed: cfg.allowed_failures(),
            });
        }
        total += failures;
        let ok: Vec<(f64, i64, bool)> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
        let stats: Vec<f64> = ok.iter().map(|o| o.0).collect();
        let df = design.df;
        let ks = ks_statistic(&stats, |x| chisq_cdf(x.max(0.0), df).unwrap_or(f64::NAN))?;
        let crit = ks_critical_1pct(stats.len());
        rows.push(NullDistRow {
            n,
            replications: cfg.replications,
            failures,
            df,
            ks_statistic: ks,
            ks_critical_1pct: crit,
            ks_pass: ks < crit,
            freq_df_correct: ok.iter().filter(|o| o.1 == df as i64).count() as f64 / ok.len().max(1) as f64,
            rejection_rate: ok.iter().filter(|o| o.2).count() as f64 / ok.len().max(1) as f64,
            mean_statistic: mean(stats.iter().copied()),
        });
        stats_out.push(stats);
    }
    Ok(ExperimentReport {
        kind: ExperimentKind::NullDist,
        rows: ExperimentRows::NullDist(rows),
        total_failures: total,
        wall_time_secs: start.elapsed().as_secs_f64(),
        oracle_df: Some(design.df),
        statistics: stats_out,
    })
}

/// Dispatches on `cfg.experiment`.
pub fn run_experiment(cfg: &McConfig) -> Result<ExperimentReport> {
    match cfg.experiment {
        ExperimentKind::Size => run_size_experiment(cfg),
        ExperimentKind::Power => run_power_experiment(cfg),
        ExperimentKind::Rank => run_rank_consistency(cfg),
        ExperimentKind::NullDist => run_null_distribution(cfg),
    }
}

/// Kolmogorov-Smirnov distance between the empirical cdf of `samples` and `cdf`.
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> Result<f64> {
    if samples.len() < 10 {
        return Err(Error::InvalidArgument(format!(
            "KS needs at least 10 samples, got {}",
            samples.len()
        )));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("KS samples contain NaN".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    Ok(d)
}

/// Asymptotic 1% critical value `1.63 / sqrt(N)` of the KS statistic.
pub fn ks_critical_1pct(n: usize) -> f64 {
    1.63 / (n as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StructuralModel;

    #[test]
    fn ks_constant_samples() {
        let s = vec![1.0; 50];
        let d = ks_statistic(&s, |x| crate::dist::std_normal_cdf(x - 1.0)).unwrap();
        assert!(d >= 0.5);
    }

    #[test]
    fn ks_needs_ten() {
        assert!(ks_statistic(&[0.1; 9], |x| x).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = McConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.sample_sizes = vec![20];
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg.sample_sizes = vec![100];
        cfg.tau = 1.0;
        assert!(cfg.validate().is_err());
        cfg.tau = 0.05;
        cfg.experiment = ExperimentKind::Power;
        assert!(cfg.validate().is_err());
        cfg.dgp = DgpSpec::Named("nope".into());
        cfg.experiment = ExperimentKind::Size;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn linear_design_is_a_fixed_point() {
        let d = linear_gaussian_design();
        let g = d.model.g(&d.theta0, &d.alpha0, &d.beta0);
        assert!((g - &d.theta0).amax() < 1e-14);
        let fp = d.model.fixed_point(&d.alpha0, &d.beta0).unwrap();
        assert!((fp - &d.theta0).amax() < 1e-12);
    }

    #[test]
    fn config_parses_with_defaults() {
        let cfg: McConfig =
            serde_json::from_str(r#"{"dgp": "unidentified", "experiment": "rank", "replications": 10}"#).unwrap();
        assert_eq!(cfg.experiment, ExperimentKind::Rank);
        assert_eq!(cfg.dgp.params().unwrap(), GameParams::unidentified());
        assert!(serde_json::from_str::<McConfig>(r#"{"bogus": 1}"#).is_err());
    }
}
