//! The robust minimum-distance test, its oracle and t-test comparators, and
//! confidence sets by test inversion.
//!
//! The pipeline runs the profile minimization twice: once with the identity
//! weight to anchor `dg/dtheta`, then again under the truncated-pseudoinverse
//! weight `W = [(I - dg/dtheta) Sigma (I - dg/dtheta)']^+`. The minimized
//! distance is compared against a chi-squared law whose degrees of freedom
//! `rank(Sigma) - rank(dg/dalpha)` are both estimated by hard thresholding.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dist::{chisq_quantile, chisq_sf, normal_quantile};
use crate::error::{Error, Result};
use crate::linalg::{
    estimate_rank, pinv, singular_values, sym_eig, truncated_pinv, RankEstimate, DEFAULT_THRESHOLD_EXPONENT,
};
use crate::model::{jac_alpha, jac_beta, jac_theta, ModelDims, StructuralModel};
use crate::rng::mix_seed;
use crate::solver::{default_lambda_grid, minimize_ridge, select_lambda_gcv, RidgeProblem, SolverOptions};

/// `theta_hat`, its estimated asymptotic covariance and the sample size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedFormEstimate {
    #[serde(with = "crate::serde_mat::vector")]
    pub theta_hat: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub sigma_hat: DMatrix<f64>,
    pub n: usize,
}

impl ReducedFormEstimate {
    pub fn new(theta_hat: DVector<f64>, sigma_hat: DMatrix<f64>, n: usize) -> Result<Self> {
        let rf = Self {
            theta_hat,
            sigma_hat,
            n,
        };
        rf.validate()?;
        Ok(rf)
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.theta_hat.len();
        if self.n < 2 {
            return Err(Error::InvalidSampleSize(self.n));
        }
        if self.sigma_hat.shape() != (m, m) {
            return Err(Error::dimension("sigma_hat", m, self.sigma_hat.nrows()));
        }
        if self.theta_hat.iter().chain(self.sigma_hat.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("reduced form has non-finite entries".into()));
        }
        let asym = (&self.sigma_hat - self.sigma_hat.transpose()).norm();
        if asym > 1e-10 * (1.0 + self.sigma_hat.norm()) {
            return Err(Error::InvalidMatrix(format!("sigma_hat is not symmetric (|S - S'| = {asym:.3e})")));
        }
        Ok(())
    }

    /// Applies a coordinate permutation: new coordinate `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let m = perm.len();
        Self {
            theta_hat: DVector::from_fn(m, |i, _| self.theta_hat[perm[i]]),
            sigma_hat: DMatrix::from_fn(m, m, |i, j| self.sigma_hat[(perm[i], perm[j])]),
            n: self.n,
        }
    }
}

/// How the ridge penalty is chosen in the first pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaRule {
    /// Generalized cross-validation over a grid (default grid when `None`).
    Gcv { grid: Option<Vec<f64>> },
    /// `lambda = 1/n`.
    InverseN,
    Fixed(f64),
}

impl Default for LambdaRule {
    fn default() -> Self {
        LambdaRule::Gcv { grid: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestOptions {
    /// Hard-threshold exponent used for both rank estimates.
    pub b: f64,
    pub lambda: LambdaRule,
    pub solver: SolverOptions,
    pub seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            b: DEFAULT_THRESHOLD_EXPONENT,
            lambda: LambdaRule::default(),
            solver: SolverOptions::default(),
            seed: 0,
        }
    }
}

/// Everything the test decision needs, before degrees of freedom are fixed.
#[derive(Clone, Debug, Serialize)]
pub struct MdPipeline {
    pub statistic: f64,
    pub r_sigma: RankEstimate,
    pub r_alpha: RankEstimate,
    #[serde(with = "crate::serde_mat::vector")]
    pub alpha_hat: DVector<f64>,
    /// First-pass (identity-weighted) nuisance estimate.
    #[serde(with = "crate::serde_mat::vector")]
    pub alpha_first_pass: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub w_hat: DMatrix<f64>,
    /// The matrix `(I - dg/dtheta) Sigma (I - dg/dtheta)'` that was pseudo-inverted.
    #[serde(with = "crate::serde_mat::matrix")]
    pub a_hat: DMatrix<f64>,
    pub w_rank: usize,
    pub lambda_used: f64,
    /// Smallest singular value of `I - dg/dtheta` (should stay away from zero).
    pub min_singular_i_minus_grad_theta: f64,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustTestResult {
    pub statistic: f64,
    pub r_sigma_hat: usize,
    pub r_alpha_hat: usize,
    pub df_hat: usize,
    pub critical_value: f64,
    pub p_value: f64,
    pub reject: bool,
    #[serde(with = "crate::serde_mat::vector")]
    pub alpha_hat: DVector<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub w_hat: DMatrix<f64>,
    pub lambda_used: f64,
    pub tau: f64,
    pub min_singular_i_minus_grad_theta: f64,
    pub converged: bool,
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    Ok(())
}

fn check_inputs(dims: ModelDims, rf: &ReducedFormEstimate, beta0: &DVector<f64>) -> Result<()> {
    rf.validate()?;
    if rf.theta_hat.len() != dims.m {
        return Err(Error::dimension("theta_hat vs model", dims.m, rf.theta_hat.len()));
    }
    if beta0.len() != dims.p {
        return Err(Error::dimension("beta0", dims.p, beta0.len()));
    }
    Ok(())
}

fn first_pass_lambda(
    problem: &RidgeProblem<'_>,
    rule: &LambdaRule,
    opts: &SolverOptions,
    seed: u64,
) -> Result<(f64, DVector<f64>, bool)> {
    match rule {
        LambdaRule::Gcv { grid } => {
            let grid = grid.clone().unwrap_or_else(|| default_lambda_grid(problem.weight));
            let sel = select_lambda_gcv(problem, &grid, opts, seed)?;
            Ok((sel.lambda, sel.solution.alpha_hat, sel.solution.converged))
        }
        LambdaRule::InverseN => {
            let lambda = 1.0 / problem.n as f64;
            let sol = minimize_ridge(problem, lambda, opts, seed, None)?;
            Ok((lambda, sol.alpha_hat, sol.converged))
        }
        LambdaRule::Fixed(lambda) => {
            let sol = minimize_ridge(problem, *lambda, opts, seed, None)?;
            Ok((*lambda, sol.alpha_hat, sol.converged))
        }
    }
}

/// Runs the full two-pass pipeline up to the statistic and both rank estimates.
pub fn md_pipeline(
    model: &dyn StructuralModel,
    rf: &ReducedFormEstimate,
    beta0: &DVector<f64>,
    opts: &TestOptions,
) -> Result<MdPipeline> {
    let dims = model.dims();
    check_inputs(dims, rf, beta0)?;
    let m = dims.m;
    let n = rf.n;

    let identity = DMatrix::identity(m, m);
    let first = RidgeProblem {
        model,
        theta_hat: &rf.theta_hat,
        weight: &identity,
        beta0,
        n,
    };
    let (lambda, alpha_first, conv1) = first_pass_lambda(&first, &opts.lambda, &opts.solver, mix_seed(&[opts.seed, 1]))?;

    let b_mat = &identity - jac_theta(model, &rf.theta_hat, &alpha_first, beta0)?;
    let min_sv = singular_values(&b_mat).into_iter().fold(f64::INFINITY, f64::min);
    let r_sigma = estimate_rank(&rf.sigma_hat, n, opts.b)?;
    let a_hat = &b_mat * &rf.sigma_hat * b_mat.transpose();
    let w = truncated_pinv(&a_hat, n, opts.b)?;

    let second = RidgeProblem {
        model,
        theta_hat: &rf.theta_hat,
        weight: &w.matrix,
        beta0,
        n,
    };
    let sol = minimize_ridge(&second, lambda, &opts.solver, mix_seed(&[opts.seed, 2]), Some(&alpha_first))?;

    let d = jac_alpha(model, &rf.theta_hat, &sol.alpha_hat, beta0)?;
    let r_alpha = estimate_rank(&(&d * d.transpose()), n, opts.b)?;

    Ok(MdPipeline {
        statistic: sol.objective,
        r_sigma,
        r_alpha,
        alpha_hat: sol.alpha_hat,
        alpha_first_pass: alpha_first,
        w_rank: w.rank,
        w_hat: w.matrix,
        a_hat,
        lambda_used: lambda,
        min_singular_i_minus_grad_theta: min_sv,
        converged: conv1 && sol.converged,
    })
}

impl MdPipeline {
    /// Estimated degrees of freedom `r_sigma - r_alpha` (may be non-positive).
    pub fn df_hat(&self) -> i64 {
        self.r_sigma.rank as i64 - self.r_alpha.rank as i64
    }

    /// Test decision at level `tau` against a chi-squared law with `df` degrees of freedom.
    pub fn decide(&self, df: usize, tau: f64) -> Result<RobustTestResult> {
        check_tau(tau)?;
        if df == 0 {
            return Err(Error::DegreesOfFreedom {
                df: 0,
                r_sigma: self.r_sigma.rank,
                r_alpha: self.r_alpha.rank,
            });
        }
        let critical_value = chisq_quantile(1.0 - tau, df)?;
        let p_value = chisq_sf(self.statistic.max(0.0), df)?;
        Ok(RobustTestResult {
            statistic: self.statistic,
            r_sigma_hat: self.r_sigma.rank,
            r_alpha_hat: self.r_alpha.rank,
            df_hat: df,
            critical_value,
            p_value,
            reject: self.statistic > critical_value,
            alpha_hat: self.alpha_hat.clone(),
            w_hat: self.w_hat.clone(),
            lambda_used: self.lambda_used,
            tau,
            min_singular_i_minus_grad_theta: self.min_singular_i_minus_grad_theta,
            converged: self.converged,
        })
    }

    /// Feasible decision using the estimated degrees of freedom.
    pub fn decide_estimated(&self, tau: f64) -> Result<RobustTestResult> {
        let df = self.df_hat();
        if df <= 0 {
            return Err(Error::DegreesOfFreedom {
                df,
                r_sigma: self.r_sigma.rank,
                r_alpha: self.r_alpha.rank,
            });
        }
        self.decide(df as usize, tau)
    }
}

/// The feasible robust test of `H0: beta = beta0`.
pub fn robust_test(
    model: &dyn StructuralModel,
    rf: &ReducedFormEstimate,
    beta0: &DVector<f64>,
    tau: f64,
    opts: &TestOptions,
) -> Result<RobustTestResult> {
    check_tau(tau)?;
    md_pipeline(model, rf, beta0, opts)?.decide_estimated(tau)
}

/// The same test with known degrees of freedom `d`.
pub fn oracle_test(
    model: &dyn StructuralModel,
    rf: &ReducedFormEstimate,
    beta0: &DVector<f64>,
    tau: f64,
    d: usize,
    opts: &TestOptions,
) -> Result<RobustTestResult> {
    check_tau(tau)?;
    let m = model.dims().m;
    if d == 0 || d > m {
        return Err(Error::InvalidArgument(format!("oracle degrees of freedom must be in 1..={m}, got {d}")));
    }
    md_pipeline(model, rf, beta0, opts)?.decide(d, tau)
}

#[derive(Clone, Debug, Serialize)]
pub struct TTestResult {
    #[serde(with = "crate::serde_mat::vector")]
    pub beta_hat: DVector<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub alpha_hat: DVector<f64>,
    /// NaN where the variance estimate is not positive.
    #[serde(with = "crate::serde_mat::vector")]
    pub std_err: DVector<f64>,
    #[serde(with = "crate::serde_mat::vector")]
    pub t_stats: DVector<f64>,
    pub reject: Vec<bool>,
    pub critical_value: f64,
    /// `G'WG` was numerically singular and a pseudoinverse was used.
    pub degenerate: bool,
    /// Reciprocal condition number of `G'WG`.
    pub rcond: f64,
}

impl TTestResult {
    pub fn reject_any(&self) -> bool {
        self.reject.iter().any(|&r| r)
    }
}

/// Treats `(alpha, beta)` as one nuisance block so the ridge solver can fit both.
struct JointModel<'a> {
    inner: &'a dyn StructuralModel,
}

impl JointModel<'_> {
    fn split(&self, gamma: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let q = self.inner.dims().q;
        (gamma.rows(0, q).into_owned(), gamma.rows(q, gamma.len() - q).into_owned())
    }
}

impl StructuralModel for JointModel<'_> {
    fn dims(&self) -> ModelDims {
        let d = self.inner.dims();
        ModelDims {
            m: d.m,
            q: d.q + d.p,
            p: 0,
        }
    }

    fn alpha_bounds(&self) -> Vec<(f64, f64)> {
        let mut b = self.inner.alpha_bounds();
        b.extend(self.inner.beta_bounds());
        b
    }

    fn g(&self, theta: &DVector<f64>, gamma: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        let (a, b) = self.split(gamma);
        self.inner.g(theta, &a, &b)
    }

    fn analytic_jac_theta(&self, theta: &DVector<f64>, gamma: &DVector<f64>, _: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (a, b) = self.split(gamma);
        jac_theta(self.inner, theta, &a, &b).ok()
    }

    fn analytic_jac_alpha(&self, theta: &DVector<f64>, gamma: &DVector<f64>, _: &DVector<f64>) -> Option<DMatrix<f64>> {
        let (a, b) = self.split(gamma);
        let ja = jac_alpha(self.inner, theta, &a, &b).ok()?;
        let jb = jac_beta(self.inner, theta, &a, &b).ok()?;
        let mut g = DMatrix::zeros(ja.nrows(), ja.ncols() + jb.ncols());
        g.columns_mut(0, ja.ncols()).copy_from(&ja);
        g.columns_mut(ja.ncols(), jb.ncols()).copy_from(&jb);
        Some(g)
    }

    fn fd_step(&self) -> f64 {
        self.inner.fd_step()
    }
}

/// Wald t-test from the joint unpenalized minimum-distance fit of `(alpha, beta)`.
///
/// The fit is run with the identity weight, then re-run under the
/// truncated-pseudoinverse weight built at the first-pass estimate. The
/// variance is the `beta` block of `(G'WG)^+ / n`, `G = [dg/dalpha, dg/dbeta]`.
pub fn t_test(
    model: &dyn StructuralModel,
    rf: &ReducedFormEstimate,
    beta0: &DVector<f64>,
    tau: f64,
    opts: &TestOptions,
) -> Result<TTestResult> {
    check_tau(tau)?;
    let dims = model.dims();
    check_inputs(dims, rf, beta0)?;
    if dims.p + dims.q > dims.m {
        return Err(Error::InvalidArgument(format!(
            "joint estimation needs p + q <= m, got p={}, q={}, m={}",
            dims.p, dims.q, dims.m
        )));
    }
    let m = dims.m;
    let n = rf.n;
    let joint = JointModel { inner: model };
    let empty = DVector::zeros(0);
    let identity = DMatrix::identity(m, m);

    let mut warm = DVector::zeros(dims.q + dims.p);
    for (w, &(lo, hi)) in warm.iter_mut().zip(joint.alpha_bounds().iter()) {
        *w = 0.0f64.clamp(lo, hi);
    }
    warm.rows_mut(dims.q, dims.p).copy_from(beta0);
    let first = RidgeProblem {
        model: &joint,
        theta_hat: &rf.theta_hat,
        weight: &identity,
        beta0: &empty,
        n,
    };
    let sol1 = minimize_ridge(&first, 0.0, &opts.solver, mix_seed(&[opts.seed, 11]), Some(&warm))?;
    let (a1, b1) = joint.split(&sol1.alpha_hat);
    let b_mat = &identity - jac_theta(model, &rf.theta_hat, &a1, &b1)?;
    let w = truncated_pinv(&(&b_mat * &rf.sigma_hat * b_mat.transpose()), n, opts.b)?;

    let second = RidgeProblem {
        weight: &w.matrix,
        ..first
    };
    let sol = minimize_ridge(&second, 0.0, &opts.solver, mix_seed(&[opts.seed, 12]), Some(&sol1.alpha_hat))?;
    let (alpha_hat, beta_hat) = joint.split(&sol.alpha_hat);

    let g = jac_alpha(&joint, &rf.theta_hat, &sol.alpha_hat, &empty)?;
    let info = g.transpose() * &w.matrix * &g;
    let spec = sym_eig(&info)?;
    let top = spec.eigenvalues[0];
    let bottom = spec.eigenvalues[spec.dim() - 1];
    let rcond = if top > 0.0 { (bottom / top).max(0.0) } else { 0.0 };
    let degenerate = rcond < 1e-10;
    let inv = pinv(&info, 1e-12) / n as f64;

    let critical_value = normal_quantile(1.0 - tau / 2.0)?;
    let q = dims.q;
    let mut std_err = DVector::zeros(dims.p);
    let mut t_stats = DVector::zeros(dims.p);
    let mut reject = Vec::with_capacity(dims.p);
    for j in 0..dims.p {
        let var = inv[(q + j, q + j)];
        let diff = beta_hat[j] - beta0[j];
        if var > 0.0 && var.is_finite() {
            let se = var.sqrt();
            std_err[j] = se;
            t_stats[j] = diff / se;
            reject.push(t_stats[j].abs() > critical_value);
        } else {
            std_err[j] = f64::NAN;
            t_stats[j] = if diff == 0.0 { 0.0 } else { f64::NAN };
            reject.push(false);
        }
    }
    let degenerate = degenerate || std_err.iter().any(|v| v.is_nan());
    Ok(TTestResult {
        beta_hat,
        alpha_hat,
        std_err,
        t_stats,
        reject,
        critical_value,
        degenerate,
        rcond,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct CiPoint {
    pub beta: f64,
    pub statistic: f64,
    pub df_hat: usize,
    pub p_value: f64,
    pub reject: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConfidenceSet {
    pub accepted: Vec<f64>,
    /// Convex hull of the accepted points; `None` when nothing is accepted.
    pub hull: Option<(f64, f64)>,
    pub points: Vec<CiPoint>,
    pub tau: f64,
    pub lambda_used: f64,
}

/// Confidence set for a scalar `beta` by inverting the robust test over a grid.
///
/// By default the first-pass `lambda` is chosen once (at the first grid
/// point) and reused; `strict` re-runs the selection at every point.
pub fn invert_ci(
    model: &dyn StructuralModel,
    rf: &ReducedFormEstimate,
    beta_grid: &[f64],
    tau: f64,
    opts: &TestOptions,
    strict: bool,
) -> Result<ConfidenceSet> {
    check_tau(tau)?;
    if model.dims().p != 1 {
        return Err(Error::InvalidArgument("grid inversion needs a scalar beta".into()));
    }
    if beta_grid.is_empty() {
        return Err(Error::InvalidArgument("beta grid is empty".into()));
    }
    let first = md_pipeline(model, rf, &DVector::from_element(1, beta_grid[0]), opts)?;
    let mut shared = opts.clone();
    if !strict {
        shared.lambda = LambdaRule::Fixed(first.lambda_used);
    }
    let points = beta_grid
        .par_iter()
        .enumerate()
        .map(|(i, &b)| {
            let pipe = if i == 0 {
                first.clone()
            } else {
                md_pipeline(model, rf, &DVector::from_element(1, b), &shared)?
            };
            let res = pipe.decide_estimated(tau)?;
            Ok(CiPoint {
                beta: b,
                statistic: res.statistic,
                df_hat: res.df_hat,
                p_value: res.p_value,
                reject: res.reject,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let accepted: Vec<f64> = points.iter().filter(|p| !p.reject).map(|p| p.beta).collect();
    let hull = if accepted.is_empty() {
        None
    } else {
        let lo = accepted.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = accepted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some((lo, hi))
    };
    Ok(ConfidenceSet {
        accepted,
        hull,
        points,
        tau,
        lambda_used: first.lambda_used,
    })
}
