//! Ridge-penalized profile minimization over the nuisance parameter.
//!
//! Minimizes `n (theta_hat - g)' W (theta_hat - g) + lambda |alpha|^2` over the
//! `alpha` box with a projected Gauss-Newton method (Levenberg damping,
//! active-set handling of the bounds, Armijo backtracking) from several
//! starting points. A small positive `lambda` selects the minimum-norm point
//! of a flat identified set.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::sym_eig;
use crate::model::{clamp_alpha, eval_g_unchecked, jac_alpha, StructuralModel};
use crate::rng::{mix_seed, rng_from};

/// Consecutive accepted steps with a relative decrease below `STALL_RTOL`
/// that end a local search.
const STALL_ITERS: usize = 5;
const STALL_RTOL: f64 = 1e-14;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Number of starting points (warm start, box center, Latin-hypercube draws).
    pub restarts: usize,
    pub max_iter: usize,
    /// Projected-gradient tolerance, relative to `1 + |objective|`.
    pub grad_tol: f64,
    /// Accepted-step tolerance, relative to `1 + |alpha|`.
    pub step_tol: f64,
    /// Largest Newton step, relative to `1 + |alpha|`, allowed at convergence.
    pub newton_tol: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            restarts: 8,
            max_iter: 500,
            grad_tol: 1e-9,
            step_tol: 1e-12,
            newton_tol: 1e-6,
        }
    }
}

/// The data of one profile minimization at a fixed `beta0`.
#[derive(Clone, Copy)]
pub struct RidgeProblem<'a> {
    pub model: &'a dyn StructuralModel,
    pub theta_hat: &'a DVector<f64>,
    pub weight: &'a DMatrix<f64>,
    pub beta0: &'a DVector<f64>,
    pub n: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct RidgeSolution {
    #[serde(with = "crate::serde_mat::vector")]
    pub alpha_hat: DVector<f64>,
    /// Unpenalized `n r' W r` at `alpha_hat`.
    pub objective: f64,
    pub penalized_objective: f64,
    pub lambda: f64,
    pub n_restarts_used: usize,
    pub n_restarts_failed: usize,
    /// Index of the start that produced `alpha_hat`.
    pub best_start: usize,
    pub converged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GcvSelection {
    pub lambda: f64,
    /// `(lambda, GCV(lambda))` for every grid point; infinite when undefined.
    pub scores: Vec<(f64, f64)>,
    pub solution: RidgeSolution,
}

struct Eval {
    residual: DVector<f64>,
    objective: f64,
    penalized: f64,
}

impl<'a> RidgeProblem<'a> {
    pub fn validate(&self) -> Result<()> {
        let d = self.model.dims();
        if self.theta_hat.len() != d.m {
            return Err(Error::dimension("theta_hat", d.m, self.theta_hat.len()));
        }
        if self.weight.shape() != (d.m, d.m) {
            return Err(Error::dimension("weight matrix", d.m, self.weight.nrows()));
        }
        if self.beta0.len() != d.p {
            return Err(Error::dimension("beta0", d.p, self.beta0.len()));
        }
        if self.n < 2 {
            return Err(Error::InvalidSampleSize(self.n));
        }
        if self.weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMatrix("weight matrix has non-finite entries".into()));
        }
        let bounds = self.model.alpha_bounds();
        if bounds.len() != d.q {
            return Err(Error::dimension("alpha bounds", d.q, bounds.len()));
        }
        if bounds.iter().any(|&(lo, hi)| !(lo < hi) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::InvalidArgument("alpha bounds must be finite with lo < hi".into()));
        }
        Ok(())
    }

    fn evaluate(&self, alpha: &DVector<f64>, lambda: f64) -> Result<Eval> {
        let g = eval_g_unchecked(self.model, self.theta_hat, alpha, self.beta0)?;
        let residual = self.theta_hat - g;
        let objective = self.n as f64 * (residual.transpose() * self.weight * &residual)[(0, 0)];
        let penalized = objective + lambda * alpha.norm_squared();
        if !penalized.is_finite() {
            return Err(Error::ModelEvaluation {
                theta: self.theta_hat.iter().copied().collect(),
                alpha: alpha.iter().copied().collect(),
                beta: self.beta0.iter().copied().collect(),
                reason: "non-finite objective".into(),
            });
        }
        Ok(Eval {
            residual,
            objective,
            penalized,
        })
    }

    /// Unpenalized objective `n r' W r` at `alpha`.
    pub fn objective(&self, alpha: &DVector<f64>) -> Result<f64> {
        self.validate()?;
        let alpha = clamp_alpha(self.model, alpha)?;
        Ok(self.evaluate(&alpha, 0.0)?.objective)
    }
}

fn project(alpha: &mut DVector<f64>, bounds: &[(f64, f64)]) {
    for (a, &(lo, hi)) in alpha.iter_mut().zip(bounds) {
        *a = a.clamp(lo, hi);
    }
}

fn starting_points(
    bounds: &[(f64, f64)],
    count: usize,
    seed: u64,
    warm: Option<&DVector<f64>>,
) -> Vec<DVector<f64>> {
    let q = bounds.len();
    let mut starts = Vec::with_capacity(count.max(1));
    if let Some(w) = warm {
        let mut w = w.clone();
        project(&mut w, bounds);
        starts.push(w);
    }
    if starts.len() < count.max(1) {
        starts.push(DVector::from_iterator(q, bounds.iter().map(|&(lo, hi)| 0.5 * (lo + hi))));
    }
    let draws = count.max(1).saturating_sub(starts.len());
    if draws > 0 {
        let mut rng = rng_from(mix_seed(&[seed, 0x4c48_5321]));
        let mut cube = DMatrix::zeros(draws, q);
        for (j, &(lo, hi)) in bounds.iter().enumerate() {
            let mut strata: Vec<usize> = (0..draws).collect();
            strata.shuffle(&mut rng);
            for (i, &s) in strata.iter().enumerate() {
                let u: f64 = rng.random();
                cube[(i, j)] = lo + (hi - lo) * (s as f64 + u) / draws as f64;
            }
        }
        for i in 0..draws {
            starts.push(cube.row(i).transpose());
        }
    }
    starts
}

struct LocalResult {
    alpha: DVector<f64>,
    eval: Eval,
    converged: bool,
}

fn local_minimize(
    problem: &RidgeProblem<'_>,
    lambda: f64,
    start: DVector<f64>,
    opts: &SolverOptions,
    bounds: &[(f64, f64)],
) -> Result<LocalResult> {
    let n = problem.n as f64;
    let q = start.len();
    let mut alpha = start;
    let mut cur = problem.evaluate(&alpha, lambda)?;
    if q == 0 {
        return Ok(LocalResult {
            alpha,
            eval: cur,
            converged: true,
        });
    }
    let mut mu = 0.0_f64;
    let mut stalled = 0;
    for _ in 0..opts.max_iter {
        let d = jac_alpha(problem.model, problem.theta_hat, &alpha, problem.beta0)?;
        let wd = problem.weight * &d;
        let grad = -2.0 * n * wd.transpose() * &cur.residual + 2.0 * lambda * &alpha;
        let mut hess = 2.0 * n * d.transpose() * &wd;
        for i in 0..q {
            hess[(i, i)] += 2.0 * lambda;
        }
        let hess = 0.5 * (&hess + hess.transpose());

        let free: Vec<usize> = (0..q)
            .filter(|&i| {
                let (lo, hi) = bounds[i];
                !((alpha[i] <= lo && grad[i] > 0.0) || (alpha[i] >= hi && grad[i] < 0.0))
            })
            .collect();
        let pg_norm = free.iter().map(|&i| grad[i].abs()).fold(0.0, f64::max);
        let alpha_scale = 1.0 + alpha.amax();
        let grad_small = pg_norm <= opts.grad_tol * (1.0 + cur.penalized.abs());
        if free.is_empty() {
            return Ok(LocalResult {
                alpha,
                eval: cur,
                converged: true,
            });
        }

        let hdiag_max = free.iter().map(|&i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
        let mut accepted = false;
        for _attempt in 0..30 {
            let k = free.len();
            let mut h = DMatrix::from_fn(k, k, |a, b| hess[(free[a], free[b])]);
            for i in 0..k {
                h[(i, i)] += mu;
            }
            let rhs = DVector::from_iterator(k, free.iter().map(|&i| -grad[i]));
            let step_free = match h.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => {
                    mu = if mu == 0.0 { 1e-10 * hdiag_max } else { mu * 10.0 };
                    continue;
                }
            };
            let mut step = DVector::zeros(q);
            for (a, &i) in free.iter().enumerate() {
                step[i] = step_free[a];
            }
            if !step.iter().all(|v| v.is_finite()) {
                mu = if mu == 0.0 { 1e-10 * hdiag_max } else { mu * 10.0 };
                continue;
            }
            if grad_small && step.amax() <= opts.newton_tol * alpha_scale {
                return Ok(LocalResult {
                    alpha,
                    eval: cur,
                    converged: true,
                });
            }

            let mut t = 1.0;
            for _ in 0..40 {
                let mut trial = &alpha + t * &step;
                project(&mut trial, bounds);
                let moved = &trial - &alpha;
                let decrease = grad.dot(&moved);
                if moved.amax() <= opts.step_tol * alpha_scale {
                    break;
                }
                if let Ok(ev) = problem.evaluate(&trial, lambda) {
                    if ev.penalized <= cur.penalized + 1e-4 * decrease.min(0.0) && ev.penalized <= cur.penalized {
                        let small_step = moved.amax() <= opts.step_tol * alpha_scale;
                        // Finite-difference noise can keep the gradient test from passing
                        // along flat directions while the objective no longer moves.
                        if cur.penalized - ev.penalized <= STALL_RTOL * (1.0 + cur.penalized.abs()) {
                            stalled += 1;
                        } else {
                            stalled = 0;
                        }
                        alpha = trial;
                        cur = ev;
                        accepted = true;
                        if small_step || stalled >= STALL_ITERS {
                            return Ok(LocalResult {
                                alpha,
                                eval: cur,
                                converged: true,
                            });
                        }
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted {
                if t == 1.0 {
                    mu *= 0.1;
                    if mu < 1e-14 * hdiag_max {
                        mu = 0.0;
                    }
                }
                break;
            }
            mu = if mu == 0.0 { 1e-8 * hdiag_max } else { mu * 10.0 };
        }
        if !accepted {
            if pg_norm <= 1e-6 * (1.0 + cur.penalized.abs()) {
                // Round-off floor: no representable descent left.
                return Ok(LocalResult {
                    alpha,
                    eval: cur,
                    converged: true,
                });
            }
            return Err(Error::Solver(format!(
                "line search failed at alpha={:?} (projected gradient {pg_norm:.3e})",
                alpha.as_slice()
            )));
        }
    }
    Ok(LocalResult {
        alpha,
        eval: cur,
        converged: false,
    })
}

/// Best local minimizer of the ridge-penalized objective across multistarts.
///
/// Deterministic given `seed`: starts are the projected warm start (if any),
/// the box center, then Latin-hypercube draws; the lowest penalized objective
/// wins, ties going to the earlier start.
pub fn minimize_ridge(
    problem: &RidgeProblem<'_>,
    lambda: f64,
    opts: &SolverOptions,
    seed: u64,
    warm_start: Option<&DVector<f64>>,
) -> Result<RidgeSolution> {
    problem.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!("ridge penalty must be >= 0, got {lambda}")));
    }
    if let Some(w) = warm_start {
        if w.len() != problem.model.dims().q {
            return Err(Error::dimension("warm start", problem.model.dims().q, w.len()));
        }
    }
    let bounds = problem.model.alpha_bounds();
    let starts = starting_points(&bounds, opts.restarts, seed, warm_start);
    let n_starts = starts.len();

    let mut best: Option<(usize, LocalResult)> = None;
    let mut failures = Vec::new();
    for (idx, start) in starts.into_iter().enumerate() {
        match local_minimize(problem, lambda, start, opts, &bounds) {
            Ok(res) => {
                let better = match &best {
                    None => true,
                    Some((_, b)) => res.eval.penalized < b.eval.penalized,
                };
                if better {
                    best = Some((idx, res));
                }
            }
            Err(e) => failures.push(e),
        }
    }
    match best {
        Some((idx, res)) => Ok(RidgeSolution {
            objective: res.eval.objective.max(0.0),
            penalized_objective: res.eval.penalized,
            alpha_hat: res.alpha,
            lambda,
            n_restarts_used: n_starts,
            n_restarts_failed: failures.len(),
            best_start: idx,
            converged: res.converged,
        }),
        None => {
            if failures.iter().all(|e| matches!(e, Error::ModelEvaluation { .. })) {
                return Err(failures.swap_remove(0));
            }
            let msgs: Vec<String> = failures.iter().map(|e| e.to_string()).collect();
            Err(Error::Solver(format!("all {n_starts} restarts failed: {}", msgs.join("; "))))
        }
    }
}

/// Default GCV grid `{1, 1e-1, ..., 1e-8} * tr(W) / m`.
pub fn default_lambda_grid(weight: &DMatrix<f64>) -> Vec<f64> {
    let m = weight.nrows().max(1) as f64;
    let scale = weight.trace() / m;
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    (0..=8).map(|k| scale * 10f64.powi(-k)).collect()
}

/// `GCV = m RSS / (m - tr H)^2` at a ridge solution, with the hat matrix
/// `H = D (D'WD + (lambda/n) I)^{-1} D'W` of the problem linearized there.
/// Infinite when the linear system is singular or `tr H >= m` (up to round-off).
pub fn gcv_score(problem: &RidgeProblem<'_>, solution: &RidgeSolution) -> Result<f64> {
    let d = jac_alpha(problem.model, problem.theta_hat, &solution.alpha_hat, problem.beta0)?;
    let m = problem.model.dims().m as f64;
    let q = d.ncols();
    let wd = problem.weight * &d;
    let mut a = d.transpose() * &wd;
    for i in 0..q {
        a[(i, i)] += solution.lambda / problem.n as f64;
    }
    let trace_h = if q == 0 {
        0.0
    } else {
        let spec = sym_eig(&a)?;
        let top = spec.eigenvalues[0].abs();
        let bottom = spec.eigenvalues[q - 1];
        if !(bottom > 1e-12 * top) || top == 0.0 {
            return Ok(f64::INFINITY);
        }
        let inv = spec.reconstruct_with(|l| 1.0 / l);
        // tr(D A^{-1} D'W) = tr(A^{-1} D'WD)
        (inv * d.transpose() * &wd).trace()
    };
    if trace_h >= m * (1.0 - 1e-10) {
        return Ok(f64::INFINITY);
    }
    let rss = solution.objective / problem.n as f64;
    Ok(m * rss / (m - trace_h).powi(2))
}

/// Grid search for `lambda` by generalized cross-validation.
///
/// Each grid point is solved with warm starts from the previous solution.
/// Ties (relative `1e-12`) go to the larger `lambda`.
pub fn select_lambda_gcv(
    problem: &RidgeProblem<'_>,
    grid: &[f64],
    opts: &SolverOptions,
    seed: u64,
) -> Result<GcvSelection> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("GCV grid is empty".into()));
    }
    if grid.iter().any(|l| !(*l >= 0.0) || !l.is_finite()) {
        return Err(Error::InvalidArgument("GCV grid values must be finite and >= 0".into()));
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, RidgeSolution)> = None;
    let mut warm: Option<DVector<f64>> = None;
    for (i, &lambda) in grid.iter().enumerate() {
        let sol = minimize_ridge(problem, lambda, opts, mix_seed(&[seed, i as u64]), warm.as_ref())?;
        let score = if grid.len() == 1 { 0.0 } else { gcv_score(problem, &sol)? };
        scores.push((lambda, score));
        warm = Some(sol.alpha_hat.clone());
        let take = match &best {
            None => score.is_finite(),
            Some((s, b)) => {
                score.is_finite()
                    && (score < *s * (1.0 - 1e-12) || (score <= *s * (1.0 + 1e-12) && lambda > b.lambda))
            }
        };
        if take {
            best = Some((score, sol));
        }
    }
    match best {
        Some((_, solution)) => Ok(GcvSelection {
            lambda: solution.lambda,
            scores,
            solution,
        }),
        None => Err(Error::GcvDegenerate),
    }
}
