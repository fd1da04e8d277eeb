//! Static two-firm Bayesian entry game with private normal payoff shocks.
//!
//! In state `s` firm 1 enters when `(1 - theta_2s) s beta + theta_2s alpha1 s + e1 > 0`
//! and firm 2 when `(1 - theta_1s) s alpha2 + theta_1s alpha3 s + e2 > 0`, where
//! `theta_js` is the equilibrium probability that firm `j` enters in state `s`.
//! Beliefs are ordered `(theta_1s1, theta_1s2, theta_1s3, theta_2s1, theta_2s2, theta_2s3)`.
//!
//! The nuisance Jacobian drops to rank 2 exactly when firm 1's entry
//! probability is the same in every state; `theta = 1/2` everywhere (reached
//! with `alpha1 = -beta`, `alpha3 = -alpha2`) is the textbook instance.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dist::{std_normal_cdf, std_normal_pdf};
use crate::error::{Error, Result};
use crate::inference::ReducedFormEstimate;
use crate::model::{ModelDims, StructuralModel};
use crate::rng::rng_from;

pub const N_STATES: usize = 3;

/// Minimum number of markets per state for reduced-form estimation.
pub const MIN_STATE_COUNT: usize = 10;

const DAMPING: f64 = 0.5;
const ITER_TOL: f64 = 1e-13;
const MAX_ITER: usize = 100_000;
const RESIDUAL_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameParams {
    /// Firm 1 monopoly payoff slope (parameter of interest).
    pub beta: f64,
    /// Firm 1 duopoly slope.
    pub alpha1: f64,
    /// Firm 2 monopoly slope.
    pub alpha2: f64,
    /// Firm 2 duopoly slope.
    pub alpha3: f64,
    #[serde(default = "default_states")]
    pub states: [f64; N_STATES],
    #[serde(default = "default_state_probs")]
    pub state_probs: [f64; N_STATES],
}

pub fn default_states() -> [f64; N_STATES] {
    [1.0, 2.0, 3.0]
}

/// Smaller states for the unidentified design; the null eigenvalue of the
/// estimated nuisance Gram matrix scales with `s^2`.
pub fn unidentified_states() -> [f64; N_STATES] {
    [0.35, 0.7, 1.05]
}

pub fn default_state_probs() -> [f64; N_STATES] {
    [1.0 / 3.0; N_STATES]
}

impl GameParams {
    /// Identified design: generic equilibrium, full-rank nuisance Jacobian.
    pub fn identified() -> Self {
        Self {
            beta: 1.5,
            alpha1: -0.5,
            alpha2: 0.5,
            alpha3: 0.0,
            states: default_states(),
            state_probs: default_state_probs(),
        }
    }

    /// Unidentified design: `alpha1 = -beta`, `alpha3 = -alpha2`, so all
    /// beliefs equal one half and the nuisance Jacobian has rank 2.
    pub fn unidentified() -> Self {
        Self {
            beta: 0.3,
            alpha1: -0.3,
            alpha2: 4.0,
            alpha3: -4.0,
            states: unidentified_states(),
            state_probs: default_state_probs(),
        }
    }

    pub fn alpha(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.alpha1, self.alpha2, self.alpha3])
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_element(1, self.beta)
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.states;
        if !(s[0] > 0.0 && s[0] < s[1] && s[1] < s[2]) || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "states must be positive and strictly increasing, got {s:?}"
            )));
        }
        let total: f64 = self.state_probs.iter().sum();
        if self.state_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "state probabilities must lie on the simplex, got {:?}",
                self.state_probs
            )));
        }
        if [self.beta, self.alpha1, self.alpha2, self.alpha3].iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("game payoffs must be finite".into()));
        }
        Ok(())
    }
}

/// Best-response arguments `(firm 1 by state, firm 2 by state)`.
fn arguments(
    states: &[f64; N_STATES],
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
) -> ([f64; N_STATES], [f64; N_STATES]) {
    let mut a1 = [0.0; N_STATES];
    let mut a2 = [0.0; N_STATES];
    for (k, &s) in states.iter().enumerate() {
        let t1 = theta[k];
        let t2 = theta[N_STATES + k];
        a1[k] = (1.0 - t2) * s * beta + t2 * alpha[0] * s;
        a2[k] = (1.0 - t1) * s * alpha[1] + t1 * alpha[2] * s;
    }
    (a1, a2)
}

/// The best-response map.
pub fn game_g(states: &[f64; N_STATES], theta: &DVector<f64>, alpha: &DVector<f64>, beta: f64) -> DVector<f64> {
    let (a1, a2) = arguments(states, theta, alpha, beta);
    let mut out = DVector::zeros(2 * N_STATES);
    for k in 0..N_STATES {
        out[k] = std_normal_cdf(a1[k]);
        out[N_STATES + k] = std_normal_cdf(a2[k]);
    }
    out
}

/// Closed-form `dg/dalpha'` (6 x 3).
pub fn game_jac_alpha(
    states: &[f64; N_STATES],
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let (a1, a2) = arguments(states, theta, alpha, beta);
    let mut j = DMatrix::zeros(2 * N_STATES, 3);
    for (k, &s) in states.iter().enumerate() {
        let t1 = theta[k];
        let t2 = theta[N_STATES + k];
        let d1 = std_normal_pdf(a1[k]);
        let d2 = std_normal_pdf(a2[k]);
        j[(k, 0)] = d1 * t2 * s;
        j[(N_STATES + k, 1)] = d2 * (1.0 - t1) * s;
        j[(N_STATES + k, 2)] = d2 * t1 * s;
    }
    j
}

/// Closed-form `dg/dtheta'` (6 x 6): each firm's belief about its rival.
pub fn game_jac_theta(
    states: &[f64; N_STATES],
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let (a1, a2) = arguments(states, theta, alpha, beta);
    let mut j = DMatrix::zeros(2 * N_STATES, 2 * N_STATES);
    for (k, &s) in states.iter().enumerate() {
        j[(k, N_STATES + k)] = std_normal_pdf(a1[k]) * s * (alpha[0] - beta);
        j[(N_STATES + k, k)] = std_normal_pdf(a2[k]) * s * (alpha[2] - alpha[1]);
    }
    j
}

/// Closed-form `dg/dbeta'` (6 x 1).
pub fn game_jac_beta(
    states: &[f64; N_STATES],
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: f64,
) -> DMatrix<f64> {
    let (a1, _) = arguments(states, theta, alpha, beta);
    let mut j = DMatrix::zeros(2 * N_STATES, 1);
    for (k, &s) in states.iter().enumerate() {
        j[(k, 0)] = std_normal_pdf(a1[k]) * (1.0 - theta[N_STATES + k]) * s;
    }
    j
}

/// Entry-game model settings as they appear in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GameConfig {
    pub states: [f64; N_STATES],
    pub alpha_bounds: Vec<(f64, f64)>,
    pub beta_bounds: Vec<(f64, f64)>,
}

impl Default for GameConfig {
    fn default() -> Self {
        Self {
            states: default_states(),
            alpha_bounds: vec![(-5.0, 5.0); 3],
            beta_bounds: vec![(-5.0, 5.0)],
        }
    }
}

/// The entry game as a [`StructuralModel`] with analytic Jacobians.
#[derive(Clone, Debug)]
pub struct GameModel {
    states: [f64; N_STATES],
    alpha_bounds: Vec<(f64, f64)>,
    beta_bounds: Vec<(f64, f64)>,
}

impl GameModel {
    pub fn new(states: [f64; N_STATES]) -> Result<Self> {
        Self::from_config(&GameConfig {
            states,
            ..GameConfig::default()
        })
    }

    pub fn from_config(cfg: &GameConfig) -> Result<Self> {
        let s = &cfg.states;
        if !(s[0] > 0.0 && s[0] < s[1] && s[1] < s[2]) {
            return Err(Error::Config(format!(
                "entry game states must be positive and increasing, got {s:?}"
            )));
        }
        if cfg.alpha_bounds.len() != 3 || cfg.beta_bounds.len() != 1 {
            return Err(Error::Config("entry game needs 3 alpha bounds and 1 beta bound".into()));
        }
        if cfg
            .alpha_bounds
            .iter()
            .chain(&cfg.beta_bounds)
            .any(|&(lo, hi)| !(lo < hi))
        {
            return Err(Error::Config("entry game bounds need lo < hi".into()));
        }
        Ok(Self {
            states: cfg.states,
            alpha_bounds: cfg.alpha_bounds.clone(),
            beta_bounds: cfg.beta_bounds.clone(),
        })
    }

    pub fn for_params(params: &GameParams) -> Result<Self> {
        params.validate()?;
        Self::new(params.states)
    }

    pub fn states(&self) -> &[f64; N_STATES] {
        &self.states
    }
}

impl StructuralModel for GameModel {
    fn dims(&self) -> ModelDims {
        ModelDims {
            m: 2 * N_STATES,
            q: 3,
            p: 1,
        }
    }

    fn alpha_bounds(&self) -> Vec<(f64, f64)> {
        self.alpha_bounds.clone()
    }

    fn beta_bounds(&self) -> Vec<(f64, f64)> {
        self.beta_bounds.clone()
    }

    fn g(&self, theta: &DVector<f64>, alpha: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        game_g(&self.states, theta, alpha, beta[0])
    }

    fn analytic_jac_theta(&self, t: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(game_jac_theta(&self.states, t, a, b[0]))
    }

    fn analytic_jac_alpha(&self, t: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(game_jac_alpha(&self.states, t, a, b[0]))
    }

    fn analytic_jac_beta(&self, t: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(game_jac_beta(&self.states, t, a, b[0]))
    }

    fn name(&self) -> &str {
        "entry_game"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBeliefs {
    #[serde(with = "crate::serde_mat::vector")]
    pub theta: DVector<f64>,
    /// `|theta - g(theta)|_inf` at the returned point.
    pub residual: f64,
    pub iterations: usize,
}

/// Damped fixed-point iteration followed by a Newton polish.
pub fn solve_equilibrium(params: &GameParams, theta_init: &DVector<f64>) -> Result<EquilibriumBeliefs> {
    params.validate()?;
    if theta_init.len() != 2 * N_STATES {
        return Err(Error::dimension("initial beliefs", 2 * N_STATES, theta_init.len()));
    }
    if theta_init.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::InvalidArgument("initial beliefs must lie in [0, 1]".into()));
    }
    let alpha = params.alpha();
    let states = &params.states;
    let mut theta = theta_init.clone();
    let mut tail: Vec<Vec<f64>> = Vec::new();
    let mut iterations = 0;
    let mut residual = f64::INFINITY;
    while iterations < MAX_ITER {
        let g = game_g(states, &theta, &alpha, params.beta);
        residual = (&g - &theta).amax();
        if residual <= ITER_TOL {
            break;
        }
        theta = (1.0 - DAMPING) * &theta + DAMPING * g;
        iterations += 1;
        if MAX_ITER - iterations < 5 {
            tail.push(theta.iter().copied().collect());
        }
    }

    // Newton polish on theta - g(theta) = 0.
    let m = 2 * N_STATES;
    let g = game_g(states, &theta, &alpha, params.beta);
    let jac = DMatrix::identity(m, m) - game_jac_theta(states, &theta, &alpha, params.beta);
    if let Some(step) = jac.lu().solve(&(&g - &theta)) {
        let candidate = &theta + step;
        let r = (game_g(states, &candidate, &alpha, params.beta) - &candidate).amax();
        if r.is_finite() && r <= residual {
            theta = candidate;
            residual = r;
        }
    }
    if !(residual <= RESIDUAL_TOL) {
        return Err(Error::Equilibrium { residual, tail });
    }
    Ok(EquilibriumBeliefs {
        theta,
        residual,
        iterations,
    })
}

/// Equilibrium reached from beliefs of one half.
pub fn equilibrium(params: &GameParams) -> Result<EquilibriumBeliefs> {
    solve_equilibrium(params, &DVector::from_element(2 * N_STATES, 0.5))
}

/// Population objects of a design: equilibrium, asymptotic covariance,
/// Jacobians, optimal weight and true ranks.
#[derive(Clone, Debug)]
pub struct GamePopulation {
    pub theta0: DVector<f64>,
    pub sigma0: DMatrix<f64>,
    pub alpha0: DVector<f64>,
    pub beta0: DVector<f64>,
    pub grad_theta: DMatrix<f64>,
    pub grad_alpha: DMatrix<f64>,
    pub grad_beta: DMatrix<f64>,
    /// `[(I - grad_theta) sigma0 (I - grad_theta)']^+`.
    pub weight: DMatrix<f64>,
    pub r_sigma: usize,
    pub r_alpha: usize,
}

impl GamePopulation {
    pub fn df(&self) -> i64 {
        self.r_sigma as i64 - self.r_alpha as i64
    }
}

fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = crate::linalg::singular_values(m);
    let top = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel_tol * top && s > 0.0).count()
}

/// Population quantities at the true parameters of `params`.
pub fn population(params: &GameParams) -> Result<GamePopulation> {
    let eq = equilibrium(params)?;
    let theta0 = eq.theta;
    let m = 2 * N_STATES;
    let sigma0 = DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            theta0[i] * (1.0 - theta0[i]) / params.state_probs[i % N_STATES]
        } else {
            0.0
        }
    });
    let alpha0 = params.alpha();
    let grad_theta = game_jac_theta(&params.states, &theta0, &alpha0, params.beta);
    let grad_alpha = game_jac_alpha(&params.states, &theta0, &alpha0, params.beta);
    let grad_beta = game_jac_beta(&params.states, &theta0, &alpha0, params.beta);
    let b = DMatrix::identity(m, m) - &grad_theta;
    let a = &b * &sigma0 * b.transpose();
    let weight = crate::linalg::pinv(&(0.5 * (&a + a.transpose())), 1e-10);
    Ok(GamePopulation {
        r_sigma: numerical_rank(&sigma0, 1e-10),
        r_alpha: numerical_rank(&grad_alpha, 1e-8),
        theta0,
        sigma0,
        alpha0,
        beta0: params.beta_vec(),
        grad_theta,
        grad_alpha,
        grad_beta,
        weight,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Market {
    /// Zero-based index into the state support.
    pub state: usize,
    pub a1: bool,
    pub a2: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GameDataset {
    pub markets: Vec<Market>,
    pub states: [f64; N_STATES],
}

impl GameDataset {
    pub fn n(&self) -> usize {
        self.markets.len()
    }
}

/// Draws `n` independent markets at the equilibrium selected from beliefs of one half.
pub fn simulate_data(params: &GameParams, n: usize, seed: u64) -> Result<GameDataset> {
    let eq = equilibrium(params)?;
    simulate_at(params, &eq.theta, n, seed)
}

/// Draws `n` markets given already solved equilibrium beliefs.
pub fn simulate_at(params: &GameParams, theta: &DVector<f64>, n: usize, seed: u64) -> Result<GameDataset> {
    params.validate()?;
    if theta.len() != 2 * N_STATES {
        return Err(Error::dimension("equilibrium beliefs", 2 * N_STATES, theta.len()));
    }
    let (a1, a2) = arguments(&params.states, theta, &params.alpha(), params.beta);
    let mut cumulative = [0.0; N_STATES];
    let mut acc = 0.0;
    for (c, p) in cumulative.iter_mut().zip(params.state_probs) {
        acc += p;
        *c = acc;
    }
    let mut rng = rng_from(seed);
    let markets = (0..n)
        .map(|_| {
            let u: f64 = rng.random::<f64>() * acc;
            let state = cumulative.iter().position(|&c| u < c).unwrap_or(N_STATES - 1);
            let e1: f64 = rng.sample(StandardNormal);
            let e2: f64 = rng.sample(StandardNormal);
            Market {
                state,
                a1: a1[state] + e1 > 0.0,
                a2: a2[state] + e2 > 0.0,
            }
        })
        .collect();
    Ok(GameDataset {
        markets,
        states: params.states,
    })
}

/// Conditional entry frequencies and their plug-in covariance.
///
/// `Sigma` is diagonal with `theta_is (1 - theta_is) / p_s`: actions are
/// independent across firms given the state because each shock is private.
pub fn estimate_reduced_form(data: &GameDataset) -> Result<ReducedFormEstimate> {
    let n = data.n();
    let mut counts = [0usize; N_STATES];
    let mut entries = [[0usize; N_STATES]; 2];
    for mk in &data.markets {
        if mk.state >= N_STATES {
            return Err(Error::InvalidArgument(format!("state index {} out of range", mk.state)));
        }
        counts[mk.state] += 1;
        entries[0][mk.state] += mk.a1 as usize;
        entries[1][mk.state] += mk.a2 as usize;
    }
    for (s, &c) in counts.iter().enumerate() {
        if c < MIN_STATE_COUNT {
            return Err(Error::InsufficientData {
                state: s + 1,
                count: c,
                required: MIN_STATE_COUNT,
            });
        }
    }
    let m = 2 * N_STATES;
    let mut theta = DVector::zeros(m);
    let mut sigma = DMatrix::zeros(m, m);
    for firm in 0..2 {
        for s in 0..N_STATES {
            let t = entries[firm][s] as f64 / counts[s] as f64;
            let p = counts[s] as f64 / n as f64;
            let i = firm * N_STATES + s;
            theta[i] = t;
            sigma[(i, i)] = t * (1.0 - t) / p;
        }
    }
    let rf = ReducedFormEstimate::new(theta, sigma, n)?;
    if rf.sigma_hat.diagonal().iter().any(|&v| v == 0.0) {
        log::warn!("degenerate reduced form: some entry frequency is exactly 0 or 1");
    }
    Ok(rf)
}

/// CSV rows `market_id,state,a1,a2` with one-based state labels.
pub fn dataset_to_csv(data: &GameDataset) -> String {
    let mut out = String::from("market_id,state,a1,a2\n");
    for (i, mk) in data.markets.iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i + 1, mk.state + 1, mk.a1 as u8, mk.a2 as u8));
    }
    out
}
