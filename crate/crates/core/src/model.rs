//! Structural models `g(theta, alpha, beta)` and their Jacobians.
//!
//! A model maps reduced-form parameters `theta` (dimension `m`), nuisance
//! parameters `alpha` (dimension `q`, restricted to a box) and parameters of
//! interest `beta` (dimension `p`) back into reduced-form space. The
//! restriction `theta = g(theta, alpha, beta)` links the two layers.
//!
//! Implementors only have to supply `g`; Jacobians fall back to central
//! finite differences unless an analytic version is provided.

use std::marker::PhantomData;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::entrygame::{GameConfig, GameModel};
use crate::error::{Error, Result};
use crate::rng::{mix_seed, rng_from};

/// Default relative finite-difference step, the cube root of machine epsilon.
pub const DEFAULT_FD_STEP: f64 = 6.055_454_452_393_343e-6;

/// Largest bound violation that is silently clamped.
const CLAMP_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Reduced-form dimension.
    pub m: usize,
    /// Nuisance dimension.
    pub q: usize,
    /// Interest dimension.
    pub p: usize,
}

impl ModelDims {
    pub fn new(m: usize, q: usize, p: usize) -> Result<Self> {
        if m == 0 || p == 0 {
            return Err(Error::InvalidArgument(format!(
                "model dimensions need m >= 1 and p >= 1, got m={m}, p={p}"
            )));
        }
        Ok(Self { m, q, p })
    }
}

pub trait StructuralModel: Send + Sync {
    fn dims(&self) -> ModelDims;

    /// Compact box for `alpha`, one `(lo, hi)` pair per coordinate.
    fn alpha_bounds(&self) -> Vec<(f64, f64)>;

    /// Box for `beta`, used when `beta` is estimated jointly (t-test comparator).
    fn beta_bounds(&self) -> Vec<(f64, f64)> {
        vec![(-1e3, 1e3); self.dims().p]
    }

    fn g(&self, theta: &DVector<f64>, alpha: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64>;

    fn analytic_jac_theta(
        &self,
        _theta: &DVector<f64>,
        _alpha: &DVector<f64>,
        _beta: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        None
    }

    fn analytic_jac_alpha(
        &self,
        _theta: &DVector<f64>,
        _alpha: &DVector<f64>,
        _beta: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        None
    }

    fn analytic_jac_beta(
        &self,
        _theta: &DVector<f64>,
        _alpha: &DVector<f64>,
        _beta: &DVector<f64>,
    ) -> Option<DMatrix<f64>> {
        None
    }

    fn fd_step(&self) -> f64 {
        DEFAULT_FD_STEP
    }

    fn name(&self) -> &str {
        "custom"
    }
}

fn eval_error(
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    reason: impl Into<String>,
) -> Error {
    Error::ModelEvaluation {
        theta: theta.iter().copied().collect(),
        alpha: alpha.iter().copied().collect(),
        beta: beta.iter().copied().collect(),
        reason: reason.into(),
    }
}

fn check_dims(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<()> {
    let d = model.dims();
    if theta.len() != d.m {
        return Err(Error::dimension("theta", d.m, theta.len()));
    }
    if alpha.len() != d.q {
        return Err(Error::dimension("alpha", d.q, alpha.len()));
    }
    if beta.len() != d.p {
        return Err(Error::dimension("beta", d.p, beta.len()));
    }
    Ok(())
}

/// Clamps `alpha` into the model box when it is outside by at most `1e-12`.
pub fn clamp_alpha(model: &dyn StructuralModel, alpha: &DVector<f64>) -> Result<DVector<f64>> {
    let bounds = model.alpha_bounds();
    let mut out = alpha.clone();
    for (i, (&(lo, hi), a)) in bounds.iter().zip(out.iter_mut()).enumerate() {
        if *a < lo || *a > hi {
            let gap = if *a < lo { lo - *a } else { *a - hi };
            if gap > CLAMP_TOL || a.is_nan() {
                return Err(Error::InvalidArgument(format!(
                    "alpha[{i}] = {a} outside its bounds [{lo}, {hi}]"
                )));
            }
            log::warn!("alpha[{i}] = {a} clamped into [{lo}, {hi}]");
            *a = a.clamp(lo, hi);
        }
    }
    Ok(out)
}

/// `g(theta, alpha, beta)` with dimension, bound and finiteness checks.
pub fn eval_g(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dims(model, theta, alpha, beta)?;
    let alpha = clamp_alpha(model, alpha).map_err(|e| eval_error(theta, alpha, beta, e.to_string()))?;
    eval_g_unchecked(model, theta, &alpha, beta)
}

/// `g` with only output validation; callers guarantee dimensions and bounds.
pub(crate) fn eval_g_unchecked(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let out = model.g(theta, alpha, beta);
    if out.len() != model.dims().m {
        return Err(eval_error(
            theta,
            alpha,
            beta,
            format!("g returned {} entries, expected {}", out.len(), model.dims().m),
        ));
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(eval_error(theta, alpha, beta, "g returned a non-finite value"));
    }
    Ok(out)
}

#[derive(Clone, Copy)]
enum Wrt {
    Theta,
    Alpha,
    Beta,
}

fn central_difference(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    wrt: Wrt,
) -> Result<DMatrix<f64>> {
    let step = model.fd_step();
    let base = match wrt {
        Wrt::Theta => theta,
        Wrt::Alpha => alpha,
        Wrt::Beta => beta,
    };
    let m = model.dims().m;
    let mut jac = DMatrix::zeros(m, base.len());
    for i in 0..base.len() {
        let h = step * (1.0 + base[i].abs());
        let mut plus = base.clone();
        let mut minus = base.clone();
        plus[i] += h;
        minus[i] -= h;
        let span = plus[i] - minus[i];
        let (gp, gm) = match wrt {
            Wrt::Theta => (
                eval_g_unchecked(model, &plus, alpha, beta)?,
                eval_g_unchecked(model, &minus, alpha, beta)?,
            ),
            Wrt::Alpha => (
                eval_g_unchecked(model, theta, &plus, beta)?,
                eval_g_unchecked(model, theta, &minus, beta)?,
            ),
            Wrt::Beta => (
                eval_g_unchecked(model, theta, alpha, &plus)?,
                eval_g_unchecked(model, theta, alpha, &minus)?,
            ),
        };
        jac.set_column(i, &((gp - gm) / span));
    }
    Ok(jac)
}

fn jacobian(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
    wrt: Wrt,
) -> Result<DMatrix<f64>> {
    check_dims(model, theta, alpha, beta)?;
    let d = model.dims();
    let cols = match wrt {
        Wrt::Theta => d.m,
        Wrt::Alpha => d.q,
        Wrt::Beta => d.p,
    };
    let analytic = match wrt {
        Wrt::Theta => model.analytic_jac_theta(theta, alpha, beta),
        Wrt::Alpha => model.analytic_jac_alpha(theta, alpha, beta),
        Wrt::Beta => model.analytic_jac_beta(theta, alpha, beta),
    };
    let jac = match analytic {
        Some(j) => j,
        None => central_difference(model, theta, alpha, beta, wrt)?,
    };
    if jac.nrows() != d.m || jac.ncols() != cols {
        return Err(eval_error(
            theta,
            alpha,
            beta,
            format!("Jacobian has shape {}x{}, expected {}x{}", jac.nrows(), jac.ncols(), d.m, cols),
        ));
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(eval_error(theta, alpha, beta, "non-finite Jacobian entry"));
    }
    Ok(jac)
}

/// `dg/dtheta'`, `m x m`.
pub fn jac_theta(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    jacobian(model, theta, alpha, beta, Wrt::Theta)
}

/// `dg/dalpha'`, `m x q`.
pub fn jac_alpha(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    jacobian(model, theta, alpha, beta, Wrt::Alpha)
}

/// `dg/dbeta'`, `m x p`.
pub fn jac_beta(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    jacobian(model, theta, alpha, beta, Wrt::Beta)
}

/// Central-difference Jacobians regardless of any analytic override.
pub fn fd_jacobians(
    model: &dyn StructuralModel,
    theta: &DVector<f64>,
    alpha: &DVector<f64>,
    beta: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    check_dims(model, theta, alpha, beta)?;
    Ok((
        central_difference(model, theta, alpha, beta, Wrt::Theta)?,
        central_difference(model, theta, alpha, beta, Wrt::Alpha)?,
        central_difference(model, theta, alpha, beta, Wrt::Beta)?,
    ))
}

/// Affine model `g = K theta + D alpha + E beta + c`.
///
/// Its fixed points are `theta = (I - K)^{-1} (D alpha + E beta + c)`, and all
/// three Jacobians are constant, which makes it the reference design for
/// checking null distributions.
#[derive(Clone, Debug)]
pub struct LinearModel {
    pub k: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub c: DVector<f64>,
    pub alpha_bounds: Vec<(f64, f64)>,
    pub beta_bounds: Vec<(f64, f64)>,
}

impl LinearModel {
    pub fn new(k: DMatrix<f64>, d: DMatrix<f64>, e: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        let m = c.len();
        if k.shape() != (m, m) {
            return Err(Error::dimension("LinearModel K", m, k.nrows()));
        }
        if d.nrows() != m {
            return Err(Error::dimension("LinearModel D rows", m, d.nrows()));
        }
        if e.nrows() != m {
            return Err(Error::dimension("LinearModel E rows", m, e.nrows()));
        }
        let q = d.ncols();
        let p = e.ncols();
        Ok(Self {
            k,
            d,
            e,
            c,
            alpha_bounds: vec![(-1e3, 1e3); q],
            beta_bounds: vec![(-1e3, 1e3); p],
        })
    }

    pub fn with_alpha_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.alpha_bounds = bounds;
        self
    }

    /// The fixed point `theta` for given `(alpha, beta)`.
    pub fn fixed_point(&self, alpha: &DVector<f64>, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let m = self.c.len();
        let lhs = DMatrix::identity(m, m) - &self.k;
        let rhs = &self.d * alpha + &self.e * beta + &self.c;
        lhs.lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidMatrix("I - K is singular".into()))
    }
}

impl StructuralModel for LinearModel {
    fn dims(&self) -> ModelDims {
        ModelDims {
            m: self.c.len(),
            q: self.d.ncols(),
            p: self.e.ncols(),
        }
    }

    fn alpha_bounds(&self) -> Vec<(f64, f64)> {
        self.alpha_bounds.clone()
    }

    fn beta_bounds(&self) -> Vec<(f64, f64)> {
        self.beta_bounds.clone()
    }

    fn g(&self, theta: &DVector<f64>, alpha: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        &self.k * theta + &self.d * alpha + &self.e * beta + &self.c
    }

    fn analytic_jac_theta(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.k.clone())
    }

    fn analytic_jac_alpha(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.d.clone())
    }

    fn analytic_jac_beta(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(self.e.clone())
    }

    fn name(&self) -> &str {
        "linear"
    }
}

/// Simulated-moments model: `g(alpha, beta) = (1/B) sum_j h(x_j(alpha, beta))`.
///
/// Draw `j` uses a generator seeded from `hash(base_seed, j)`, so repeated
/// evaluations at the same point are bit-identical (common random numbers)
/// and the outer minimizer sees a deterministic, smooth objective. `g` does
/// not depend on `theta`.
pub struct SmmAdapter<X, S, H>
where
    S: Fn(&DVector<f64>, &DVector<f64>, &mut ChaCha8Rng) -> X + Send + Sync,
    H: Fn(&X) -> DVector<f64> + Send + Sync,
{
    dims: ModelDims,
    alpha_bounds: Vec<(f64, f64)>,
    beta_bounds: Vec<(f64, f64)>,
    simulator: S,
    statistic: H,
    draws: usize,
    base_seed: u64,
    name: String,
    _sample: PhantomData<fn() -> X>,
}

impl<X, S, H> SmmAdapter<X, S, H>
where
    S: Fn(&DVector<f64>, &DVector<f64>, &mut ChaCha8Rng) -> X + Send + Sync,
    H: Fn(&X) -> DVector<f64> + Send + Sync,
{
    pub fn new(
        dims: ModelDims,
        alpha_bounds: Vec<(f64, f64)>,
        simulator: S,
        statistic: H,
        draws: usize,
        base_seed: u64,
    ) -> Result<Self> {
        if draws == 0 {
            return Err(Error::InvalidArgument("SMM needs at least one draw".into()));
        }
        if alpha_bounds.len() != dims.q {
            return Err(Error::dimension("SMM alpha bounds", dims.q, alpha_bounds.len()));
        }
        if alpha_bounds.iter().any(|&(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidArgument("alpha bounds need lo < hi".into()));
        }
        Ok(Self {
            dims,
            beta_bounds: vec![(-1e3, 1e3); dims.p],
            alpha_bounds,
            simulator,
            statistic,
            draws,
            base_seed,
            name: "smm".into(),
            _sample: PhantomData,
        })
    }

    /// Default number of draws for a data set of size `n`.
    pub fn draws_for_sample_size(n: usize) -> usize {
        10 * n
    }

    pub fn with_beta_bounds(mut self, bounds: Vec<(f64, f64)>) -> Self {
        self.beta_bounds = bounds;
        self
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn draws(&self) -> usize {
        self.draws
    }

    /// Simulated moment vector.
    pub fn simulate(&self, alpha: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        let mut acc = DVector::zeros(self.dims.m);
        for j in 0..self.draws {
            let mut rng = rng_from(mix_seed(&[self.base_seed, j as u64]));
            let x = (self.simulator)(alpha, beta, &mut rng);
            acc += (self.statistic)(&x);
        }
        acc / self.draws as f64
    }
}

impl<X, S, H> StructuralModel for SmmAdapter<X, S, H>
where
    S: Fn(&DVector<f64>, &DVector<f64>, &mut ChaCha8Rng) -> X + Send + Sync,
    H: Fn(&X) -> DVector<f64> + Send + Sync,
{
    fn dims(&self) -> ModelDims {
        self.dims
    }

    fn alpha_bounds(&self) -> Vec<(f64, f64)> {
        self.alpha_bounds.clone()
    }

    fn beta_bounds(&self) -> Vec<(f64, f64)> {
        self.beta_bounds.clone()
    }

    fn g(&self, _theta: &DVector<f64>, alpha: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
        self.simulate(alpha, beta)
    }

    fn analytic_jac_theta(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.dims.m, self.dims.m))
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Toy SMM design: `x = (a1 + a2 + e1, b + e2, a1 + a2 + b + e3)`, `h = identity`.
///
/// Only `a1 + a2` is identified, so the nuisance Jacobian has rank 1 < q = 2.
pub fn smm_toy(draws: usize, base_seed: u64) -> Result<Box<dyn StructuralModel>> {
    let dims = ModelDims::new(3, 2, 1)?;
    let sim = |a: &DVector<f64>, b: &DVector<f64>, rng: &mut ChaCha8Rng| {
        let e: [f64; 3] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let s = a[0] + a[1];
        DVector::from_vec(vec![s + e[0], b[0] + e[1], s + b[0] + e[2]])
    };
    let adapter = SmmAdapter::new(dims, vec![(-5.0, 5.0); 2], sim, |x: &DVector<f64>| x.clone(), draws, base_seed)?
        .with_beta_bounds(vec![(-5.0, 5.0)])
        .with_name("smm_toy");
    Ok(Box::new(adapter))
}

/// Models addressable by name from configuration files.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum ModelSpec {
    EntryGame {
        #[serde(default, flatten)]
        config: GameConfig,
    },
    SmmToy {
        #[serde(default = "default_smm_draws")]
        draws: usize,
        #[serde(default)]
        seed: u64,
    },
}

fn default_smm_draws() -> usize {
    10_000
}

/// Either a bare registry name or a full specification.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelRef {
    Name(String),
    Spec(ModelSpec),
}

impl ModelRef {
    pub fn spec(&self) -> Result<ModelSpec> {
        match self {
            ModelRef::Spec(s) => Ok(s.clone()),
            ModelRef::Name(name) => match name.as_str() {
                "entry_game" => Ok(ModelSpec::EntryGame {
                    config: GameConfig::default(),
                }),
                "smm_toy" => Ok(ModelSpec::SmmToy {
                    draws: default_smm_draws(),
                    seed: 0,
                }),
                other => Err(Error::Config(format!(
                    "unknown model '{other}' (registered: {})",
                    registered_models().join(", ")
                ))),
            },
        }
    }

    pub fn build(&self) -> Result<Box<dyn StructuralModel>> {
        self.spec()?.build()
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<Box<dyn StructuralModel>> {
        match self {
            ModelSpec::EntryGame { config } => Ok(Box::new(GameModel::from_config(config)?)),
            ModelSpec::SmmToy { draws, seed } => smm_toy(*draws, *seed),
        }
    }
}

pub fn registered_models() -> Vec<&'static str> {
    vec!["entry_game", "smm_toy"]
}
