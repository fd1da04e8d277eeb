//! Local power under Pitman alternatives `beta0 + delta / sqrt(n)`.
//!
//! Under such a drift the minimized distance is asymptotically noncentral
//! chi-squared with noncentrality `k = delta' Jb' W Jb delta`, where `Jb` is
//! `dg/dbeta'` at the null point. The direction maximizing `k` on the unit
//! sphere is the top eigenvector of `Jb' W Jb`; directions in the null space
//! of `W Jb` have trivial local power.
//!
//! When the nuisance block is identified, re-minimizing over `alpha` removes
//! the part of `Jb delta` lying in the span of `D = dg/dalpha'`. The profiled
//! noncentrality uses `W - W D (D'WD)^+ D'W` in place of `W`; it is the one
//! that tracks simulated rejection rates. Both are reported.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dist::{chisq_quantile, noncentral_chisq_cdf};
use crate::error::{Error, Result};
use crate::linalg::{estimate_rank, pinv, sym_eig};
use crate::model::{jac_alpha, jac_beta, StructuralModel};

/// Relative tolerance for declaring top eigenvalues tied.
const TIE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct MaxPowerDirection {
    #[serde(with = "crate::serde_mat::vector")]
    pub delta_star: DVector<f64>,
    pub k_star: f64,
    /// Multiplicity of the top eigenvalue; above one the argmax is a subspace.
    pub top_eigenspace_dim: usize,
    /// `Jb' W Jb` vanished, so every direction has trivial local power.
    pub all_trivial: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct PowerReport {
    #[serde(with = "crate::serde_mat::vector")]
    pub delta_star: DVector<f64>,
    pub k_star: f64,
    pub relative_weights: Vec<f64>,
    pub trivial_dim: usize,
    pub top_eigenspace_dim: usize,
    pub all_trivial: bool,
    pub df: usize,
    pub tau: f64,
    /// `(c, power of beta0 + c delta_star / sqrt(n))`.
    pub predicted_power: Vec<(f64, f64)>,
    /// `delta_star' Jb' M Jb delta_star` with `M` the nuisance-projected weight.
    pub k_star_profiled: f64,
    pub predicted_power_profiled: Vec<(f64, f64)>,
}

/// `Jb' W Jb`.
pub fn power_matrix(grad_beta: &DMatrix<f64>, weight: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = grad_beta.nrows();
    if weight.shape() != (m, m) {
        return Err(Error::dimension("weight vs grad_beta rows", m, weight.nrows()));
    }
    let mat = grad_beta.transpose() * weight * grad_beta;
    Ok(0.5 * (&mat + mat.transpose()))
}

/// `W - W D (D'WD)^+ D'W`: the weight left after profiling out a nuisance
/// block with Jacobian `D`.
pub fn nuisance_projected_weight(weight: &DMatrix<f64>, grad_alpha: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = grad_alpha.nrows();
    if weight.shape() != (m, m) {
        return Err(Error::dimension("weight vs grad_alpha rows", m, weight.nrows()));
    }
    if grad_alpha.ncols() == 0 {
        return Ok(weight.clone());
    }
    let wd = weight * grad_alpha;
    let inner = grad_alpha.transpose() * &wd;
    let proj = &wd * pinv(&(0.5 * (&inner + inner.transpose())), 1e-10) * wd.transpose();
    let out = weight - proj;
    Ok(0.5 * (&out + out.transpose()))
}

/// Top eigenpair of a symmetric PSD power matrix, sign fixed so the first
/// non-zero component is positive.
pub fn max_power_direction_from_matrix(power: &DMatrix<f64>) -> Result<MaxPowerDirection> {
    let p = power.nrows();
    if p == 0 || power.ncols() != p {
        return Err(Error::InvalidArgument("power matrix must be square and non-empty".into()));
    }
    let spec = sym_eig(power)?;
    let top = spec.eigenvalues[0];
    let scale = top.abs().max(f64::MIN_POSITIVE);
    let all_trivial = !(top > 1e-300) || power.amax() == 0.0;
    let tied = spec
        .eigenvalues
        .iter()
        .take_while(|&&l| (top - l).abs() <= TIE_TOL * scale)
        .count();
    let mut delta = spec.eigenvectors.column(0).into_owned();
    if all_trivial {
        delta = DVector::zeros(p);
        delta[0] = 1.0;
    }
    if let Some(first) = delta.iter().find(|v| v.abs() > 1e-14).copied() {
        if first < 0.0 {
            delta = -delta;
        }
    }
    delta /= delta.norm();
    Ok(MaxPowerDirection {
        delta_star: delta,
        k_star: if all_trivial { 0.0 } else { top },
        top_eigenspace_dim: if all_trivial { p } else { tied },
        all_trivial,
    })
}

/// Direction of maximum local power at `(theta0, alpha0, beta0)` under `weight`.
pub fn max_power_direction(
    model: &dyn StructuralModel,
    theta0: &DVector<f64>,
    alpha0: &DVector<f64>,
    beta0: &DVector<f64>,
    weight: &DMatrix<f64>,
) -> Result<MaxPowerDirection> {
    let jb = jac_beta(model, theta0, alpha0, beta0)?;
    max_power_direction_from_matrix(&power_matrix(&jb, weight)?)
}

/// Squared components of `delta_star`.
pub fn relative_weights(delta_star: &DVector<f64>) -> Vec<f64> {
    let total = delta_star.norm_squared();
    delta_star.iter().map(|v| v * v / total).collect()
}

/// `1 - F(chi2_{d, 1-tau}; d, k)`.
pub fn local_power_from_noncentrality(k: f64, df: usize, tau: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    if df == 0 {
        return Err(Error::InvalidArgument("degrees of freedom must be positive".into()));
    }
    let crit = chisq_quantile(1.0 - tau, df)?;
    Ok(1.0 - noncentral_chisq_cdf(crit, df, k.max(0.0))?)
}

/// Noncentrality `delta' Jb' W Jb delta` of a local deviation `delta`.
pub fn noncentrality(grad_beta: &DMatrix<f64>, weight: &DMatrix<f64>, delta: &DVector<f64>) -> Result<f64> {
    if delta.len() != grad_beta.ncols() {
        return Err(Error::dimension("delta", grad_beta.ncols(), delta.len()));
    }
    let v = grad_beta * delta;
    let m = grad_beta.nrows();
    if weight.shape() != (m, m) {
        return Err(Error::dimension("weight", m, weight.nrows()));
    }
    Ok(((v.transpose() * weight * &v)[(0, 0)]).max(0.0))
}

/// Noncentrality after profiling out the nuisance block with Jacobian `grad_alpha`.
pub fn profiled_noncentrality(
    grad_beta: &DMatrix<f64>,
    grad_alpha: &DMatrix<f64>,
    weight: &DMatrix<f64>,
    delta: &DVector<f64>,
) -> Result<f64> {
    noncentrality(grad_beta, &nuisance_projected_weight(weight, grad_alpha)?, delta)
}

/// Predicted local power against `beta0 + delta / sqrt(n)`.
#[allow(clippy::too_many_arguments)]
pub fn local_power(
    delta: &DVector<f64>,
    model: &dyn StructuralModel,
    theta0: &DVector<f64>,
    alpha0: &DVector<f64>,
    beta0: &DVector<f64>,
    weight: &DMatrix<f64>,
    df: usize,
    tau: f64,
) -> Result<f64> {
    let jb = jac_beta(model, theta0, alpha0, beta0)?;
    local_power_from_noncentrality(noncentrality(&jb, weight, delta)?, df, tau)
}

/// `p - rank((W Jb)'(W Jb))`, rank estimated at the caller's `(n, b)`.
pub fn trivial_power_dim(weight: &DMatrix<f64>, grad_beta: &DMatrix<f64>, n: usize, b: f64) -> Result<usize> {
    let m = grad_beta.nrows();
    if weight.shape() != (m, m) {
        return Err(Error::dimension("weight vs grad_beta rows", m, weight.nrows()));
    }
    let wj = weight * grad_beta;
    let gram = wj.transpose() * wj;
    Ok(grad_beta.ncols() - estimate_rank(&gram, n, b)?.rank)
}

/// Full local-power summary; `scales` are the `c` values of the predicted curve.
#[allow(clippy::too_many_arguments)]
pub fn power_report(
    model: &dyn StructuralModel,
    theta0: &DVector<f64>,
    alpha0: &DVector<f64>,
    beta0: &DVector<f64>,
    weight: &DMatrix<f64>,
    df: usize,
    tau: f64,
    n: usize,
    b: f64,
    scales: &[f64],
) -> Result<PowerReport> {
    let jb = jac_beta(model, theta0, alpha0, beta0)?;
    let ja = jac_alpha(model, theta0, alpha0, beta0)?;
    let dir = max_power_direction_from_matrix(&power_matrix(&jb, weight)?)?;
    let k_star_profiled = profiled_noncentrality(&jb, &ja, weight, &dir.delta_star)?;
    let curve = |k: f64| {
        scales
            .iter()
            .map(|&c| Ok((c, local_power_from_noncentrality(c * c * k, df, tau)?)))
            .collect::<Result<Vec<_>>>()
    };
    let predicted_power = curve(dir.k_star)?;
    let predicted_power_profiled = curve(k_star_profiled)?;
    Ok(PowerReport {
        relative_weights: relative_weights(&dir.delta_star),
        trivial_dim: trivial_power_dim(weight, &jb, n, b)?,
        delta_star: dir.delta_star,
        k_star: dir.k_star,
        top_eigenspace_dim: dir.top_eigenspace_dim,
        all_trivial: dir.all_trivial,
        df,
        tau,
        predicted_power,
        k_star_profiled,
        predicted_power_profiled,
    })
}
