//! Dense symmetric kernels: eigendecomposition, hard-threshold rank
//! estimation and the spectrally truncated Moore-Penrose inverse.
//!
//! Rank estimation counts eigenvalues at or above `n^(-b)`. Eigenvalues whose
//! population value is zero converge at rate `1/n`, so for `b < 1` they fall
//! below the threshold with probability tending to one while non-zero
//! eigenvalues stay bounded away from it. Truncating the spectrum at the same
//! threshold before inverting gives a pseudoinverse whose rank matches the
//! population rank, which is what makes the plug-in weighting matrix consistent.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};

/// Default threshold exponent `b`.
pub const DEFAULT_THRESHOLD_EXPONENT: f64 = 0.99;

/// Eigenpairs of a symmetric matrix, eigenvalues sorted in non-increasing order.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    pub eigenvalues: DVector<f64>,
    /// Column `i` pairs with `eigenvalues[i]`.
    pub eigenvectors: DMatrix<f64>,
}

impl SpectralDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `Q diag(f(lambda)) Q'`.
    pub fn reconstruct_with<F: Fn(f64) -> f64>(&self, f: F) -> DMatrix<f64> {
        let m = self.dim();
        let mut out = DMatrix::zeros(m, m);
        for (k, &lambda) in self.eigenvalues.iter().enumerate() {
            let w = f(lambda);
            if w == 0.0 {
                continue;
            }
            let q = self.eigenvectors.column(k);
            out.ger(w, &q, &q, 1.0);
        }
        out
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.reconstruct_with(|l| l)
    }
}

/// Outcome of hard-threshold rank estimation.
#[derive(Clone, Debug, Serialize)]
pub struct RankEstimate {
    pub rank: usize,
    pub threshold: f64,
    /// Eigenvalues at or above the threshold, largest first.
    pub eigenvalues_kept: Vec<f64>,
    /// Smallest eigenvalue of the input (after clipping at zero).
    pub min_eigenvalue: f64,
    pub b: f64,
}

/// Truncated pseudoinverse `W = R P~^+ R'` together with the truncated source `A~ = R P~ R'`.
#[derive(Clone, Debug)]
pub struct TruncatedPinv {
    pub matrix: DMatrix<f64>,
    pub rank: usize,
    pub truncated_source: DMatrix<f64>,
    pub threshold: f64,
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!("{what} has non-finite entries")))
    }
}

fn check_square(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.is_square() {
        Ok(())
    } else {
        Err(Error::InvalidMatrix(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )))
    }
}

/// `(M + M') / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigendecomposition of the symmetric part of `m`, eigenvalues descending.
pub fn sym_eig(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    check_square(m, "sym_eig input")?;
    check_finite(m, "sym_eig input")?;
    let dim = m.nrows();
    if dim == 0 {
        return Ok(SpectralDecomposition {
            eigenvalues: DVector::zeros(0),
            eigenvectors: DMatrix::zeros(0, 0),
        });
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues = DVector::from_iterator(dim, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = DMatrix::zeros(dim, dim);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// The hard threshold `n^(-b)`.
pub fn rank_threshold(n: usize, b: f64) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidSampleSize(n));
    }
    if !(b > 0.0 && b < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "threshold exponent b must lie in (0,1), got {b}"
        )));
    }
    Ok((n as f64).powf(-b))
}

fn rank_from_spectrum(spec: &SpectralDecomposition, threshold: f64, b: f64) -> Result<RankEstimate> {
    let min = spec.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -threshold {
        return Err(Error::NotPsd {
            eigenvalue: min,
            tolerance: threshold,
        });
    }
    let kept: Vec<f64> = spec
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0))
        .filter(|&l| l >= threshold)
        .collect();
    Ok(RankEstimate {
        rank: kept.len(),
        threshold,
        eigenvalues_kept: kept,
        min_eigenvalue: if min.is_finite() { min.max(0.0) } else { 0.0 },
        b,
    })
}

/// Number of eigenvalues of the PSD matrix `m` at or above `n^(-b)`.
pub fn estimate_rank(m: &DMatrix<f64>, n: usize, b: f64) -> Result<RankEstimate> {
    let threshold = rank_threshold(n, b)?;
    let spec = sym_eig(m)?;
    rank_from_spectrum(&spec, threshold, b)
}

/// Moore-Penrose inverse of `a` after zeroing every eigenvalue below `n^(-b)`.
///
/// The rank of the result always equals `estimate_rank(a, n, b).rank`.
pub fn truncated_pinv(a: &DMatrix<f64>, n: usize, b: f64) -> Result<TruncatedPinv> {
    let threshold = rank_threshold(n, b)?;
    let spec = sym_eig(a)?;
    let est = rank_from_spectrum(&spec, threshold, b)?;
    let keep = |l: f64| l >= threshold;
    let truncated_source = spec.reconstruct_with(|l| if keep(l) { l } else { 0.0 });
    let matrix = symmetrize(&spec.reconstruct_with(|l| if keep(l) { 1.0 / l } else { 0.0 }));
    Ok(TruncatedPinv {
        matrix,
        rank: est.rank,
        truncated_source: symmetrize(&truncated_source),
        threshold,
    })
}

/// `v' W v`.
pub fn quadratic_form(v: &DVector<f64>, w: &DMatrix<f64>) -> Result<f64> {
    if w.nrows() != v.len() || w.ncols() != v.len() {
        return Err(Error::dimension("quadratic_form", v.len(), w.nrows().max(w.ncols())));
    }
    Ok(v.dot(&(w * v)))
}

/// Moore-Penrose inverse of a general matrix via SVD, relative cut-off `rcond`.
pub fn pinv(a: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    if a.is_empty() {
        return a.transpose();
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cut = rcond * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut out = DMatrix::zeros(a.ncols(), a.nrows());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cut && s > 0.0 {
            out.ger(1.0 / s, &vt.row(k).transpose(), &u.column(k), 1.0);
        }
    }
    out
}

/// Singular values of `a`, largest first.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut s: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}
