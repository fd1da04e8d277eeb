//! Normal and (noncentral) chi-squared distribution functions.
//!
//! Everything is built on the regularized incomplete gamma function: the
//! power series for `x < a + 1` and a modified-Lentz continued fraction
//! otherwise. `erfc(z) = Q(1/2, z^2)` gives the normal cdf, and the
//! noncentral chi-squared cdf is the Poisson mixture of central ones.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_ITER: usize = 10_000;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// `ln Gamma(x)` for `x > 0` (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    let t = x + LANCZOS_G + 0.5;
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Returns `(P(a, x), Q(a, x))`.
fn gamma_inc_pair(a: f64, x: f64) -> (f64, f64) {
    if x <= 0.0 {
        return (0.0, 1.0);
    }
    if x.is_infinite() {
        return (1.0, 0.0);
    }
    let log_prefix = -x + a * x.ln() - ln_gamma(a);
    if x < a + 1.0 {
        let mut ap = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        for _ in 0..MAX_ITER {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                break;
            }
        }
        let p = (sum.ln() + log_prefix).exp().min(1.0);
        (p, 1.0 - p)
    } else {
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..MAX_ITER {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                break;
            }
        }
        let q = (h.ln() + log_prefix).exp().min(1.0);
        (1.0 - q, q)
    }
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    gamma_inc_pair(a, x).0
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> f64 {
    gamma_inc_pair(a, x).1
}

/// Standard normal density, unchecked.
#[inline]
pub fn std_normal_pdf(x: f64) -> f64 {
    const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal cdf, unchecked (NaN propagates).
#[inline]
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let (p, q) = gamma_inc_pair(0.5, 0.5 * x * x);
    if x < 0.0 {
        0.5 * q
    } else {
        0.5 + 0.5 * p
    }
}

fn finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::InvalidArgument(format!("{what} must be finite, got {x}")))
    }
}

pub fn normal_cdf(x: f64) -> Result<f64> {
    Ok(std_normal_cdf(finite(x, "normal_cdf argument")?))
}

pub fn normal_pdf(x: f64) -> Result<f64> {
    Ok(std_normal_pdf(finite(x, "normal_pdf argument")?))
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    check_prob(p)?;
    if p == 0.5 {
        return Ok(0.0);
    }
    // |z| = sqrt(chi2_1 quantile of |2p - 1|)
    let z = chisq_quantile((2.0 * p - 1.0).abs(), 1)?.sqrt();
    Ok(if p < 0.5 { -z } else { z })
}

fn check_df(df: usize) -> Result<()> {
    if df == 0 {
        Err(Error::InvalidArgument("degrees of freedom must be >= 1".into()))
    } else {
        Ok(())
    }
}

fn check_prob(p: f64) -> Result<()> {
    if p > 0.0 && p < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("probability must lie in (0,1), got {p}")))
    }
}

fn check_nonneg(x: f64, what: &str) -> Result<()> {
    if x >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} must be >= 0, got {x}")))
    }
}

pub fn chisq_cdf(x: f64, df: usize) -> Result<f64> {
    check_df(df)?;
    check_nonneg(x, "chi-squared argument")?;
    Ok(gamma_p(0.5 * df as f64, 0.5 * x))
}

/// Upper tail `1 - cdf`, computed without cancellation.
pub fn chisq_sf(x: f64, df: usize) -> Result<f64> {
    check_df(df)?;
    check_nonneg(x, "chi-squared argument")?;
    Ok(gamma_q(0.5 * df as f64, 0.5 * x))
}

pub fn chisq_pdf(x: f64, df: usize) -> Result<f64> {
    check_df(df)?;
    check_nonneg(x, "chi-squared argument")?;
    let k = 0.5 * df as f64;
    if x == 0.0 {
        return Ok(match df {
            1 => f64::INFINITY,
            2 => 0.5,
            _ => 0.0,
        });
    }
    Ok(((k - 1.0) * x.ln() - 0.5 * x - k * std::f64::consts::LN_2 - ln_gamma(k)).exp())
}

/// Quantile of the central chi-squared: bracketing, then safeguarded Newton.
pub fn chisq_quantile(p: f64, df: usize) -> Result<f64> {
    check_prob(p)?;
    check_df(df)?;
    let cdf = |x: f64| gamma_p(0.5 * df as f64, 0.5 * x);
    let mut lo = 0.0_f64;
    let mut hi = (df as f64).max(1.0);
    while cdf(hi) < p {
        lo = hi;
        hi *= 2.0;
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f.abs() <= 1e-13 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let dens = chisq_pdf(x, df)?;
        let newton = x - f / dens;
        x = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(x)
}

/// Noncentral chi-squared cdf as a Poisson(k/2) mixture of central cdfs.
///
/// Terms are added until the remaining Poisson mass falls below `1e-12`.
pub fn noncentral_chisq_cdf(x: f64, df: usize, k: f64) -> Result<f64> {
    check_df(df)?;
    check_nonneg(x, "chi-squared argument")?;
    check_nonneg(k, "noncentrality")?;
    if k == 0.0 {
        return chisq_cdf(x, df);
    }
    let lambda = 0.5 * k;
    let ln_lambda = lambda.ln();
    let mut mass = 0.0;
    let mut acc = 0.0;
    for j in 0..1_000_000usize {
        let jf = j as f64;
        let w = (-lambda + jf * ln_lambda - ln_gamma(jf + 1.0)).exp();
        mass += w;
        acc += w * gamma_p(0.5 * df as f64 + jf, 0.5 * x);
        if jf > lambda && 1.0 - mass < 1e-12 {
            break;
        }
    }
    Ok(acc.clamp(0.0, 1.0))
}

/// A chi-squared law with `df` degrees of freedom and noncentrality `k`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiSquared {
    pub df: usize,
    pub noncentrality: f64,
}

impl ChiSquared {
    pub fn central(df: usize) -> Result<Self> {
        Self::new(df, 0.0)
    }

    pub fn new(df: usize, noncentrality: f64) -> Result<Self> {
        check_df(df)?;
        check_nonneg(noncentrality, "noncentrality")?;
        Ok(Self { df, noncentrality })
    }

    pub fn cdf(&self, x: f64) -> Result<f64> {
        noncentral_chisq_cdf(x, self.df, self.noncentrality)
    }

    pub fn sf(&self, x: f64) -> Result<f64> {
        if self.noncentrality == 0.0 {
            chisq_sf(x, self.df)
        } else {
            Ok(1.0 - self.cdf(x)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-14);
        assert_relative_eq!(ln_gamma(10.0), 362_880f64.ln(), max_relative = 1e-14);
    }

    #[test]
    fn normal_cdf_examples() {
        assert_eq!(normal_cdf(0.0).unwrap(), 0.5);
        assert!((normal_cdf(40.0).unwrap() - 1.0).abs() <= 1e-15);
        assert!(normal_cdf(-40.0).unwrap() < 1e-300);
        assert!(matches!(normal_cdf(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(matches!(normal_pdf(f64::INFINITY), Err(Error::InvalidArgument(_))));
    }

    /// Composite Simpson quadrature of the density on [0, x], independent of the gamma route.
    fn simpson_normal_cdf(x: f64) -> f64 {
        let n = 20_000;
        let h = x / n as f64;
        let mut s = std_normal_pdf(0.0) + std_normal_pdf(x);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * std_normal_pdf(i as f64 * h);
        }
        0.5 + s * h / 3.0
    }

    #[test]
    fn normal_cdf_matches_quadrature() {
        let oracle = simpson_normal_cdf(1.959_964);
        assert!((oracle - 0.975).abs() < 1e-6);
        assert!((normal_cdf(1.959_964).unwrap() - 0.975).abs() < 1e-6);
        for &x in &[0.3, 1.0, 2.5, 4.0] {
            assert!((normal_cdf(x).unwrap() - simpson_normal_cdf(x)).abs() < 1e-12);
            assert!((normal_cdf(-x).unwrap() - (1.0 - simpson_normal_cdf(x))).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_quantile_round_trip() {
        assert_relative_eq!(normal_quantile(0.975).unwrap(), 1.959_963_984_540_054, epsilon = 1e-9);
        assert_relative_eq!(normal_quantile(0.025).unwrap(), -1.959_963_984_540_054, epsilon = 1e-9);
    }

    #[test]
    fn chisq_examples() {
        assert_eq!(chisq_cdf(0.0, 3).unwrap(), 0.0);
        let ln4 = 2.0 * std::f64::consts::LN_2;
        assert!((chisq_cdf(ln4, 2).unwrap() - 0.5).abs() < 1e-14);
        assert!((chisq_quantile(0.5, 2).unwrap() - ln4).abs() < 1e-10);
        // df = 4 has cdf 1 - exp(-x/2)(1 + x/2)
        let q = chisq_quantile(0.95, 4).unwrap();
        assert!(((-q / 2.0f64).exp() * (1.0 + q / 2.0) - 0.05).abs() < 1e-12);
        assert_eq!((q * 1000.0).floor() / 1000.0, 9.487);
        assert!((chisq_cdf(9.487, 4).unwrap() - 0.95).abs() < 5e-4);
        // df = 2 is exponential with mean 2
        for &x in &[0.1, 1.0, 5.0, 30.0] {
            assert_relative_eq!(chisq_cdf(x, 2).unwrap(), 1.0 - (-x / 2.0f64).exp(), epsilon = 1e-14);
        }
    }

    #[test]
    fn chisq_errors() {
        assert!(chisq_cdf(-1.0, 2).is_err());
        assert!(chisq_cdf(1.0, 0).is_err());
        assert!(chisq_quantile(0.0, 2).is_err());
        assert!(chisq_quantile(1.0, 2).is_err());
        assert!(noncentral_chisq_cdf(1.0, 2, -0.1).is_err());
    }

    #[test]
    fn quantile_round_trip_grid() {
        for df in [1usize, 2, 3, 4, 7, 12, 30] {
            for &p in &[1e-4, 0.01, 0.05, 0.3, 0.5, 0.9, 0.95, 0.99, 0.9999] {
                let q = chisq_quantile(p, df).unwrap();
                assert!((chisq_cdf(q, df).unwrap() - p).abs() <= 1e-10, "df={df} p={p}");
            }
        }
    }

    #[test]
    fn noncentral_reduces_and_orders() {
        for &x in &[0.5, 3.0, 9.0] {
            let a = noncentral_chisq_cdf(x, 3, 0.0).unwrap();
            assert!((a - chisq_cdf(x, 3).unwrap()).abs() <= 1e-10);
        }
        assert!(noncentral_chisq_cdf(5.0, 2, 1.0).unwrap() > noncentral_chisq_cdf(5.0, 2, 3.0).unwrap());
        // df = 2, k large still sums to a probability
        let big = noncentral_chisq_cdf(2000.0, 2, 1500.0).unwrap();
        assert!(big > 0.99 && big <= 1.0);
    }

    #[test]
    fn central_against_statrs() {
        use statrs::distribution::{ChiSquared as S, ContinuousCDF};
        for df in [1usize, 2, 5, 11] {
            let d = S::new(df as f64).unwrap();
            for &x in &[0.01, 0.7, 3.3, 10.0, 25.0] {
                assert!((chisq_cdf(x, df).unwrap() - d.cdf(x)).abs() < 1e-12);
            }
        }
    }
}
