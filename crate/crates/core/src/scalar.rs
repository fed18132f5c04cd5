//! Scalar abstraction shared by every numeric routine in the crate.
//!
//! All algorithms are written against [`Scalar`], which is implemented for
//! `f32` and `f64`. Special functions (normal CDF and quantile) are evaluated
//! in double precision and rounded back to the working type.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Floating point type usable by the library: `f32` or `f64`.
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Default
    + Debug
    + Display
    + Serialize
    + DeserializeOwned
    + Send
    + Sync
    + 'static
{
    /// Lossless-enough conversion from a double precision literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn from_usize_lossy(n: usize) -> Self {
        Self::from_usize(n).expect("usize representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("float converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for [`Scalar::lit`].
#[inline]
pub fn lit<S: Scalar>(x: f64) -> S {
    S::lit(x)
}

/// Standard normal density.
pub fn norm_pdf<S: Scalar>(x: S) -> S {
    let x = x.as_f64();
    S::lit((-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt())
}

/// Standard normal CDF, accurate in both tails.
pub fn norm_cdf<S: Scalar>(x: S) -> S {
    let x = x.as_f64();
    S::lit(0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2))
}

/// Standard normal quantile. Returns `-inf` / `+inf` at 0 / 1.
pub fn norm_quantile<S: Scalar>(u: S) -> S {
    let u = u.as_f64();
    if u <= 0.0 {
        return S::neg_infinity();
    }
    if u >= 1.0 {
        return S::infinity();
    }
    S::lit(-std::f64::consts::SQRT_2 * statrs::function::erf::erfc_inv(2.0 * u))
}

/// Density of N(mean, var) at `x`.
pub fn gaussian_pdf<S: Scalar>(x: S, mean: S, var: S) -> S {
    let sd = var.sqrt();
    norm_pdf((x - mean) / sd) / sd
}

/// Numerically stable `log(cosh(x))`.
pub fn log_cosh<S: Scalar>(x: S) -> S {
    let a = x.abs();
    a + (-(a + a)).exp().ln_1p() - S::LN_2()
}

/// Sum with a fixed pairwise reduction tree, so the result only depends on
/// the order of `xs`, never on how the values were produced.
pub fn pairwise_sum<S: Scalar>(xs: &[S]) -> S {
    const LEAF: usize = 32;
    if xs.len() <= LEAF {
        return xs.iter().fold(S::zero(), |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(bound = "")]
pub struct MeanStderr<S: Scalar = f64> {
    pub mean: S,
    pub stderr: S,
    pub n: usize,
}

impl<S: Scalar> MeanStderr<S> {
    pub fn from_samples(xs: &[S]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self { mean: S::nan(), stderr: S::nan(), n };
        }
        let nf = S::from_usize_lossy(n);
        let mean = pairwise_sum(xs) / nf;
        if n == 1 {
            return Self { mean, stderr: S::zero(), n };
        }
        let dev: Vec<S> = xs.iter().map(|&x| (x - mean) * (x - mean)).collect();
        let var = pairwise_sum(&dev) / (nf - S::one());
        Self { mean, stderr: (var / nf).sqrt(), n }
    }

    /// Standard error of a difference of two independent estimates.
    pub fn combined_stderr(&self, other: &Self) -> S {
        (self.stderr * self.stderr + other.stderr * other.stderr).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_cdf_and_quantile_invert() {
        for &u in &[1e-10, 0.01, 0.3, 0.5, 0.77, 0.999] {
            let z: f64 = norm_quantile(u);
            assert!((norm_cdf(z) - u).abs() < 1e-12 * u.max(1e-3) * 1e3);
        }
        assert!((norm_cdf(0.0f64) - 0.5).abs() < 1e-16);
        assert!((norm_pdf(0.0f32) - 0.398_942_3).abs() < 1e-6);
    }

    #[test]
    fn log_cosh_matches_naive_and_survives_large_arguments() {
        for &x in &[-3.0f64, -0.1, 0.0, 0.5, 7.0] {
            assert!((log_cosh(x) - x.cosh().ln()).abs() < 1e-14);
        }
        assert!((log_cosh(1000.0f64) - (1000.0 - 2f64.ln())).abs() < 1e-10);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let xs: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&xs), 500_500.0);
    }

    #[test]
    fn mean_stderr_of_constant_is_zero() {
        let m = MeanStderr::from_samples(&[2.0f64; 10]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.stderr, 0.0);
    }
}
