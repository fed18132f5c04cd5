//! Quadrature and root finding.
//!
//! [`tanh_sinh`] passes the integrand the distances to both endpoints so that
//! integrands with algebraic endpoint singularities (`1/√(1 - z^q)` and the
//! like) can be evaluated without cancellation right up to the endpoint.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Point handed to a [`tanh_sinh`] integrand.
#[derive(Debug, Clone, Copy)]
pub struct Node<S> {
    pub x: S,
    /// `x - a`, computed without cancellation.
    pub from_left: S,
    /// `b - x`, computed without cancellation.
    pub from_right: S,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<S> {
    pub value: S,
    pub error_estimate: S,
    pub evaluations: usize,
}

const MAX_LEVEL: usize = 12;

/// Double-exponential quadrature of `f` over `[a, b]` to relative tolerance `tol`.
pub fn tanh_sinh<S: Scalar, F>(f: F, a: S, b: S, tol: S) -> Result<QuadResult<S>>
where
    F: Fn(Node<S>) -> S,
{
    if !(a < b) || !a.is_finite() || !b.is_finite() {
        return Err(Error::Domain(format!("tanh_sinh needs finite a < b, got [{a}, {b}]")));
    }
    let half_len = (b - a) / S::lit(2.0);
    let half_pi = S::FRAC_PI_2();
    let tiny = S::min_positive_value();
    let mut evaluations = 0usize;

    // Contribution of the symmetric pair at abscissa parameter τ > 0 (or the centre at τ = 0).
    let mut eval_pair = |tau: S| -> Option<S> {
        let u = half_pi * tau.sinh();
        let e = (-(u + u)).exp();
        // 1 - tanh(u) and 1 + tanh(u) without cancellation.
        let one_minus = (e + e) / (S::one() + e);
        let one_plus = S::lit(2.0) / (S::one() + e);
        let cosh_u = (u.exp() + (-u).exp()) / S::lit(2.0);
        let w = half_pi * tau.cosh() / (cosh_u * cosh_u);
        if !w.is_finite() || w * half_len < tiny {
            return None;
        }
        let near = half_len * one_minus;
        let far = half_len * one_plus;
        if near <= S::zero() {
            return None;
        }
        let right = f(Node { x: b - near, from_left: far, from_right: near });
        evaluations += 1;
        if tau == S::zero() {
            return Some(w * right);
        }
        let left = f(Node { x: a + near, from_left: near, from_right: far });
        evaluations += 1;
        Some(w * (left + right))
    };

    let tau_max = S::lit(6.5);
    let mut h = S::one();
    let mut sum = eval_pair(S::zero()).unwrap_or(S::zero());
    let mut k = 1usize;
    loop {
        let tau = h * S::from_usize_lossy(k);
        if tau > tau_max {
            break;
        }
        match eval_pair(tau) {
            Some(v) => sum = sum + v,
            None => break,
        }
        k += 1;
    }
    let mut estimate = sum * h * half_len;
    let mut err = S::infinity();

    for _level in 1..=MAX_LEVEL {
        h = h / S::lit(2.0);
        let mut k = 1usize;
        loop {
            let tau = h * S::from_usize_lossy(k);
            if tau > tau_max {
                break;
            }
            match eval_pair(tau) {
                Some(v) => sum = sum + v,
                None => break,
            }
            k += 2;
        }
        let next = sum * h * half_len;
        err = (next - estimate).abs();
        estimate = next;
        if !estimate.is_finite() {
            break;
        }
        if err <= tol * estimate.abs() || err <= tiny {
            return Ok(QuadResult { value: estimate, error_estimate: err, evaluations });
        }
    }
    Err(Error::Numeric {
        routine: "tanh_sinh",
        detail: format!("no convergence on [{a}, {b}]: estimate {estimate}, last change {err}"),
    })
}

/// Plain-`x` convenience wrapper around [`tanh_sinh`].
pub fn integrate<S: Scalar, F>(f: F, a: S, b: S, tol: S) -> Result<S>
where
    F: Fn(S) -> S,
{
    tanh_sinh(|n: Node<S>| f(n.x), a, b, tol).map(|r| r.value)
}

/// Root of a continuous `f` on a bracket `[lo, hi]` with `f(lo)·f(hi) ≤ 0`,
/// by Brent's method.
pub fn brent<S: Scalar, F>(f: F, lo: S, hi: S, xtol: S, max_iter: usize) -> Result<S>
where
    F: Fn(S) -> S,
{
    let two = S::lit(2.0);
    let (mut a, mut b) = (lo, hi);
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == S::zero() {
        return Ok(a);
    }
    if fb == S::zero() {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::Numeric {
            routine: "brent",
            detail: format!("root not bracketed: f({lo}) = {fa}, f({hi}) = {fb}"),
        });
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = two * S::epsilon() * b.abs() + xtol / two;
        let xm = (c - b) / two;
        if xm.abs() <= tol1 || fb == S::zero() {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = two * xm * s;
                q = S::one() - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (two * xm * qq * (qq - r) - (b - a) * (r - S::one()));
                q = (qq - S::one()) * (r - S::one()) * (s - S::one());
            }
            if p > S::zero() {
                q = -q;
            }
            p = p.abs();
            let min1 = S::lit(3.0) * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if two * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b = if d.abs() > tol1 { b + d } else { b + tol1 * xm.signum() };
        fb = f(b);
    }
    Err(Error::Numeric { routine: "brent", detail: format!("no convergence after {max_iter} iterations") })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_integral() {
        let v = integrate(|x: f64| x.exp(), 0.0, 1.0, 1e-14).unwrap();
        assert!((v - (1f64.exp() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn inverse_sqrt_singularity_at_right_end() {
        // ∫₀¹ dz/√(1-z) = 2, evaluated through the endpoint distance.
        let r = tanh_sinh(|n: Node<f64>| 1.0 / n.from_right.sqrt(), 0.0, 1.0, 1e-13).unwrap();
        assert!((r.value - 2.0).abs() < 1e-12, "{}", r.value);
    }

    #[test]
    fn log_singularity() {
        // ∫₀¹ dz/√(-ln z) = √π.
        let r = tanh_sinh(
            |n: Node<f64>| 1.0 / (-(-n.from_right).ln_1p()).sqrt(),
            0.0,
            1.0,
            1e-13,
        )
        .unwrap();
        assert!((r.value - std::f64::consts::PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn f32_quadrature() {
        let v = integrate(|x: f32| x * x, 0.0, 3.0, 1e-6).unwrap();
        assert!((v - 9.0).abs() < 1e-4);
    }

    #[test]
    fn brent_finds_cubic_root() {
        let r = brent(|x: f64| x * x * x - 2.0, 0.0, 2.0, 1e-15, 200).unwrap();
        assert!((r - 2f64.cbrt()).abs() < 1e-14);
        assert!(brent(|x: f64| x * x + 1.0, -1.0, 1.0, 1e-12, 50).is_err());
    }
}
