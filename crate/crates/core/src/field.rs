//! Volatility fields `σ(t, x)` and the martingale models built on them.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::scalar::Scalar;

/// Closed interval, possibly unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Interval<S: Scalar = f64> {
    pub lo: S,
    pub hi: S,
}

impl<S: Scalar> Interval<S> {
    pub fn new(lo: S, hi: S) -> Self {
        Self { lo, hi }
    }

    pub fn real_line() -> Self {
        Self { lo: S::neg_infinity(), hi: S::infinity() }
    }

    pub fn unit() -> Self {
        Self { lo: S::zero(), hi: S::one() }
    }

    pub fn contains(&self, x: S) -> bool {
        x >= self.lo && x <= self.hi
    }
}

/// Regularity a field declares about itself. Nothing here is verified; the
/// estimators branch on these flags to decide which of their hypotheses hold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularity {
    /// Depends on `(t, x)` only.
    pub markov: bool,
    /// Independent of `t`.
    pub time_homogeneous: bool,
    /// Blows up like `(1 - t)^(-1/2)` at the end of the time domain.
    pub singular_at_end: bool,
    /// Globally bounded on its domain.
    pub bounded: bool,
    /// Lipschitz in `x`, uniformly in `t`.
    pub lipschitz: bool,
    /// Bounded away from zero and infinity (`σ ∈ (δ, 1/δ)` for some `δ > 0`).
    pub uniformly_positive: bool,
}

impl Regularity {
    pub const fn constant() -> Self {
        Self {
            markov: true,
            time_homogeneous: true,
            singular_at_end: false,
            bounded: true,
            lipschitz: true,
            uniformly_positive: true,
        }
    }

    pub const fn win_profile() -> Self {
        Self {
            markov: true,
            time_homogeneous: false,
            singular_at_end: true,
            bounded: false,
            lipschitz: false,
            uniformly_positive: false,
        }
    }
}

type EvalFn<S> = dyn Fn(S, S) -> S + Send + Sync;

/// Evaluatable nonnegative volatility `σ(t, x)` with domain metadata.
#[derive(Clone)]
pub struct VolatilityField<S: Scalar = f64> {
    name: String,
    eval: Arc<EvalFn<S>>,
    pub time_domain: Interval<S>,
    pub state_domain: Interval<S>,
    pub regularity: Regularity,
}

impl<S: Scalar> fmt::Debug for VolatilityField<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VolatilityField")
            .field("name", &self.name)
            .field("time_domain", &self.time_domain)
            .field("state_domain", &self.state_domain)
            .field("regularity", &self.regularity)
            .finish()
    }
}

impl<S: Scalar> VolatilityField<S> {
    pub fn new(
        name: impl Into<String>,
        time_domain: Interval<S>,
        state_domain: Interval<S>,
        regularity: Regularity,
        eval: impl Fn(S, S) -> S + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(eval),
            time_domain,
            state_domain,
            regularity,
        }
    }

    /// `σ ≡ c` on `[0, 1] × ℝ`. A zero constant is the constant martingale.
    pub fn constant(c: S) -> Self {
        let c = c.abs();
        let mut reg = Regularity::constant();
        reg.uniformly_positive = c > S::zero();
        Self::new(
            format!("const({c})"),
            Interval::unit(),
            Interval::real_line(),
            reg,
            move |_, _| c,
        )
    }

    /// Time-homogeneous field `σ(x) = f(x)`.
    pub fn homogeneous(
        name: impl Into<String>,
        regularity: Regularity,
        f: impl Fn(S) -> S + Send + Sync + 'static,
    ) -> Self {
        let mut reg = regularity;
        reg.time_homogeneous = true;
        Self::new(name, Interval::unit(), Interval::real_line(), reg, move |_, x| f(x))
    }

    /// `σ(x) = level + amplitude · sin(x)`; bounded, Lipschitz and, when
    /// `level > |amplitude|`, uniformly positive.
    pub fn sine(level: S, amplitude: S) -> Self {
        let reg = Regularity {
            markov: true,
            time_homogeneous: true,
            singular_at_end: false,
            bounded: true,
            lipschitz: true,
            uniformly_positive: level > amplitude.abs(),
        };
        Self::homogeneous(format!("{level}+{amplitude}*sin(x)"), reg, move |x: S| {
            (level + amplitude * x.sin()).abs()
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Unchecked evaluation; hot loops call this after validating their domain once.
    #[inline]
    pub fn eval(&self, t: S, x: S) -> S {
        (self.eval)(t, x)
    }

    /// Checked evaluation.
    pub fn try_eval(&self, t: S, x: S) -> Result<S> {
        if !self.time_domain.contains(t) {
            return Err(domain(format!("{}: t = {t} outside time domain", self.name)));
        }
        if self.regularity.singular_at_end && t >= self.time_domain.hi {
            return Err(domain(format!("{}: singular at t = {t}", self.name)));
        }
        if !self.state_domain.contains(x) {
            return Err(domain(format!("{}: x = {x} outside state domain", self.name)));
        }
        let v = self.eval(t, x);
        if !v.is_finite() || v < S::zero() {
            return Err(domain(format!("{}: σ({t}, {x}) = {v} is not finite and nonnegative", self.name)));
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    None,
    /// States live in `[0, 1]`; both endpoints absorb.
    AbsorbingUnit,
}

/// Scalar martingale diffusion `dX = σ(t, X) dB`, `X_0 = x0`.
#[derive(Debug, Clone)]
pub struct MartingaleModel<S: Scalar = f64> {
    pub x0: S,
    pub vol: VolatilityField<S>,
    pub boundary: Boundary,
}

impl<S: Scalar> MartingaleModel<S> {
    pub fn new(x0: S, vol: VolatilityField<S>, boundary: Boundary) -> Result<Self> {
        if !x0.is_finite() {
            return Err(domain("x0 must be finite"));
        }
        if boundary == Boundary::AbsorbingUnit {
            if !(x0 >= S::zero() && x0 <= S::one()) {
                return Err(domain(format!("x0 = {x0} outside [0, 1]")));
            }
            // σ must vanish on the absorbing boundary.
            let probes = [0.0, 0.25, 0.5, 0.75, 0.9];
            for &t in &probes {
                let t = S::lit(t);
                if t >= vol.time_domain.hi {
                    continue;
                }
                for x in [S::zero(), S::one()] {
                    let v = vol.eval(t, x);
                    if v != S::zero() {
                        return Err(domain(format!(
                            "{}: σ({t}, {x}) = {v} but absorbing boundary needs σ = 0",
                            vol.name()
                        )));
                    }
                }
            }
        }
        Ok(Self { x0, vol, boundary })
    }

    /// Unbounded-state model.
    pub fn on_real_line(x0: S, vol: VolatilityField<S>) -> Self {
        Self { x0, vol, boundary: Boundary::None }
    }

    /// Brownian motion scaled by `c`, started at `x0`.
    pub fn scaled_bm(x0: S, c: S) -> Self {
        Self::on_real_line(x0, VolatilityField::constant(c))
    }

    pub fn state_domain(&self) -> Interval<S> {
        match self.boundary {
            Boundary::None => Interval::real_line(),
            Boundary::AbsorbingUnit => Interval::unit(),
        }
    }

    /// Projects a state back into the state domain.
    #[inline]
    pub fn project(&self, x: S) -> S {
        match self.boundary {
            Boundary::None => x,
            Boundary::AbsorbingUnit => x.max(S::zero()).min(S::one()),
        }
    }

    #[inline]
    pub fn is_absorbed(&self, x: S) -> bool {
        self.boundary == Boundary::AbsorbingUnit && (x == S::zero() || x == S::one())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field_is_nonnegative() {
        let f = VolatilityField::constant(-2.0f64);
        assert_eq!(f.eval(0.3, 10.0), 2.0);
        assert!(VolatilityField::constant(0.0f64).regularity.bounded);
    }

    #[test]
    fn absorbing_model_rejects_nonvanishing_boundary() {
        let f = VolatilityField::constant(1.0f64);
        assert!(MartingaleModel::new(0.5, f, Boundary::AbsorbingUnit).is_err());
    }

    #[test]
    fn try_eval_enforces_domains() {
        let f = VolatilityField::new(
            "wf",
            Interval::new(0.0, 1.0),
            Interval::unit(),
            Regularity::win_profile(),
            |t: f64, x: f64| (x * (1.0 - x) / (1.0 - t)).sqrt(),
        );
        assert!(f.try_eval(1.0, 0.5).is_err());
        assert!(f.try_eval(0.5, 1.5).is_err());
        assert!((f.try_eval(0.75, 0.5).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sine_field_flags() {
        let f = VolatilityField::sine(1.5f64, 0.5);
        assert!(f.regularity.uniformly_positive && f.regularity.lipschitz);
        assert!((f.eval(0.0, 0.0) - 1.5).abs() < 1e-15);
    }
}
