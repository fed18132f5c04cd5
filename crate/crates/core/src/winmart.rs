//! Optimal win-martingales.
//!
//! For `p > 0` the optimal volatility is `σ̄(t, x) = y(x)^{1/p} / √(1 - t)`,
//! where `y ≥ 0` solves `y'' + p·y^{(p-2)/p} = 0` on `[0, 1]` with
//! `y(0) = y(1) = 0`. Writing `z = y / y0` for the peak `y0 = y(1/2)`, the
//! first integral of the ODE gives
//!
//! ```text
//! x(z) = G(z) / (2 I_p),   G(z) = ∫₀^z g,   I_p = G(1),
//! g(w) = 1/√|w^q - 1|  (q = (2p - 2)/p, p ≠ 1),   g(w) = 1/√(-ln w)  (p = 1),
//! ```
//!
//! and `dy/dx = 2 I_p y0 / g(z)`. The profile is tabulated on uniform nodes of
//! `[0, 1/2]` by marching `x(z)` with the substitution `z = u(2 - u)`, which
//! removes the `1/√(1 - z)` singularity at the peak.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::field::{Boundary, Interval, MartingaleModel, Regularity, VolatilityField};
use crate::grid::TimeGrid;
use crate::quad::{brent, tanh_sinh, Node};
use crate::rng::derive_stream;
use crate::scalar::{norm_pdf, norm_quantile, MeanStderr, Scalar};
use crate::sde::{check_grid, drive_path, par_map, Observer, Schedule, SimConfig};

/// Default number of table nodes on `[0, 1/2]`.
pub const DEFAULT_NODES: usize = (1 << 12) + 1;
/// Half-width of the band around `p = 2` handled by the Wright–Fisher closed form.
pub const WRIGHT_FISHER_BAND: f64 = 1e-6;
/// Levels of the geometric sub-table inside the first cell.
const TAIL_LEVELS: usize = 64;

fn work_tol<S: Scalar>() -> S {
    S::lit(1e-13).max(S::epsilon() * S::lit(64.0))
}

/// `p` exponent bookkeeping shared by the quadratures.
#[derive(Debug, Clone, Copy)]
struct Branch<S> {
    q: S,
    log_case: bool,
}

impl<S: Scalar> Branch<S> {
    fn new(p: S) -> Self {
        let two = S::lit(2.0);
        Self { q: (two * p - two) / p, log_case: p == S::one() }
    }

    /// `|w^q - 1|` (or `-ln w`) from `ln w`.
    #[inline]
    fn gap(&self, ln_w: S) -> S {
        if self.log_case {
            -ln_w
        } else {
            (self.q * ln_w).exp_m1().abs()
        }
    }

    /// `g(w)`.
    #[inline]
    fn g(&self, w: S) -> S {
        S::one() / self.gap(w.ln()).sqrt()
    }

    /// `H(v) = g(z(v)) z'(v)` with `z = v(2 - v)`, given `e = 1 - v`.
    #[inline]
    fn h(&self, v: S, e: S) -> S {
        let two = S::lit(2.0);
        let limit = if self.log_case { two } else { two / self.q.abs().sqrt() };
        let e2 = e * e;
        if e2 <= S::min_positive_value() {
            return limit;
        }
        let ln_z = if v < S::lit(0.5) { v.ln() + e.ln_1p() } else { (-e2).ln_1p() };
        let gap = self.gap(ln_z);
        if !(gap > S::zero()) {
            return limit;
        }
        two * e / gap.sqrt()
    }
}

/// `I_p = ∫₀¹ g`.
fn integral_ip<S: Scalar>(p: S) -> Result<S> {
    let br = Branch::new(p);
    Ok(tanh_sinh(|n: Node<S>| br.h(n.x, n.from_right), S::zero(), S::one(), work_tol())?.value)
}

fn check_p<S: Scalar>(p: S) -> Result<()> {
    if !(p > S::zero()) || !p.is_finite() {
        return Err(domain(format!("p = {p} must be positive and finite")));
    }
    Ok(())
}

fn near_two<S: Scalar>(p: S) -> bool {
    (p - S::lit(2.0)).abs() < S::lit(WRIGHT_FISHER_BAND)
}

/// `(C_p, y0, I_p)`.
fn constants<S: Scalar>(p: S) -> Result<(S, S, S)> {
    check_p(p)?;
    let two = S::lit(2.0);
    if near_two(p) {
        return Ok((S::one(), S::lit(0.25), two));
    }
    let ip = integral_ip(p)?;
    let log_2i = (two * ip).ln();
    if p == S::one() {
        // x(1) = y0·I/√2 = 1/2 and C = -2 ln y0.
        let log_y0 = S::lit(0.5) * two.ln() - log_2i;
        return Ok((-two * log_y0, log_y0.exp(), ip));
    }
    let log_a = ((two * p - two).abs() / (two * p * p)).ln();
    let log_c = -(two * p - two) * log_2i - p * log_a;
    let log_y0 = -(p / two) * log_a - p * log_2i;
    Ok((log_c.exp(), log_y0.exp(), ip))
}

/// The constant `C_p` of the first integral of the profile ODE.
pub fn solve_cp<S: Scalar>(p: S) -> Result<S> {
    constants(p).map(|c| c.0)
}

/// Tabulated optimal profile `y` for one exponent `p`.
#[derive(Clone, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct OptimalProfile<S: Scalar = f64> {
    pub p: S,
    pub c_p: S,
    pub y0: S,
    pub i_p: S,
    /// Node spacing on `[0, 1/2]`.
    h: S,
    ys: Vec<S>,
    slopes: Vec<S>,
    /// Log-log Hermite table for `(0, h]` at `x = h·2^{-j}`, ascending in `x`.
    tail_log_x: Vec<S>,
    tail_log_y: Vec<S>,
    tail_dlog: Vec<S>,
}

impl<S: Scalar> fmt::Debug for OptimalProfile<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OptimalProfile")
            .field("p", &self.p)
            .field("c_p", &self.c_p)
            .field("y0", &self.y0)
            .field("n_nodes", &self.ys.len())
            .finish()
    }
}

/// Builds the profile for `p` on `n_nodes` uniform nodes of `[0, 1/2]`.
pub fn solve_profile<S: Scalar>(p: S, n_nodes: usize) -> Result<OptimalProfile<S>> {
    check_p(p)?;
    if n_nodes < (1 << 12) {
        return Err(domain(format!("n_nodes = {n_nodes} below the minimum 4096")));
    }
    let (c_p, y0, i_p) = constants(p)?;
    let n = n_nodes;
    let half = S::lit(0.5);
    let h = half / S::from_usize_lossy(n - 1);
    let xs: Vec<S> = (0..n).map(|i| if i == n - 1 { half } else { h * S::from_usize_lossy(i) }).collect();

    if near_two(p) {
        let ys: Vec<S> = xs.iter().map(|&x| x * (S::one() - x)).collect();
        let slopes: Vec<S> = xs.iter().map(|&x| S::one() - S::lit(2.0) * x).collect();
        let mut tail = (Vec::new(), Vec::new(), Vec::new());
        for j in (0..=TAIL_LEVELS).rev() {
            let x = h * S::lit(0.5).powi(j as i32);
            tail.0.push(x.ln());
            tail.1.push((x * (S::one() - x)).ln());
            tail.2.push((S::one() - S::lit(2.0) * x) / (S::one() - x));
        }
        return Ok(OptimalProfile {
            p,
            c_p,
            y0,
            i_p,
            h,
            ys,
            slopes,
            tail_log_x: tail.0,
            tail_log_y: tail.1,
            tail_dlog: tail.2,
        });
    }

    let br = Branch::new(p);
    let tol = work_tol::<S>();
    let two_i = S::lit(2.0) * i_p;
    // ∫_lo^hi H, with 1 - v supplied exactly.
    let seg = |lo: S, hi: S| -> Result<S> {
        if hi <= lo {
            return Ok(S::zero());
        }
        let one_minus_hi = S::one() - hi;
        Ok(tanh_sinh(|nd: Node<S>| br.h(nd.x, one_minus_hi + nd.from_right), lo, hi, tol)?.value)
    };

    let mut us = vec![S::zero(); n];
    us[n - 1] = S::one();
    let mut g_prev = S::zero();
    for i in 1..n - 1 {
        let target = two_i * xs[i] - g_prev;
        let lo0 = us[i - 1];
        let (mut lo, mut hi) = (lo0, S::one());
        let mut u = if i >= 2 {
            (lo0 + (lo0 - us[i - 2])).min((lo0 + S::one()) / S::lit(2.0))
        } else {
            let hh = br.h(lo0, S::one() - lo0);
            if hh > S::zero() {
                (lo0 + target / hh).min(S::lit(0.5))
            } else {
                S::lit(1e-3)
            }
        };
        let mut found = None;
        for _ in 0..200 {
            let f = seg(lo0, u)? - target;
            if f.abs() <= tol * target.max(S::min_positive_value()) {
                found = Some(u);
                break;
            }
            if f < S::zero() {
                lo = u;
            } else {
                hi = u;
            }
            if hi - lo <= S::epsilon() * hi {
                found = Some(u);
                break;
            }
            let slope = br.h(u, S::one() - u);
            let mut next = if slope > S::zero() { u - f / slope } else { S::nan() };
            if !(next > lo && next < hi) {
                next = (lo + hi) / S::lit(2.0);
            }
            u = next;
        }
        let u = found.ok_or_else(|| Error::Numeric {
            routine: "solve_profile",
            detail: format!("node {i} (x = {}) did not converge for p = {p}", xs[i]),
        })?;
        g_prev = g_prev + seg(lo0, u)?;
        us[i] = u;
    }
    let g_total = g_prev + seg(us[n - 2], S::one())?;
    let x_end = g_total / two_i;
    if (x_end - half).abs() > S::lit(1e-9).max(S::epsilon() * S::lit(1e3)) {
        return Err(Error::Numeric {
            routine: "solve_profile",
            detail: format!("x(1) = {x_end} instead of 1/2 for p = {p} (I_p = {i_p})"),
        });
    }

    let z_of = |u: S| u * (S::lit(2.0) - u);
    let ys: Vec<S> = us.iter().map(|&u| y0 * z_of(u)).collect();
    let slopes: Vec<S> = us
        .iter()
        .map(|&u| {
            if u == S::one() {
                return S::zero();
            }
            let e = S::one() - u;
            let ln_z = if u < S::lit(0.5) { u.ln() + e.ln_1p() } else { (-(e * e)).ln_1p() };
            two_i * y0 * br.gap(ln_z).sqrt()
        })
        .collect();

    // First cell: solve G(z) = 2 I x on x = h·2^{-j} directly.
    let g_integral = |z: S| -> Result<S> {
        if z <= S::zero() {
            return Ok(S::zero());
        }
        Ok(tanh_sinh(|nd: Node<S>| br.g(nd.x), S::zero(), z, tol)?.value)
    };
    let mut tail_log_x = Vec::with_capacity(TAIL_LEVELS + 1);
    let mut tail_log_y = Vec::with_capacity(TAIL_LEVELS + 1);
    let mut tail_dlog = Vec::with_capacity(TAIL_LEVELS + 1);
    let mut z_hi = z_of(us[1]);
    for j in 0..=TAIL_LEVELS {
        let x = h * S::lit(0.5).powi(j as i32);
        let z = if j == 0 {
            z_hi
        } else {
            let goal = two_i * x;
            brent(
                |z: S| g_integral(z).map(|v| v - goal).unwrap_or(S::nan()),
                S::zero(),
                z_hi,
                z_hi * S::epsilon(),
                300,
            )?
        };
        if !(z > S::zero()) {
            break;
        }
        tail_log_x.push(x.ln());
        tail_log_y.push((y0 * z).ln());
        tail_dlog.push(two_i * x / (br.g(z) * z));
        z_hi = z;
    }
    tail_log_x.reverse();
    tail_log_y.reverse();
    tail_dlog.reverse();

    Ok(OptimalProfile { p, c_p, y0, i_p, h, ys, slopes, tail_log_x, tail_log_y, tail_dlog })
}

/// Cubic Hermite on one cell with a Fritsch–Carlson slope limiter.
#[inline]
fn hermite<S: Scalar>(x0: S, dx: S, y0: S, y1: S, d0: S, d1: S, x: S) -> S {
    let (mut d0, mut d1) = (d0, d1);
    let secant = (y1 - y0) / dx;
    if secant != S::zero() {
        let a = d0 / secant;
        let b = d1 / secant;
        let r = a * a + b * b;
        if r > S::lit(9.0) {
            let tau = S::lit(3.0) / r.sqrt();
            d0 = tau * a * secant;
            d1 = tau * b * secant;
        }
    }
    let s = (x - x0) / dx;
    let s2 = s * s;
    let s3 = s2 * s;
    let two = S::lit(2.0);
    let three = S::lit(3.0);
    let h00 = two * s3 - three * s2 + S::one();
    let h10 = s3 - two * s2 + s;
    let h01 = -two * s3 + three * s2;
    let h11 = s3 - s2;
    h00 * y0 + h10 * dx * d0 + h01 * y1 + h11 * dx * d1
}

impl<S: Scalar> OptimalProfile<S> {
    pub fn n_nodes(&self) -> usize {
        self.ys.len()
    }

    /// Table nodes `(x, y)` on `[0, 1/2]`.
    pub fn table(&self) -> impl Iterator<Item = (S, S)> + '_ {
        let n = self.ys.len();
        self.ys.iter().enumerate().map(move |(i, &y)| {
            let x = if i == n - 1 { S::lit(0.5) } else { self.h * S::from_usize_lossy(i) };
            (x, y)
        })
    }

    /// `y(x)` on `[0, 1]`, extended by `y(x) = y(1 - x)`; zero outside `(0, 1)`.
    pub fn y(&self, x: S) -> S {
        if !(x > S::zero() && x < S::one()) {
            return S::zero();
        }
        let xx = x.min(S::one() - x);
        if xx < self.h {
            return self.y_first_cell(xx);
        }
        let last = self.ys.len() - 1;
        let i = ((xx / self.h).floor().to_usize().unwrap_or(last)).min(last - 1);
        let x0 = self.h * S::from_usize_lossy(i);
        let x1 = if i + 1 == last { S::lit(0.5) } else { x0 + self.h };
        hermite(x0, x1 - x0, self.ys[i], self.ys[i + 1], self.slopes[i], self.slopes[i + 1], xx)
    }

    fn y_first_cell(&self, x: S) -> S {
        let lx = x.ln();
        let lo = self.tail_log_x[0];
        if lx <= lo {
            return (self.tail_log_y[0] + self.tail_dlog[0] * (lx - lo)).exp();
        }
        let n = self.tail_log_x.len();
        let step = S::LN_2();
        let i = (((lx - lo) / step).floor().to_usize().unwrap_or(n - 2)).min(n - 2);
        let (a, b) = (self.tail_log_x[i], self.tail_log_x[i + 1]);
        hermite(a, b - a, self.tail_log_y[i], self.tail_log_y[i + 1], self.tail_dlog[i], self.tail_dlog[i + 1], lx)
            .exp()
    }

    /// `σ̄(t, x) = y(x)^{1/p} / √(1 - t)`.
    pub fn sigma_bar(&self, t: S, x: S) -> Result<S> {
        if !(t < S::one()) || t < S::zero() {
            return Err(domain(format!("σ̄ needs 0 <= t < 1, got {t}")));
        }
        if !(x >= S::zero() && x <= S::one()) {
            return Err(domain(format!("σ̄ needs x in [0, 1], got {x}")));
        }
        Ok(self.sigma_unchecked(t, x))
    }

    #[inline]
    fn sigma_unchecked(&self, t: S, x: S) -> S {
        let y = self.y(x);
        if y <= S::zero() {
            return S::zero();
        }
        y.powf(S::one() / self.p) / (S::one() - t).sqrt()
    }

    /// `σ̄` as a volatility field on `[0, 1) × [0, 1]`.
    pub fn field(&self) -> VolatilityField<S> {
        let me = Arc::new(self.clone());
        VolatilityField::new(
            format!("optimal(p={})", self.p),
            Interval::unit(),
            Interval::unit(),
            Regularity::win_profile(),
            move |t, x| me.sigma_unchecked(t, x),
        )
    }

    /// `v̄(s, x) = (1 - s)^{1 - p/2} y(x)`.
    pub fn value(&self, s: S, x: S) -> Result<S> {
        if !(s < S::one()) || s < S::zero() {
            return Err(domain(format!("value function needs 0 <= s < 1, got {s}")));
        }
        Ok((S::one() - s).powf(S::one() - self.p / S::lit(2.0)) * self.y(x))
    }

    /// CSV with columns `x,y,sigma_at_t0` over the table nodes mirrored to `[0, 1]`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,sigma_at_t0")?;
        let table: Vec<(S, S)> = self.table().collect();
        let mut emit = |x: S, y: S| -> Result<()> {
            let s = if y > S::zero() { y.powf(S::one() / self.p) } else { S::zero() };
            writeln!(w, "{},{},{}", x.as_f64(), y.as_f64(), s.as_f64())?;
            Ok(())
        };
        for &(x, y) in &table {
            emit(x, y)?;
        }
        for &(x, y) in table.iter().rev().skip(1) {
            emit(S::one() - x, y)?;
        }
        Ok(())
    }

    pub fn header(&self) -> ProfileHeader {
        ProfileHeader { p: self.p.as_f64(), c_p: self.c_p.as_f64(), y0: self.y0.as_f64(), n_nodes: self.ys.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileHeader {
    pub p: f64,
    #[serde(rename = "C_p")]
    pub c_p: f64,
    pub y0: f64,
    pub n_nodes: usize,
}

/// `σ̄(t, x)` of `profile`.
pub fn sigma_bar<S: Scalar>(profile: &OptimalProfile<S>, t: S, x: S) -> Result<S> {
    profile.sigma_bar(t, x)
}

/// Value surface `v̄(t, x) = (1 - t)·σ̄^p(t, x)`.
#[derive(Debug, Clone)]
pub struct ValueSurface<S: Scalar = f64> {
    pub profile: Arc<OptimalProfile<S>>,
}

impl<S: Scalar> ValueSurface<S> {
    pub fn new(profile: OptimalProfile<S>) -> Self {
        Self { profile: Arc::new(profile) }
    }

    pub fn eval(&self, t: S, x: S) -> Result<S> {
        self.profile.value(t, x)
    }
}

pub fn value_fn<S: Scalar>(profile: &OptimalProfile<S>, s: S, x: S) -> Result<S> {
    profile.value(s, x)
}

/// Closed-form win-martingale volatilities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClosedForm {
    /// `√(2/(1-t))·x(1-x)`, optimal for `p = 1/2`.
    PHalf,
    /// `φ(Φ⁻¹(x))/√(1-t)`, the Bass martingale, optimal for `p = 1`.
    Bass,
    /// `√(x(1-x)/(1-t))`, optimal for `p = 2`.
    WrightFisher,
    /// `sin(πx)/(π√(1-t))`, the `p → 0` limit.
    Aldous,
}

impl ClosedForm {
    pub const ALL: [ClosedForm; 4] = [Self::PHalf, Self::Bass, Self::WrightFisher, Self::Aldous];

    pub fn name(self) -> &'static str {
        match self {
            Self::PHalf => "p_half",
            Self::Bass => "bass",
            Self::WrightFisher => "wright_fisher",
            Self::Aldous => "aldous",
        }
    }

    /// Spatial factor `h(x)` with `σ = h(x)/√(1-t)`.
    pub fn spatial<S: Scalar>(self, x: S) -> S {
        if !(x > S::zero() && x < S::one()) {
            return S::zero();
        }
        match self {
            Self::PHalf => S::SQRT_2() * x * (S::one() - x),
            Self::Bass => norm_pdf(norm_quantile(x)),
            Self::WrightFisher => (x * (S::one() - x)).sqrt(),
            Self::Aldous => (S::PI() * x).sin() / S::PI(),
        }
    }

    pub fn sigma<S: Scalar>(self, t: S, x: S) -> Result<S> {
        if !(t >= S::zero() && t < S::one()) {
            return Err(domain(format!("closed-form σ needs 0 <= t < 1, got {t}")));
        }
        if !(x >= S::zero() && x <= S::one()) {
            return Err(domain(format!("closed-form σ needs x in [0, 1], got {x}")));
        }
        Ok(self.spatial(x) / (S::one() - t).sqrt())
    }

    pub fn field<S: Scalar>(self) -> VolatilityField<S> {
        VolatilityField::new(self.name(), Interval::unit(), Interval::unit(), Regularity::win_profile(), move |t: S, x| {
            self.spatial(x) / (S::one() - t).sqrt()
        })
    }
}

impl fmt::Display for ClosedForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClosedForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "p_half" => Ok(Self::PHalf),
            "bass" => Ok(Self::Bass),
            "wright_fisher" => Ok(Self::WrightFisher),
            "aldous" => Ok(Self::Aldous),
            other => Err(domain(format!("unknown closed form '{other}'"))),
        }
    }
}

pub fn closed_form_sigma<S: Scalar>(kind: &str, t: S, x: S) -> Result<S> {
    kind.parse::<ClosedForm>()?.sigma(t, x)
}

fn check_stencil<S: Scalar>(t: S, x: S, step: S) -> Result<()> {
    if !(step > S::zero()) {
        return Err(domain("finite-difference step must be positive"));
    }
    if !(t - step >= S::zero() && t + step < S::one() && x - step > S::zero() && x + step < S::one()) {
        return Err(domain(format!("stencil around ({t}, {x}) with step {step} leaves the interior")));
    }
    Ok(())
}

/// Central-difference `∂_t σ̄^p + ½ σ̄² ∂_xx σ̄^p`.
pub fn pmd_residual<S: Scalar>(profile: &OptimalProfile<S>, t: S, x: S, step: S) -> Result<S> {
    check_stencil(t, x, step)?;
    let p = profile.p;
    let f = |t: S, x: S| profile.sigma_unchecked(t, x).powf(p);
    let two = S::lit(2.0);
    let ft = (f(t + step, x) - f(t - step, x)) / (two * step);
    let fxx = (f(t, x + step) - two * f(t, x) + f(t, x - step)) / (step * step);
    let s = profile.sigma_unchecked(t, x);
    Ok(ft + s * s * fxx / two)
}

/// Central-difference `∂_x σ̄^p`.
pub fn sigma_p_slope<S: Scalar>(profile: &OptimalProfile<S>, t: S, x: S, step: S) -> Result<S> {
    check_stencil(t, x, step)?;
    let p = profile.p;
    let f = |x: S| profile.sigma_unchecked(t, x).powf(p);
    Ok((f(x + step) - f(x - step)) / (S::lit(2.0) * step))
}

/// HJB residual and the extremizing volatility at `(t, x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HjbPoint<S: Scalar = f64> {
    pub residual: S,
    pub extremizer: S,
    pub v_xx: S,
}

/// `∂_t v̄ + ext_σ {½σ² ∂_xx v̄ + σ^p}` with the extremizer
/// `σ* = (-∂_xx v̄ / p)^{1/(p-2)}` (a maximum for `p < 2`, a minimum for `p > 2`).
pub fn hjb_point<S: Scalar>(profile: &OptimalProfile<S>, t: S, x: S, step: S) -> Result<HjbPoint<S>> {
    let p = profile.p;
    if (p - S::lit(2.0)).abs() <= S::lit(WRIGHT_FISHER_BAND) {
        return Err(domain("the HJB extremizer is undefined at p = 2"));
    }
    check_stencil(t, x, step)?;
    let v = |t: S, x: S| (S::one() - t).powf(S::one() - p / S::lit(2.0)) * profile.y(x);
    let two = S::lit(2.0);
    let vt = (v(t + step, x) - v(t - step, x)) / (two * step);
    let vxx = (v(t, x + step) - two * v(t, x) + v(t, x - step)) / (step * step);
    if !(vxx < S::zero()) {
        return Err(Error::Inconsistent(format!(
            "∂_xx v̄({t}, {x}) = {vxx} is not negative; the extremum over σ does not exist"
        )));
    }
    let sigma = (-vxx / p).powf(S::one() / (p - two));
    let residual = vt + sigma * sigma * vxx / two + sigma.powf(p);
    Ok(HjbPoint { residual, extremizer: sigma, v_xx: vxx })
}

pub fn hjb_residual<S: Scalar>(profile: &OptimalProfile<S>, t: S, x: S, step: S) -> Result<S> {
    hjb_point(profile, t, x, step).map(|h| h.residual)
}

/// Default residual grid: `t_i = 0.8(i+1)/21`, `x_j = (j+1)/21`, 20 × 20 points.
pub fn residual_grid() -> (Vec<f64>, Vec<f64>) {
    let ts = (0..20).map(|i| 0.8 * (i + 1) as f64 / 21.0).collect();
    let xs = (0..20).map(|j| (j + 1) as f64 / 21.0).collect();
    (ts, xs)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: f64,
    pub x: f64,
    pub pmd: f64,
    pub hjb: Option<f64>,
    pub extremizer_gap: Option<f64>,
}

/// PMD and (for `p ≠ 2`) HJB residuals on a `(t, x)` grid.
pub fn residual_table<S: Scalar>(
    profile: &OptimalProfile<S>,
    ts: &[S],
    xs: &[S],
    step: S,
) -> Result<Vec<ResidualRow>> {
    let mut rows = Vec::with_capacity(ts.len() * xs.len());
    let skip_hjb = (profile.p - S::lit(2.0)).abs() <= S::lit(WRIGHT_FISHER_BAND);
    for &t in ts {
        for &x in xs {
            let pmd = pmd_residual(profile, t, x, step)?;
            let (hjb, gap) = if skip_hjb {
                (None, None)
            } else {
                let hp = hjb_point(profile, t, x, step)?;
                let sb = profile.sigma_unchecked(t, x);
                (Some(hp.residual.as_f64()), Some((hp.extremizer - sb).abs().as_f64()))
            };
            rows.push(ResidualRow { t: t.as_f64(), x: x.as_f64(), pmd: pmd.as_f64(), hjb, extremizer_gap: gap });
        }
    }
    Ok(rows)
}

struct CostObserver<S> {
    p: S,
    acc: S,
}

impl<S: Scalar> Observer<S> for CostObserver<S> {
    #[inline]
    fn step(&mut self, _t: S, dt: S, _x: S, sigma: S) {
        if sigma > S::zero() {
            self.acc = self.acc + sigma.powf(self.p) * dt;
        }
    }
}

/// Per-path costs `∫_s^{t_cut} σ^p dt` of the win-martingale with volatility
/// `field` started at `(s, x)`, on the shared Brownian increments of `seed`.
///
/// For `p = 2` the exact conditional tail `M(1 - M)` at `t_cut` is added, so the
/// cost is the full quadratic variation. For other `p` the remainder on
/// `[t_cut, 1]` is dropped; for the optimal profile it is `(1 - t_cut)·σ̄^p(s, x)`
/// in expectation.
#[allow(clippy::too_many_arguments)]
pub fn win_path_costs<S: Scalar>(
    field: &VolatilityField<S>,
    p: S,
    s: S,
    x: S,
    k: usize,
    cfg: &SimConfig<S>,
    seed: u64,
) -> Result<Vec<S>> {
    check_p(p)?;
    if !(x >= S::zero() && x <= S::one()) {
        return Err(domain(format!("x = {x} outside [0, 1]")));
    }
    if !(s >= S::zero() && s < cfg.t_cut) {
        return Err(domain(format!("start time {s} must lie in [0, t_cut)")));
    }
    let grid = TimeGrid::from_points(vec![s, cfg.t_cut])?;
    check_grid(field, &grid, cfg)?;
    let model = MartingaleModel::new(x, field.clone(), Boundary::AbsorbingUnit)?;
    let sched = Schedule::new(&grid, cfg)?;
    let quadratic = (p - S::lit(2.0)).abs() <= S::lit(WRIGHT_FISHER_BAND);
    par_map(k, cfg.workers, |i| {
        let mut rng = derive_stream(seed, i as u64);
        let mut obs = CostObserver { p, acc: S::zero() };
        let end = drive_path(&model, &sched, &mut rng, &mut obs)?;
        let tail = if quadratic { end * (S::one() - end) } else { S::zero() };
        Ok(obs.acc + tail)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueCheck {
    pub p: f64,
    pub s: f64,
    pub x: f64,
    pub exact: f64,
    pub mc: f64,
    pub stderr: f64,
    /// `|mc + truncation - exact| / stderr`.
    pub z_score: f64,
    /// Expected cost dropped on `[t_cut, 1]` (zero for `p = 2`).
    pub truncation: f64,
    pub pass: bool,
}

/// Monte Carlo cost of the optimal martingale from `(s, x)` against `v̄(s, x)`.
pub fn mc_value_check<S: Scalar>(
    profile: &OptimalProfile<S>,
    s: S,
    x: S,
    k: usize,
    cfg: &SimConfig<S>,
    seed: u64,
) -> Result<ValueCheck> {
    let exact = profile.value(s, x)?;
    let costs = win_path_costs(&profile.field(), profile.p, s, x, k, cfg, seed)?;
    let ms = MeanStderr::from_samples(&costs);
    let quadratic = (profile.p - S::lit(2.0)).abs() <= S::lit(WRIGHT_FISHER_BAND);
    let truncation = if quadratic {
        0.0
    } else {
        ((S::one() - cfg.t_cut) * profile.sigma_unchecked(s, x).powf(profile.p)).as_f64()
    };
    // The dropped remainder is known exactly, so it is added back before comparing.
    let diff = (ms.mean.as_f64() + truncation - exact.as_f64()).abs();
    let se = ms.stderr.as_f64();
    let z = if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(ValueCheck {
        p: profile.p.as_f64(),
        s: s.as_f64(),
        x: x.as_f64(),
        exact: exact.as_f64(),
        mc: ms.mean.as_f64(),
        stderr: se,
        z_score: z,
        truncation,
        pass: z < 3.0,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TildeVReport {
    pub p: f64,
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub sqrt_c_p: f64,
    pub ratio_near_0: f64,
    pub ratio_near_1: f64,
    pub endpoint_rel_error: f64,
    pub pass: bool,
}

/// Ratio `v̄/ṽ` with `ṽ = (1-t)^{1-p/2}((1-x)^p x + (1-x) x^p)` over a grid,
/// plus the endpoint ratio against `√C_p`.
pub fn tilde_v_bound_check<S: Scalar>(profile: &OptimalProfile<S>, ts: &[S], xs: &[S]) -> Result<TildeVReport> {
    let p = profile.p;
    if !(p > S::lit(2.0)) {
        return Err(domain(format!("tilde-v bound needs p > 2, got {p}")));
    }
    let tilde = |t: S, x: S| {
        (S::one() - t).powf(S::one() - p / S::lit(2.0))
            * ((S::one() - x).powf(p) * x + (S::one() - x) * x.powf(p))
    };
    let ratio = |t: S, x: S| -> Result<S> { Ok(profile.value(t, x)? / tilde(t, x)) };
    let mut lo = S::infinity();
    let mut hi = S::zero();
    for &t in ts {
        for &x in xs {
            let r = ratio(t, x)?;
            lo = lo.min(r);
            hi = hi.max(r);
        }
    }
    let sq = profile.c_p.sqrt();
    let r0 = ratio(S::zero(), S::lit(1e-4))?;
    let r1 = ratio(S::zero(), S::one() - S::lit(1e-4))?;
    let err = ((r0 - sq).abs().max((r1 - sq).abs()) / sq).as_f64();
    Ok(TildeVReport {
        p: p.as_f64(),
        min_ratio: lo.as_f64(),
        max_ratio: hi.as_f64(),
        sqrt_c_p: sq.as_f64(),
        ratio_near_0: r0.as_f64(),
        ratio_near_1: r1.as_f64(),
        endpoint_rel_error: err,
        pass: lo > S::zero() && hi.is_finite() && err < 0.01,
    })
}

/// A win-martingale volatility competing in [`optimality_comparison`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Competitor {
    Closed { form: ClosedForm },
    /// The optimal profile of another exponent.
    Profile { p: f64 },
}

impl Competitor {
    pub fn label(&self) -> String {
        match self {
            Self::Closed { form } => form.name().to_string(),
            Self::Profile { p } => format!("optimal(p={p})"),
        }
    }

    fn field<S: Scalar>(&self) -> Result<VolatilityField<S>> {
        match self {
            Self::Closed { form } => Ok(form.field()),
            Self::Profile { p } => Ok(solve_profile(S::lit(*p), DEFAULT_NODES)?.field()),
        }
    }
}

impl FromStr for Competitor {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(rest) = s.strip_prefix("profile:") {
            let p: f64 = rest.parse().map_err(|_| domain(format!("bad competitor exponent in '{s}'")))?;
            return Ok(Self::Profile { p });
        }
        Ok(Self::Closed { form: s.parse()? })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompetitorRow {
    pub label: String,
    pub cost: f64,
    pub stderr: f64,
    /// `cost(optimal) - cost(competitor)`, signed.
    pub diff: f64,
    /// Standard error of the paired (common random numbers) difference.
    pub paired_stderr: f64,
    /// `sqrt(se_opt² + se_comp²)`.
    pub combined_stderr: f64,
    /// Whether the optimal profile wins in the right direction by more than
    /// three combined standard errors.
    pub optimal_wins: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OptimalityReport {
    pub p: f64,
    pub x0: f64,
    pub candidate: String,
    pub direction: String,
    pub optimal_cost: f64,
    pub optimal_stderr: f64,
    pub exact_value: f64,
    pub rows: Vec<CompetitorRow>,
    pub pass: bool,
}

/// Costs `E ∫ σ^p dt` of the optimal martingale and each competitor on common
/// random numbers. For `p < 2` the optimum is a maximum, for `p > 2` a minimum;
/// at `p = 2` all costs equal `x0(1 - x0)` and the rows record the gap to it.
pub fn optimality_comparison<S: Scalar>(
    p: S,
    x0: S,
    competitors: &[Competitor],
    k: usize,
    cfg: &SimConfig<S>,
    seed: u64,
) -> Result<OptimalityReport> {
    optimality_comparison_for(p, x0, &Competitor::Profile { p: p.as_f64() }, competitors, k, cfg, seed)
}

/// [`optimality_comparison`] with an arbitrary `candidate` in the place of the
/// optimal profile. Only the true optimizer should pass.
pub fn optimality_comparison_for<S: Scalar>(
    p: S,
    x0: S,
    candidate: &Competitor,
    competitors: &[Competitor],
    k: usize,
    cfg: &SimConfig<S>,
    seed: u64,
) -> Result<OptimalityReport> {
    let profile = solve_profile(p, DEFAULT_NODES)?;
    let opt_costs = win_path_costs(&candidate.field::<S>()?, p, S::zero(), x0, k, cfg, seed)?;
    let opt = MeanStderr::from_samples(&opt_costs);
    let two = S::lit(2.0);
    let quadratic = (p - two).abs() <= S::lit(WRIGHT_FISHER_BAND);
    let direction = if quadratic {
        "equal"
    } else if p < two {
        "max"
    } else {
        "min"
    };
    let exact = profile.value(S::zero(), x0)?.as_f64();
    let mut rows = Vec::with_capacity(competitors.len());
    for c in competitors {
        let costs = win_path_costs(&c.field::<S>()?, p, S::zero(), x0, k, cfg, seed)?;
        let ms = MeanStderr::from_samples(&costs);
        let diffs: Vec<S> = opt_costs.iter().zip(&costs).map(|(a, b)| *a - *b).collect();
        let dms = MeanStderr::from_samples(&diffs);
        let combined = opt.combined_stderr(&ms).as_f64();
        let d = dms.mean.as_f64();
        let wins = match direction {
            "max" => d > 3.0 * combined,
            "min" => -d > 3.0 * combined,
            // Every feasible win-martingale has cost x0(1 - x0).
            _ => (ms.mean.as_f64() - exact).abs() < 3.0 * ms.stderr.as_f64().max(f64::MIN_POSITIVE),
        };
        rows.push(CompetitorRow {
            label: c.label(),
            cost: ms.mean.as_f64(),
            stderr: ms.stderr.as_f64(),
            diff: d,
            paired_stderr: dms.stderr.as_f64(),
            combined_stderr: combined,
            optimal_wins: wins,
        });
    }
    // At p = 2 the optimal martingale is itself one more feasible member.
    let opt_consistent = !quadratic || (opt.mean.as_f64() - exact).abs() < 3.0 * opt.stderr.as_f64().max(f64::MIN_POSITIVE);
    let pass = opt_consistent && rows.iter().all(|r| r.optimal_wins);
    Ok(OptimalityReport {
        p: p.as_f64(),
        x0: x0.as_f64(),
        candidate: candidate.label(),
        direction: direction.to_string(),
        optimal_cost: opt.mean.as_f64(),
        optimal_stderr: opt.stderr.as_f64(),
        exact_value: exact,
        rows,
        pass,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialRow {
    pub t: f64,
    pub k: f64,
    /// One potential per member, in increasing order of `p` (Aldous first).
    pub potentials: Vec<f64>,
    pub stderrs: Vec<f64>,
    pub ordered: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvexOrderReport {
    pub members: Vec<String>,
    pub sigma_at_center: Vec<f64>,
    pub pointwise_points: usize,
    pub pointwise_violations: usize,
    pub potentials: Vec<PotentialRow>,
    pub pass: bool,
}

/// Volatility ordering `σ̂ < σ_{p1} < σ_{p2} < …` on a grid and the ordering of
/// the empirical potentials `U_t(k) = E|M_t - k|` from `x0`.
#[allow(clippy::too_many_arguments)]
pub fn convex_order_check<S: Scalar>(
    p_list: &[S],
    x0: S,
    t_grid: &[S],
    x_grid: &[S],
    potential_times: &[S],
    strikes: &[S],
    k: usize,
    cfg: &SimConfig<S>,
    seed: u64,
) -> Result<ConvexOrderReport> {
    if p_list.is_empty() || p_list.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(domain("p_list must be nonempty and strictly increasing"));
    }
    let profiles = p_list.iter().map(|&p| solve_profile(p, DEFAULT_NODES)).collect::<Result<Vec<_>>>()?;
    let mut fields: Vec<VolatilityField<S>> = vec![ClosedForm::Aldous.field()];
    fields.extend(profiles.iter().map(|p| p.field()));
    let mut members = vec!["aldous".to_string()];
    members.extend(p_list.iter().map(|p| format!("optimal(p={p})")));

    let half = S::lit(0.5);
    let sigma_at_center: Vec<f64> = fields.iter().map(|f| f.eval(S::zero(), half).as_f64()).collect();
    let mut violations = 0usize;
    for &t in t_grid {
        for &x in x_grid {
            let vals: Vec<S> = fields.iter().map(|f| f.eval(t, x)).collect();
            if vals.windows(2).any(|w| !(w[0] < w[1])) {
                violations += 1;
            }
        }
    }

    let mut times: Vec<S> = potential_times.to_vec();
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let mut pts = vec![S::zero()];
    pts.extend(times.iter().copied().filter(|&t| t > S::zero()));
    let grid = TimeGrid::from_points(pts)?;
    let mut ensembles = Vec::with_capacity(fields.len());
    for f in &fields {
        let model = MartingaleModel::new(x0, f.clone(), Boundary::AbsorbingUnit)?;
        ensembles.push(crate::sde::simulate(&model, &grid, k, seed, cfg)?);
    }
    let mut potentials = Vec::new();
    for (i, &t) in grid.points().iter().enumerate().skip(1) {
        for &strike in strikes {
            let mut pots = Vec::new();
            let mut ses = Vec::new();
            for e in &ensembles {
                let v: Vec<S> = e.column(i).iter().map(|&m| (m - strike).abs()).collect();
                let ms = MeanStderr::from_samples(&v);
                pots.push(ms.mean.as_f64());
                ses.push(ms.stderr.as_f64());
            }
            let ordered = (1..pots.len()).all(|j| {
                let slack = 3.0 * (ses[j - 1].powi(2) + ses[j].powi(2)).sqrt();
                pots[j - 1] <= pots[j] + slack
            });
            potentials.push(PotentialRow { t: t.as_f64(), k: strike.as_f64(), potentials: pots, stderrs: ses, ordered });
        }
    }
    let pass = violations == 0 && potentials.iter().all(|r| r.ordered);
    Ok(ConvexOrderReport {
        members,
        sigma_at_center,
        pointwise_points: t_grid.len() * x_grid.len(),
        pointwise_violations: violations,
        potentials,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_match_known_values() {
        assert!((solve_cp(0.5f64).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!((solve_cp(1.0f64).unwrap() - (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
        assert_eq!(solve_cp(2.0f64).unwrap(), 1.0);
        assert!(solve_cp(0.0f64).is_err());
        assert!(solve_cp(-1.0f64).is_err());
    }

    #[test]
    fn generic_branch_at_two_agrees_with_closed_form() {
        // Slightly outside the Wright–Fisher band the generic formulas take over.
        let c = solve_cp(2.0f64 + 1e-5).unwrap();
        assert!((c - 1.0).abs() < 1e-3, "{c}");
    }

    #[test]
    fn closed_form_examples() {
        let pi = std::f64::consts::PI;
        assert!((closed_form_sigma("aldous", 0.0, 0.5).unwrap() - 1.0 / pi).abs() < 1e-15);
        assert_eq!(closed_form_sigma("wright_fisher", 0.0, 0.5).unwrap(), 0.5);
        assert!((closed_form_sigma("p_half", 0.5f64, 0.25).unwrap() - 0.375).abs() < 1e-15);
        assert!(closed_form_sigma::<f64>("heston", 0.0, 0.5).is_err());
        for kind in ClosedForm::ALL {
            assert_eq!(kind.spatial(0.0f64), 0.0);
            assert_eq!(kind.spatial(1.0f64), 0.0);
        }
    }

    #[test]
    fn p_half_profile_matches_closed_form() {
        let prof = solve_profile(0.5f64, DEFAULT_NODES).unwrap();
        let mut worst = 0.0f64;
        for i in 0..=980 {
            let x = 0.01 + i as f64 * 0.001;
            let exact = (2f64.sqrt() * x * (1.0 - x)).sqrt();
            worst = worst.max((prof.y(x) - exact).abs());
        }
        assert!(worst < 1e-8, "sup error {worst}");
        assert!((prof.sigma_bar(0.0, 0.5).unwrap() - 2f64.sqrt() / 4.0).abs() < 1e-10);
    }

    #[test]
    fn first_cell_follows_power_law() {
        let prof = solve_profile(0.5f64, DEFAULT_NODES).unwrap();
        for &x in &[1e-5, 1e-9, 1e-20, 1e-40] {
            let exact = (2f64.sqrt() * x * (1.0 - x)).sqrt();
            assert!((prof.y(x) / exact - 1.0).abs() < 1e-6, "x = {x}");
        }
        assert_eq!(prof.y(0.0), 0.0);
        assert_eq!(prof.y(1.0), 0.0);
    }

    #[test]
    fn sigma_bar_domain() {
        let prof = solve_profile(2.0f64, DEFAULT_NODES).unwrap();
        assert!((prof.sigma_bar(0.75, 0.5).unwrap() - 1.0).abs() < 1e-14);
        assert!(prof.sigma_bar(1.0, 0.5).is_err());
        assert_eq!(prof.sigma_bar(0.3, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn small_node_count_rejected() {
        assert!(solve_profile(0.5f64, 100).is_err());
    }

    #[test]
    fn wrong_sign_second_derivative_is_inconsistent() {
        // Hand-built profile with a convex spatial factor.
        let mut prof = solve_profile(3.0f64, DEFAULT_NODES).unwrap();
        for y in prof.ys.iter_mut() {
            *y = 1.0 - *y;
        }
        for d in prof.slopes.iter_mut() {
            *d = -*d;
        }
        assert!(matches!(hjb_residual(&prof, 0.3, 0.3, 1e-3), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn f32_profile() {
        let prof = solve_profile(0.5f32, DEFAULT_NODES).unwrap();
        let x = 0.3f32;
        assert!((prof.y(x) - (2f32.sqrt() * x * (1.0 - x)).sqrt()).abs() < 1e-5);
    }
}
