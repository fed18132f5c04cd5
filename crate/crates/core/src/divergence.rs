//! Pre-limit divergences `D^{N,p}`, their scaling limit `SW_p`, and the
//! closed forms around it.
//!
//! All path-based estimators simulate `Q` once on a fine dyadic grid and read
//! coarser grids off it by subsampling, so the rows of a convergence table
//! share their random numbers with each other and with the closed-form target.
//!
//! On a window `[0, T]` split into `N` cells of width `Δt = T/N`, the scaled
//! divergence is `Δt^{1 - p/2} Σ W₁^p`, which is `N^{p/2 - 1} D^{N,p}` for `T = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::field::{MartingaleModel, VolatilityField};
use crate::grid::TimeGrid;
use crate::rng::{derive_stream, sub_seed};
use crate::scalar::{pairwise_sum, MeanStderr, Scalar};
use crate::sde::{drive_path, par_map, sample_one_step_raw, Observer, Schedule, SimConfig};
use crate::wasserstein::{w1_empirical, w1_empirical_vs_gaussian, w1_gaussian, EmpiricalDist};

const INNER_Q_TAG: u64 = 0x696e_5f71;
const INNER_P_TAG: u64 = 0x696e_5f70;

/// `(2/π)^{p/2}`.
pub fn gaussian_factor<S: Scalar>(p: S) -> S {
    (S::lit(2.0) / S::PI()).powf(p / S::lit(2.0))
}

fn check_p<S: Scalar>(p: S) -> Result<()> {
    if !(p > S::zero()) || !p.is_finite() {
        return Err(domain(format!("p = {p} must be positive")));
    }
    Ok(())
}

/// Simulation knobs shared by the path estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EstimatorOptions<S: Scalar = f64> {
    /// Fine grid has `2^fine_exponent` cells (raised to the largest requested `N`).
    pub fine_exponent: u32,
    /// Euler substeps per fine cell.
    pub substeps_per_cell: usize,
    /// Right end `T` of the time window.
    pub horizon: S,
    pub workers: usize,
}

impl<S: Scalar> Default for EstimatorOptions<S> {
    fn default() -> Self {
        Self { fine_exponent: 12, substeps_per_cell: 1, horizon: S::one(), workers: 1 }
    }
}

impl<S: Scalar> EstimatorOptions<S> {
    fn sim_config(&self) -> SimConfig<S> {
        SimConfig {
            substeps_per_cell: self.substeps_per_cell,
            t_cut: self.horizon.min(S::one() - S::epsilon()),
            workers: self.workers,
            ..SimConfig::default()
        }
    }
}

struct NodeRecorder<S> {
    states: Vec<S>,
}

impl<S: Scalar> Observer<S> for NodeRecorder<S> {
    fn node(&mut self, _i: usize, x: S) {
        self.states.push(x);
    }
}

/// Runs `f(k, node_states)` for every path of `model` on `grid`.
pub fn map_paths<S, T, F>(
    model: &MartingaleModel<S>,
    grid: &TimeGrid<S>,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
    f: F,
) -> Result<Vec<T>>
where
    S: Scalar,
    T: Send,
    F: Fn(usize, &[S]) -> Result<T> + Sync + Send,
{
    if k == 0 {
        return Err(domain("K must be at least 1"));
    }
    crate::sde::check_grid(&model.vol, grid, cfg)?;
    let sched = Schedule::new(grid, cfg)?;
    let n_points = grid.points().len();
    par_map(k, cfg.workers, |i| {
        let mut rng = derive_stream(seed, i as u64);
        let mut rec = NodeRecorder { states: Vec::with_capacity(n_points) };
        drive_path(model, &sched, &mut rng, &mut rec)?;
        f(i, &rec.states)
    })
}

/// Left-point `Σ_cells φ(t_i, x_i) Δt_i` along one path.
fn left_sum<S: Scalar>(grid: &TimeGrid<S>, states: &[S], phi: impl Fn(S, S) -> S) -> S {
    let pts = grid.points();
    let terms: Vec<S> = (0..pts.len() - 1).map(|i| phi(pts[i], states[i]) * (pts[i + 1] - pts[i])).collect();
    pairwise_sum(&terms)
}

/// `E_Q ∫ f(σ, η) dt` along `K` paths, left-point on `grid`.
fn closed_form_functional<S: Scalar>(
    q: &MartingaleModel<S>,
    grid: &TimeGrid<S>,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
    f: impl Fn(S, S) -> Result<S> + Sync + Send,
    eta: &VolatilityField<S>,
) -> Result<MeanStderr<S>> {
    let sums = map_paths(q, grid, k, seed, cfg, |_, states| {
        let pts = grid.points();
        let mut terms = Vec::with_capacity(pts.len() - 1);
        for i in 0..pts.len() - 1 {
            let (t, x) = (pts[i], states[i]);
            terms.push(f(q.vol.eval(t, x).abs(), eta.eval(t, x).abs())? * (pts[i + 1] - pts[i]));
        }
        Ok(pairwise_sum(&terms))
    })?;
    Ok(MeanStderr::from_samples(&sums))
}

/// `(2/π)^{p/2} E_Q ∫ ||σ| - |η||^p dt`, left-point on `grid`.
pub fn sw_p_closed_form<S: Scalar>(
    q: &MartingaleModel<S>,
    eta: &VolatilityField<S>,
    p: S,
    k: usize,
    grid: &TimeGrid<S>,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<MeanStderr<S>> {
    check_p(p)?;
    let c = gaussian_factor(p);
    closed_form_functional(q, grid, k, seed, cfg, |s, e| Ok(c * (s - e).abs().powf(p)), eta)
}

fn check_markov<S: Scalar>(m: &MartingaleModel<S>) -> Result<()> {
    if !m.vol.regularity.markov {
        return Err(Error::Unsupported(format!(
            "{} is not Markov; conditional laws are not functions of the current state",
            m.vol.name()
        )));
    }
    Ok(())
}

/// Fine grid for a set of exponents.
fn fine_grid<S: Scalar>(opts: &EstimatorOptions<S>, max_n: u32) -> Result<(TimeGrid<S>, u32)> {
    let f = opts.fine_exponent.max(max_n);
    Ok((TimeGrid::dyadic(S::zero(), opts.horizon, f)?, f))
}

/// Per-path `Δt^{1-p/2} Σ W₁^p(N(x, σ²Δt), N(x, η²Δt))` on the `2^n` grid,
/// reading states off a fine path with `2^f` cells.
fn surrogate_path_sum<S: Scalar>(
    q: &VolatilityField<S>,
    eta: &VolatilityField<S>,
    p: S,
    fine: &TimeGrid<S>,
    f: u32,
    n: u32,
    states: &[S],
) -> S {
    let stride = 1usize << (f - n);
    let cells = 1usize << n;
    let pts = fine.points();
    let dt = (fine.t_end() - fine.t_start()) / S::from_usize_lossy(cells);
    let sd = dt.sqrt();
    let terms: Vec<S> = (0..cells)
        .map(|i| {
            let j = i * stride;
            let (t, x) = (pts[j], states[j]);
            let w = w1_gaussian(x, q.eval(t, x).abs() * sd, x, eta.eval(t, x).abs() * sd).unwrap_or(S::nan());
            w.powf(p)
        })
        .collect();
    dt.powf(S::one() - p / S::lit(2.0)) * pairwise_sum(&terms)
}

/// Scaled `D^{N,p}` with every conditional law replaced by its Gaussian
/// approximation at the left endpoint.
pub fn d_np_gaussian_surrogate<S: Scalar>(
    q: &MartingaleModel<S>,
    pm: &MartingaleModel<S>,
    p: S,
    n_exponent: u32,
    k: usize,
    seed: u64,
    opts: &EstimatorOptions<S>,
) -> Result<MeanStderr<S>> {
    check_p(p)?;
    check_markov(q)?;
    check_markov(pm)?;
    let (fine, f) = fine_grid(opts, n_exponent)?;
    let sums = map_paths(q, &fine, k, seed, &opts.sim_config(), |_, states| {
        Ok(surrogate_path_sum(&q.vol, &pm.vol, p, &fine, f, n_exponent, states))
    })?;
    Ok(MeanStderr::from_samples(&sums))
}

/// How the `P` inner clouds of the nested estimator draw their noise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerNoise {
    /// `P` clouds use their own streams.
    #[default]
    Independent,
    /// `P` clouds reuse the `Q` cloud's stream (so `Q = P` gives exactly 0).
    Shared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NestedOptions {
    pub m_inner: usize,
    pub inner_substeps: usize,
    pub noise: InnerNoise,
}

impl Default for NestedOptions {
    fn default() -> Self {
        Self { m_inner: 4096, inner_substeps: 4, noise: InnerNoise::Independent }
    }
}

#[allow(clippy::too_many_arguments)]
fn nested_path_sum<S: Scalar>(
    q: &MartingaleModel<S>,
    pm: &MartingaleModel<S>,
    p: S,
    fine: &TimeGrid<S>,
    f: u32,
    n: u32,
    states: &[S],
    path: usize,
    seed: u64,
    nested: &NestedOptions,
) -> Result<S> {
    let stride = 1usize << (f - n);
    let cells = 1usize << n;
    let pts = fine.points();
    let dt = (fine.t_end() - fine.t_start()) / S::from_usize_lossy(cells);
    let q_seed = sub_seed(seed, INNER_Q_TAG ^ ((n as u64) << 40));
    let p_seed = match nested.noise {
        InnerNoise::Independent => sub_seed(seed, INNER_P_TAG ^ ((n as u64) << 40)),
        InnerNoise::Shared => q_seed,
    };
    let mut terms = Vec::with_capacity(cells);
    for i in 0..cells {
        let j = i * stride;
        let (t0, x) = (pts[j], states[j]);
        let t1 = pts[j + stride];
        let id = (path as u64) << 24 | i as u64;
        let mut rq = derive_stream(q_seed, id);
        let mut rp = derive_stream(p_seed, id);
        let a = sample_one_step_raw(q, t0, t1, x, nested.m_inner, nested.inner_substeps, &mut rq)?;
        let b = sample_one_step_raw(pm, t0, t1, x, nested.m_inner, nested.inner_substeps, &mut rp)?;
        let w = w1_empirical(&EmpiricalDist::uniform(a)?, &EmpiricalDist::uniform(b)?)?;
        terms.push(w.powf(p));
    }
    Ok(dt.powf(S::one() - p / S::lit(2.0)) * pairwise_sum(&terms))
}

/// Scaled `D^{N,p}` with each conditional `W₁` estimated from `M_inner`
/// one-step samples of `Q` and of `P` started at the same state.
#[allow(clippy::too_many_arguments)]
pub fn d_np_nested_mc<S: Scalar>(
    q: &MartingaleModel<S>,
    pm: &MartingaleModel<S>,
    p: S,
    n_exponent: u32,
    k_outer: usize,
    nested: &NestedOptions,
    seed: u64,
    opts: &EstimatorOptions<S>,
) -> Result<MeanStderr<S>> {
    check_p(p)?;
    check_markov(q)?;
    check_markov(pm)?;
    if nested.m_inner == 0 || nested.inner_substeps == 0 {
        return Err(domain("M_inner and inner_substeps must be positive"));
    }
    let (fine, f) = fine_grid(opts, n_exponent)?;
    // Inner clouds are sampled sequentially inside each outer path.
    let sums = map_paths(q, &fine, k_outer, seed, &opts.sim_config(), |k, states| {
        nested_path_sum(q, pm, p, &fine, f, n_exponent, states, k, seed, nested)
    })?;
    Ok(MeanStderr::from_samples(&sums))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Surrogate,
    Nested,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Self::Surrogate => "surrogate",
            Self::Nested => "nested",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub method: Method,
    pub scaled_value: f64,
    pub stderr: f64,
    pub rel_error: f64,
    /// Standard error of the per-path difference to the target, relative to the target.
    pub rel_error_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub p: f64,
    pub rows: Vec<DivergenceRow>,
    pub target: f64,
    pub target_stderr: f64,
}

impl DivergenceReport {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "p,N,method,scaled_value,stderr,target,target_stderr,rel_error")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
                self.p,
                r.n,
                r.method.name(),
                r.scaled_value,
                r.stderr,
                self.target,
                self.target_stderr,
                r.rel_error
            )?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Relative errors are non-increasing in `N`, each step allowed one
    /// relative standard error of slack (plus rounding, for exact cases).
    pub fn rel_error_non_increasing(&self) -> bool {
        let scale = if self.target != 0.0 { self.target.abs() } else { 1.0 };
        self.rows.windows(2).all(|w| {
            let slack = w[1].rel_error_stderr.max(w[1].stderr / scale);
            w[1].rel_error <= w[0].rel_error + slack + 1e-12
        })
    }
}

/// Scaled `D^{N,p}` for each `N = 2^n` against the closed-form target, all on
/// common random numbers.
#[allow(clippy::too_many_arguments)]
pub fn convergence_table<S: Scalar>(
    q: &MartingaleModel<S>,
    pm: &MartingaleModel<S>,
    p: S,
    n_exponents: &[u32],
    k: usize,
    seed: u64,
    method: Method,
    nested: &NestedOptions,
    opts: &EstimatorOptions<S>,
) -> Result<DivergenceReport> {
    check_p(p)?;
    check_markov(q)?;
    check_markov(pm)?;
    if !pm.vol.regularity.bounded {
        return Err(Error::Unsupported(format!("reference volatility {} is not declared bounded", pm.vol.name())));
    }
    if n_exponents.is_empty() {
        return Err(domain("need at least one N"));
    }
    let max_n = *n_exponents.iter().max().expect("nonempty");
    let (fine, f) = fine_grid(opts, max_n)?;
    let c = gaussian_factor(p);
    let per_path = map_paths(q, &fine, k, seed, &opts.sim_config(), |kk, states| {
        let mut out = Vec::with_capacity(n_exponents.len() + 1);
        out.push(left_sum(&fine, states, |t, x| c * (q.vol.eval(t, x).abs() - pm.vol.eval(t, x).abs()).abs().powf(p)));
        for &n in n_exponents {
            out.push(match method {
                Method::Surrogate => surrogate_path_sum(&q.vol, &pm.vol, p, &fine, f, n, states),
                Method::Nested => nested_path_sum(q, pm, p, &fine, f, n, states, kk, seed, nested)?,
            });
        }
        Ok(out)
    })?;
    let column = |j: usize| -> Vec<S> { per_path.iter().map(|r| r[j]).collect() };
    let target = MeanStderr::from_samples(&column(0));
    let tgt = target.mean.as_f64();
    let mut rows = Vec::with_capacity(n_exponents.len());
    for (j, &n) in n_exponents.iter().enumerate() {
        let vals = column(j + 1);
        let ms = MeanStderr::from_samples(&vals);
        let diffs: Vec<S> = per_path.iter().map(|r| r[j + 1] - r[0]).collect();
        let dms = MeanStderr::from_samples(&diffs);
        let rel = if tgt != 0.0 { (ms.mean.as_f64() - tgt).abs() / tgt.abs() } else { (ms.mean.as_f64() - tgt).abs() };
        let rel_se = if tgt != 0.0 { dms.stderr.as_f64() / tgt.abs() } else { dms.stderr.as_f64() };
        rows.push(DivergenceRow {
            n: 1usize << n,
            method,
            scaled_value: ms.mean.as_f64(),
            stderr: ms.stderr.as_f64(),
            rel_error: rel,
            rel_error_stderr: rel_se,
        });
    }
    Ok(DivergenceReport { p: p.as_f64(), rows, target: tgt, target_stderr: target.stderr.as_f64() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPathRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_abs_gap: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerPathReport {
    pub p: f64,
    pub rows: Vec<PerPathRow>,
    /// Mean over paths of the per-path closed-form integral.
    pub mean_integral: f64,
}

impl PerPathReport {
    pub fn gaps_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean_abs_gap <= w[0].mean_abs_gap)
    }
}

fn check_pathwise_hypotheses<S: Scalar>(m: &MartingaleModel<S>) -> Result<()> {
    let r = m.vol.regularity;
    if !(r.markov && r.time_homogeneous && r.lipschitz && r.uniformly_positive) {
        return Err(Error::Unsupported(format!(
            "{} must be declared time-homogeneous Markov, Lipschitz and uniformly positive",
            m.vol.name()
        )));
    }
    Ok(())
}

/// Per-path gap between the scaled surrogate sum on the `N` grid and the
/// closed-form time integral along the same path.
#[allow(clippy::too_many_arguments)]
pub fn per_path_limit_check<S: Scalar>(
    q: &MartingaleModel<S>,
    pm: &MartingaleModel<S>,
    p: S,
    n_exponents: &[u32],
    k: usize,
    seed: u64,
    opts: &EstimatorOptions<S>,
) -> Result<PerPathReport> {
    check_p(p)?;
    check_pathwise_hypotheses(q)?;
    check_pathwise_hypotheses(pm)?;
    if n_exponents.is_empty() {
        return Err(domain("need at least one N"));
    }
    let max_n = *n_exponents.iter().max().expect("nonempty");
    let (fine, f) = fine_grid(opts, max_n)?;
    let c = gaussian_factor(p);
    let per_path = map_paths(q, &fine, k, seed, &opts.sim_config(), |_, states| {
        let integral =
            left_sum(&fine, states, |t, x| c * (q.vol.eval(t, x).abs() - pm.vol.eval(t, x).abs()).abs().powf(p));
        let mut out = vec![integral];
        for &n in n_exponents {
            out.push((surrogate_path_sum(&q.vol, &pm.vol, p, &fine, f, n, states) - integral).abs());
        }
        Ok(out)
    })?;
    let integrals: Vec<S> = per_path.iter().map(|r| r[0]).collect();
    let rows = n_exponents
        .iter()
        .enumerate()
        .map(|(j, &n)| {
            let gaps: Vec<S> = per_path.iter().map(|r| r[j + 1]).collect();
            let ms = MeanStderr::from_samples(&gaps);
            PerPathRow { n: 1usize << n, mean_abs_gap: ms.mean.as_f64(), stderr: ms.stderr.as_f64() }
        })
        .collect();
    Ok(PerPathReport { p: p.as_f64(), rows, mean_integral: MeanStderr::from_samples(&integrals).mean.as_f64() })
}

/// `½ E_Q ∫ (σ²/η² - 1 - log(σ²/η²)) dt`.
pub fn specific_relative_entropy<S: Scalar>(
    q: &MartingaleModel<S>,
    eta: &VolatilityField<S>,
    k: usize,
    grid: &TimeGrid<S>,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<MeanStderr<S>> {
    closed_form_functional(q, grid, k, seed, cfg, relative_entropy_density, eta)
}

fn relative_entropy_density<S: Scalar>(s: S, e: S) -> Result<S> {
    if e == S::zero() {
        return Err(domain("η = 0 on a visited state; the specific relative entropy diverges"));
    }
    let r = (s * s) / (e * e);
    if r == S::zero() {
        return Ok(S::infinity());
    }
    Ok((r - S::one() - r.ln()) / S::lit(2.0))
}

/// `E_Q ∫ (|σ| - 1)² dt`, the squared adapted Wasserstein distance to Wiener measure.
pub fn aw2_squared_vs_wiener<S: Scalar>(
    q: &MartingaleModel<S>,
    k: usize,
    grid: &TimeGrid<S>,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<MeanStderr<S>> {
    let one = VolatilityField::constant(S::one());
    closed_form_functional(q, grid, k, seed, cfg, |s, e| Ok((s - e) * (s - e)), &one)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FollmerReport {
    pub half_aw2: f64,
    /// `½ E∫(|σ|-1)²`: `SW₂(Q‖W)` with its `(2/π)` factor removed.
    pub half_sw2: f64,
    pub h: f64,
    pub half_aw2_stderr: f64,
    pub h_stderr: f64,
    /// `h - half_sw2` and its paired standard error.
    pub margin: f64,
    pub margin_stderr: f64,
    /// `h ≥ half_sw2 - 3·margin_stderr`.
    pub inequality_holds: bool,
    /// `margin > 3·margin_stderr`.
    pub strict_margin: bool,
}

/// `½AW₂² = ½SW₂ ≤ h` against Wiener measure, evaluated on the same paths.
pub fn follmer_chain_check<S: Scalar>(
    q: &MartingaleModel<S>,
    k: usize,
    grid: &TimeGrid<S>,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<FollmerReport> {
    let per_path = map_paths(q, grid, k, seed, cfg, |_, states| {
        let pts = grid.points();
        let mut aw = Vec::with_capacity(pts.len() - 1);
        let mut ent = Vec::with_capacity(pts.len() - 1);
        for i in 0..pts.len() - 1 {
            let dt = pts[i + 1] - pts[i];
            let s = q.vol.eval(pts[i], states[i]).abs();
            aw.push((s - S::one()) * (s - S::one()) * dt);
            ent.push(relative_entropy_density(s, S::one())? * dt);
        }
        Ok((pairwise_sum(&aw), pairwise_sum(&ent)))
    })?;
    let half = S::lit(0.5);
    let aw: Vec<S> = per_path.iter().map(|r| r.0 * half).collect();
    let h: Vec<S> = per_path.iter().map(|r| r.1).collect();
    let diff: Vec<S> = per_path.iter().map(|r| r.1 - r.0 * half).collect();
    let aw_ms = MeanStderr::from_samples(&aw);
    let h_ms = MeanStderr::from_samples(&h);
    let d_ms = MeanStderr::from_samples(&diff);
    let margin = h_ms.mean - aw_ms.mean;
    let three = S::lit(3.0);
    Ok(FollmerReport {
        half_aw2: aw_ms.mean.as_f64(),
        half_sw2: aw_ms.mean.as_f64(),
        h: h_ms.mean.as_f64(),
        half_aw2_stderr: aw_ms.stderr.as_f64(),
        h_stderr: h_ms.stderr.as_f64(),
        margin: margin.as_f64(),
        margin_stderr: d_ms.stderr.as_f64(),
        inequality_holds: margin >= -three * d_ms.stderr,
        strict_margin: margin > three * d_ms.stderr,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub lhs: f64,
    pub mid: f64,
    pub rhs: f64,
    pub lhs_gap_stderr: f64,
    pub rhs_gap_stderr: f64,
    pub holds: bool,
}

/// Checks `SW(Q‖P_ε) - (2/π)^{p/2}ε^p ≤ SW(Q‖P_δ) ≤ (1+r²)^{p/2}SW(Q‖P_ε) + (2/π)^{p/2}|1-1/r²|^{p/2}ε^p`
/// with `P_ε = εW` and `P_δ` the constant martingale, for `p ∈ (0, 2)`.
#[allow(clippy::too_many_arguments)]
pub fn epsilon_sandwich_check<S: Scalar>(
    q: &MartingaleModel<S>,
    p: S,
    eps: S,
    r: S,
    k: usize,
    grid: &TimeGrid<S>,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<SandwichReport> {
    if !(p > S::zero() && p < S::lit(2.0)) {
        return Err(domain(format!("the sandwich bound needs p in (0, 2), got {p}")));
    }
    if !(eps >= S::zero()) || !(r > S::zero()) {
        return Err(domain("need eps >= 0 and r > 0"));
    }
    let c = gaussian_factor(p);
    let eps_term = c * eps.powf(p);
    let r2 = r * r;
    let widen = (S::one() + r2).powf(p / S::lit(2.0));
    let shift = c * (S::one() - S::one() / r2).abs().powf(p / S::lit(2.0)) * eps.powf(p);
    let per_path = map_paths(q, grid, k, seed, cfg, |_, states| {
        let sw_eps = left_sum(grid, states, |t, x| c * (q.vol.eval(t, x).abs() - eps).abs().powf(p));
        let sw_delta = left_sum(grid, states, |t, x| c * q.vol.eval(t, x).abs().powf(p));
        Ok((sw_eps, sw_delta))
    })?;
    let col = |f: &dyn Fn(&(S, S)) -> S| -> MeanStderr<S> {
        MeanStderr::from_samples(&per_path.iter().map(f).collect::<Vec<_>>())
    };
    let sw_eps = col(&|v| v.0);
    let sw_delta = col(&|v| v.1);
    let lhs = sw_eps.mean - eps_term;
    let rhs = widen * sw_eps.mean + shift;
    let g1 = col(&|v| v.1 - (v.0 - eps_term));
    let g2 = col(&|v| widen * v.0 + shift - v.1);
    let three = S::lit(3.0);
    let tiny = S::lit(1e-12);
    let holds = g1.mean >= -three * g1.stderr - tiny && g2.mean >= -three * g2.stderr - tiny;
    Ok(SandwichReport {
        lhs: lhs.as_f64(),
        mid: sw_delta.mean.as_f64(),
        rhs: rhs.as_f64(),
        lhs_gap_stderr: g1.stderr.as_f64(),
        rhs_gap_stderr: g2.stderr.as_f64(),
        holds,
    })
}

/// Finitely supported law on `ℝ²`: atoms `(x1, x2)` with weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct TwoStep<S: Scalar = f64> {
    pub atoms: Vec<(S, S)>,
    pub weights: Vec<S>,
}

impl<S: Scalar> TwoStep<S> {
    pub fn new(atoms: Vec<(S, S)>, weights: Vec<S>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(domain("two-step law needs matching nonempty atoms and weights"));
        }
        if weights.iter().any(|w| !(*w >= S::zero())) {
            return Err(domain("weights must be nonnegative"));
        }
        let total: S = weights.iter().copied().sum();
        if (total - S::one()).abs() > S::lit(1e-12).max(S::epsilon() * S::lit(64.0)) {
            return Err(domain(format!("weights sum to {total}")));
        }
        Ok(Self { atoms, weights })
    }

    /// `t·self + (1-t)·other`.
    pub fn mix(&self, other: &Self, t: S) -> Self {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().copied());
        let mut weights: Vec<S> = self.weights.iter().map(|&w| t * w).collect();
        weights.extend(other.weights.iter().map(|&w| (S::one() - t) * w));
        Self { atoms, weights }
    }

    /// First marginal and, for each distinct `x1`, the conditional law of `x2`.
    fn disintegrate(&self) -> Vec<Slice<S>> {
        let mut out: Vec<Slice<S>> = Vec::new();
        for (&(x1, x2), &w) in self.atoms.iter().zip(&self.weights) {
            if w == S::zero() {
                continue;
            }
            match out.iter_mut().find(|e| e.0 == x1) {
                Some(e) => {
                    e.1 = e.1 + w;
                    e.2.push((x2, w));
                }
                None => out.push((x1, w, vec![(x2, w)])),
            }
        }
        out
    }
}

/// `(x1, Q₁({x1}), [(x2, weight)])`.
type Slice<S> = (S, S, Vec<(S, S)>);

/// Reference law with Gaussian kernels: `X1 ~ N(m1, s1²)`, `X2 | X1 = x ~ N(x, s2(x)²)`.
pub struct GaussianKernels<'a, S: Scalar = f64> {
    pub m1: S,
    pub s1: S,
    pub s2: &'a dyn Fn(S) -> S,
}

/// `D^{2,p}(Q‖P) = W₁^p(Q₁, P₁) + ∫ W₁^p(Q₂^{x1}, P₂^{x1}) Q₁(dx1)`, exactly.
pub fn d2p_exact<S: Scalar>(q: &TwoStep<S>, pk: &GaussianKernels<'_, S>, p: S) -> Result<S> {
    let parts = q.disintegrate();
    let first = EmpiricalDist::weighted(parts.iter().map(|e| e.0).collect(), parts.iter().map(|e| e.1).collect())?;
    let mut total = w1_empirical_vs_gaussian(&first, pk.m1, pk.s1)?.powf(p);
    for (x1, w, cond) in &parts {
        let cd = EmpiricalDist::weighted(cond.iter().map(|c| c.0).collect(), cond.iter().map(|c| c.1 / *w).collect())?;
        total = total + *w * w1_empirical_vs_gaussian(&cd, *x1, (pk.s2)(*x1))?.powf(p);
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvexityReport {
    pub mixed: f64,
    pub chord: f64,
    /// `mixed - chord`; convexity means this is `≤ 1e-12`.
    pub excess: f64,
    pub holds: bool,
}

/// Convexity of `Q ↦ D^{2,p}(Q‖P)` along the segment `tQ + (1-t)Q̃`.
pub fn convexity_probe_n2<S: Scalar>(
    pk: &GaussianKernels<'_, S>,
    q: &TwoStep<S>,
    q_tilde: &TwoStep<S>,
    t: S,
    p: S,
) -> Result<ConvexityReport> {
    if !(p >= S::one()) {
        return Err(Error::Unsupported(format!("convexity in Q is only claimed for p >= 1, got {p}")));
    }
    if !(t >= S::zero() && t <= S::one()) {
        return Err(domain(format!("mixture weight {t} outside [0, 1]")));
    }
    let mixed = d2p_exact(&q.mix(q_tilde, t), pk, p)?;
    let chord = t * d2p_exact(q, pk, p)? + (S::one() - t) * d2p_exact(q_tilde, pk, p)?;
    let excess = (mixed - chord).as_f64();
    Ok(ConvexityReport { mixed: mixed.as_f64(), chord: chord.as_f64(), excess, holds: excess <= 1e-12 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_grid(n: u32) -> TimeGrid<f64> {
        TimeGrid::dyadic(0.0, 1.0, n).unwrap()
    }

    #[test]
    fn closed_form_constants() {
        let cfg = SimConfig::default();
        let q = MartingaleModel::scaled_bm(0.0, 2.0);
        let one = VolatilityField::constant(1.0);
        let v = sw_p_closed_form(&q, &one, 1.0, 50, &unit_grid(4), 1, &cfg).unwrap();
        assert!((v.mean - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!(v.stderr < 1e-15);
        let zero = VolatilityField::constant(0.0);
        let v = sw_p_closed_form(&q, &zero, 2.0, 10, &unit_grid(4), 1, &cfg).unwrap();
        assert!((v.mean - 8.0 / std::f64::consts::PI).abs() < 1e-14);
        let bm = MartingaleModel::scaled_bm(0.0, 1.0);
        assert_eq!(sw_p_closed_form(&bm, &one, 1.7, 10, &unit_grid(3), 1, &cfg).unwrap().mean, 0.0);
    }

    #[test]
    fn relative_entropy_constants() {
        let cfg = SimConfig::default();
        let g = unit_grid(3);
        let two = MartingaleModel::scaled_bm(0.0, 2.0);
        let v = specific_relative_entropy(&two, &VolatilityField::constant(1.0), 5, &g, 1, &cfg).unwrap();
        assert!((v.mean - (3.0 - 4f64.ln()) / 2.0).abs() < 1e-15);
        let one = MartingaleModel::scaled_bm(0.0, 1.0);
        let v = specific_relative_entropy(&one, &VolatilityField::constant(2.0), 5, &g, 1, &cfg).unwrap();
        assert!((v.mean - (0.25 - 1.0 - 0.25f64.ln()) / 2.0).abs() < 1e-15);
        assert!(specific_relative_entropy(&one, &VolatilityField::constant(0.0), 5, &g, 1, &cfg).is_err());
    }

    #[test]
    fn surrogate_rejects_non_markov() {
        let mut f = VolatilityField::constant(1.0);
        f.regularity.markov = false;
        let q = MartingaleModel::on_real_line(0.0, f);
        let pm = MartingaleModel::scaled_bm(0.0, 1.0);
        let r = d_np_gaussian_surrogate(&q, &pm, 1.0, 3, 4, 1, &EstimatorOptions::default());
        assert!(matches!(r, Err(Error::Unsupported(_))));
    }

    #[test]
    fn nested_shared_noise_vanishes_for_equal_models() {
        let q = MartingaleModel::on_real_line(0.0, VolatilityField::sine(1.5, 0.5));
        let nested = NestedOptions { m_inner: 64, inner_substeps: 2, noise: InnerNoise::Shared };
        let opts = EstimatorOptions { fine_exponent: 4, ..Default::default() };
        let v = d_np_nested_mc(&q, &q, 1.0, 3, 4, &nested, 7, &opts).unwrap();
        assert_eq!(v.mean, 0.0);
    }

    #[test]
    fn sandwich_degenerate_cases() {
        let cfg = SimConfig::default();
        let g = unit_grid(3);
        let q = MartingaleModel::scaled_bm(0.0, 1.0);
        let r = epsilon_sandwich_check(&q, 1.0, 0.0, 1.0, 5, &g, 1, &cfg).unwrap();
        assert!(r.holds && r.lhs == r.mid);
        assert!((r.rhs - 2f64.sqrt() * r.mid).abs() < 1e-15);
        let zero = MartingaleModel::scaled_bm(0.3, 0.0);
        let r = epsilon_sandwich_check(&zero, 1.0, 0.2, 1.0, 5, &g, 1, &cfg).unwrap();
        assert_eq!(r.mid, 0.0);
        assert!(r.lhs.abs() < 1e-15 && r.holds);
        let r = epsilon_sandwich_check(&q, 1.0, 0.1, 1.0, 5, &g, 1, &cfg).unwrap();
        assert!(r.holds && r.lhs <= r.mid && r.mid <= r.rhs);
        assert!(epsilon_sandwich_check(&q, 2.5, 0.1, 1.0, 5, &g, 1, &cfg).is_err());
    }

    #[test]
    fn convexity_probe_edge_cases() {
        let s2 = |x: f64| 0.5 + 0.1 * x.abs();
        let pk = GaussianKernels { m1: 0.0, s1: 1.0, s2: &s2 };
        let q = TwoStep::new(vec![(0.0, 1.0), (1.0, 0.5), (0.0, -1.0)], vec![0.2, 0.5, 0.3]).unwrap();
        let qt = TwoStep::new(vec![(1.0, 2.0), (-1.0, 0.0)], vec![0.6, 0.4]).unwrap();
        for t in [0.0, 1.0] {
            let r = convexity_probe_n2(&pk, &q, &qt, t, 1.0).unwrap();
            assert!(r.excess.abs() < 1e-12);
        }
        let r = convexity_probe_n2(&pk, &q, &q, 0.3, 1.5).unwrap();
        assert!(r.excess.abs() < 1e-12);
        assert!(matches!(convexity_probe_n2(&pk, &q, &qt, 0.5, 0.5), Err(Error::Unsupported(_))));
    }

    #[test]
    fn report_csv_columns() {
        let rep = DivergenceReport {
            p: 1.0,
            rows: vec![DivergenceRow {
                n: 4,
                method: Method::Surrogate,
                scaled_value: 1.0,
                stderr: 0.0,
                rel_error: 0.0,
                rel_error_stderr: 0.0,
            }],
            target: 1.0,
            target_stderr: 0.0,
        };
        let mut out = Vec::new();
        rep.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("p,N,method,scaled_value,stderr,target,target_stderr,rel_error\n1,4,surrogate,"));
    }
}
