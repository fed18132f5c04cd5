//! The `p = 1/2` optimizer seen on the clock `r = -2 log(1 - t)`: the
//! logistic diffusion `dY = Y(1-Y) dW`, its logit `C = log(Y/(1-Y))` with drift
//! `½ tanh(C/2)`, the Brownian bridges to `±T/2` that converge to `C`, and the
//! Bayesian filter for a Bernoulli drift that has the law of `Y`.

use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{domain, Error, Result};
use crate::field::{Boundary, MartingaleModel};
use crate::grid::TimeGrid;
use crate::rng::{derive_stream, sub_seed};
use crate::scalar::{log_cosh, norm_cdf, pairwise_sum, MeanStderr, Scalar};
use crate::sde::{par_map, r_to_t, simulate, time_change_to_infinite_horizon, SimConfig};
use crate::winmart::ClosedForm;

const LABEL_TAG: u64 = 0x6669_6c74;
const Y_TAG: u64 = 0x795f_636c;

/// Density of `C_t` started at `c`: the `N(c, t)` density times `cosh(z/2)/cosh(c/2)·e^{-t/8}`.
pub fn density_c<S: Scalar>(t: S, z: S, c: S) -> Result<S> {
    if !(t > S::zero()) {
        return Err(domain(format!("density of C_t needs t > 0, got {t}")));
    }
    let two = S::lit(2.0);
    let d = z - c;
    let log_phi = -d * d / (two * t) - (two * S::PI() * t).ln() / two;
    Ok((log_phi + log_cosh(z / two) - log_cosh(c / two) - t / S::lit(8.0)).exp())
}

/// CDF of `C_t` started at `c`, from the two drifted-Gaussian pieces.
pub fn cdf_c<S: Scalar>(t: S, z: S, c: S) -> Result<S> {
    if !(t > S::zero()) {
        return Err(domain(format!("law of C_t needs t > 0, got {t}")));
    }
    let two = S::lit(2.0);
    let sd = t.sqrt();
    // Weights e^{±c/2}/(2cosh(c/2)), written to avoid overflow.
    let w_plus = S::one() / (S::one() + (-c).exp());
    let up = norm_cdf((z - c - t / two) / sd);
    let down = norm_cdf((z - c + t / two) / sd);
    Ok(w_plus * up + (S::one() - w_plus) * down)
}

/// `½ tanh(x/2)`.
pub fn drift_c<S: Scalar>(x: S) -> S {
    (x / S::lit(2.0)).tanh() / S::lit(2.0)
}

/// Brownian bridge from `c` at time 0 to `±T/2` at time `T`, observed at `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BridgeParams<S: Scalar = f64> {
    #[serde(rename = "T")]
    pub horizon: S,
    pub t: S,
    #[serde(default)]
    pub c: S,
}

impl<S: Scalar> BridgeParams<S> {
    pub fn new(horizon: S, t: S) -> Result<Self> {
        let p = Self { horizon, t, c: S::zero() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t >= S::zero() && self.t < self.horizon) || !self.horizon.is_finite() {
            return Err(domain(format!("bridge needs 0 <= t < T, got t = {}, T = {}", self.t, self.horizon)));
        }
        if self.c != S::zero() {
            return Err(Error::Unsupported("bridges are only defined for the start c = 0".into()));
        }
        Ok(())
    }
}

/// Density `f^T(t, x)` of the `±T/2` bridge against Wiener measure on `F_t`.
pub fn bridge_density<S: Scalar>(bp: &BridgeParams<S>, x: S) -> Result<S> {
    bp.validate()?;
    let (big_t, t) = (bp.horizon, bp.t);
    let two = S::lit(2.0);
    let rem = big_t - t;
    let log_f = (big_t / rem).ln() / two - x * x / (two * rem) - big_t * t / (S::lit(8.0) * rem)
        + log_cosh(x * big_t / (two * rem));
    Ok(log_f.exp())
}

/// `∂ₓ log f^T(t, x)`, the drift of the bridge.
pub fn bridge_drift<S: Scalar>(bp: &BridgeParams<S>, x: S) -> Result<S> {
    bp.validate()?;
    let (big_t, t) = (bp.horizon, bp.t);
    let two = S::lit(2.0);
    let rem = big_t - t;
    Ok(big_t / (two * rem) * (x * big_t / (two * rem)).tanh() - x / rem)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathOptions {
    /// Euler steps per unit time.
    pub steps_per_unit: usize,
    pub workers: usize,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { steps_per_unit: 256, workers: 1 }
    }
}

impl PathOptions {
    fn steps(&self, t: f64) -> Result<usize> {
        if self.steps_per_unit == 0 || self.workers == 0 {
            return Err(domain("steps_per_unit and workers must be positive"));
        }
        Ok(((self.steps_per_unit as f64) * t).ceil().max(1.0) as usize)
    }
}

/// Per-path left-point `½∫₀ᵗ (drift_C - bridge drift)² du` for each horizon,
/// along Euler paths of `C` from 0. Every horizon sees the same paths.
fn entropy_gap_samples<S: Scalar>(horizons: &[S], t: S, k: usize, opts: &PathOptions, seed: u64) -> Result<Vec<Vec<S>>> {
    if k == 0 {
        return Err(domain("K must be at least 1"));
    }
    for &h in horizons {
        BridgeParams::new(h, t)?;
    }
    if t == S::zero() {
        return Ok(vec![vec![S::zero(); horizons.len()]; k]);
    }
    let n = opts.steps(t.as_f64())?;
    let dt = t / S::from_usize_lossy(n);
    let sq = dt.sqrt();
    let half = S::lit(0.5);
    par_map(k, opts.workers, |i| {
        let mut rng = derive_stream(seed, i as u64);
        let mut acc = vec![Vec::with_capacity(n); horizons.len()];
        let mut x = S::zero();
        for j in 0..n {
            let u = dt * S::from_usize_lossy(j);
            let a = drift_c(x);
            for (h, terms) in horizons.iter().zip(acc.iter_mut()) {
                let b = bridge_drift(&BridgeParams { horizon: *h, t: u, c: S::zero() }, x)?;
                terms.push((a - b) * (a - b) * dt);
            }
            let z: S = rng.normal();
            x = x + a * dt + sq * z;
        }
        Ok(acc.iter().map(|v| half * pairwise_sum(v)).collect())
    })
}

/// `H(Q‖P^T)` on `[0, t]` by Monte Carlo along Euler paths of `C`.
pub fn entropy_gap<S: Scalar>(horizon: S, t: S, k: usize, opts: &PathOptions, seed: u64) -> Result<MeanStderr<S>> {
    let s = entropy_gap_samples(&[horizon], t, k, opts, seed)?;
    Ok(MeanStderr::from_samples(&s.iter().map(|r| r[0]).collect::<Vec<_>>()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyGapRow {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub estimate: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyGapTable {
    pub t: f64,
    pub rows: Vec<EntropyGapRow>,
    /// Paired drops `row[i] - row[i+1]` with their standard errors.
    pub drops: Vec<(f64, f64)>,
    /// Every paired drop exceeds three of its standard errors.
    pub strictly_decreasing: bool,
}

impl EntropyGapTable {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "T,estimate,stderr")?;
        for r in &self.rows {
            writeln!(w, "{},{:.17e},{:.17e}", r.horizon, r.estimate, r.stderr)?;
        }
        Ok(())
    }
}

pub fn entropy_gap_table<S: Scalar>(horizons: &[S], t: S, k: usize, opts: &PathOptions, seed: u64) -> Result<EntropyGapTable> {
    let s = entropy_gap_samples(horizons, t, k, opts, seed)?;
    let col = |j: usize| -> Vec<S> { s.iter().map(|r| r[j]).collect() };
    let rows: Vec<EntropyGapRow> = horizons
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let ms = MeanStderr::from_samples(&col(j));
            EntropyGapRow { horizon: h.as_f64(), estimate: ms.mean.as_f64(), stderr: ms.stderr.as_f64() }
        })
        .collect();
    let drops: Vec<(f64, f64)> = (0..horizons.len().saturating_sub(1))
        .map(|j| {
            let d: Vec<S> = s.iter().map(|r| r[j] - r[j + 1]).collect();
            let ms = MeanStderr::from_samples(&d);
            (ms.mean.as_f64(), ms.stderr.as_f64())
        })
        .collect();
    let strictly_decreasing = drops.iter().all(|&(d, se)| d > 0.0 && d > 3.0 * se);
    Ok(EntropyGapTable { t: t.as_f64(), rows, drops, strictly_decreasing })
}

/// `G(y) = log(y/(1-y))`.
pub fn logit<S: Scalar>(y: S) -> S {
    (y / (S::one() - y)).ln()
}

/// `p = 1/2` optimizer from `x0`, recorded at `r_i = t_y·i/n` on the `r` clock,
/// i.e. at `t_i = 1 - e^{-r_i/2}`.
pub fn simulate_p_half_y_clock<S: Scalar>(
    x0: S,
    t_y: S,
    n_cells: usize,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<PathEnsemble<S>> {
    if !(t_y > S::zero()) || n_cells == 0 {
        return Err(domain("need t_y > 0 and at least one cell"));
    }
    let pts: Vec<S> = (0..=n_cells).map(|i| r_to_t(t_y * S::from_usize_lossy(i) / S::from_usize_lossy(n_cells))).collect();
    let grid = TimeGrid::from_points(pts)?;
    let model = MartingaleModel::new(x0, ClosedForm::PHalf.field(), Boundary::AbsorbingUnit)?;
    simulate(&model, &grid, k, seed, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub z: f64,
    pub model_density: f64,
    pub empirical_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitReport {
    pub t: f64,
    pub c0: f64,
    pub n_used: usize,
    pub n_excluded: usize,
    pub ks_distance: f64,
    pub ks_band: f64,
    pub ks_pass: bool,
    pub mean_qv: f64,
    pub qv_rel_error: f64,
    pub qv_pass: bool,
    pub mean_y: f64,
    pub mean_y_stderr: f64,
    pub martingale_pass: bool,
    pub density: Vec<DensityRow>,
    pub pass: bool,
}

/// Sup-distance between the empirical CDF of `xs` and `cdf`.
pub fn ks_distance<S: Scalar>(xs: &mut [S], cdf: impl Fn(S) -> Result<S>) -> Result<f64> {
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x)?.as_f64();
        d = d.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    Ok(d)
}

/// Maps a `p = 1/2` ensemble on the `r` clock through the logit and compares
/// the last column with the law of `C`; paths that touched 0 or 1 are dropped.
pub fn logit_change_check<S: Scalar>(ens: &PathEnsemble<S>, x0: S, n_bins: usize) -> Result<LogitReport> {
    let rc = time_change_to_infinite_horizon(ens)?;
    let w = rc.r_points.len();
    if w < 2 {
        return Err(domain("ensemble needs at least two time points"));
    }
    let t = rc.r_points[w - 1] - rc.r_points[0];
    if !(x0 > S::zero() && x0 < S::one()) {
        return Err(domain("x0 must lie in (0, 1)"));
    }
    let c0 = logit(x0);
    let mut finals = Vec::with_capacity(rc.n_paths);
    let mut qvs = Vec::with_capacity(rc.n_paths);
    let mut ys = Vec::with_capacity(rc.n_paths);
    let mut excluded = 0usize;
    for k in 0..rc.n_paths {
        let path = rc.path(k);
        ys.push(path[w - 1]);
        if path.iter().any(|&y| !(y > S::zero() && y < S::one())) {
            excluded += 1;
            continue;
        }
        let cs: Vec<S> = path.iter().map(|&y| logit(y)).collect();
        let inc: Vec<S> = cs.windows(2).map(|p| (p[1] - p[0]) * (p[1] - p[0])).collect();
        qvs.push(pairwise_sum(&inc));
        finals.push(cs[w - 1]);
    }
    if finals.is_empty() {
        return Err(Error::Inconsistent("every path touched the boundary".into()));
    }
    let n_used = finals.len();
    let band = 1.5 * 1.63 / (n_used as f64).sqrt();
    let ks = ks_distance(&mut finals, |z| cdf_c(t, z, c0))?;
    let qv = MeanStderr::from_samples(&qvs).mean.as_f64();
    let qv_rel = (qv - t.as_f64()).abs() / t.as_f64();
    let ym = MeanStderr::from_samples(&ys);
    let martingale_pass = (ym.mean - x0).abs().as_f64() <= 3.0 * ym.stderr.as_f64();

    // Histogram over ±4 sd around the bulk; model density is the bin average.
    let mut density = Vec::with_capacity(n_bins);
    if n_bins > 0 {
        let (c0f, tf) = (c0.as_f64(), t.as_f64());
        let half_w = 4.0 * tf.sqrt() + tf / 2.0;
        let (lo, hi) = (c0f - half_w, c0f + half_w);
        let width = (hi - lo) / n_bins as f64;
        let mut counts = vec![0usize; n_bins];
        for &z in &finals {
            let zf = z.as_f64();
            if zf >= lo && zf < hi {
                counts[((zf - lo) / width) as usize] += 1;
            }
        }
        for (b, &cnt) in counts.iter().enumerate() {
            let a = lo + width * b as f64;
            let m = cdf_c(tf, a + width, c0f)? - cdf_c(tf, a, c0f)?;
            density.push(DensityRow {
                z: a + width / 2.0,
                model_density: m / width,
                empirical_density: cnt as f64 / (n_used as f64 * width),
            });
        }
    }
    let ks_pass = ks < band;
    let qv_pass = qv_rel < 0.02;
    Ok(LogitReport {
        t: t.as_f64(),
        c0: c0.as_f64(),
        n_used,
        n_excluded: excluded,
        ks_distance: ks,
        ks_band: band,
        ks_pass,
        mean_qv: qv,
        qv_rel_error: qv_rel,
        qv_pass,
        mean_y: ym.mean.as_f64(),
        mean_y_stderr: ym.stderr.as_f64(),
        martingale_pass,
        density,
        pass: ks_pass && qv_pass && martingale_pass,
    })
}

pub fn write_density_csv<W: std::io::Write>(rows: &[DensityRow], mut w: W) -> Result<()> {
    writeln!(w, "z,model_density,empirical_density")?;
    for r in rows {
        writeln!(w, "{:.17e},{:.17e},{:.17e}", r.z, r.model_density, r.empirical_density)?;
    }
    Ok(())
}

/// `P(u = 1 | X_t = x)` for a `Bernoulli(x0)` drift `u` observed through `dX = u dt + dB`.
pub fn filtering_posterior<S: Scalar>(x: S, t: S, x0: S) -> S {
    let l = x - t / S::lit(2.0) + (x0 / (S::one() - x0)).ln();
    // Logistic of the posterior log-odds.
    if l >= S::zero() {
        S::one() / (S::one() + (-l).exp())
    } else {
        let e = l.exp();
        e / (S::one() + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilteringOptions {
    pub steps_per_unit: usize,
    /// Euler substeps per observation step for the direct `Y` simulation.
    pub y_substeps: usize,
    /// Number of equally spaced checkpoints in `(0, horizon]`.
    pub checkpoints: usize,
    /// Force `u` instead of drawing it.
    #[serde(default)]
    pub force_u: Option<bool>,
    pub workers: usize,
}

impl Default for FilteringOptions {
    fn default() -> Self {
        Self { steps_per_unit: 100, y_substeps: 8, checkpoints: 4, force_u: None, workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: f64,
    pub mean_p: f64,
    pub mean_p_stderr: f64,
    pub mean_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PotentialCompare {
    pub strike: f64,
    pub posterior: f64,
    pub direct_y: f64,
    pub combined_stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilteringReport {
    pub x0: f64,
    pub horizon: f64,
    pub k: usize,
    pub checkpoints: Vec<CheckpointRow>,
    pub mean_check: bool,
    pub realized_qv: f64,
    pub predicted_qv: f64,
    pub qv_rel_error: f64,
    pub qv_check: bool,
    pub potentials: Vec<PotentialCompare>,
    pub law_check: bool,
    pub concentration_check: bool,
    pub pass: bool,
}

/// Posterior of a Bernoulli drift observed in unit noise, checked against
/// the logistic diffusion it should follow.
pub fn filtering_experiment<S: Scalar>(
    x0: S,
    horizon: S,
    k: usize,
    opts: &FilteringOptions,
    seed: u64,
) -> Result<FilteringReport> {
    if !(x0 > S::zero() && x0 < S::one()) {
        return Err(domain(format!("x0 = {x0} must lie in (0, 1)")));
    }
    if !(horizon > S::zero()) || !horizon.is_finite() {
        return Err(domain("horizon must be positive"));
    }
    if k < 2 || opts.checkpoints == 0 || opts.y_substeps == 0 || opts.workers == 0 {
        return Err(domain("need K >= 2 and positive checkpoints, substeps and workers"));
    }
    let n_cp = opts.checkpoints;
    let per = ((opts.steps_per_unit as f64 * horizon.as_f64()) / n_cp as f64).ceil().max(1.0) as usize;
    let n = per * n_cp;
    let dt = horizon / S::from_usize_lossy(n);
    let sq = dt.sqrt();
    let label_seed = sub_seed(seed, LABEL_TAG);
    let y_seed = sub_seed(seed, Y_TAG);

    struct PathOut<S> {
        cp: Vec<S>,
        u: S,
        qv: S,
        pred_qv: S,
        y_end: S,
    }

    let outs = par_map(k, opts.workers, |i| {
        let u = match opts.force_u {
            Some(b) => b,
            None => derive_stream(label_seed, i as u64).bernoulli(x0),
        };
        let u = if u { S::one() } else { S::zero() };
        let mut rng = derive_stream(seed, i as u64);
        let mut x = S::zero();
        let mut p = x0;
        let mut cp = Vec::with_capacity(n_cp);
        let (mut qv, mut pred) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for j in 0..n {
            let z: S = rng.normal();
            x = x + u * dt + sq * z;
            let t = dt * S::from_usize_lossy(j + 1);
            let next = filtering_posterior(x, t, x0);
            qv.push((next - p) * (next - p));
            pred.push(p * p * (S::one() - p) * (S::one() - p) * dt);
            p = next;
            if (j + 1) % per == 0 {
                cp.push(p);
            }
        }
        // Direct Euler simulation of dY = Y(1-Y) dW on a finer step.
        let mut ry = derive_stream(y_seed, i as u64);
        let m = n * opts.y_substeps;
        let dty = horizon / S::from_usize_lossy(m);
        let sqy = dty.sqrt();
        let mut y = x0;
        for _ in 0..m {
            let z: S = ry.normal();
            y = (y + y * (S::one() - y) * sqy * z).max(S::zero()).min(S::one());
        }
        Ok(PathOut { cp, u, qv: pairwise_sum(&qv), pred_qv: pairwise_sum(&pred), y_end: y })
    })?;

    let mut checkpoints = Vec::with_capacity(n_cp);
    let mut mean_check = true;
    for c in 0..n_cp {
        let ps: Vec<S> = outs.iter().map(|o| o.cp[c]).collect();
        let errs: Vec<S> = outs.iter().map(|o| (o.cp[c] - o.u).abs()).collect();
        let ms = MeanStderr::from_samples(&ps);
        if (ms.mean - x0).abs() > S::lit(3.0) * ms.stderr {
            mean_check = false;
        }
        checkpoints.push(CheckpointRow {
            t: (horizon * S::from_usize_lossy(c + 1) / S::from_usize_lossy(n_cp)).as_f64(),
            mean_p: ms.mean.as_f64(),
            mean_p_stderr: ms.stderr.as_f64(),
            mean_abs_error: MeanStderr::from_samples(&errs).mean.as_f64(),
        });
    }
    let concentration_check = checkpoints.windows(2).all(|w| w[1].mean_abs_error < w[0].mean_abs_error);

    let qv = MeanStderr::from_samples(&outs.iter().map(|o| o.qv).collect::<Vec<_>>()).mean.as_f64();
    let pred = MeanStderr::from_samples(&outs.iter().map(|o| o.pred_qv).collect::<Vec<_>>()).mean.as_f64();
    let qv_rel_error = (qv - pred).abs() / pred;

    let mut potentials = Vec::new();
    let mut law_check = true;
    for j in 1..10 {
        let strike = S::lit(j as f64 / 10.0);
        let a: Vec<S> = outs.iter().map(|o| (o.cp[n_cp - 1] - strike).abs()).collect();
        let b: Vec<S> = outs.iter().map(|o| (o.y_end - strike).abs()).collect();
        let (ma, mb) = (MeanStderr::from_samples(&a), MeanStderr::from_samples(&b));
        let se = ma.combined_stderr(&mb).as_f64();
        let (pa, pb) = (ma.mean.as_f64(), mb.mean.as_f64());
        if (pa - pb).abs() > 3.0 * se {
            law_check = false;
        }
        potentials.push(PotentialCompare { strike: strike.as_f64(), posterior: pa, direct_y: pb, combined_stderr: se });
    }
    let qv_check = qv_rel_error < 0.02;
    Ok(FilteringReport {
        x0: x0.as_f64(),
        horizon: horizon.as_f64(),
        k,
        checkpoints,
        mean_check,
        realized_qv: qv,
        predicted_qv: pred,
        qv_rel_error,
        qv_check,
        potentials,
        law_check,
        concentration_check,
        pass: mean_check && qv_check && law_check && concentration_check,
    })
}
