//! Euler–Maruyama simulation of `dX = σ(t, X) dB`.
//!
//! Paths are driven one at a time through a precomputed substep [`Schedule`];
//! path `k` draws from `derive_stream(seed, k)`, so ensembles do not depend on
//! the worker count. Auxiliary randomness (terminal snaps, mixture labels) comes
//! from separate sub-seeded streams so that the Brownian increments of path `k`
//! are shared between any two models simulated with the same seed and schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::PathEnsemble;
use crate::error::{domain, Error, Result};
use crate::field::{MartingaleModel, VolatilityField};
use crate::grid::TimeGrid;
use crate::rng::{derive_stream, sub_seed, RngStream};
use crate::scalar::Scalar;
use crate::wasserstein::EmpiricalDist;

const SNAP_TAG: u64 = 0x736e_6170;
const MIXTURE_TAG: u64 = 0x006d_6978;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", bound = "")]
pub enum StepRule<S: Scalar = f64> {
    /// `substeps_per_cell` equal substeps per grid cell.
    Uniform,
    /// Substeps with `(1 - t_{j+1}) / (1 - t_j)` constant and at least `ratio`,
    /// i.e. uniform steps in the clock `r = -2 log(1 - t)`.
    Geometric { ratio: S },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalRule {
    None,
    /// Replace the state at `t = 1` by a Bernoulli draw with the `t_cut` state as mean.
    BernoulliSnap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct SimConfig<S: Scalar = f64> {
    pub substeps_per_cell: usize,
    pub step_rule: StepRule<S>,
    /// Last simulated time for fields singular at `t = 1`.
    pub t_cut: S,
    pub terminal_rule: TerminalRule,
    /// Worker threads; `0` means one per core. Never affects results.
    #[serde(default)]
    pub workers: usize,
}

impl<S: Scalar> Default for SimConfig<S> {
    fn default() -> Self {
        Self {
            substeps_per_cell: 8,
            step_rule: StepRule::Uniform,
            t_cut: S::one() - S::lit(2f64.powi(-12)),
            terminal_rule: TerminalRule::None,
            workers: 1,
        }
    }
}

impl<S: Scalar> SimConfig<S> {
    /// Configuration for win-martingales: geometric steps up to `t_cut`, then a
    /// Bernoulli snap.
    pub fn win(t_cut: S, ratio: S, substeps_per_cell: usize) -> Self {
        Self {
            substeps_per_cell,
            step_rule: StepRule::Geometric { ratio },
            t_cut,
            terminal_rule: TerminalRule::BernoulliSnap,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps_per_cell == 0 {
            return Err(domain("substeps_per_cell must be positive"));
        }
        if let StepRule::Geometric { ratio } = self.step_rule {
            if !(ratio > S::zero() && ratio < S::one()) {
                return Err(domain(format!("geometric ratio {ratio} outside (0, 1)")));
            }
        }
        if !(self.t_cut > S::zero() && self.t_cut < S::one()) {
            return Err(domain(format!("t_cut = {} outside (0, 1)", self.t_cut)));
        }
        Ok(())
    }
}

/// Substep times for a grid: `times[node[i]]` is grid point `i`.
#[derive(Debug, Clone)]
pub struct Schedule<S: Scalar = f64> {
    pub times: Vec<S>,
    pub node: Vec<usize>,
}

impl<S: Scalar> Schedule<S> {
    pub fn new(grid: &TimeGrid<S>, cfg: &SimConfig<S>) -> Result<Self> {
        cfg.validate()?;
        let pts = grid.points();
        let mut times = vec![pts[0]];
        let mut node = vec![0usize];
        for w in pts.windows(2) {
            let (a, b) = (w[0], w[1]);
            match cfg.step_rule {
                StepRule::Uniform => {
                    let m = cfg.substeps_per_cell;
                    let mf = S::from_usize_lossy(m);
                    for j in 1..m {
                        times.push(a + (b - a) * S::from_usize_lossy(j) / mf);
                    }
                }
                StepRule::Geometric { ratio } => {
                    if b >= S::one() {
                        return Err(domain("geometric stepping needs grid points below 1"));
                    }
                    let shrink = (S::one() - b) / (S::one() - a);
                    let needed = (shrink.ln() / ratio.ln()).ceil().to_usize().unwrap_or(1);
                    let m = cfg.substeps_per_cell.max(needed).max(1);
                    let mf = S::from_usize_lossy(m);
                    for j in 1..m {
                        let frac = S::from_usize_lossy(j) / mf;
                        times.push(S::one() - (S::one() - a) * shrink.powf(frac));
                    }
                }
            }
            times.push(b);
            node.push(times.len() - 1);
        }
        Ok(Self { times, node })
    }

    pub fn n_substeps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Hooks called while a path is driven.
pub trait Observer<S> {
    /// Called before each Euler substep with the left-point state and volatility.
    fn step(&mut self, _t: S, _dt: S, _x: S, _sigma: S) {}
    /// Called at every grid node with the state there.
    fn node(&mut self, _i: usize, _x: S) {}
}

impl<S> Observer<S> for () {}

/// Drives one path from `x0` through `sched`. Returns the final state.
pub fn drive_path<S: Scalar, O: Observer<S>>(
    model: &MartingaleModel<S>,
    sched: &Schedule<S>,
    rng: &mut RngStream,
    obs: &mut O,
) -> Result<S> {
    let vol = &model.vol;
    let mut x = model.x0;
    let mut next_node = 0usize;
    for j in 0..sched.times.len() {
        if sched.node[next_node] == j {
            obs.node(next_node, x);
            next_node += 1;
            if next_node == sched.node.len() {
                break;
            }
        }
        if model.is_absorbed(x) {
            continue;
        }
        let t = sched.times[j];
        let dt = sched.times[j + 1] - t;
        let sigma = vol.eval(t, x);
        if !(sigma >= S::zero() && sigma.is_finite()) {
            return Err(Error::Domain(format!("{}: σ({t}, {x}) = {sigma}", vol.name())));
        }
        obs.step(t, dt, x, sigma);
        if sigma > S::zero() {
            let z: S = rng.normal();
            x = model.project(x + sigma * dt.sqrt() * z);
        }
    }
    Ok(x)
}

/// Runs `f(k)` for `k in 0..n` on `workers` threads, results in index order.
pub fn par_map<T, F>(n: usize, workers: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if workers == 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Numeric { routine: "par_map", detail: e.to_string() })?;
    pool.install(|| (0..n).into_par_iter().map(&f).collect())
}

/// Checks that a grid can be simulated for the given field and config.
pub fn check_grid<S: Scalar>(vol: &VolatilityField<S>, grid: &TimeGrid<S>, cfg: &SimConfig<S>) -> Result<()> {
    let td = vol.time_domain;
    if grid.t_start() < td.lo || grid.t_end() > td.hi {
        return Err(domain(format!(
            "grid [{}, {}] outside time domain of {}",
            grid.t_start(),
            grid.t_end(),
            vol.name()
        )));
    }
    if vol.regularity.singular_at_end && grid.t_end() > cfg.t_cut {
        return Err(domain(format!(
            "{} is singular at t = {}; grid must stop at t_cut = {}",
            vol.name(),
            td.hi,
            cfg.t_cut
        )));
    }
    Ok(())
}

struct Recorder<'a, S> {
    states: &'a mut [S],
    qv: &'a mut [S],
    acc: S,
}

impl<S: Scalar> Observer<S> for Recorder<'_, S> {
    fn step(&mut self, _t: S, dt: S, _x: S, sigma: S) {
        self.acc = self.acc + sigma * sigma * dt;
    }
    fn node(&mut self, i: usize, x: S) {
        self.states[i] = x;
        if i > 0 {
            self.qv[i - 1] = self.acc;
            self.acc = S::zero();
        }
    }
}

/// Simulates one path and returns `(states, realized_qv)`.
fn record_path<S: Scalar>(
    model: &MartingaleModel<S>,
    sched: &Schedule<S>,
    n_points: usize,
    rng: &mut RngStream,
) -> Result<(Vec<S>, Vec<S>)> {
    let mut states = vec![S::zero(); n_points];
    let mut qv = vec![S::zero(); n_points - 1];
    let mut rec = Recorder { states: &mut states, qv: &mut qv, acc: S::zero() };
    drive_path(model, sched, rng, &mut rec)?;
    Ok((states, qv))
}

fn assemble<S: Scalar>(
    grid: TimeGrid<S>,
    rows: Vec<(Vec<S>, Vec<S>)>,
    model_tag: String,
    seed: u64,
) -> PathEnsemble<S> {
    let n_paths = rows.len();
    let mut states = Vec::with_capacity(n_paths * grid.points().len());
    let mut realized_qv = Vec::with_capacity(n_paths * grid.n_cells());
    for (s, q) in rows {
        states.extend(s);
        realized_qv.extend(q);
    }
    PathEnsemble { grid, states, realized_qv, n_paths, model_tag, master_seed: seed }
}

/// `K` Euler–Maruyama paths of `model` recorded on `grid`.
pub fn simulate<S: Scalar>(
    model: &MartingaleModel<S>,
    grid: &TimeGrid<S>,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<PathEnsemble<S>> {
    if k == 0 {
        return Err(domain("K must be at least 1"));
    }
    check_grid(&model.vol, grid, cfg)?;
    if !model.state_domain().contains(model.x0) {
        return Err(domain(format!("x0 = {} outside the state domain", model.x0)));
    }
    let sched = Schedule::new(grid, cfg)?;
    let n_points = grid.points().len();
    let rows = par_map(k, cfg.workers, |i| {
        let mut rng = derive_stream(seed, i as u64);
        record_path(model, &sched, n_points, &mut rng)
    })?;
    Ok(assemble(grid.clone(), rows, model.vol.name().to_string(), seed))
}

/// Mixture `Σ w_j Law(model_j)`: each path picks its component from a
/// separate label stream, then runs on the usual path stream.
pub fn simulate_mixture<S: Scalar>(
    models: &[(S, MartingaleModel<S>)],
    grid: &TimeGrid<S>,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<PathEnsemble<S>> {
    if models.is_empty() || k == 0 {
        return Err(domain("mixture needs at least one component and K >= 1"));
    }
    let total: S = models.iter().map(|m| m.0).sum();
    if models.iter().any(|m| !(m.0 >= S::zero())) || !(total > S::zero()) {
        return Err(domain("mixture weights must be nonnegative with positive sum"));
    }
    for (_, m) in models {
        check_grid(&m.vol, grid, cfg)?;
    }
    let sched = Schedule::new(grid, cfg)?;
    let n_points = grid.points().len();
    let label_seed = sub_seed(seed, MIXTURE_TAG);
    let rows = par_map(k, cfg.workers, |i| {
        let u: S = derive_stream(label_seed, i as u64).uniform::<S>() * total;
        let mut acc = S::zero();
        let mut pick = models.len() - 1;
        for (j, (w, _)) in models.iter().enumerate() {
            acc = acc + *w;
            if u < acc {
                pick = j;
                break;
            }
        }
        let mut rng = derive_stream(seed, i as u64);
        record_path(&models[pick].1, &sched, n_points, &mut rng)
    })?;
    let tag = models.iter().map(|m| m.1.vol.name().to_string()).collect::<Vec<_>>().join("|");
    Ok(assemble(grid.clone(), rows, format!("mixture({tag})"), seed))
}

/// Win-martingale with volatility `field` from `x0`, simulated to `cfg.t_cut`
/// (which must be the last grid point) and snapped to `{0, 1}` at `t = 1`.
///
/// The snap is exact in law: given the state at `t_cut`, the terminal value of
/// a win-martingale is Bernoulli with that mean. The last cell's `realized_qv`
/// is the conditional expected squared jump `M(1 - M)`.
pub fn simulate_win_field<S: Scalar>(
    field: &VolatilityField<S>,
    x0: S,
    grid: &TimeGrid<S>,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<PathEnsemble<S>> {
    if !(x0 > S::zero() && x0 < S::one()) {
        return Err(domain(format!("x0 = {x0} outside (0, 1)")));
    }
    if cfg.terminal_rule != TerminalRule::BernoulliSnap {
        return Err(domain("win simulation needs terminal_rule = bernoulli_snap"));
    }
    cfg.validate()?;
    if grid.t_end() != cfg.t_cut {
        return Err(domain(format!("grid must end at t_cut = {}, ends at {}", cfg.t_cut, grid.t_end())));
    }
    let model = MartingaleModel::new(x0, field.clone(), crate::field::Boundary::AbsorbingUnit)?;
    let inner = simulate(&model, grid, k, seed, cfg)?;
    let full_grid = grid.with_endpoint(S::one())?;
    let w = grid.points().len();
    let snap_seed = sub_seed(seed, SNAP_TAG);
    let mut states = Vec::with_capacity(k * (w + 1));
    let mut qv = Vec::with_capacity(k * w);
    for i in 0..k {
        let path = inner.path(i);
        let m = path[w - 1];
        let up = derive_stream(snap_seed, i as u64).bernoulli(m);
        states.extend_from_slice(path);
        states.push(if up { S::one() } else { S::zero() });
        qv.extend_from_slice(inner.path_qv(i));
        qv.push(m * (S::one() - m));
    }
    Ok(PathEnsemble {
        grid: full_grid,
        states,
        realized_qv: qv,
        n_paths: k,
        model_tag: inner.model_tag,
        master_seed: seed,
    })
}

/// The optimal win-martingale for exponent `p`; see [`simulate_win_field`].
pub fn simulate_win<S: Scalar>(
    p: S,
    x0: S,
    profile: &crate::winmart::OptimalProfile<S>,
    grid: &TimeGrid<S>,
    k: usize,
    seed: u64,
    cfg: &SimConfig<S>,
) -> Result<PathEnsemble<S>> {
    if !(p > S::zero()) {
        return Err(domain(format!("p = {p} must be positive")));
    }
    if (p - profile.p).abs() > S::lit(1e-12) * p.max(S::one()) {
        return Err(domain(format!("profile was built for p = {}, not {p}", profile.p)));
    }
    simulate_win_field(&profile.field(), x0, grid, k, seed, cfg)
}

/// `M` samples of `X_{t1}` given `X_{t0} = x`, each from `substeps` Euler steps.
#[allow(clippy::too_many_arguments)]
pub fn sample_one_step<S: Scalar>(
    model: &MartingaleModel<S>,
    t0: S,
    t1: S,
    x: S,
    m: usize,
    substeps: usize,
    rng: &mut RngStream,
) -> Result<EmpiricalDist<S>> {
    EmpiricalDist::uniform(sample_one_step_raw(model, t0, t1, x, m, substeps, rng)?)
}

/// [`sample_one_step`] returning the raw samples.
pub fn sample_one_step_raw<S: Scalar>(
    model: &MartingaleModel<S>,
    t0: S,
    t1: S,
    x: S,
    m: usize,
    substeps: usize,
    rng: &mut RngStream,
) -> Result<Vec<S>> {
    if !model.vol.regularity.markov {
        return Err(Error::Unsupported(format!("{} is not Markov", model.vol.name())));
    }
    if !(t0 < t1) || m == 0 || substeps == 0 {
        return Err(domain("need t0 < t1, M >= 1 and substeps >= 1"));
    }
    let dt = (t1 - t0) / S::from_usize_lossy(substeps);
    let sq = dt.sqrt();
    let mut out = Vec::with_capacity(m);
    for _ in 0..m {
        let mut y = x;
        for j in 0..substeps {
            if model.is_absorbed(y) {
                break;
            }
            let t = t0 + dt * S::from_usize_lossy(j);
            let s = model.vol.eval(t, y);
            if !(s >= S::zero() && s.is_finite()) {
                return Err(Error::Domain(format!("{}: σ({t}, {y}) = {s}", model.vol.name())));
            }
            if s > S::zero() {
                let z: S = rng.normal();
                y = model.project(y + s * sq * z);
            }
        }
        out.push(y);
    }
    Ok(out)
}

/// `r = -2 log(1 - t)`.
pub fn t_to_r<S: Scalar>(t: S) -> Result<S> {
    if !(t >= S::zero() && t < S::one()) {
        return Err(domain(format!("t = {t} outside [0, 1)")));
    }
    Ok(-S::lit(2.0) * (-t).ln_1p())
}

/// `t = 1 - exp(-r / 2)`.
pub fn r_to_t<S: Scalar>(r: S) -> S {
    -(-r / S::lit(2.0)).exp_m1()
}

/// Ensemble relabelled on the clock `r = -2 log(1 - t)`.
#[derive(Debug, Clone)]
pub struct RClockEnsemble<S: Scalar = f64> {
    pub r_points: Vec<S>,
    pub states: Vec<S>,
    pub n_paths: usize,
}

impl<S: Scalar> RClockEnsemble<S> {
    pub fn path(&self, k: usize) -> &[S] {
        let w = self.r_points.len();
        &self.states[k * w..(k + 1) * w]
    }

    pub fn column(&self, i: usize) -> Vec<S> {
        (0..self.n_paths).map(|k| self.path(k)[i]).collect()
    }
}

pub fn time_change_to_infinite_horizon<S: Scalar>(e: &PathEnsemble<S>) -> Result<RClockEnsemble<S>> {
    let r_points = e.grid.points().iter().map(|&t| t_to_r(t)).collect::<Result<Vec<_>>>()?;
    Ok(RClockEnsemble { r_points, states: e.states.clone(), n_paths: e.n_paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::MeanStderr;

    #[test]
    fn constant_martingale_stays_put() {
        let m = MartingaleModel::scaled_bm(0.7f64, 0.0);
        let g = TimeGrid::dyadic(0.0, 1.0, 3).unwrap();
        let e = simulate(&m, &g, 5, 1, &SimConfig::default()).unwrap();
        assert!(e.states.iter().all(|&x| x == 0.7));
        assert!(e.realized_qv.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn linear_scaling_with_shared_noise() {
        let g = TimeGrid::dyadic(0.0, 1.0, 4).unwrap();
        let cfg = SimConfig::default();
        let a = simulate(&MartingaleModel::scaled_bm(0.0f64, 2.0), &g, 20, 9, &cfg).unwrap();
        let b = simulate(&MartingaleModel::scaled_bm(0.0f64, 1.0), &g, 20, 9, &cfg).unwrap();
        for (x, y) in a.states.iter().zip(&b.states) {
            assert_eq!(*x, 2.0 * y);
        }
    }

    #[test]
    fn geometric_schedule_respects_ratio() {
        let g = TimeGrid::uniform(0.0, 1.0 - 2f64.powi(-10), 4).unwrap();
        let cfg = SimConfig::win(1.0 - 2f64.powi(-10), 0.9, 2);
        let s = Schedule::new(&g, &cfg).unwrap();
        for w in s.times.windows(2) {
            assert!(w[0] < w[1]);
            assert!((1.0 - w[1]) / (1.0 - w[0]) >= 0.9 - 1e-12);
        }
        assert_eq!(s.node.len(), 5);
        assert_eq!(s.times[*s.node.last().unwrap()], g.t_end());
    }

    #[test]
    fn one_step_samples() {
        let m = MartingaleModel::scaled_bm(0.3f64, 0.0);
        let mut rng = derive_stream(1, 0);
        let s = sample_one_step_raw(&m, 0.0, 0.5, 0.3, 10, 4, &mut rng).unwrap();
        assert!(s.iter().all(|&x| x == 0.3));

        let c = 1.7;
        let h = 0.01;
        let m = MartingaleModel::scaled_bm(0.0f64, c);
        let s = sample_one_step_raw(&m, 0.2, 0.2 + h, 0.0, 100_000, 2, &mut rng).unwrap();
        let ms = MeanStderr::from_samples(&s);
        assert!(ms.mean.abs() < 3.0 * (c * c * h / 1e5).sqrt());
        let var = s.iter().map(|x| x * x).sum::<f64>() / s.len() as f64;
        assert!((var / (c * c * h) - 1.0).abs() < 0.05);
    }

    #[test]
    fn non_markov_rejected_by_one_step() {
        let mut f = VolatilityField::constant(1.0f64);
        f.regularity.markov = false;
        let m = MartingaleModel::on_real_line(0.0, f);
        let mut rng = derive_stream(1, 0);
        assert!(matches!(
            sample_one_step(&m, 0.0, 0.1, 0.0, 3, 1, &mut rng),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn clock_examples() {
        assert_eq!(t_to_r(0.0f64).unwrap(), 0.0);
        let t = 1.0 - (-0.5f64).exp();
        assert!((t_to_r(t).unwrap() - 1.0).abs() < 1e-15);
        assert!((t_to_r(0.75f64).unwrap() - 2.772_588_722_239_781).abs() < 1e-12);
        assert!(t_to_r(1.0f64).is_err());
        assert!((r_to_t(1.0f64) - t).abs() < 1e-16);
    }

    #[test]
    fn worker_count_does_not_change_paths() {
        let f = VolatilityField::sine(1.5f64, 0.5);
        let m = MartingaleModel::on_real_line(0.0, f);
        let g = TimeGrid::dyadic(0.0, 1.0, 3).unwrap();
        let a = simulate(&m, &g, 64, 4, &SimConfig::default()).unwrap();
        let b = simulate(&m, &g, 64, 4, &SimConfig::default().with_workers(3)).unwrap();
        assert_eq!(a.to_binary(), b.to_binary());
    }
}
