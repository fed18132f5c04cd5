//! JSON experiment configurations, one block per subcommand.

use serde::Deserialize;
use specwass::divergence::{InnerNoise, Method};
use specwass::winmart::{solve_profile, ClosedForm, DEFAULT_NODES};
use specwass::{Boundary, MartingaleModel, VolatilityField};

use crate::CliError;

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    ScaledBm {
        c: f64,
        #[serde(default)]
        x0: f64,
    },
    Sine {
        level: f64,
        amplitude: f64,
        #[serde(default)]
        x0: f64,
    },
    ClosedForm {
        form: ClosedForm,
        x0: f64,
    },
    Optimal {
        p: f64,
        x0: f64,
    },
}

impl ModelSpec {
    pub fn is_win(&self) -> bool {
        matches!(self, Self::ClosedForm { .. } | Self::Optimal { .. })
    }

    pub fn x0(&self) -> f64 {
        match *self {
            Self::ScaledBm { x0, .. } | Self::Sine { x0, .. } | Self::ClosedForm { x0, .. } | Self::Optimal { x0, .. } => x0,
        }
    }

    pub fn field(&self) -> specwass::Result<VolatilityField<f64>> {
        Ok(match *self {
            Self::ScaledBm { c, .. } => VolatilityField::constant(c),
            Self::Sine { level, amplitude, .. } => VolatilityField::sine(level, amplitude),
            Self::ClosedForm { form, .. } => form.field(),
            Self::Optimal { p, .. } => solve_profile(p, DEFAULT_NODES)?.field(),
        })
    }

    pub fn model(&self) -> specwass::Result<MartingaleModel<f64>> {
        let field = self.field()?;
        if self.is_win() {
            MartingaleModel::new(self.x0(), field, Boundary::AbsorbingUnit)
        } else {
            Ok(MartingaleModel::on_real_line(self.x0(), field))
        }
    }
}

fn default_substeps() -> usize {
    8
}

fn default_t_cut() -> f64 {
    1.0 - 2f64.powi(-12)
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConvergeConfig {
    pub p: f64,
    pub q: ModelSpec,
    pub reference: ModelSpec,
    #[serde(rename = "N")]
    pub n: Vec<usize>,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(rename = "M_inner", default = "default_m_inner")]
    pub m_inner: usize,
    #[serde(default = "default_inner_substeps")]
    pub inner_substeps: usize,
    #[serde(default)]
    pub inner_noise: InnerNoise,
    #[serde(default = "default_fine")]
    pub fine_exponent: u32,
    #[serde(default = "default_one")]
    pub horizon: f64,
}

fn default_m_inner() -> usize {
    4096
}
fn default_inner_substeps() -> usize {
    4
}
fn default_fine() -> u32 {
    12
}
fn default_one() -> f64 {
    1.0
}

impl ConvergeConfig {
    pub fn validate(&self) -> Result<Vec<u32>, CliError> {
        positive("p", self.p)?;
        at_least("K", self.k, 1)?;
        if self.n.is_empty() {
            return Err(CliError::Config("field `N` must list at least one grid size".into()));
        }
        let mut exps = Vec::with_capacity(self.n.len());
        for &n in &self.n {
            if n < 1 || !n.is_power_of_two() {
                return Err(CliError::Config(format!("field `N`: {n} is not a power of two")));
            }
            exps.push(n.trailing_zeros());
        }
        at_least("M_inner", self.m_inner, 1)?;
        at_least("inner_substeps", self.inner_substeps, 1)?;
        if !(self.horizon > 0.0 && self.horizon <= 1.0) {
            return Err(CliError::Config(format!("field `horizon` = {} must lie in (0, 1]", self.horizon)));
        }
        Ok(exps)
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct OptimalConfig {
    pub p: f64,
    #[serde(default = "default_nodes")]
    pub n_nodes: usize,
    #[serde(default = "default_t_samples")]
    pub t_samples: Vec<f64>,
    #[serde(default = "default_x_samples")]
    pub x_samples: Vec<f64>,
    #[serde(default = "default_step")]
    pub residual_step: f64,
    #[serde(default = "default_residual_tol")]
    pub residual_tol: f64,
}

fn default_nodes() -> usize {
    DEFAULT_NODES
}
fn default_t_samples() -> Vec<f64> {
    vec![0.0, 0.25, 0.5, 0.75]
}
fn default_x_samples() -> Vec<f64> {
    (1..20).map(|j| j as f64 / 20.0).collect()
}
fn default_step() -> f64 {
    1e-3
}
fn default_residual_tol() -> f64 {
    1e-3
}

impl OptimalConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        positive("p", self.p)?;
        at_least("n_nodes", self.n_nodes, 4096)?;
        positive("residual_step", self.residual_step)?;
        for &t in &self.t_samples {
            if !(0.0..1.0).contains(&t) {
                return Err(CliError::Config(format!("field `t_samples`: {t} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct WinSpec {
    #[serde(default = "default_t_cut")]
    pub t_cut: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct SimulateConfig {
    pub model: ModelSpec,
    #[serde(rename = "K")]
    pub k: usize,
    /// Cells of the recording grid on `[0, t_end]` (or `[0, t_cut]` for win runs).
    pub n_cells: usize,
    #[serde(default = "default_one")]
    pub t_end: f64,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default)]
    pub win: Option<WinSpec>,
    #[serde(default = "default_plot_paths")]
    pub plot_paths: usize,
}

fn default_plot_paths() -> usize {
    20
}

impl SimulateConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        at_least("K", self.k, 1)?;
        at_least("n_cells", self.n_cells, 1)?;
        at_least("substeps", self.substeps, 1)?;
        positive("t_end", self.t_end)?;
        if let Some(w) = &self.win {
            if !self.model.is_win() {
                return Err(CliError::Config("field `win` needs a closed_form or optimal model".into()));
            }
            if !(w.t_cut > 0.0 && w.t_cut < 1.0) {
                return Err(CliError::Config(format!("field `win.t_cut` = {} outside (0, 1)", w.t_cut)));
            }
            if !(w.ratio > 0.0 && w.ratio < 1.0) {
                return Err(CliError::Config(format!("field `win.ratio` = {} outside (0, 1)", w.ratio)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct OptimalityBlock {
    pub p: f64,
    pub x0: f64,
    /// Defaults to `profile:<p>`.
    #[serde(default)]
    pub candidate: Option<String>,
    pub competitors: Vec<String>,
    pub ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ValueBlock {
    pub p: f64,
    pub x0: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Deserialize)]
pub struct ConvexBlock {
    pub p_list: Vec<f64>,
    pub x0: f64,
    pub times: Vec<f64>,
    pub strikes: Vec<f64>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

fn default_grid_points() -> usize {
    50
}

#[derive(Debug, Clone, Deserialize)]
pub struct FollmerBlock {
    pub model: ModelSpec,
    pub n_exponent: u32,
    #[serde(default = "default_substeps")]
    pub substeps: usize,
}

#[derive(Debug, Clone, Deserialize)]
pub struct VerifyConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_t_cut")]
    pub t_cut: f64,
    #[serde(default)]
    pub optimality: Vec<OptimalityBlock>,
    #[serde(default)]
    pub value_checks: Vec<ValueBlock>,
    #[serde(default)]
    pub convex_order: Option<ConvexBlock>,
    #[serde(default)]
    pub follmer: Option<FollmerBlock>,
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        at_least("K", self.k, 2)?;
        if !(self.t_cut > 0.0 && self.t_cut < 1.0) {
            return Err(CliError::Config(format!("field `t_cut` = {} outside (0, 1)", self.t_cut)));
        }
        for b in &self.optimality {
            positive("optimality.p", b.p)?;
            unit_open("optimality.x0", b.x0)?;
            unit_open("optimality.ratio", b.ratio)?;
        }
        for b in &self.value_checks {
            positive("value_checks.p", b.p)?;
            unit_open("value_checks.x0", b.x0)?;
            unit_open("value_checks.ratio", b.ratio)?;
        }
        if let Some(c) = &self.convex_order {
            unit_open("convex_order.x0", c.x0)?;
            at_least("convex_order.grid_points", c.grid_points, 1)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SchrodingerConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_half")]
    pub x0: f64,
    #[serde(default = "default_one")]
    pub t: f64,
    #[serde(default = "default_cells")]
    pub n_cells: usize,
    #[serde(default = "default_horizons")]
    pub horizons: Vec<f64>,
    #[serde(rename = "K_entropy", default = "default_k_entropy")]
    pub k_entropy: usize,
    #[serde(default = "default_steps_per_unit")]
    pub steps_per_unit: usize,
    #[serde(default = "default_bins")]
    pub density_bins: usize,
    #[serde(default = "default_entropy_bound")]
    pub entropy_bound: f64,
}

fn default_half() -> f64 {
    0.5
}
fn default_cells() -> usize {
    256
}
fn default_horizons() -> Vec<f64> {
    vec![5.0, 10.0, 20.0, 40.0]
}
fn default_k_entropy() -> usize {
    10_000
}
fn default_steps_per_unit() -> usize {
    256
}
fn default_bins() -> usize {
    60
}
fn default_entropy_bound() -> f64 {
    1e-2
}

impl SchrodingerConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        at_least("K", self.k, 2)?;
        at_least("K_entropy", self.k_entropy, 2)?;
        unit_open("x0", self.x0)?;
        positive("t", self.t)?;
        at_least("n_cells", self.n_cells, 1)?;
        if self.horizons.iter().any(|&h| h.is_nan() || h <= self.t) {
            return Err(CliError::Config("field `horizons`: every horizon must exceed t".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct FilterConfig {
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(default = "default_half")]
    pub x0: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_filter_steps")]
    pub steps_per_unit: usize,
    #[serde(default = "default_substeps")]
    pub y_substeps: usize,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    #[serde(default)]
    pub force_u: Option<bool>,
}

fn default_horizon() -> f64 {
    4.0
}
fn default_filter_steps() -> usize {
    100
}
fn default_checkpoints() -> usize {
    4
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        at_least("K", self.k, 2)?;
        unit_open("x0", self.x0)?;
        positive("horizon", self.horizon)?;
        at_least("steps_per_unit", self.steps_per_unit, 1)?;
        at_least("y_substeps", self.y_substeps, 1)?;
        at_least("checkpoints", self.checkpoints, 1)?;
        Ok(())
    }
}

fn positive(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("field `{name}` = {v} must be positive")))
    }
}

fn unit_open(name: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!("field `{name}` = {v} must lie in (0, 1)")))
    }
}

fn at_least(name: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(CliError::Config(format!("field `{name}` = {v} must be at least {min}")))
    }
}
