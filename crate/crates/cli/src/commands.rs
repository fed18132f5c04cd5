use serde::Serialize;
use serde_json::json;
use specwass::divergence::{convergence_table, follmer_chain_check, EstimatorOptions, Method, NestedOptions};
use specwass::ensemble::PathEnsemble;
use specwass::quad::integrate;
use specwass::scalar::{gaussian_pdf, MeanStderr};
use specwass::schrodinger::{
    density_c, entropy_gap_table, filtering_experiment, logit, logit_change_check, simulate_p_half_y_clock,
    write_density_csv, FilteringOptions, PathOptions,
};
use specwass::sde::{self, simulate_win_field, SimConfig};
use specwass::winmart::{
    convex_order_check, mc_value_check, optimality_comparison_for, residual_table, solve_profile, Competitor,
    DEFAULT_NODES,
};
use specwass::TimeGrid;

use crate::config::*;
use crate::output::gnuplot;
use crate::{CliError, Context};

/// Stable labels naming the statement each check exercises.
mod anchor {
    pub const GAUSSIAN_EXACTNESS: &str = "gaussian-exactness-of-scaled-divergence";
    pub const SCALING_LIMIT: &str = "scaling-limit-of-discrete-divergence";
    pub const CONSTANTS: &str = "profile-ode-and-constant-c_p";
    pub const PMD: &str = "porous-media-equation-for-sigma-power";
    pub const HJB: &str = "hjb-equation-for-value-function";
    pub const VERIFICATION: &str = "verification-of-optimality";
    pub const VALUE: &str = "value-function-representation";
    pub const CONVEX_ORDER: &str = "convex-order-of-optimizers";
    pub const FOLLMER: &str = "entropy-vs-adapted-wasserstein-chain";
    pub const TERMINAL: &str = "win-martingale-terminal-law";
    pub const LOGIT_DENSITY: &str = "logit-density-by-girsanov";
    pub const MIXTURE: &str = "two-drift-mixture-marginals";
    pub const BRIDGE: &str = "bridge-entropy-convergence";
    pub const FILTERING: &str = "bernoulli-drift-filter-representation";
}

#[derive(Serialize)]
struct Check {
    name: String,
    anchor: &'static str,
    pass: bool,
    detail: serde_json::Value,
}

#[derive(Default)]
struct Checks(Vec<Check>);

impl Checks {
    fn add(&mut self, name: impl Into<String>, anchor: &'static str, pass: bool, detail: serde_json::Value) {
        self.0.push(Check { name: name.into(), anchor, pass, detail });
    }

    fn failures(&self) -> Vec<String> {
        self.0.iter().filter(|c| !c.pass).map(|c| c.name.clone()).collect()
    }

    fn finish(self, ctx: &Context, file: &str, report: serde_json::Value) -> Result<(), CliError> {
        let failures = self.failures();
        let mut doc = report;
        doc["checks"] = serde_json::to_value(&self.0)?;
        doc["failures"] = json!(failures);
        ctx.out.json(file, &doc)?;
        if failures.is_empty() {
            Ok(())
        } else {
            Err(CliError::Failed(failures))
        }
    }
}

pub fn converge(cfg: ConvergeConfig, ctx: &Context) -> Result<(), CliError> {
    let exps = cfg.validate()?;
    let q = cfg.q.model()?;
    let pm = cfg.reference.model()?;
    let method = cfg.method.unwrap_or(Method::Surrogate);
    let opts = EstimatorOptions {
        fine_exponent: cfg.fine_exponent,
        substeps_per_cell: 1,
        horizon: cfg.horizon,
        workers: ctx.workers,
    };
    let nested = NestedOptions { m_inner: cfg.m_inner, inner_substeps: cfg.inner_substeps, noise: cfg.inner_noise };
    let report = convergence_table(&q, &pm, cfg.p, &exps, cfg.k, ctx.seed, method, &nested, &opts)?;

    ctx.out.with("divergence.csv", |w| report.write_csv(w))?;
    let mut dat = String::from("# N scaled_value stderr target\n");
    for r in &report.rows {
        dat.push_str(&format!("{} {:.17e} {:.17e} {:.17e}\n", r.n, r.scaled_value, r.stderr, report.target));
    }
    let data = ctx.out.text("converge.dat", &dat)?;
    ctx.out.text(
        "converge.gp",
        &gnuplot(
            &data,
            &format!("scaled divergence, p = {}", report.p),
            "N",
            "N^{p/2-1} D^{N,p}",
            "plot datafile using 1:2:3 with yerrorbars title \"estimate\", datafile using 1:4 with lines title \"limit\"",
            true,
        ),
    )?;

    let mut checks = Checks::default();
    checks.add(
        "rel_error_non_increasing",
        anchor::SCALING_LIMIT,
        report.rel_error_non_increasing(),
        json!(report.rows.iter().map(|r| r.rel_error).collect::<Vec<_>>()),
    );
    if let (ModelSpec::ScaledBm { c: a, .. }, ModelSpec::ScaledBm { c: b, .. }) = (&cfg.q, &cfg.reference) {
        if method == Method::Surrogate {
            // Conditional laws are exactly Gaussian, so every row equals the limit.
            let exact = (2.0 / std::f64::consts::PI).powf(cfg.p / 2.0) * (a.abs() - b.abs()).abs().powf(cfg.p) * cfg.horizon;
            let worst = report.rows.iter().map(|r| (r.scaled_value - exact).abs()).fold(0.0, f64::max);
            checks.add("gaussian_exactness", anchor::GAUSSIAN_EXACTNESS, worst < 1e-12 * exact.max(1.0), json!(worst));
        }
    }
    checks.finish(ctx, "divergence.json", json!({ "command": "converge", "report": report }))
}

pub fn optimal(cfg: OptimalConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.validate()?;
    let profile = solve_profile(cfg.p, cfg.n_nodes)?;
    ctx.out.with("profile.csv", |w| profile.write_csv(w))?;
    let mut samples = Vec::new();
    for &t in &cfg.t_samples {
        for &x in &cfg.x_samples {
            samples.push(json!({ "t": t, "x": x, "sigma": profile.sigma_bar(t, x)? }));
        }
    }
    let (ts, xs) = specwass::winmart::residual_grid();
    let rows = residual_table(&profile, &ts, &xs, cfg.residual_step)?;
    let mut csv = String::from("t,x,pmd,hjb,extremizer_gap\n");
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.17e}")).unwrap_or_default();
    for r in &rows {
        csv.push_str(&format!("{},{},{:.17e},{},{}\n", r.t, r.x, r.pmd, opt(r.hjb), opt(r.extremizer_gap)));
    }
    ctx.out.text("residuals.csv", &csv)?;
    let max_pmd = rows.iter().map(|r| r.pmd.abs()).fold(0.0, f64::max);
    let max_hjb = rows.iter().filter_map(|r| r.hjb).map(f64::abs).fold(0.0, f64::max);

    let mut checks = Checks::default();
    checks.add("constant_c_p", anchor::CONSTANTS, profile.c_p.is_finite() && profile.c_p > 0.0, json!(profile.c_p));
    checks.add("pmd_residual", anchor::PMD, max_pmd < cfg.residual_tol, json!(max_pmd));
    if rows.iter().any(|r| r.hjb.is_some()) {
        checks.add("hjb_residual", anchor::HJB, max_hjb < cfg.residual_tol, json!(max_hjb));
    }
    checks.finish(
        ctx,
        "profile.json",
        json!({ "command": "optimal", "header": profile.header(), "sigma_samples": samples }),
    )
}

fn run_simulation(cfg: &SimulateConfig, ctx: &Context) -> Result<PathEnsemble<f64>, CliError> {
    let seed = ctx.seed;
    match &cfg.win {
        Some(w) => {
            let grid = TimeGrid::uniform(0.0, w.t_cut, cfg.n_cells)?;
            let sc = SimConfig::win(w.t_cut, w.ratio, cfg.substeps).with_workers(ctx.workers);
            Ok(simulate_win_field(&cfg.model.field()?, cfg.model.x0(), &grid, cfg.k, seed, &sc)?)
        }
        None => {
            let grid = TimeGrid::uniform(0.0, cfg.t_end, cfg.n_cells)?;
            let sc = SimConfig { substeps_per_cell: cfg.substeps, workers: ctx.workers, ..SimConfig::default() };
            Ok(sde::simulate(&cfg.model.model()?, &grid, cfg.k, seed, &sc)?)
        }
    }
}

pub fn simulate(cfg: SimulateConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.validate()?;
    let ens = run_simulation(&cfg, ctx)?;
    let bytes = ens.to_binary();
    let path = ctx.out.bytes("ensemble.bin", &bytes)?;
    let reloaded = PathEnsemble::<f64>::read_binary(std::fs::File::open(&path)?)?;
    // The layout carries the arrays only, not the tag or seed.
    let round_trip = reloaded.grid == ens.grid
        && reloaded.states == ens.states
        && reloaded.realized_qv == ens.realized_qv
        && reloaded.n_paths == ens.n_paths;

    // Path-sample data for plotting: one column per path.
    let shown = cfg.plot_paths.min(ens.n_paths);
    let mut dat = String::from("# t");
    for k in 0..shown {
        dat.push_str(&format!(" path{k}"));
    }
    dat.push('\n');
    for (i, t) in ens.grid.points().iter().enumerate() {
        dat.push_str(&format!("{t:.17e}"));
        for k in 0..shown {
            dat.push_str(&format!(" {:.17e}", ens.path(k)[i]));
        }
        dat.push('\n');
    }
    let data = ctx.out.text("paths.dat", &dat)?;
    let plot = format!("plot for [i=2:{}] datafile using 1:i with lines notitle", shown + 1);
    ctx.out.text("paths.gp", &gnuplot(&data, &format!("sample paths of {}", ens.model_tag), "t", "X_t", &plot, false))?;

    let last = ens.column(ens.n_points() - 1);
    let terminal = MeanStderr::from_samples(&last);
    let mut checks = Checks::default();
    checks.add("round_trip", anchor::TERMINAL, round_trip, json!(bytes.len()));
    let mut report = json!({
        "command": "simulate",
        "model_tag": ens.model_tag,
        "K": ens.n_paths,
        "n_points": ens.n_points(),
        "terminal_mean": terminal.mean,
        "terminal_stderr": terminal.stderr,
    });
    if cfg.win.is_some() {
        let x0 = cfg.model.x0();
        let binary = last.iter().all(|&v| v == 0.0 || v == 1.0);
        let band = 3.0 * (x0 * (1.0 - x0) / ens.n_paths as f64).sqrt();
        checks.add("terminal_values_binary", anchor::TERMINAL, binary, json!(binary));
        checks.add("terminal_mean", anchor::TERMINAL, (terminal.mean - x0).abs() < band, json!({ "band": band }));
        report["x0"] = json!(x0);
    }
    checks.finish(ctx, "simulate.json", report)
}

fn parse_competitor(s: &str) -> Result<Competitor, CliError> {
    s.parse().map_err(|e: specwass::Error| CliError::Config(format!("competitor '{s}': {e}")))
}

pub fn verify(cfg: VerifyConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.validate()?;
    // Parse every label before any simulation starts.
    let mut parsed = Vec::with_capacity(cfg.optimality.len());
    for b in &cfg.optimality {
        let cand = match &b.candidate {
            Some(c) => parse_competitor(c)?,
            None => Competitor::Profile { p: b.p },
        };
        let comps = b.competitors.iter().map(|s| parse_competitor(s)).collect::<Result<Vec<_>, _>>()?;
        parsed.push((cand, comps));
    }
    let mut checks = Checks::default();
    let mut reports = serde_json::Map::new();

    let mut opt_reports = Vec::new();
    for (b, (cand, comps)) in cfg.optimality.iter().zip(&parsed) {
        let sc = SimConfig::win(cfg.t_cut, b.ratio, 8).with_workers(ctx.workers);
        let r = optimality_comparison_for(b.p, b.x0, cand, comps, cfg.k, &sc, ctx.seed)?;
        let margins: Vec<_> = r.rows.iter().map(|row| json!({ "competitor": row.label, "diff": row.diff, "combined_stderr": row.combined_stderr })).collect();
        checks.add(format!("optimality(p={}, candidate={})", b.p, r.candidate), anchor::VERIFICATION, r.pass, json!(margins));
        opt_reports.push(r);
    }
    reports.insert("optimality".into(), serde_json::to_value(&opt_reports)?);

    let mut value_reports = Vec::new();
    for b in &cfg.value_checks {
        let profile = solve_profile(b.p, DEFAULT_NODES)?;
        let sc = SimConfig::win(cfg.t_cut, b.ratio, 8).with_workers(ctx.workers);
        let v = mc_value_check(&profile, 0.0, b.x0, cfg.k, &sc, ctx.seed)?;
        checks.add(format!("value(p={}, x0={})", b.p, b.x0), anchor::VALUE, v.pass, json!({ "z_score": v.z_score }));
        value_reports.push(v);
    }
    reports.insert("value_checks".into(), serde_json::to_value(&value_reports)?);

    if let Some(c) = &cfg.convex_order {
        let n = c.grid_points;
        let t_grid: Vec<f64> = (0..n).map(|i| 0.9 * (i + 1) as f64 / (n + 1) as f64).collect();
        let x_grid: Vec<f64> = (0..n).map(|j| (j + 1) as f64 / (n + 1) as f64).collect();
        let sc = SimConfig { substeps_per_cell: c.substeps, t_cut: cfg.t_cut, workers: ctx.workers, ..SimConfig::default() };
        let r = convex_order_check(&c.p_list, c.x0, &t_grid, &x_grid, &c.times, &c.strikes, cfg.k, &sc, ctx.seed)?;
        checks.add(
            "convex_order",
            anchor::CONVEX_ORDER,
            r.pass,
            json!({ "pointwise_violations": r.pointwise_violations, "sigma_at_center": r.sigma_at_center }),
        );
        reports.insert("convex_order".into(), serde_json::to_value(&r)?);
    }

    if let Some(f) = &cfg.follmer {
        let grid = TimeGrid::dyadic(0.0, 1.0, f.n_exponent)?;
        let sc = SimConfig { substeps_per_cell: f.substeps, workers: ctx.workers, ..SimConfig::default() };
        let r = follmer_chain_check(&f.model.model()?, cfg.k, &grid, ctx.seed, &sc)?;
        checks.add(
            "follmer_chain",
            anchor::FOLLMER,
            r.inequality_holds,
            json!({ "margin": r.margin, "margin_stderr": r.margin_stderr, "strict": r.strict_margin }),
        );
        reports.insert("follmer".into(), serde_json::to_value(&r)?);
    }

    let mut doc = json!({ "command": "verify" });
    doc["reports"] = serde_json::Value::Object(reports);
    checks.finish(ctx, "verify.json", doc)
}

pub fn schrodinger(cfg: SchrodingerConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.validate()?;
    let mut checks = Checks::default();
    let c0 = logit(cfg.x0);
    let t = cfg.t;

    let l = 30.0 * t.sqrt() + t;
    let mass = integrate(|z| density_c(t, z, c0).unwrap_or(f64::NAN), c0 - l, c0 + l, 1e-13)?;
    checks.add("density_normalization", anchor::LOGIT_DENSITY, (mass - 1.0).abs() < 1e-8, json!(mass));
    if c0 == 0.0 {
        let mut worst: f64 = 0.0;
        for i in -40..=40 {
            let z = i as f64 * 0.2;
            let mix = 0.5 * (gaussian_pdf(z, t / 2.0, t) + gaussian_pdf(z, -t / 2.0, t));
            worst = worst.max((density_c(t, z, 0.0)? - mix).abs());
        }
        checks.add("mixture_identity", anchor::MIXTURE, worst < 1e-12, json!(worst));
    }

    let sc = SimConfig { workers: ctx.workers, ..SimConfig::default() };
    let ens = simulate_p_half_y_clock(cfg.x0, t, cfg.n_cells, cfg.k, ctx.seed, &sc)?;
    let lr = logit_change_check(&ens, cfg.x0, cfg.density_bins)?;
    checks.add("logit_ks", anchor::LOGIT_DENSITY, lr.ks_pass, json!({ "ks": lr.ks_distance, "band": lr.ks_band }));
    checks.add("logit_qv", anchor::LOGIT_DENSITY, lr.qv_pass, json!(lr.qv_rel_error));
    checks.add("y_martingale", anchor::LOGIT_DENSITY, lr.martingale_pass, json!(lr.mean_y));
    ctx.out.with("density.csv", |w| write_density_csv(&lr.density, w))?;
    let dpath = ctx.out.path("density.dat");
    let mut dat = String::from("# z model_density empirical_density\n");
    for r in &lr.density {
        dat.push_str(&format!("{:.17e} {:.17e} {:.17e}\n", r.z, r.model_density, r.empirical_density));
    }
    ctx.out.text("density.dat", &dat)?;
    ctx.out.text(
        "density.gp",
        &gnuplot(
            &dpath,
            "law of the logit at the horizon",
            "z",
            "density",
            "plot datafile using 1:2 with lines title \"model\", datafile using 1:3 with steps title \"empirical\"",
            false,
        ),
    )?;

    let popts = PathOptions { steps_per_unit: cfg.steps_per_unit, workers: ctx.workers };
    let eg = entropy_gap_table(&cfg.horizons, t, cfg.k_entropy, &popts, specwass::rng::sub_seed(ctx.seed, 0x6567))?;
    ctx.out.with("entropy_gap.csv", |w| eg.write_csv(w))?;
    checks.add("entropy_gap_decreasing", anchor::BRIDGE, eg.strictly_decreasing, json!(eg.drops));
    if let Some(last) = eg.rows.last() {
        checks.add("entropy_gap_small", anchor::BRIDGE, last.estimate < cfg.entropy_bound, json!(last.estimate));
    }
    checks.finish(ctx, "schrodinger.json", json!({ "command": "schrodinger", "logit": lr, "entropy_gap": eg }))
}

pub fn filter(cfg: FilterConfig, ctx: &Context) -> Result<(), CliError> {
    cfg.validate()?;
    let opts = FilteringOptions {
        steps_per_unit: cfg.steps_per_unit,
        y_substeps: cfg.y_substeps,
        checkpoints: cfg.checkpoints,
        force_u: cfg.force_u,
        workers: ctx.workers,
    };
    let r = filtering_experiment(cfg.x0, cfg.horizon, cfg.k, &opts, ctx.seed)?;
    let mut checks = Checks::default();
    if cfg.force_u.is_none() {
        checks.add("posterior_mean", anchor::FILTERING, r.mean_check, json!(r.checkpoints));
    }
    checks.add("posterior_qv", anchor::FILTERING, r.qv_check, json!(r.qv_rel_error));
    if cfg.force_u.is_none() {
        checks.add("posterior_law", anchor::FILTERING, r.law_check, json!(r.potentials.len()));
    }
    checks.add("concentration", anchor::FILTERING, r.concentration_check, json!(r.checkpoints.len()));
    checks.finish(ctx, "filtering.json", json!({ "command": "filter", "report": r }))
}
