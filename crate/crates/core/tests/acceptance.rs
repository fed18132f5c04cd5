// Acceptance criteria 1–13, run in order. Each prints one line:
//   criterion N: PASS|FAIL — detail (elapsed, limit)
// Criterion 13 reruns 1–12 with three workers and compares report bytes.
// Exits non-zero if any criterion fails.

use std::sync::OnceLock;
use std::time::Instant;

use serde_json::{json, Value};
use specwass::divergence::{
    convergence_table, convexity_probe_n2, d_np_gaussian_surrogate, d_np_nested_mc, follmer_chain_check,
    per_path_limit_check, EstimatorOptions, GaussianKernels, Method, NestedOptions, TwoStep,
};
use specwass::schrodinger::{
    density_c, entropy_gap_table, filtering_experiment, logit_change_check, simulate_p_half_y_clock,
    FilteringOptions, PathOptions,
};
use specwass::sde::{simulate_win, SimConfig};
use specwass::winmart::{
    convex_order_check, mc_value_check, optimality_comparison, residual_grid, residual_table, solve_cp, solve_profile,
    Competitor, DEFAULT_NODES,
};
use specwass::{derive_stream, Field64, Model64, TimeGrid};

const PI: f64 = std::f64::consts::PI;
const T_CUT: f64 = 1.0 - 1.0 / 4096.0;

struct Outcome {
    pass: bool,
    detail: String,
    report: String,
    secs: f64,
}

type Run = specwass::Result<(bool, String, Value)>;

static FIRST: [OnceLock<Outcome>; 12] = [const { OnceLock::new() }; 12];

fn run(id: usize, workers: usize) -> Outcome {
    let start = Instant::now();
    let r = match id {
        1 => c1(workers),
        2 => c2(workers),
        3 => c3(workers),
        4 => c4(workers),
        5 => c5(workers),
        6 => c6(workers),
        7 => c7(workers),
        8 => c8(workers),
        9 => c9(workers),
        10 => c10(workers),
        11 => c11(workers),
        12 => c12(workers),
        _ => unreachable!(),
    };
    let secs = start.elapsed().as_secs_f64();
    match r {
        Ok((pass, detail, v)) => Outcome { pass, detail, report: serde_json::to_string(&v).expect("report"), secs },
        Err(e) => Outcome { pass: false, detail: format!("error: {e}"), report: format!("error: {e}"), secs },
    }
}

fn first(id: usize) -> &'static Outcome {
    FIRST[id - 1].get_or_init(|| run(id, 1))
}

fn check(id: usize, limit_secs: f64) -> bool {
    let o = first(id);
    let in_time = o.secs < limit_secs;
    let ok = o.pass && in_time;
    println!(
        "criterion {id}: {} — {} ({:.1} s, limit {limit_secs} s)",
        if ok { "PASS" } else { "FAIL" },
        o.detail,
        o.secs
    );
    ok
}

fn bm(c: f64) -> Model64 {
    Model64::scaled_bm(0.0, c)
}

fn sine_model() -> Model64 {
    Model64::on_real_line(0.0, Field64::sine(1.5, 0.5))
}

fn win_cfg(ratio: f64, workers: usize) -> SimConfig {
    SimConfig::win(T_CUT, ratio, 8).with_workers(workers)
}

fn c1(workers: usize) -> Run {
    let (q, pm) = (bm(2.0), bm(1.0));
    let opts = EstimatorOptions { workers, ..Default::default() };
    let mut worst_sur: f64 = 0.0;
    let mut worst_nested: f64 = 0.0;
    let mut rows = Vec::new();
    for &p in &[0.5, 1.0, 2.0, 3.0] {
        // W₁(N(0, 4dt), N(0, dt)) = √(2dt/π) in every cell.
        let exact = 0.797_884_560_802_865_4f64.powf(p);
        for n in 1..=10 {
            let s = d_np_gaussian_surrogate(&q, &pm, p, n, 4, 0xa1 + n as u64, &opts)?;
            worst_sur = worst_sur.max((s.mean - exact).abs());
            rows.push(json!({ "p": p, "N": 1usize << n, "surrogate": s.mean }));
        }
        let nested = NestedOptions { m_inner: 10_000, ..Default::default() };
        let m = d_np_nested_mc(&q, &pm, p, 4, 16, &nested, 0xa100 + (p * 10.0) as u64, &opts)?;
        let rel = (m.mean - exact).abs() / exact;
        worst_nested = worst_nested.max(rel);
        rows.push(json!({ "p": p, "N": 16, "nested": m.mean, "stderr": m.stderr }));
    }
    let pass = worst_sur < 1e-12 && worst_nested < 0.05;
    Ok((
        pass,
        format!("surrogate max |err| {worst_sur:.2e} (< 1e-12), nested max rel err {worst_nested:.4} (< 0.05)"),
        json!(rows),
    ))
}

fn c2(workers: usize) -> Run {
    let opts = EstimatorOptions { workers, ..Default::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    let mut reports = Vec::new();
    for &p in &[1.0, 3.0] {
        let r = convergence_table(
            &sine_model(),
            &bm(1.0),
            p,
            &[2, 4, 6, 8],
            10_000,
            0xc2,
            Method::Surrogate,
            &NestedOptions::default(),
            &opts,
        )?;
        let last = r.rows.last().map(|r| r.rel_error).unwrap_or(f64::NAN);
        let ok = r.rel_error_non_increasing() && last < 0.05;
        pass &= ok;
        let errs: Vec<String> = r.rows.iter().map(|r| format!("{:.1e}", r.rel_error)).collect();
        parts.push(format!("p={p}: rel err [{}]", errs.join(", ")));
        reports.push(r);
    }
    Ok((pass, parts.join("; "), json!(reports)))
}

fn c3(workers: usize) -> Run {
    let opts = EstimatorOptions { workers, ..Default::default() };
    let exps: Vec<u32> = (3..=9).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut reports = Vec::new();
    for &p in &[1.0, 3.0] {
        let r = per_path_limit_check(&sine_model(), &bm(1.0), p, &exps, 10_000, 0xc3, &opts)?;
        let last = r.rows.last().map(|r| r.mean_abs_gap).unwrap_or(f64::NAN);
        let ok = r.gaps_decreasing() && last < 0.1 * r.mean_integral;
        pass &= ok;
        parts.push(format!(
            "p={p}: gap {:.1e} → {last:.1e}, integral {:.3}, decreasing {}",
            r.rows[0].mean_abs_gap,
            r.mean_integral,
            r.gaps_decreasing()
        ));
        reports.push(r);
    }
    Ok((pass, parts.join("; "), json!(reports)))
}

fn phi_inv_density(x: f64) -> f64 {
    use statrs::distribution::{Continuous, ContinuousCDF, Normal};
    let n = Normal::new(0.0, 1.0).unwrap();
    n.pdf(n.inverse_cdf(x))
}

fn c4(_workers: usize) -> Run {
    let consts = [
        (0.5, solve_cp(0.5)?, 2f64.sqrt()),
        (1.0, solve_cp(1.0)?, (2.0 * PI).ln()),
        (2.0, solve_cp(2.0)?, 1.0),
    ];
    let const_err = consts.iter().map(|c| (c.1 - c.2).abs()).fold(0.0, f64::max);
    type Oracle = (f64, fn(f64) -> f64);
    let closed: [Oracle; 4] = [
        (0.5, |x| 2f64.sqrt() * x * (1.0 - x)),
        (1.0, phi_inv_density),
        (2.0, |x| (x * (1.0 - x)).sqrt()),
        // Just outside the Wright–Fisher band the generic solver runs.
        (2.0 + 2e-6, |x| (x * (1.0 - x)).sqrt()),
    ];
    let mut sups = Vec::new();
    for (p, f) in closed {
        let prof = solve_profile(p, DEFAULT_NODES)?;
        let mut sup: f64 = 0.0;
        for i in 0..=980 {
            let x = 0.01 + i as f64 * 1e-3;
            sup = sup.max((prof.sigma_bar(0.0, x)? - f(x)).abs());
        }
        sups.push((p, sup));
    }
    let worst = sups.iter().map(|s| s.1).fold(0.0, f64::max);
    let pass = const_err < 1e-8 && worst < 1e-5;
    Ok((
        pass,
        format!("constants max err {const_err:.1e} (< 1e-8), profile sup err {worst:.1e} (< 1e-5)"),
        json!({ "constants": consts, "sup": sups }),
    ))
}

fn c5(_workers: usize) -> Run {
    let (ts, xs) = residual_grid();
    let mut worst_pmd: f64 = 0.0;
    let mut worst_hjb: f64 = 0.0;
    let mut out = Vec::new();
    for &p in &[0.5, 1.0, 1.5, 3.0] {
        let prof = solve_profile(p, DEFAULT_NODES)?;
        let rows = residual_table(&prof, &ts, &xs, 1e-3)?;
        let pmd = rows.iter().map(|r| r.pmd.abs()).fold(0.0, f64::max);
        let hjb = rows.iter().map(|r| r.hjb.map_or(f64::INFINITY, f64::abs)).fold(0.0, f64::max);
        worst_pmd = worst_pmd.max(pmd);
        worst_hjb = worst_hjb.max(hjb);
        out.push(json!({ "p": p, "pmd": pmd, "hjb": hjb, "points": rows.len() }));
    }
    let pass = worst_pmd < 1e-3 && worst_hjb < 1e-3;
    Ok((pass, format!("max |pmd| {worst_pmd:.1e}, max |hjb| {worst_hjb:.1e} (< 1e-3) on 20×20"), json!(out)))
}

fn c6(workers: usize) -> Run {
    let k = 100_000;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut out = Vec::new();
    // Finer geometric steps where the boundary bias of Euler is larger.
    for &(p, x0, ratio) in &[(0.5, 0.3, 0.99), (3.0, 0.5, 0.9997)] {
        let prof = solve_profile(p, DEFAULT_NODES)?;
        let v = mc_value_check(&prof, 0.0, x0, k, &win_cfg(ratio, workers), 0xc6)?;
        pass &= v.pass;
        parts.push(format!("p={p}: z {:.2}", v.z_score));
        out.push(serde_json::to_value(&v)?);
    }
    let x0 = 0.3;
    let comp: Vec<Competitor> =
        ["bass", "aldous", "p_half"].iter().map(|s| s.parse()).collect::<specwass::Result<_>>()?;
    let r = optimality_comparison(2.0, x0, &comp, k, &win_cfg(0.997, workers), 0xc62)?;
    let target = x0 * (1.0 - x0);
    let mut zs = vec![(r.optimal_cost - target) / r.optimal_stderr];
    zs.extend(r.rows.iter().map(|row| (row.cost - target) / row.stderr));
    let ok2 = zs.iter().all(|z| z.abs() < 3.0);
    pass &= ok2;
    let zs_txt: Vec<String> = zs.iter().map(|z| format!("{z:.2}")).collect();
    parts.push(format!("p=2 z vs x0(1-x0) [{}]", zs_txt.join(", ")));
    out.push(serde_json::to_value(&r)?);
    Ok((pass, parts.join("; "), json!(out)))
}

fn c7(workers: usize) -> Run {
    let (p, x0, k) = (0.5, 0.3, 100_000usize);
    let prof = solve_profile(p, DEFAULT_NODES)?;
    let grid = TimeGrid::uniform(0.0, T_CUT, 16)?;
    let e = simulate_win(p, x0, &prof, &grid, k, 0xc7, &win_cfg(0.9, workers))?;
    let last = e.grid.points().len() - 1;
    let terminal = e.column(last);
    let binary = terminal.iter().all(|&v| v == 0.0 || v == 1.0);
    let mean = terminal.iter().sum::<f64>() / k as f64;
    let band = 3.0 * (x0 * (1.0 - x0) / k as f64).sqrt();
    let pass = binary && (mean - x0).abs() < band;
    Ok((
        pass,
        format!("terminal values binary {binary}, |mean − 0.3| {:.2e} (band {band:.2e})", (mean - x0).abs()),
        json!({ "mean": mean, "binary": binary, "band": band }),
    ))
}

fn c8(workers: usize) -> Run {
    let comp: Vec<Competitor> =
        ["bass", "wright_fisher", "aldous"].iter().map(|s| s.parse()).collect::<specwass::Result<_>>()?;
    let mut pass = true;
    let mut parts = Vec::new();
    let mut out = Vec::new();
    for &p in &[0.5, 3.0] {
        let r = optimality_comparison(p, 0.5, &comp, 100_000, &win_cfg(0.99, workers), 0xc8)?;
        pass &= r.pass;
        // Margin in units of the combined standard error, smallest over competitors.
        let margin = r
            .rows
            .iter()
            .map(|row| if r.direction == "max" { row.diff } else { -row.diff } / row.combined_stderr)
            .fold(f64::INFINITY, f64::min);
        parts.push(format!("p={p} ({}): min margin {margin:.1} combined se", r.direction));
        out.push(r);
    }
    Ok((pass, parts.join("; "), json!(out)))
}

fn c9(workers: usize) -> Run {
    let expected = [1.0 / PI, 2f64.sqrt() / 4.0, 1.0 / (2.0 * PI).sqrt(), 0.5];
    let ts: Vec<f64> = (0..50).map(|i| 0.9 * (i + 1) as f64 / 51.0).collect();
    let xs: Vec<f64> = (0..50).map(|j| (j + 1) as f64 / 51.0).collect();
    let strikes = [0.1, 0.3, 0.5, 0.7, 0.9];
    let cfg = SimConfig { substeps_per_cell: 64, workers, ..SimConfig::default() };
    let r = convex_order_check(&[0.5, 1.0, 2.0], 0.5, &ts, &xs, &[0.25, 0.5, 0.75], &strikes, 20_000, &cfg, 0xc9)?;
    let center_err = r.sigma_at_center.iter().zip(&expected).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let center_ordered = r.sigma_at_center.windows(2).all(|w| w[0] < w[1]);
    let pass = center_err < 1e-6 && center_ordered && r.pass;
    let bad = r.potentials.iter().filter(|p| !p.ordered).count();
    Ok((
        pass,
        format!(
            "center err {center_err:.1e}, pointwise violations {}/{}, potential rows out of order {bad}/{}",
            r.pointwise_violations,
            r.pointwise_points,
            r.potentials.len()
        ),
        json!(r),
    ))
}

fn c10(workers: usize) -> Run {
    let cfg = SimConfig { substeps_per_cell: 1, workers, ..SimConfig::default() };
    let g = TimeGrid::dyadic(0.0, 1.0, 6)?;
    let r = follmer_chain_check(&bm(2.0), 8, &g, 0xca, &cfg)?;
    // For σ ≡ 2: ½(σ-1)² = 0.5 and ½(σ² - 1 - log σ²) = (3 - log 4)/2.
    let h_exact = (3.0 - 4f64.ln()) / 2.0;
    let exact_ok = (r.half_aw2 - 0.5).abs() < 1e-12 && (r.half_sw2 - 0.5).abs() < 1e-12 && (r.h - 0.806853).abs() < 1e-6;
    let g2 = TimeGrid::dyadic(0.0, 1.0, 10)?;
    let s = follmer_chain_check(&sine_model(), 10_000, &g2, 0xcb, &cfg)?;
    let pass = exact_ok && (r.h - h_exact).abs() < 1e-12 && s.strict_margin;
    Ok((
        pass,
        format!(
            "σ≡2: ½AW₂² {:.12}, ½SW₂ {:.12}, h {:.7}; sine: margin {:.4} ± {:.1e}",
            r.half_aw2, r.half_sw2, r.h, s.margin, s.margin_stderr
        ),
        json!({ "constant": r, "sine": s }),
    ))
}

/// Composite Simpson on `[a, b]` with `n` (even) panels.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn normal_pdf(z: f64, m: f64, var: f64) -> f64 {
    (-(z - m) * (z - m) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

fn c11(workers: usize) -> Run {
    let mut norm_err: f64 = 0.0;
    let mut mix_err: f64 = 0.0;
    for &t in &[0.5f64, 1.0, 4.0] {
        for &c in &[0.0f64, 1.0] {
            let l = 12.0 * t.sqrt() + t + 1.0;
            let mass = simpson(|z| density_c(t, z, c).unwrap_or(f64::NAN), c - l, c + l, 20_000);
            norm_err = norm_err.max((mass - 1.0).abs());
            // Two drifted Brownian motions with weights e^{±c/2}/(2cosh(c/2)).
            let wp = (c / 2.0).exp() / (2.0 * (c / 2.0).cosh());
            for i in -60..=60 {
                let z = c + i as f64 * 0.1 * t.sqrt();
                let mix = wp * normal_pdf(z, c + t / 2.0, t) + (1.0 - wp) * normal_pdf(z, c - t / 2.0, t);
                mix_err = mix_err.max((density_c(t, z, c)? - mix).abs());
            }
        }
    }
    let sc = SimConfig { workers, ..SimConfig::default() };
    let ens = simulate_p_half_y_clock(0.5, 1.0, 256, 100_000, 0xcc, &sc)?;
    let lr = logit_change_check(&ens, 0.5, 60)?;
    let popts = PathOptions { steps_per_unit: 256, workers };
    let eg = entropy_gap_table(&[5.0, 10.0, 20.0, 40.0], 1.0, 10_000, &popts, 0xcd)?;
    let eg_last = eg.rows.last().map(|r| r.estimate).unwrap_or(f64::NAN);
    let fopts = FilteringOptions { workers, ..Default::default() };
    let fr = filtering_experiment(0.5, 4.0, 100_000, &fopts, 0xce)?;
    let pass =
        norm_err < 1e-8 && mix_err < 1e-12 && lr.pass && eg.strictly_decreasing && eg_last < 1e-2 && fr.pass;
    Ok((
        pass,
        format!(
            "norm {norm_err:.1e}, mixture {mix_err:.1e}, KS {:.4} (band {:.4}), entropy gap T=40 {eg_last:.1e} \
             decreasing {}, filtering mean/qv/law/conc {}/{}/{}/{}",
            lr.ks_distance,
            lr.ks_band,
            eg.strictly_decreasing,
            fr.mean_check,
            fr.qv_check,
            fr.law_check,
            fr.concentration_check
        ),
        json!({ "logit": lr, "entropy_gap": eg, "filtering": fr }),
    ))
}

fn c12(_workers: usize) -> Run {
    let mut rng = derive_stream(0xc12, 0);
    let mut draw = |n: usize| -> specwass::Result<TwoStep> {
        // Few first-step atoms so the second-step kernels have several atoms each.
        let firsts: Vec<f64> = (0..1 + n % 3).map(|_| rng.normal::<f64>()).collect();
        let atoms: Vec<(f64, f64)> =
            (0..n).map(|_| (firsts[(rng.next_u64() % firsts.len() as u64) as usize], 2.0 * rng.normal::<f64>())).collect();
        let raw: Vec<f64> = (0..n).map(|_| 0.05 + rng.uniform::<f64>()).collect();
        let total: f64 = raw.iter().sum();
        TwoStep::new(atoms, raw.iter().map(|w| w / total).collect())
    };
    let s2 = |x: f64| 0.5 + 0.25 * x.sin().abs();
    let pk = GaussianKernels { m1: 0.0, s1: 1.0, s2: &s2 };
    let mut violations = 0usize;
    let mut worst = f64::NEG_INFINITY;
    let mut count = 0usize;
    for i in 0..1000 {
        let q = draw(2 + i % 7)?;
        let qt = draw(2 + (i / 7) % 7)?;
        let t = (i as f64 + 0.5) / 1000.0;
        for &p in &[1.0, 1.5, 2.0] {
            let r = convexity_probe_n2(&pk, &q, &qt, t, p)?;
            worst = worst.max(r.excess);
            count += 1;
            if !r.holds {
                violations += 1;
            }
        }
    }
    Ok((
        violations == 0,
        format!("{violations} violations in {count} probes, max excess {worst:.2e}"),
        json!({ "violations": violations, "probes": count, "max_excess": worst }),
    ))
}

const LIMITS: [f64; 12] = [60.0, 300.0, 300.0, 10.0, 30.0, 300.0, 120.0, 300.0, 300.0, 120.0, 600.0, 60.0];

fn main() {
    let mut failed = Vec::new();
    for id in 1..=12 {
        if !check(id, LIMITS[id - 1]) {
            failed.push(id);
        }
    }
    if !determinism() {
        failed.push(13);
    }
    if failed.is_empty() {
        println!("acceptance: all 13 criteria passed");
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}

fn determinism() -> bool {
    let mut differing = Vec::new();
    for id in 1..=12 {
        if first(id).report != run(id, 3).report {
            differing.push(id);
        }
    }
    let ok = differing.is_empty();
    println!(
        "criterion 13: {} — reports of criteria 1–12 with 1 and 3 workers {}",
        if ok { "PASS" } else { "FAIL" },
        if ok { "byte-identical".to_string() } else { format!("differ for {differing:?}") }
    );
    ok
}
