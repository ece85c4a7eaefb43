//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use fracnet::model::DEFAULT_HORIZON_BANDS;
use fracnet::payoff::check_bm_gbm_hessian_identity;
use fracnet::quadrature::{hardy_check, WeightedCurve};
use fracnet::simulator::{simulate_errors, study_grid, NetSource, RatioRow};
use fracnet::smoothness::{
    besov_proxy_norm, default_t_grid, derivative_bound_check, fit_theta, riemann_liouville_norm,
    smoothness_curves, CurveMethod, SmoothnessCurve, DEFAULT_FIT_WINDOW,
};
use fracnet::verify::{hardy_cases, hessian_probes, HARDY_CELLS};
use fracnet::{DiffusionModel, Payoff, TimeGrid, TimeNet};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bm() -> DiffusionModel {
    DiffusionModel::brownian(1).unwrap()
}

fn gbm() -> DiffusionModel {
    DiffusionModel::geometric(1).unwrap()
}

fn c1_quadratic_benchmark() -> Outcome {
    let payoff = Payoff::quadratic(1);
    let n_list = [4usize, 16, 64];
    let nets: Vec<TimeNet> = n_list
        .iter()
        .map(|&n| TimeNet::equidistant(n).unwrap())
        .collect();
    let sources: Vec<NetSource> = nets.iter().cloned().map(NetSource::Fixed).collect();
    let grid = TimeGrid::builder()
        .net(&nets[0])
        .net(&nets[1])
        .net(&nets[2])
        .build();
    let table = simulate_errors(&payoff, &bm(), &sources, &[], &grid, 100_000, 0).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, &n) in n_list.iter().enumerate() {
        // Itô isometry: E C_1² = Σ 2 Δt² = 2/n
        let exact = (2.0 / n as f64).sqrt();
        let sq_dev = table.sq_fn[k]
            .iter()
            .map(|s| (s - exact).abs())
            .fold(0.0, f64::max);
        let row = RatioRow::from_columns(n, &table.c_simple[k], &table.sq_fn[k], 2.0, 0).unwrap();
        let z = (row.error.value - exact).abs() / row.error.std_err;
        ok &= z <= 3.0 && sq_dev <= 1e-10;
        detail.push(format!(
            "n={n}: |C|={:.5} vs {exact:.5} z={z:.2} sq_dev={sq_dev:.1e}",
            row.error.value
        ));
    }
    ensure(ok, detail.join("; "))
}

fn c2_two_sided_equivalence() -> Outcome {
    let n_list = [4usize, 8, 16, 32, 64, 128, 256];
    let cases = [
        ("binary K=0 (BM)", Payoff::binary(0.0, 1), bm()),
        ("call K=1 (GBM)", Payoff::call(1.0, 1), gbm()),
        ("quadratic (BM)", Payoff::quadratic(1), bm()),
    ];
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    let mut missing = 0;
    for (_, payoff, model) in &cases {
        let mut nets: Vec<TimeNet> = n_list
            .iter()
            .map(|&n| TimeNet::equidistant(n).unwrap())
            .collect();
        nets.extend(n_list.iter().map(|&n| TimeNet::theta_net(n, 0.5).unwrap()));
        let sources: Vec<NetSource> = nets.iter().cloned().map(NetSource::Fixed).collect();
        let grid = study_grid(&nets, 256, DEFAULT_HORIZON_BANDS);
        let table = simulate_errors(payoff, model, &sources, &[], &grid, 100_000, 0).unwrap();
        for p in [2.0, 3.0, 4.0] {
            for (k, net) in nets.iter().enumerate() {
                let row =
                    RatioRow::from_columns(net.steps(), &table.c_simple[k], &table.sq_fn[k], p, 0)
                        .unwrap();
                match row.ratio {
                    Some(r) => {
                        lo = lo.min(r);
                        hi = hi.max(r);
                    }
                    None => missing += 1,
                }
            }
        }
    }
    ensure(
        missing == 0 && lo >= 0.1 && hi <= 10.0,
        format!("ratio range [{lo:.3}, {hi:.3}] over 3 payoffs x 2 families x 7 n x 3 p, {missing} undefined"),
    )
}

fn rate_slope(net_of: impl Fn(usize) -> TimeNet, target: f64) -> Outcome {
    let n_list = [8usize, 16, 32, 64, 128, 256, 512];
    let nets: Vec<TimeNet> = n_list.iter().map(|&n| net_of(n)).collect();
    let sources: Vec<NetSource> = nets.iter().cloned().map(NetSource::Fixed).collect();
    let grid = study_grid(&nets, 0, DEFAULT_HORIZON_BANDS);
    let payoff = Payoff::binary(0.0, 1);
    let table = simulate_errors(&payoff, &bm(), &sources, &[], &grid, 100_000, 0).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, &n) in n_list.iter().enumerate() {
        let row = RatioRow::from_columns(n, &table.c_simple[k], &table.sq_fn[k], 2.0, 0).unwrap();
        x.push((n as f64).ln());
        y.push(row.error.value.ln());
    }
    // ordinary least squares
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    ensure(
        (slope - target).abs() <= 0.10,
        format!("slope {slope:.4}, target {target} ± 0.10"),
    )
}

fn c3_equidistant_rate() -> Outcome {
    rate_slope(|n| TimeNet::equidistant(n).unwrap(), -0.25)
}

fn c4_theta_net_rate() -> Outcome {
    rate_slope(|n| TimeNet::theta_net(n, 0.5).unwrap(), -0.50)
}

fn binary_curve() -> SmoothnessCurve {
    smoothness_curves(
        &Payoff::binary(0.0, 1),
        &bm(),
        2.0,
        &default_t_grid(),
        10_000,
        0,
    )
    .unwrap()
}

fn c5_smoothness_oracle() -> Outcome {
    let curve = binary_curve();
    let quadrature = curve.method.iter().all(|m| *m == CurveMethod::Quadrature);
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (&t, &d) in curve.t_grid.iter().zip(&curve.d0) {
        if t <= 1.0 - 1e-4 {
            worst = worst.max((d - (0.25 - t.asin() / (2.0 * PI)).sqrt()).abs());
            count += 1;
        }
    }
    let fit = fit_theta(&curve, DEFAULT_FIT_WINDOW).unwrap();
    ensure(
        quadrature && worst <= 1e-6 && (fit.theta_hat - 0.5).abs() <= 0.05,
        format!(
            "max |d0 - oracle| = {worst:.2e} over {count} points (quadrature: {quadrature}), theta_hat = {:.4}",
            fit.theta_hat
        ),
    )
}

fn c6_riemann_liouville_dichotomy() -> Outcome {
    let curve = binary_curve();
    let payoff = Payoff::binary(0.0, 1);
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [1, 2, 3, 4, 6, 7, 8, 9] {
        let theta = k as f64 / 10.0;
        let rl = riemann_liouville_norm(&payoff, &bm(), theta, 2.0, 10_000, 0).unwrap();
        let proxy = besov_proxy_norm(&curve, theta, 2.0, 2).unwrap();
        let expected = theta > 0.5;
        ok &= rl.divergent == expected && proxy.divergent == expected;
        detail.push(format!(
            "{theta}:{}/{}",
            if rl.divergent { "div" } else { "fin" },
            if proxy.divergent { "div" } else { "fin" }
        ));
    }
    ensure(ok, format!("theta:rl/proxy {}", detail.join(" ")))
}

fn c7_time_net_calculus() -> Outcome {
    let mut bound_violations = 0;
    let mut equi: f64 = 0.0;
    for k in 1..=10 {
        let theta = k as f64 / 10.0;
        for n in 1..=1024usize {
            let net = TimeNet::theta_net(n, theta).unwrap();
            if net.mesh_theta(theta) > 1.0 / (theta * n as f64) {
                bound_violations += 1;
            }
            let e = TimeNet::equidistant(n).unwrap();
            equi = equi.max((e.mesh_theta(theta) - (n as f64).powf(-theta)).abs());
        }
    }
    let report = check_bm_gbm_hessian_identity(&Payoff::call(1.0, 1), &hessian_probes(0)).unwrap();
    ensure(
        bound_violations == 0 && equi <= 1e-12 && report.probes == 100 && report.max_residual <= 1e-6,
        format!(
            "{bound_violations} mesh-bound violations, equidistant dev {equi:.1e}, call identity residual {:.1e}",
            report.max_residual
        ),
    )
}

fn lemma_constant(theta: f64, q: f64) -> f64 {
    if q >= 2.0 {
        (1.0 / (1.0 - theta)).sqrt()
    } else {
        ((2.0 - theta) / (1.0 - theta)).powf(1.0 / q)
    }
}

/// Binary strike 0 on BM, `p = 2`: closed forms of `d⁰, d¹, d²`.
fn closed_form_binary_curve() -> SmoothnessCurve {
    let t_grid = default_t_grid();
    let d0 = t_grid
        .iter()
        .map(|&t| (0.25 - t.asin() / (2.0 * PI)).sqrt())
        .collect();
    let d1 = t_grid
        .iter()
        .map(|&t| ((1.0 - t) * (1.0 + t)).powf(-0.25) / (2.0 * PI).sqrt())
        .collect();
    let d2 = t_grid
        .iter()
        .map(|&t| (t / (2.0 * PI)).sqrt() * ((1.0 - t) * (1.0 + t)).powf(-0.75))
        .collect();
    SmoothnessCurve {
        payoff: "binary".into(),
        p: 2.0,
        method: vec![CurveMethod::ClosedForm; t_grid.len()],
        std_err: vec![[0.0; 3]; t_grid.len()],
        t_grid,
        d0,
        d1,
        d2,
        f_norm: 0.5f64.sqrt(),
        quadrature_fallback: false,
    }
}

fn c8_hardy_suite() -> Outcome {
    let mut cells = 0;
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for case in hardy_cases() {
        let curve = WeightedCurve::sample(case.phi, HARDY_CELLS, 1e-6).unwrap();
        for k in 1..=9 {
            let theta = k as f64 / 10.0;
            for q in [1.0, 2.0, 4.0, f64::INFINITY] {
                if q < 2.0 && !case.monotone {
                    continue;
                }
                cells += 1;
                let r = hardy_check(&curve, theta, q).unwrap();
                if r.rhs.divergent {
                    continue;
                }
                let c = lemma_constant(theta, q);
                let rel = r.lhs.value / (c * r.rhs.value);
                if r.lhs.value > 0.0 {
                    worst = worst.max(rel);
                }
                if !(r.lhs.value <= c * r.rhs.value * (1.0 + 1e-5)) {
                    violations += 1;
                }
            }
        }
    }
    let bounds = derivative_bound_check(&closed_form_binary_curve()).unwrap();
    ensure(
        violations == 0 && bounds.finite,
        format!(
            "{cells} cells, max lhs/(C rhs) = {worst:.6}, {violations} violations; derivative ratios {:.3}, {:.3}",
            bounds.first, bounds.second
        ),
    )
}

fn run_cli(args: &[&str], threads: &str) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_fracnet"))
        .args(args)
        .env("RAYON_NUM_THREADS", threads)
        .output()
        .expect("spawn fracnet");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn c9_reproducibility() -> Outcome {
    let runs: [&[&str]; 4] = [
        &[
            "rates",
            "--payoff",
            "binary",
            "--n",
            "8,16,32,64",
            "--paths",
            "4000",
            "--seed",
            "7",
        ],
        &[
            "simulate",
            "--model",
            "gbm",
            "--payoff",
            "call",
            "--param",
            "k=1",
            "--net",
            "rule:curvature",
            "--n",
            "8,16",
            "--p",
            "2,3",
            "--paths",
            "2000",
            "--format",
            "csv",
        ],
        &[
            "smoothness",
            "--payoff",
            "binary",
            "--p",
            "2,3",
            "--format",
            "csv",
        ],
        &[
            "nets",
            "--net",
            "theta:0.3",
            "--n",
            "4,64",
            "--format",
            "csv",
        ],
    ];
    let mut differing = Vec::new();
    for args in runs {
        let a = run_cli(args, "1");
        let b = run_cli(args, "1");
        let c = run_cli(args, "4");
        if a != b || a != c || a.is_empty() {
            differing.push(args[0]);
        }
    }
    ensure(
        differing.is_empty(),
        format!(
            "{} CLI runs repeated with 1, 1 and 4 workers; differing: {differing:?}",
            runs.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("exact quadratic benchmark", c1_quadratic_benchmark),
        (
            "two-sided error/square-function equivalence",
            c2_two_sided_equivalence,
        ),
        ("equidistant rate, binary", c3_equidistant_rate),
        ("theta-net rate, binary, theta = 1/2", c4_theta_net_rate),
        ("smoothness oracle match", c5_smoothness_oracle),
        (
            "Riemann-Liouville dichotomy",
            c6_riemann_liouville_dichotomy,
        ),
        ("time-net calculus", c7_time_net_calculus),
        ("Hardy suite", c8_hardy_suite),
        ("reproducibility", c9_reproducibility),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {} PASS {name}: {d} ({secs:.1}s)", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {d} ({secs:.1}s)", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
