//! Self-verification suite: runs the invariant checks of every module and
//! reports a machine-readable verdict per check.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::Rng;
use serde::Serialize;

use crate::error::{FracnetError, Result};
use crate::experiment::{run_rate_study, ExperimentConfig, OutputFormat};
use crate::model::{simulate_paths, DiffusionModel, TimeGrid, DEFAULT_HORIZON_BANDS};
use crate::payoff::{check_bm_gbm_hessian_identity, Payoff, PayoffSpec};
use crate::quadrature::{hardy_check, WeightedCurve, HARDY_SLACK};
use crate::rng::{StreamKey, DOMAIN_PROBES};
use crate::simulator::{equivalence_ratio, mean_with_error, simulate_errors, NetSource, RatioRow};
use crate::smoothness::{
    besov_proxy_norm, default_t_grid, fit_theta, riemann_liouville_norm, smoothness_curves,
    DEFAULT_FIT_WINDOW,
};
use crate::timenet::{NetFamily, TimeNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Fast,
    Full,
}

impl Level {
    pub fn default_paths(&self) -> usize {
        match self {
            Level::Fast => 10_000,
            Level::Full => 1_000_000,
        }
    }
}

impl std::str::FromStr for Level {
    type Err = FracnetError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fast" => Ok(Level::Fast),
            "full" => Ok(Level::Full),
            _ => Err(FracnetError::invalid(format!("unknown level `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value <= tolerance`.
    fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.to_string(),
            value,
            tolerance,
            pass: value <= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyConfig {
    pub level: Level,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub checks: Vec<Check>,
    pub versions: BTreeMap<String, String>,
    /// Seconds.
    pub wall_time: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// θ-net constructor under test.
pub type ThetaNetFn = dyn Fn(usize, f64) -> Result<TimeNet> + Sync;

/// θ-net with the exponent `1/θ + 1` in place of `1/θ`. Used to confirm that
/// the mesh check catches a broken constructor.
pub fn tampered_theta_net(n: usize, theta: f64) -> Result<TimeNet> {
    let nf = n as f64;
    let mut knots: Vec<f64> = (0..=n)
        .map(|i| 1.0 - (1.0 - i as f64 / nf).powf(1.0 / theta + 1.0))
        .collect();
    knots[n] = 1.0;
    TimeNet::new(knots)
}

pub const THETA_LEVELS: [f64; 10] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

/// `max |τ_n^θ|_θ · θn` over `n <= 1024` and `θ ∈ {0.1, ..., 1}`, and the
/// number of nets the constructor refused to build. The bound holds when
/// the maximum is at most 1.
pub fn worst_theta_mesh(build: &ThetaNetFn) -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for &theta in &THETA_LEVELS {
        for n in 1..=1024 {
            match build(n, theta) {
                Ok(net) => worst = worst.max(net.mesh_theta(theta) * theta * n as f64),
                Err(_) => failures += 1,
            }
        }
    }
    (worst, failures)
}

/// `max |(i/n)|_θ - n^{-θ}|` over `n <= 1024` and the θ levels.
pub fn worst_equidistant_mesh() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for &theta in &THETA_LEVELS {
        for n in 1..=1024usize {
            let net = TimeNet::equidistant(n)?;
            worst = worst.max((net.mesh_theta(theta) - (n as f64).powf(-theta)).abs());
        }
    }
    Ok(worst)
}

/// 100 probes `(t, x)` with `t ∈ [0, 0.99]`, `x ∈ [-1, 1]`.
pub fn hessian_probes(seed: u64) -> Vec<(f64, Vec<f64>)> {
    let mut rng = StreamKey::new(seed, DOMAIN_PROBES).stream(0);
    (0..100)
        .map(|_| {
            (
                rng.random_range(0.0..=0.99),
                vec![rng.random_range(-1.0..=1.0)],
            )
        })
        .collect()
}

/// A test function for the Hardy inequalities.
pub struct HardyCase {
    pub name: &'static str,
    /// Non-decreasing on `[0, 1)`, as the `q < 2` inequality requires.
    pub monotone: bool,
    pub phi: fn(f64) -> f64,
}

/// Twelve functions spanning bounded, growing, singular and oscillating
/// behaviour near `t = 1`.
pub fn hardy_cases() -> Vec<HardyCase> {
    fn case(name: &'static str, monotone: bool, phi: fn(f64) -> f64) -> HardyCase {
        HardyCase {
            name,
            monotone,
            phi,
        }
    }
    vec![
        case("zero", true, |_| 0.0),
        case("one", true, |_| 1.0),
        case("t", true, |t| t),
        case("t^2", true, |t| t * t),
        case("exp", true, f64::exp),
        case("(1-t)^-0.25", true, |t| (1.0 - t).powf(-0.25)),
        case("(1-t)^-0.5", true, |t| (1.0 - t).powf(-0.5)),
        case("(1-t)^-0.9", true, |t| (1.0 - t).powf(-0.9)),
        case("-ln(1-t)", true, |t| -(-t).ln_1p()),
        case("(1-t)^0.5", false, |t| (1.0 - t).sqrt()),
        case("1-t", false, |t| 1.0 - t),
        case("2+sin(10t)", false, |t| 2.0 + (10.0 * t).sin()),
    ]
}

pub const HARDY_Q: [f64; 4] = [1.0, 2.0, 4.0, f64::INFINITY];

/// Grid cells per Hardy test curve.
pub const HARDY_CELLS: usize = 4000;

/// Largest `lhs / (C · rhs)` over the Hardy matrix (cases with divergent
/// right-hand side and the trivial zero case contribute nothing).
pub fn hardy_suite() -> Result<f64> {
    let mut worst: f64 = 0.0;
    for case in hardy_cases() {
        let curve = WeightedCurve::sample(case.phi, HARDY_CELLS, 1e-6)?;
        for &theta in &THETA_LEVELS[..9] {
            for &q in &HARDY_Q {
                if q < 2.0 && !case.monotone {
                    continue;
                }
                let r = hardy_check(&curve, theta, q)?;
                if !r.holds {
                    return Ok(f64::INFINITY);
                }
                if r.rhs.is_finite() && r.lhs.is_finite() {
                    worst = worst.max(r.ratio / r.constant);
                }
            }
        }
    }
    Ok(worst)
}

fn bm() -> Result<DiffusionModel> {
    DiffusionModel::brownian(1)
}

fn quadratic_checks(n_paths: usize, seed: u64, checks: &mut Vec<Check>) -> Result<()> {
    let payoff = Payoff::quadratic(1);
    let model = bm()?;
    let n_list = [4usize, 16, 64];
    let nets: Vec<NetSource> = n_list
        .iter()
        .map(|&n| TimeNet::equidistant(n).map(NetSource::Fixed))
        .collect::<Result<_>>()?;
    let fixed: Vec<TimeNet> = n_list
        .iter()
        .map(|&n| TimeNet::equidistant(n))
        .collect::<Result<_>>()?;
    let grid = TimeGrid::builder()
        .net(&fixed[0])
        .net(&fixed[1])
        .net(&fixed[2])
        .build();
    let table = simulate_errors(&payoff, &model, &nets, &[], &grid, n_paths, seed)?;
    let mut sq_dev: f64 = 0.0;
    let mut z: f64 = 0.0;
    for (k, &n) in n_list.iter().enumerate() {
        let exact = (2.0 / n as f64).sqrt();
        for &s in &table.sq_fn[k] {
            sq_dev = sq_dev.max((s - exact).abs());
        }
        let row = RatioRow::from_columns(n, &table.c_simple[k], &table.sq_fn[k], 2.0, seed)?;
        z = z.max((row.error.value - exact).abs() / row.error.std_err);
    }
    checks.push(Check::at_most("quadratic_square_function", sq_dev, 1e-10));
    checks.push(Check::at_most("quadratic_l2_benchmark_z", z, 3.0));

    let identity = Payoff::identity(1);
    let table = simulate_errors(
        &identity,
        &model,
        &nets,
        &[],
        &grid,
        n_paths.min(2000),
        seed,
    )?;
    let worst = table
        .c_simple
        .iter()
        .flatten()
        .chain(table.sq_fn.iter().flatten())
        .fold(0.0f64, |m, c| m.max(c.abs()));
    checks.push(Check::at_most("identity_zero_error", worst, 1e-12));
    Ok(())
}

/// Standardized deviation of the Monte Carlo means of `Y_t` and
/// `G(t, Y_t)` (call, strike 1) from their starting values.
fn martingale_check(n_paths: usize, seed: u64) -> Result<f64> {
    let model = DiffusionModel::geometric(1)?;
    let payoff = Payoff::call(1.0, 1);
    let times = [0.25, 0.5, 0.9, 1.0];
    let grid = TimeGrid::builder().quadrature_knots(times).build();
    let batch = simulate_paths(&model, &grid, n_paths, seed)?;
    let g0 = payoff.conditional_expectation(&model, 0.0, &[1.0])?;
    let mut worst: f64 = 0.0;
    for &t in &times {
        let k = grid.index_of(t).expect("grid knot");
        let mut ys = Vec::with_capacity(n_paths);
        let mut gs = Vec::with_capacity(n_paths);
        for i in 0..n_paths {
            let y = batch.y_at(&model, i, k);
            gs.push(payoff.conditional_expectation(&model, t, &y)?);
            ys.push(y[0]);
        }
        let (my, sy) = mean_with_error(&ys);
        let (mg, sg) = mean_with_error(&gs);
        worst = worst.max((my - 1.0).abs() / sy).max((mg - g0).abs() / sg);
    }
    Ok(worst)
}

/// `√(1/4 - arcsin(t)/(2π))`.
fn binary_d0(t: f64) -> f64 {
    (0.25 - t.asin() / (2.0 * std::f64::consts::PI)).sqrt()
}

fn smoothness_checks(n_paths: usize, seed: u64, checks: &mut Vec<Check>) -> Result<()> {
    let model = bm()?;
    let binary = Payoff::binary(0.0, 1);
    let grid = default_t_grid();
    let curve = smoothness_curves(&binary, &model, 2.0, &grid, n_paths, seed)?;
    let d0_err = curve
        .t_grid
        .iter()
        .zip(&curve.d0)
        .filter(|(t, _)| **t <= 1.0 - 1e-4)
        .map(|(&t, &d)| (d - binary_d0(t)).abs())
        .fold(0.0, f64::max);
    checks.push(Check::at_most("binary_d0_oracle", d0_err, 1e-6));
    let fit = fit_theta(&curve, DEFAULT_FIT_WINDOW)?;
    checks.push(Check::at_most(
        "binary_fit_theta",
        (fit.theta_hat - 0.5).abs(),
        0.05,
    ));

    let rl_paths = n_paths.min(5_000);
    let mut mismatches = 0;
    for &theta in &THETA_LEVELS[..9] {
        if theta == 0.5 {
            continue;
        }
        let rl = riemann_liouville_norm(&binary, &model, theta, 2.0, rl_paths, seed)?;
        let proxy = besov_proxy_norm(&curve, theta, 2.0, 2)?;
        let expected_divergent = theta > 0.5;
        if rl.divergent != expected_divergent || proxy.divergent != expected_divergent {
            mismatches += 1;
        }
    }
    checks.push(Check::at_most(
        "riemann_liouville_dichotomy_mismatches",
        mismatches as f64,
        0.0,
    ));
    Ok(())
}

/// Worst `|log10(ratio)|` over the equivalence suite; the ratio must lie in
/// `[0.1, 10]`.
fn ratio_check(n_paths: usize, seed: u64) -> Result<f64> {
    let model = bm()?;
    let mut worst: f64 = 0.0;
    for payoff in [Payoff::binary(0.0, 1), Payoff::quadratic(1)] {
        for family in [NetFamily::Equidistant, NetFamily::Theta { theta: 0.5 }] {
            let report = equivalence_ratio(
                &payoff,
                &model,
                &family,
                0.5,
                2.0,
                &[4, 16, 64],
                n_paths,
                seed,
            )?;
            for row in &report.rows {
                let r = row.ratio.unwrap_or(f64::INFINITY);
                worst = worst.max(r.log10().abs());
            }
        }
    }
    Ok(worst)
}

fn rate_checks(n_paths: usize, seed: u64, checks: &mut Vec<Check>) -> Result<()> {
    for (name, net, theory) in [
        ("binary_equidistant_slope", NetFamily::Equidistant, -0.25),
        (
            "binary_theta_net_slope",
            NetFamily::Theta { theta: 0.5 },
            -0.5,
        ),
    ] {
        let config = ExperimentConfig {
            payoff: PayoffSpec {
                name: "binary".into(),
                params: [("strike".to_string(), 0.0)].into_iter().collect(),
            },
            net,
            n_list: vec![8, 16, 32, 64, 128, 256, 512],
            n_paths,
            seed,
            grid_refine: DEFAULT_HORIZON_BANDS,
            format: OutputFormat::Json,
            ..ExperimentConfig::default()
        };
        let reports = run_rate_study(&config, 0.10)?;
        checks.push(Check::at_most(
            name,
            (reports[0].slope - theory).abs(),
            0.10,
        ));
    }
    Ok(())
}

/// Runs the suite with the shipped θ-net constructor.
pub fn verify_suite(level: Level, n_paths: Option<usize>, seed: u64) -> Result<VerifyReport> {
    verify_suite_with(level, n_paths, seed, &TimeNet::theta_net)
}

/// Runs the suite with a caller-supplied θ-net constructor.
pub fn verify_suite_with(
    level: Level,
    n_paths: Option<usize>,
    seed: u64,
    theta_net: &ThetaNetFn,
) -> Result<VerifyReport> {
    let start = Instant::now();
    let n_paths = n_paths.unwrap_or(level.default_paths());
    let mut checks = Vec::new();

    let (mesh, failures) = worst_theta_mesh(theta_net);
    checks.push(Check::at_most("theta_net_mesh_bound", mesh, 1.0));
    checks.push(Check::at_most(
        "theta_net_construction_failures",
        failures as f64,
        0.0,
    ));
    checks.push(Check::at_most(
        "equidistant_mesh",
        worst_equidistant_mesh()?,
        1e-12,
    ));

    let probes = hessian_probes(seed);
    let call = check_bm_gbm_hessian_identity(&Payoff::call(1.0, 1), &probes)?;
    checks.push(Check::at_most(
        "hessian_identity_call",
        call.max_residual,
        1e-6,
    ));
    let ident = check_bm_gbm_hessian_identity(&Payoff::identity(1), &probes)?;
    checks.push(Check::at_most(
        "hessian_identity_identity",
        ident.max_residual,
        1e-10,
    ));
    let logq = check_bm_gbm_hessian_identity(&Payoff::log_quadratic(1), &probes)?;
    checks.push(Check::at_most(
        "hessian_identity_log_quadratic",
        logq.max_residual,
        1e-6,
    ));

    quadratic_checks(n_paths, seed, &mut checks)?;
    checks.push(Check::at_most(
        "martingale_means_z",
        martingale_check(n_paths, seed)?,
        4.0,
    ));
    checks.push(Check::at_most(
        "hardy_suite_ratio",
        hardy_suite()?,
        1.0 + HARDY_SLACK,
    ));
    smoothness_checks(n_paths, seed, &mut checks)?;
    checks.push(Check::at_most(
        "equivalence_ratio_log10",
        ratio_check(n_paths, seed)?,
        1.0,
    ));

    if level == Level::Full {
        rate_checks(n_paths, seed, &mut checks)?;
    }

    let mut versions = BTreeMap::new();
    versions.insert("fracnet".to_string(), env!("CARGO_PKG_VERSION").to_string());
    versions.insert(
        "rayon_threads".to_string(),
        rayon::current_num_threads().to_string(),
    );
    Ok(VerifyReport {
        config: VerifyConfig {
            level,
            n_paths,
            seed,
        },
        checks,
        versions,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_theta_net_meets_mesh_bound() {
        let (worst, failures) = worst_theta_mesh(&TimeNet::theta_net);
        assert!(worst <= 1.0, "{worst}");
        assert_eq!(failures, 0);
    }

    #[test]
    fn tampered_theta_net_fails_mesh_bound() {
        let (worst, _) = worst_theta_mesh(&tampered_theta_net);
        assert!(worst > 1.0, "{worst}");
    }

    #[test]
    fn equidistant_mesh_matches_power() {
        assert!(worst_equidistant_mesh().unwrap() <= 1e-12);
    }

    #[test]
    fn probes_are_reproducible() {
        assert_eq!(hessian_probes(3), hessian_probes(3));
        assert!(hessian_probes(3)
            .iter()
            .all(|(t, x)| (0.0..=0.99).contains(t) && x[0].abs() <= 1.0));
    }

    #[test]
    fn hardy_matrix_holds() {
        assert!(hardy_suite().unwrap() <= 1.0 + HARDY_SLACK);
    }
}
