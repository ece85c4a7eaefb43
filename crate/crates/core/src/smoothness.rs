//! Fractional smoothness of `f(W_1)` through the decay of
//!
//! * `d⁰(t) = ‖f(W_1) - F(t, W_t)‖_p`,
//! * `d¹(t) = ‖∇F(t, W_t)‖_p`,
//! * `d²(t) = ‖D²F(t, W_t)‖_p`,
//!
//! weighted norms of these curves (the Besov proxies), a fit of the decay
//! exponent, and the Riemann–Liouville type functional
//! `D^{Y,θ} = (∫_0^1 (1-u)^{1-θ} H_G²(u, Y_u) du)^{1/2}`.
//!
//! One-dimensional payoffs are handled by nested adaptive quadrature
//! against the exact Gaussian laws; everything else uses Monte Carlo.

use std::io::Write;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{FracnetError, Result};
use crate::gauss::{gaussian_expectation, Integral};
use crate::model::{DiffusionModel, PathGenerator, PathView, TimeGrid};
use crate::payoff::Payoff;
use crate::quadrature::{
    fit_power, log_grid, plain_cell, weighted_q_norm, WeightedCurve, WeightedNorm,
};
use crate::rng::{StreamKey, DOMAIN_PROBES};
use crate::simulator::{lp_norm, LpEstimate};

/// Default upper end of smoothness grids, `1 - 1e-6`.
pub const DEFAULT_T_MAX_DELTA: f64 = 1e-6;

/// Default fit window for the decay exponent.
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (0.9, 1.0 - 1e-4);

const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMethod {
    ClosedForm,
    Quadrature,
    MonteCarlo,
}

impl CurveMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveMethod::ClosedForm => "closed_form",
            CurveMethod::Quadrature => "quadrature",
            CurveMethod::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmoothnessCurve {
    pub payoff: String,
    pub p: f64,
    pub t_grid: Vec<f64>,
    pub d0: Vec<f64>,
    pub d1: Vec<f64>,
    pub d2: Vec<f64>,
    pub method: Vec<CurveMethod>,
    /// Standard errors `[d0, d1, d2]`, zero unless Monte Carlo.
    pub std_err: Vec<[f64; 3]>,
    /// `‖f(W_1)‖_p`.
    pub f_norm: f64,
    /// Quadrature failed somewhere and Monte Carlo took over.
    pub quadrature_fallback: bool,
}

/// Default grid: 601 times equally spaced in `-ln(1 - t)` on `[0, 1 - 1e-6]`.
pub fn default_t_grid() -> Vec<f64> {
    log_grid(600, DEFAULT_T_MAX_DELTA).expect("valid constants")
}

/// Cut points resolving a feature of the given width around `center`.
fn scale_cuts(center: f64, width: f64, cuts: &mut Vec<f64>) {
    cuts.push(center);
    let mut w = width / 4.0;
    while w < 16.0 {
        cuts.push(center - w);
        cuts.push(center + w);
        w *= 4.0;
    }
}

fn checked(r: Integral) -> Option<f64> {
    (r.value.is_finite() && r.error <= 1e-8_f64.max(1e-6 * r.value.abs())).then_some(r.value)
}

/// `E|Z|^p` for a standard normal `Z`.
fn abs_normal_moment(p: f64) -> f64 {
    2f64.powf(p / 2.0) * statrs::function::gamma::gamma((p + 1.0) / 2.0)
        / std::f64::consts::PI.sqrt()
}

/// `(d⁰, d¹, d²)` at one time by quadrature; `None` if anything fails.
fn quadrature_point(f: &Payoff, bm: &DiffusionModel, p: f64, t: f64) -> Option<[f64; 3]> {
    let s = 1.0 - t;
    let rs = s.sqrt();
    let bps = f.breakpoints().into_iter().next().unwrap_or_default();
    let mut grad = [0.0];
    let mut hess = [0.0];
    let inner = |x: f64| -> Option<f64> {
        let big_f = f.conditional_expectation(bm, t, &[x]).ok()?;
        let mut cuts = Vec::new();
        for &b in &bps {
            cuts.push((b - x) / rs);
        }
        checked(gaussian_expectation(
            |z| (f.g(&[x + rs * z]) - big_f).abs().powf(p),
            &cuts,
            QUAD_TOL,
        ))
    };
    if t == 0.0 {
        let d0 = inner(0.0)?;
        f.jet_into(bm, 0.0, &[0.0], &mut grad, &mut hess).ok()?;
        return Some([d0.powf(1.0 / p), grad[0].abs(), hess[0].abs()]);
    }
    let rt = t.sqrt();
    let mut outer_cuts = Vec::new();
    for &b in &bps {
        scale_cuts(b / rt, rs / rt, &mut outer_cuts);
    }
    if bps.is_empty() {
        scale_cuts(0.0, rs / rt, &mut outer_cuts);
    }
    let mut failed = false;
    let d0 = gaussian_expectation(
        |z| {
            inner(rt * z).unwrap_or_else(|| {
                failed = true;
                0.0
            })
        },
        &outer_cuts,
        QUAD_TOL,
    );
    if failed {
        return None;
    }
    let d0 = checked(d0)?;
    let mut derivs = [0.0; 2];
    for (k, slot) in derivs.iter_mut().enumerate() {
        let mut failed = false;
        let r = gaussian_expectation(
            |z| match f.jet_into(bm, t, &[rt * z], &mut grad, &mut hess) {
                Ok(_) => if k == 0 { grad[0] } else { hess[0] }.abs().powf(p),
                Err(_) => {
                    failed = true;
                    0.0
                }
            },
            &outer_cuts,
            QUAD_TOL,
        );
        if failed {
            return None;
        }
        *slot = checked(r)?;
    }
    Some([
        d0.powf(1.0 / p),
        derivs[0].powf(1.0 / p),
        derivs[1].powf(1.0 / p),
    ])
}

/// Monte Carlo `(d⁰, d¹, d²)` with delta-method standard errors, drawing
/// `(W_t, W_1)` exactly. Stream `index` keeps points independent.
fn monte_carlo_point(
    f: &Payoff,
    bm: &DiffusionModel,
    p: f64,
    t: f64,
    n_paths: usize,
    key: &StreamKey,
    index: u64,
) -> Result<([f64; 3], [f64; 3])> {
    let d = bm.dim();
    let mut rng = key.stream(index);
    let (rt, rs) = (t.sqrt(), (1.0 - t).sqrt());
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    let mut acc = [[0.0; 2]; 3];
    for _ in 0..n_paths {
        for k in 0..d {
            let z1: f64 = StandardNormal.sample(&mut rng);
            let z2: f64 = StandardNormal.sample(&mut rng);
            x[k] = rt * z1;
            y[k] = x[k] + rs * z2;
        }
        let big_f = f.jet_into(bm, t, &x, &mut grad, &mut hess)?;
        let vals = [
            (f.g(&y) - big_f).abs(),
            grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
            hess.iter().map(|h| h * h).sum::<f64>().sqrt(),
        ];
        for (a, v) in acc.iter_mut().zip(vals) {
            let vp = v.powf(p);
            a[0] += vp;
            a[1] += vp * vp;
        }
    }
    let n = n_paths as f64;
    let mut value = [0.0; 3];
    let mut se = [0.0; 3];
    for k in 0..3 {
        let m = acc[k][0] / n;
        let var = (acc[k][1] / n - m * m).max(0.0) * n / (n - 1.0).max(1.0);
        value[k] = m.powf(1.0 / p);
        // delta method for m^{1/p}
        se[k] = if m > 0.0 {
            (var / n).sqrt() * m.powf(1.0 / p - 1.0) / p
        } else {
            0.0
        };
    }
    Ok((value, se))
}

/// Proxy curves of `payoff` viewed as a functional of Brownian motion.
/// `n_paths` and `seed` only matter where Monte Carlo is used.
pub fn smoothness_curves(
    payoff: &Payoff,
    model: &DiffusionModel,
    p: f64,
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<SmoothnessCurve> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(FracnetError::invalid(format!(
            "p must be in [1, ∞), got {p}"
        )));
    }
    if t_grid.is_empty()
        || t_grid[0] < 0.0
        || *t_grid.last().unwrap() > 1.0 - DEFAULT_T_MAX_DELTA + 1e-15
        || t_grid.windows(2).any(|w| !(w[1] > w[0]))
    {
        return Err(FracnetError::invalid(
            "t_grid must be strictly increasing inside [0, 1 - 1e-6]",
        ));
    }
    let f = payoff.f_view(model)?;
    let bm = DiffusionModel::brownian(f.dim())?;
    let key = StreamKey::new(seed, DOMAIN_PROBES);
    let is_identity = f.name() == "identity" && f.dim() == 1;
    let one_dim = f.dim() == 1;
    if !one_dim && n_paths < 2 {
        return Err(FracnetError::invalid(
            "Monte Carlo curves need at least 2 paths",
        ));
    }

    let points: Vec<Result<([f64; 3], [f64; 3], CurveMethod)>> = t_grid
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            if is_identity {
                let d0 = (1.0 - t).sqrt() * abs_normal_moment(p).powf(1.0 / p);
                return Ok(([d0, 1.0, 0.0], [0.0; 3], CurveMethod::ClosedForm));
            }
            if one_dim {
                if let Some(v) = quadrature_point(&f, &bm, p, t) {
                    return Ok((v, [0.0; 3], CurveMethod::Quadrature));
                }
            }
            if n_paths < 2 {
                return Err(FracnetError::invalid(
                    "Monte Carlo fallback needs at least 2 paths",
                ));
            }
            let (v, se) = monte_carlo_point(&f, &bm, p, t, n_paths, &key, i as u64)?;
            Ok((v, se, CurveMethod::MonteCarlo))
        })
        .collect();
    let mut curve = SmoothnessCurve {
        payoff: payoff.name().to_string(),
        p,
        t_grid: t_grid.to_vec(),
        d0: Vec::with_capacity(t_grid.len()),
        d1: Vec::with_capacity(t_grid.len()),
        d2: Vec::with_capacity(t_grid.len()),
        method: Vec::with_capacity(t_grid.len()),
        std_err: Vec::with_capacity(t_grid.len()),
        f_norm: 0.0,
        quadrature_fallback: false,
    };
    for pt in points {
        let (v, se, m) = pt?;
        curve.d0.push(v[0]);
        curve.d1.push(v[1]);
        curve.d2.push(v[2]);
        curve.std_err.push(se);
        curve.method.push(m);
        if one_dim && m == CurveMethod::MonteCarlo {
            curve.quadrature_fallback = true;
        }
    }
    curve.f_norm = f_norm(&f, p, n_paths, &key, t_grid.len() as u64)?;
    Ok(curve)
}

fn f_norm(f: &Payoff, p: f64, n_paths: usize, key: &StreamKey, index: u64) -> Result<f64> {
    if f.dim() == 1 {
        let bps = f.breakpoints().into_iter().next().unwrap_or_default();
        if let Some(v) = checked(gaussian_expectation(
            |z| f.g(&[z]).abs().powf(p),
            &bps,
            QUAD_TOL,
        )) {
            return Ok(v.powf(1.0 / p));
        }
    }
    let mut rng = key.stream(index);
    let mut y = vec![0.0; f.dim()];
    let mut sum = 0.0;
    for _ in 0..n_paths.max(1) {
        for v in y.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        sum += f.g(&y).abs().powf(p);
    }
    Ok((sum / n_paths.max(1) as f64).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyNorm {
    pub which: u8,
    pub theta: f64,
    pub norm: WeightedNorm,
    pub f_norm: f64,
    /// `norm + ‖f‖_p`, infinite when divergent.
    pub total: f64,
    pub divergent: bool,
}

/// Exponent applied to `d^which` in the proxy norm.
pub fn proxy_exponent(which: u8, theta: f64) -> f64 {
    (which as f64 - theta) / 2.0
}

/// `‖(1-t)^{(which-θ)/2} d^{which}(t)‖_{L_q(dt/(1-t))} + ‖f‖_p`.
pub fn besov_proxy_norm(
    curve: &SmoothnessCurve,
    theta: f64,
    q: f64,
    which: u8,
) -> Result<ProxyNorm> {
    let d = match which {
        0 => &curve.d0,
        1 => &curve.d1,
        2 => &curve.d2,
        _ => {
            return Err(FracnetError::invalid(format!(
                "which must be 0, 1 or 2, got {which}"
            )))
        }
    };
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(FracnetError::invalid(format!(
            "theta must be in (0, 1], got {theta}"
        )));
    }
    let a = proxy_exponent(which, theta);
    let values = curve
        .t_grid
        .iter()
        .zip(d)
        .map(|(&t, &v)| if v == 0.0 { 0.0 } else { (1.0 - t).powf(a) * v })
        .collect();
    let norm = weighted_q_norm(&WeightedCurve::new(curve.t_grid.clone(), values)?, q)?;
    let divergent = norm.divergent;
    Ok(ProxyNorm {
        which,
        theta,
        norm,
        f_norm: curve.f_norm,
        total: if divergent {
            f64::INFINITY
        } else {
            norm.value + curve.f_norm
        },
        divergent,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThetaFit {
    pub theta_hat: f64,
    pub slope: f64,
    /// 95% confidence interval of the slope.
    pub slope_ci: (f64, f64),
    pub window: (f64, f64),
    pub r_squared: f64,
    pub n_points: usize,
    /// The estimate sits at or beyond the endpoint θ = 1 (or at 0).
    pub boundary: bool,
}

/// Least-squares slope of `ln d⁰` against `ln(1 - t)` over the window;
/// `θ̂ = 2 · slope`. Monte Carlo points are weighted by inverse variance.
pub fn fit_theta(curve: &SmoothnessCurve, window: (f64, f64)) -> Result<ThetaFit> {
    let (lo, hi) = window;
    if !(0.0 <= lo && lo < hi && hi < 1.0) {
        return Err(FracnetError::invalid(format!(
            "fit window must lie in [0, 1), got {window:?}"
        )));
    }
    let mut pts = Vec::new();
    for (i, &t) in curve.t_grid.iter().enumerate() {
        let d0 = curve.d0[i];
        if t < lo || t > hi || !(d0 > 0.0) {
            continue;
        }
        let se = curve.std_err[i][0];
        let w = if se > 0.0 { (d0 / se).powi(2) } else { 1.0 };
        pts.push(((1.0 - t).ln(), d0.ln(), w));
    }
    if pts.len() < 5 {
        return Err(FracnetError::TooFewPoints {
            found: pts.len(),
            required: 5,
        });
    }
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| p.2 * (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let sse: f64 = pts
        .iter()
        .map(|p| p.2 * (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    let n = pts.len() as f64;
    let se = (sse / (n - 2.0) / sxx).sqrt();
    let tq = StudentsT::new(0.0, 1.0, n - 2.0)
        .map_err(|e| FracnetError::invalid(e.to_string()))?
        .inverse_cdf(0.975);
    let r_squared = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let theta_hat = 2.0 * slope;
    Ok(ThetaFit {
        theta_hat,
        slope,
        slope_ci: (slope - tq * se, slope + tq * se),
        window,
        r_squared,
        n_points: pts.len(),
        boundary: theta_hat >= 1.0 - 1e-9 || 2.0 * (slope + tq * se) >= 1.0 || theta_hat <= 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeBoundReport {
    /// `sup (1-t)^{1/2} d¹/d⁰`.
    pub first: f64,
    /// `sup (1-t) d²/d⁰`.
    pub second: f64,
    /// Grid points skipped because `d⁰ = 0`.
    pub excluded: usize,
    pub finite: bool,
}

pub fn derivative_bound_check(curve: &SmoothnessCurve) -> Result<DerivativeBoundReport> {
    let mut first: f64 = 0.0;
    let mut second: f64 = 0.0;
    let mut excluded = 0;
    for (i, &t) in curve.t_grid.iter().enumerate() {
        let d0 = curve.d0[i];
        if !(d0 > 0.0) {
            excluded += 1;
            continue;
        }
        if !(curve.d1[i].is_finite() && curve.d2[i].is_finite()) {
            return Err(FracnetError::NonFinite { count: 1 });
        }
        first = first.max((1.0 - t).sqrt() * curve.d1[i] / d0);
        second = second.max((1.0 - t) * curve.d2[i] / d0);
    }
    Ok(DerivativeBoundReport {
        first,
        second,
        excluded,
        finite: first.is_finite() && second.is_finite(),
    })
}

pub const SMOOTHNESS_CSV_HEADER: &str =
    "payoff,p,t,d0,d1,d2,method,d0_std_err,d1_std_err,d2_std_err";

pub fn write_smoothness_csv<W: Write>(mut out: W, curve: &SmoothnessCurve) -> Result<()> {
    writeln!(out, "{SMOOTHNESS_CSV_HEADER}")?;
    for i in 0..curve.t_grid.len() {
        let se = curve.std_err[i];
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            curve.payoff,
            curve.p,
            curve.t_grid[i],
            curve.d0[i],
            curve.d1[i],
            curve.d2[i],
            curve.method[i].as_str(),
            se[0],
            se[1],
            se[2]
        )?;
    }
    Ok(())
}

/// Outcome of evaluating `‖D^{Y,θ} g(Y_1)‖_p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiemannLiouvilleReport {
    pub theta: f64,
    pub p: f64,
    /// Monte Carlo estimate over the simulated paths.
    pub estimate: LpEstimate,
    /// For `p = 2` and one-dimensional payoffs: `(∫ (1-u)^{1-θ} E H_G² du)^{1/2}`
    /// by quadrature, which decides finiteness.
    pub expected_square: Option<WeightedNorm>,
    /// Monte Carlo norms truncated at `1 - 10^{-j}`, `j = 1..=6`.
    pub truncated: Vec<(f64, f64)>,
    /// Paths whose own time integral diverges.
    pub divergent_paths: usize,
    pub divergent: bool,
}

impl RiemannLiouvilleReport {
    pub fn is_finite(&self) -> bool {
        !self.divergent
    }
}

/// Truncation points of the growth diagnostic.
const TRUNCATIONS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];

/// `E H_G²(u, Y_u)` by quadrature on the default grid, for `d = 1`.
fn expected_h2_curve(payoff: &Payoff, model: &DiffusionModel) -> Option<(Vec<f64>, Vec<f64>)> {
    let grid = default_t_grid();
    // features sit where the Brownian view of the payoff jumps or kinks
    let bps = payoff
        .f_view(model)
        .ok()?
        .breakpoints()
        .into_iter()
        .next()
        .unwrap_or_default();
    let vals: Vec<Option<f64>> = grid
        .par_iter()
        .map(|&t| {
            let mut grad = [0.0];
            let mut hess = [0.0];
            let mut h2 = |x: f64| -> Option<f64> {
                let y = model.y_coord(t, x);
                payoff.h_squared(model, t, &[y], &mut grad, &mut hess).ok()
            };
            if t == 0.0 {
                return h2(0.0);
            }
            let (rt, rs) = (t.sqrt(), (1.0 - t).sqrt());
            let mut cuts = Vec::new();
            for &b in &bps {
                scale_cuts(b / rt, rs / rt, &mut cuts);
            }
            let mut failed = false;
            let r = gaussian_expectation(
                |z| {
                    h2(rt * z).unwrap_or_else(|| {
                        failed = true;
                        0.0
                    })
                },
                &cuts,
                QUAD_TOL,
            );
            if failed {
                None
            } else {
                checked(r)
            }
        })
        .collect();
    let vals: Option<Vec<f64>> = vals.into_iter().collect();
    Some((grid, vals?))
}

/// Grid for the per-path time integral: uniform in `-ln(1 - u)` plus the
/// truncation points.
fn rl_grid() -> TimeGrid {
    let mut knots = log_grid(240, DEFAULT_T_MAX_DELTA).expect("valid constants");
    knots.extend(TRUNCATIONS.iter().map(|d| 1.0 - d));
    knots.push(1.0);
    TimeGrid::builder().quadrature_knots(knots).build()
}

/// `‖(∫_0^1 (1-u)^{1-θ} H_G²(u, Y_u) du)^{1/2}‖_{L_p}`.
pub fn riemann_liouville_norm(
    payoff: &Payoff,
    model: &DiffusionModel,
    theta: f64,
    p: f64,
    n_paths: usize,
    seed: u64,
) -> Result<RiemannLiouvilleReport> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(FracnetError::invalid(format!(
            "theta must be in (0, 1], got {theta}"
        )));
    }
    if payoff.dim() != model.dim() {
        return Err(FracnetError::invalid("payoff and model dimensions differ"));
    }
    payoff.check_model(model)?;
    let grid = rl_grid();
    let knots = grid.knots().to_vec();
    let last = knots.len() - 1;
    let trunc_idx: Vec<usize> = TRUNCATIONS
        .iter()
        .map(|d| grid.index_of(1.0 - d).expect("truncation knot present"))
        .collect();
    let d = model.dim();
    let generator = PathGenerator::new(&grid, d, seed);
    let chunk = 256;
    // per path: full integral, divergent flag, truncated integrals
    let stride = 2 + TRUNCATIONS.len();
    let rows: Vec<Result<Vec<f64>>> = (0..n_paths.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let lo = c * chunk;
            let hi = (lo + chunk).min(n_paths);
            let mut w = vec![0.0; generator.values_per_path()];
            let mut y = vec![0.0; d];
            let mut grad = vec![0.0; d];
            let mut hess = vec![0.0; d * d];
            let mut k = vec![0.0; last];
            let mut out = Vec::with_capacity((hi - lo) * stride);
            for path in lo..hi {
                generator.fill(path as u64, &mut w);
                let view = PathView {
                    grid: &grid,
                    dim: d,
                    w: &w,
                };
                for (j, kj) in k.iter_mut().enumerate() {
                    let t = knots[j];
                    model.map_w_to_y_into(t, view.w_at(j), &mut y);
                    let h2 = payoff.h_squared(model, t, &y, &mut grad, &mut hess)?;
                    *kj = if h2 == 0.0 {
                        0.0
                    } else {
                        (1.0 - t).powf(1.0 - theta) * h2
                    };
                }
                let mut cum = vec![0.0; last];
                for j in 1..last {
                    cum[j] = cum[j - 1] + plain_cell(knots[j - 1], knots[j], k[j - 1], k[j]);
                }
                // close [1 - 1e-6, 1) with the fitted power of the integrand
                let delta = 1.0 - knots[last - 1];
                let from = last.saturating_sub(6);
                let xs: Vec<f64> = knots[from..last].iter().map(|t| 1.0 - t).collect();
                let (tail, div) = if k[last - 1] == 0.0 {
                    (0.0, false)
                } else {
                    match fit_power(&xs, &k[from..last]) {
                        Some((c, a)) if a > -1.0 => (c * delta.powf(a + 1.0) / (a + 1.0), false),
                        _ => (f64::INFINITY, true),
                    }
                };
                let full = cum[last - 1] + tail;
                out.push(full.sqrt());
                out.push(if div { 1.0 } else { 0.0 });
                for &ti in &trunc_idx {
                    out.push(cum[ti].sqrt());
                }
            }
            Ok(out)
        })
        .collect();
    let mut flat = Vec::with_capacity(n_paths * stride);
    for r in rows {
        flat.extend(r?);
    }
    let col = |j: usize| -> Vec<f64> { flat.iter().skip(j).step_by(stride).copied().collect() };
    let full = col(0);
    let divergent_paths = col(1).iter().filter(|&&v| v > 0.0).count();
    let mut truncated = Vec::with_capacity(TRUNCATIONS.len());
    for (j, dlt) in TRUNCATIONS.iter().enumerate() {
        let e = lp_norm(&col(2 + j), p, seed)?;
        truncated.push((1.0 - dlt, e.value));
    }
    let finite_paths: Vec<f64> = full
        .iter()
        .map(|v| if v.is_finite() { *v } else { 0.0 })
        .collect();
    let mut estimate = lp_norm(&finite_paths, p, seed)?;

    let expected_square = if p == 2.0 && d == 1 {
        match expected_h2_curve(payoff, model) {
            Some((t, eh2)) => {
                let v = t
                    .iter()
                    .zip(&eh2)
                    .map(|(&u, &h)| {
                        if h == 0.0 {
                            0.0
                        } else {
                            (1.0 - u).powf(2.0 - theta) * h
                        }
                    })
                    .collect();
                let n = weighted_q_norm(&WeightedCurve::new(t, v)?, 1.0)?;
                Some(WeightedNorm {
                    value: n.value.sqrt(),
                    ..n
                })
            }
            None => None,
        }
    } else {
        None
    };
    let divergent = match &expected_square {
        Some(n) => n.divergent,
        None => growth_diverges(&truncated) || divergent_paths > 0,
    };
    if divergent {
        estimate.value = f64::INFINITY;
    }
    Ok(RiemannLiouvilleReport {
        theta,
        p,
        estimate,
        expected_square,
        truncated,
        divergent_paths,
        divergent,
    })
}

/// Applies the tail rule to successive truncations: the increments of the
/// `p`-th moment are extrapolated geometrically; a tail beyond ten times
/// the finite part, or increments that do not shrink, mean divergence.
fn growth_diverges(truncated: &[(f64, f64)]) -> bool {
    let n = truncated.len();
    if n < 3 {
        return false;
    }
    let a = truncated[n - 3].1;
    let b = truncated[n - 2].1;
    let c = truncated[n - 1].1;
    let (d1, d2) = (b - a, c - b);
    if d2 <= 0.0 {
        return false;
    }
    if d1 <= 0.0 || d2 >= d1 {
        return true;
    }
    let r = d2 / d1;
    let tail = d2 * r / (1.0 - r);
    tail > 10.0 * c
}
