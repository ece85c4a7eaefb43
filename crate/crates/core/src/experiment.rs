//! Experiment orchestration: configuration, convergence-rate studies and
//! the ψ-bound for non-adapted nets.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{FracnetError, Result};
use crate::gauss::{gaussian_expectation, integrate_adaptive};
use crate::model::{DiffusionModel, ModelKind, PathGenerator, PathView, DEFAULT_HORIZON_BANDS};
use crate::payoff::{Payoff, PayoffSpec};
use crate::quadrature::{log_grid, weighted_q_norm, WeightedCurve, WeightedNorm};
use crate::simulator::{
    simulate_errors, study_grid, LpEstimate, NetSource, RatioRow, SimulationRow,
};
use crate::timenet::{realize_random_net, NetFamily, TimeNet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Everything needed to rerun an experiment bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub dim: usize,
    pub payoff: PayoffSpec,
    pub net: NetFamily,
    /// Smoothness index used by rule nets and the ψ-bound.
    pub theta: f64,
    pub p_list: Vec<f64>,
    /// Fine index of the weighted norms.
    pub q: f64,
    /// Hölder split `1/p = 1/q_h + 1/r_h` for the ψ-bound.
    pub holder: Option<(f64, f64)>,
    pub n_list: Vec<usize>,
    pub n_paths: usize,
    pub seed: u64,
    /// Number of geometric refinement bands towards the horizon.
    pub grid_refine: u32,
    /// Where results go; not part of the provenance record.
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelKind::BrownianMotion,
            dim: 1,
            payoff: PayoffSpec {
                name: "binary".into(),
                params: Default::default(),
            },
            net: NetFamily::Equidistant,
            theta: 0.5,
            p_list: vec![2.0],
            q: 2.0,
            holder: None,
            n_list: vec![8, 16, 32, 64, 128, 256, 512],
            n_paths: 10_000,
            seed: 0,
            grid_refine: DEFAULT_HORIZON_BANDS,
            out: None,
            format: OutputFormat::Json,
        }
    }
}

/// `1/q + 1/r = 1/p` to 1e-12 with `p ≤ q, r ≤ ∞`.
pub fn validate_holder(p: f64, q: f64, r: f64) -> Result<()> {
    let inv = |x: f64| if x.is_infinite() { 0.0 } else { 1.0 / x };
    if !(q >= p && r >= p) || (inv(q) + inv(r) - inv(p)).abs() > 1e-12 {
        return Err(FracnetError::invalid(format!(
            "Hölder triple needs 1/q + 1/r = 1/p with p <= q, r; got p={p}, q={q}, r={r}"
        )));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p_list.is_empty() || self.p_list.iter().any(|p| !(*p >= 1.0 && p.is_finite())) {
            return Err(FracnetError::invalid(
                "p-list must contain finite values >= 1",
            ));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(FracnetError::invalid(
                "n-list must contain positive step counts",
            ));
        }
        if self.n_paths == 0 {
            return Err(FracnetError::invalid("paths must be positive"));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(FracnetError::invalid(format!(
                "theta must be in (0, 1], got {}",
                self.theta
            )));
        }
        if !(self.q >= 1.0) {
            return Err(FracnetError::invalid(format!(
                "q must be in [1, ∞], got {}",
                self.q
            )));
        }
        if let Some((qh, rh)) = self.holder {
            for &p in &self.p_list {
                validate_holder(p, qh, rh)?;
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<DiffusionModel> {
        DiffusionModel::new(self.model, self.dim)
    }

    pub fn build_payoff(&self) -> Result<Payoff> {
        self.payoff.build(self.dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
    /// No theoretical slope to compare with.
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub estimate: LpEstimate,
    pub square_function: LpEstimate,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    pub payoff: String,
    pub family: String,
    pub p: f64,
    pub points: Vec<RatePoint>,
    pub slope: f64,
    pub slope_std_err: f64,
    /// 95% interval.
    pub slope_ci: (f64, f64),
    /// `-θ/2` for equidistant nets with the payoff's smoothness, `-1/2`
    /// for θ-adapted nets.
    pub theory_slope: Option<f64>,
    pub tolerance: f64,
    pub verdict: Verdict,
}

/// Weighted least-squares slope of `ln y` on `ln x` with its standard
/// error; weights are `(y / se)²`, or uniform when any `se` is zero.
pub fn loglog_slope(x: &[f64], y: &[f64], se: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 3 || x.len() != y.len() || y.iter().any(|v| !(*v > 0.0)) {
        return Err(FracnetError::TooFewPoints {
            found: y.iter().filter(|v| **v > 0.0).count(),
            required: 3,
        });
    }
    let uniform = se.iter().any(|s| !(*s > 0.0));
    let pts: Vec<(f64, f64, f64)> = x
        .iter()
        .zip(y)
        .zip(se)
        .map(|((&a, &b), &s)| (a.ln(), b.ln(), if uniform { 1.0 } else { (b / s).powi(2) }))
        .collect();
    let sw: f64 = pts.iter().map(|p| p.2).sum();
    let mx = pts.iter().map(|p| p.2 * p.0).sum::<f64>() / sw;
    let my = pts.iter().map(|p| p.2 * p.1).sum::<f64>() / sw;
    let sxx: f64 = pts.iter().map(|p| p.2 * (p.0 - mx).powi(2)).sum();
    let slope = pts
        .iter()
        .map(|p| p.2 * (p.0 - mx) * (p.1 - my))
        .sum::<f64>()
        / sxx;
    let n = pts.len() as f64;
    let sse: f64 = pts
        .iter()
        .map(|p| p.2 * (p.1 - my - slope * (p.0 - mx)).powi(2))
        .sum();
    // scatter-based error, never below what the weights alone imply
    let scatter = (sse / (n - 2.0) / sxx).sqrt();
    let stat = if uniform { 0.0 } else { (1.0 / sxx).sqrt() };
    Ok((slope, scatter.max(stat)))
}

/// Expected log-log slope of the error along a net family.
pub fn theory_slope(payoff: &Payoff, family: &NetFamily, p: f64) -> Option<f64> {
    match family {
        NetFamily::Equidistant => payoff.known_theta(p).map(|t| -t / 2.0),
        NetFamily::Theta { .. } => Some(-0.5),
        NetFamily::Rule { .. } => None,
    }
}

/// Estimates `‖C_1‖_p` along the configured family for every `p` and `n`.
pub fn run_rate_study(config: &ExperimentConfig, tolerance: f64) -> Result<Vec<RateReport>> {
    config.validate()?;
    if config.n_list.len() < 4 {
        return Err(FracnetError::TooFewPoints {
            found: config.n_list.len(),
            required: 4,
        });
    }
    let model = config.model()?;
    let payoff = config.build_payoff()?;
    let sources: Vec<NetSource> = config
        .n_list
        .iter()
        .map(|&n| NetSource::from_family(&config.net, n, config.theta, &payoff, &model))
        .collect::<Result<_>>()?;
    let fixed: Vec<TimeNet> = sources
        .iter()
        .filter_map(|s| match s {
            NetSource::Fixed(n) => Some(n.clone()),
            NetSource::Random(_) => None,
        })
        .collect();
    let uniform = if fixed.len() == sources.len() {
        0
    } else {
        2048
    };
    let grid = study_grid(&fixed, uniform, config.grid_refine);
    let table = simulate_errors(
        &payoff,
        &model,
        &sources,
        &[],
        &grid,
        config.n_paths,
        config.seed,
    )?;
    let mut reports = Vec::with_capacity(config.p_list.len());
    for &p in &config.p_list {
        let mut points = Vec::with_capacity(config.n_list.len());
        for (k, &n) in config.n_list.iter().enumerate() {
            let row =
                RatioRow::from_columns(n, &table.c_simple[k], &table.sq_fn[k], p, config.seed)?;
            points.push(RatePoint {
                n,
                estimate: row.error,
                square_function: row.square_function,
                ratio: row.ratio,
            });
        }
        let x: Vec<f64> = points.iter().map(|r| r.n as f64).collect();
        let y: Vec<f64> = points.iter().map(|r| r.estimate.value).collect();
        let se: Vec<f64> = points.iter().map(|r| r.estimate.std_err).collect();
        let (slope, slope_se) = loglog_slope(&x, &y, &se)?;
        let half = 1.96 * slope_se;
        let theory = theory_slope(&payoff, &config.net, p);
        let inconclusive = points.windows(2).any(|w| {
            let gap = (w[0].estimate.value - w[1].estimate.value).abs();
            3.0 * w[0].estimate.std_err.max(w[1].estimate.std_err) > gap / 2.0
        });
        let verdict = match theory {
            None => Verdict::NotApplicable,
            Some(t) if (slope - t).abs() <= tolerance => Verdict::Pass,
            Some(_) if inconclusive => Verdict::Inconclusive,
            Some(_) => Verdict::Fail,
        };
        reports.push(RateReport {
            payoff: payoff.name().to_string(),
            family: config.net.label(),
            p,
            points,
            slope,
            slope_std_err: slope_se,
            slope_ci: (slope - half, slope + half),
            theory_slope: theory,
            tolerance,
            verdict,
        });
    }
    Ok(reports)
}

/// Flattens rate reports into simulation CSV rows.
pub fn rate_rows(reports: &[RateReport], n_paths: usize, seed: u64) -> Vec<SimulationRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.points.iter().map(move |pt| SimulationRow {
                net_family: r.family.clone(),
                n: pt.n,
                p: r.p,
                strategy: "gradient".into(),
                lp_value: pt.estimate.value,
                std_err: pt.estimate.std_err,
                sq_fn_value: pt.square_function.value,
                sq_fn_std_err: pt.square_function.std_err,
                ratio: pt.ratio,
                n_paths,
                seed,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiBoundReport {
    pub theta: f64,
    pub p: f64,
    pub q_h: f64,
    pub r_h: f64,
    /// `∫_0^1 ‖ψ(t)^{1/2}‖_{q_h}² (1-t)^{θ-2} dt`.
    pub integral_factor: f64,
    /// `sup_t (1-t)^{1-θ/2} ‖H_G(t, Y_t)‖_{r_h}`.
    pub sup_factor: WeightedNorm,
    /// `(integral_factor)^{1/2} · sup_factor`, with unit constant.
    pub bound: f64,
    /// `‖|τ|‖_∞` (largest step over all paths).
    pub mesh: f64,
    pub divergent: bool,
}

/// `∫_a^1 f(1-t) dt` for `f(s) ~ s^{θ-1}`, integrated in `v = s^θ` where
/// the integrand is bounded.
fn integrate_to_horizon<F: Fn(f64) -> f64>(f: F, a: f64, theta: f64) -> f64 {
    let vmax = (1.0 - a).powf(theta);
    integrate_adaptive(
        |v| {
            if v <= 0.0 {
                return 0.0;
            }
            let s = v.powf(1.0 / theta);
            f(s) * s.powf(1.0 - theta) / theta
        },
        0.0,
        vmax,
        1e-14,
        1e-12,
        4000,
    )
    .value
}

/// `∫_0^1 min(m, 1-t) (1-t)^{θ-2} dt` by adaptive quadrature.
fn deterministic_psi_integral(m: f64, theta: f64) -> f64 {
    let f = |s: f64| s.min(m) * s.powf(theta - 2.0);
    let split = 1.0 - m;
    integrate_adaptive(|t| f(1.0 - t), 0.0, split, 1e-14, 1e-12, 4000).value
        + integrate_to_horizon(f, split, theta)
}

/// `‖H_G(t, Y_t)‖_r` for `d = 1` by quadrature; `r = ∞` takes the
/// maximum over a dense set of states.
fn h_norm_at(payoff: &Payoff, model: &DiffusionModel, t: f64, r: f64) -> Result<f64> {
    let mut grad = [0.0];
    let mut hess = [0.0];
    let mut h2 = |w: f64| -> Result<f64> {
        let y = model.y_coord(t, w);
        payoff.h_squared(model, t, &[y], &mut grad, &mut hess)
    };
    let rt = t.sqrt();
    if r.is_infinite() {
        let mut best: f64 = 0.0;
        for i in 0..=4000 {
            let z = -8.0 + 16.0 * i as f64 / 4000.0;
            best = best.max(h2(rt * z)?.sqrt());
        }
        return Ok(best);
    }
    if t == 0.0 {
        return Ok(h2(0.0)?.sqrt());
    }
    let centers = payoff
        .f_view(model)?
        .breakpoints()
        .into_iter()
        .next()
        .unwrap_or_default();
    let rs = (1.0 - t).sqrt();
    let mut cuts = Vec::new();
    for b in centers {
        let mut w = rs / rt / 4.0;
        cuts.push(b / rt);
        while w < 16.0 {
            cuts.push(b / rt - w);
            cuts.push(b / rt + w);
            w *= 4.0;
        }
    }
    let mut err = None;
    let v = gaussian_expectation(
        |z| match h2(rt * z) {
            Ok(v) => v.powf(r / 2.0),
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        },
        &cuts,
        1e-12,
    );
    if let Some(e) = err {
        return Err(e);
    }
    Ok(v.value.max(0.0).powf(1.0 / r))
}

/// Upper-bound shape for the error of a non-adapted net (unit constant).
#[allow(clippy::too_many_arguments)]
pub fn psi_bound(
    net: &NetSource,
    p: f64,
    q_h: f64,
    r_h: f64,
    theta: f64,
    payoff: &Payoff,
    model: &DiffusionModel,
    n_paths: usize,
    seed: u64,
) -> Result<PsiBoundReport> {
    validate_holder(p, q_h, r_h)?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(FracnetError::invalid(format!(
            "theta must be in (0, 1), got {theta}"
        )));
    }
    if payoff.dim() != 1 || model.dim() != 1 {
        return Err(FracnetError::invalid(
            "the ψ-bound is implemented for one-dimensional payoffs",
        ));
    }
    payoff.check_model(model)?;
    let (integral_factor, mesh) = match net {
        NetSource::Fixed(n) => {
            let m = n.max_step();
            (deterministic_psi_integral(m, theta), m)
        }
        NetSource::Random(rule) => {
            let grid = study_grid(&[], 4096, DEFAULT_HORIZON_BANDS);
            let generator = PathGenerator::new(&grid, 1, seed);
            let mut w = vec![0.0; generator.values_per_path()];
            let mut maxima = Vec::with_capacity(n_paths);
            for i in 0..n_paths {
                generator.fill(i as u64, &mut w);
                let view = PathView {
                    grid: &grid,
                    dim: 1,
                    w: &w,
                };
                maxima.push(realize_random_net(rule, model, &view)?.net.max_step());
            }
            let mesh = maxima.iter().copied().fold(0.0, f64::max);
            // ‖ψ(t)^{1/2}‖_{q_h}² as a function of s = 1 - t
            let psi_norm = |s: f64| -> f64 {
                if q_h.is_infinite() {
                    mesh.min(s)
                } else {
                    let e: f64 = maxima.iter().map(|m| m.min(s).powf(q_h / 2.0)).sum::<f64>()
                        / maxima.len() as f64;
                    e.powf(2.0 / q_h)
                }
            };
            // the integrand is smooth between the sorted maxima
            let mut cuts: Vec<f64> = maxima.iter().map(|m| 1.0 - m).collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut edges = vec![0.0];
            let stride = (cuts.len() / 64).max(1);
            edges.extend(
                cuts.iter()
                    .step_by(stride)
                    .copied()
                    .filter(|c| *c > 0.0 && *c < 1.0),
            );
            edges.push(1.0);
            let f = |s: f64| psi_norm(s) * s.powf(theta - 2.0);
            let mut total = 0.0;
            for e in edges.windows(2) {
                total += if e[1] < 1.0 {
                    integrate_adaptive(|t| f(1.0 - t), e[0], e[1], 1e-13, 1e-10, 2000).value
                } else {
                    integrate_to_horizon(f, e[0], theta)
                };
            }
            (total, mesh)
        }
    };
    let t = log_grid(400, 1e-6)?;
    let values = t
        .iter()
        .map(|&ti| {
            h_norm_at(payoff, model, ti, r_h).map(|h| (1.0 - ti).powf(1.0 - theta / 2.0) * h)
        })
        .collect::<Result<Vec<f64>>>()?;
    let sup_factor = weighted_q_norm(&WeightedCurve::new(t, values)?, f64::INFINITY)?;
    let divergent = sup_factor.divergent;
    let bound = if divergent {
        f64::INFINITY
    } else {
        integral_factor.sqrt() * sup_factor.value
    };
    Ok(PsiBoundReport {
        theta,
        p,
        q_h,
        r_h,
        integral_factor,
        sup_factor,
        bound,
        mesh,
        divergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn holder_validation() {
        assert!(validate_holder(2.0, f64::INFINITY, 2.0).is_ok());
        assert!(validate_holder(2.0, 4.0, 4.0).is_ok());
        assert!(validate_holder(2.0, 4.0, 3.0).is_err());
        assert!(validate_holder(2.0, 1.5, 6.0).is_err());
        let mut c = ExperimentConfig {
            holder: Some((4.0, 4.0 + 1e-9)),
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.holder = Some((4.0, 4.0));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn deterministic_integral_closed_form() {
        for &(m, th) in &[(0.25f64, 0.5f64), (0.1, 0.3), (1.0, 0.7)] {
            let exact = m.powf(th) / (1.0 - th) - m / (1.0 - th) + m.powf(th) / th;
            assert_relative_eq!(
                deterministic_psi_integral(m, th),
                exact,
                max_relative = 1e-9
            );
            assert!(exact <= m.powf(th) / (th * (1.0 - th)));
        }
    }

    #[test]
    fn slope_of_exact_power() {
        let x = [4.0, 8.0, 16.0, 32.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.5)).collect();
        let (s, se) = loglog_slope(&x, &y, &[0.0; 4]).unwrap();
        assert_relative_eq!(s, -0.5, epsilon = 1e-12);
        assert!(se < 1e-10);
    }

    #[test]
    fn identity_psi_bound_is_zero() {
        let m = DiffusionModel::brownian(1).unwrap();
        let r = psi_bound(
            &NetSource::Fixed(TimeNet::equidistant(8).unwrap()),
            2.0,
            f64::INFINITY,
            2.0,
            0.5,
            &Payoff::identity(1),
            &m,
            0,
            0,
        )
        .unwrap();
        assert_eq!(r.bound, 0.0);
    }
}
