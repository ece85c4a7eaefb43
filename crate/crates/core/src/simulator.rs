//! Per-path error processes of Riemann approximations, the square function
//! that controls them, and Monte Carlo `L_p` estimation.
//!
//! The stochastic integral is realized exactly on each path as
//! `g(Y_1) - G(0, Y_0)`, so the only discretization under study is the
//! Riemann sum itself.

use std::fmt;
use std::io::Write;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FracnetError, Result};
use crate::model::{DiffusionModel, PathGenerator, PathView, TimeGrid};
use crate::payoff::Payoff;
use crate::quadrature::kernel_interval_integral;
use crate::rng::{StreamKey, DOMAIN_BOOTSTRAP};
use crate::timenet::{realize_random_net, AdaptiveNetRule, NetFamily, TimeNet};

/// Bootstrap resamples behind every standard error.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Paths handled per parallel work item. Results do not depend on it.
const CHUNK: usize = 256;

type CustomRule = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Hedging weights `v_{τ_{i-1}}`, each a function of `(τ_{i-1}, Y_{τ_{i-1}})`.
#[derive(Clone)]
pub enum Strategy {
    /// `v = ∇G(τ_{i-1}, Y_{τ_{i-1}})`.
    GradientAtKnot,
    Zero,
    /// `v = ∇G + offset` in every coordinate.
    Perturbed {
        offset: f64,
    },
    /// `rule(t, y, v)` writes `v`.
    Custom {
        name: String,
        rule: Arc<CustomRule>,
    },
}

impl fmt::Debug for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Strategy {
    pub fn custom<F>(name: impl Into<String>, rule: F) -> Self
    where
        F: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        Strategy::Custom {
            name: name.into(),
            rule: Arc::new(rule),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Strategy::GradientAtKnot => "gradient".into(),
            Strategy::Zero => "zero".into(),
            Strategy::Perturbed { offset } => format!("perturbed({offset})"),
            Strategy::Custom { name, .. } => name.clone(),
        }
    }

    fn weights(&self, t: f64, y: &[f64], grad: &[f64], out: &mut [f64]) {
        match self {
            Strategy::GradientAtKnot => out.copy_from_slice(grad),
            Strategy::Zero => out.fill(0.0),
            Strategy::Perturbed { offset } => {
                for (o, g) in out.iter_mut().zip(grad) {
                    *o = g + offset;
                }
            }
            Strategy::Custom { rule, .. } => rule(t, y, out),
        }
    }
}

/// A deterministic net, or a rule producing one net per path.
#[derive(Debug, Clone)]
pub enum NetSource {
    Fixed(TimeNet),
    Random(AdaptiveNetRule),
}

impl NetSource {
    /// Member `n` of a family; rule families use `theta` and the payoff
    /// where the rule needs them.
    pub fn from_family(
        family: &NetFamily,
        n: usize,
        theta: f64,
        payoff: &Payoff,
        model: &DiffusionModel,
    ) -> Result<Self> {
        match family {
            NetFamily::Rule { name } => Ok(NetSource::Random(AdaptiveNetRule::named(
                name,
                n,
                theta,
                Some((payoff, model)),
            )?)),
            other => Ok(NetSource::Fixed(
                other.net(n).expect("deterministic family")?,
            )),
        }
    }
}

/// Error quantities on one path for one net.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSample {
    /// `C_1(g(Y_1), τ)`: gradient weights.
    pub c_simple: f64,
    /// `C_1(g(Y_1), τ, v)` for the requested strategy.
    pub c_strategy: Option<f64>,
    /// `(Σ_i ∫ (τ_i - t) H_G²(t, Y_t) dt)^{1/2}`.
    pub sq_fn: f64,
    pub net_used: TimeNet,
}

/// Per-path cache of `Y`, `∇G` and `H_G²` at every grid knot.
struct PathState {
    y: Vec<f64>,
    grad: Vec<f64>,
    h2: Vec<f64>,
    exact: f64,
}

impl PathState {
    fn empty(len: usize, d: usize) -> Self {
        PathState {
            y: vec![0.0; len * d],
            grad: vec![0.0; len * d],
            h2: vec![0.0; len],
            exact: 0.0,
        }
    }

    fn load(
        &mut self,
        payoff: &Payoff,
        model: &DiffusionModel,
        path: &PathView<'_>,
        hess: &mut [f64],
    ) -> Result<()> {
        let d = model.dim();
        let knots = path.grid.knots();
        let last = knots.len() - 1;
        for (k, &t) in knots.iter().enumerate() {
            let yk = &mut self.y[k * d..(k + 1) * d];
            model.map_w_to_y_into(t, path.w_at(k), yk);
        }
        for k in 0..last {
            let yk = &self.y[k * d..(k + 1) * d];
            let gk = &mut self.grad[k * d..(k + 1) * d];
            self.h2[k] = payoff.h_squared(model, knots[k], yk, gk, hess)?;
        }
        let g1 = payoff.g(&self.y[last * d..]);
        let g0 = payoff.conditional_expectation(model, 0.0, &self.y[..d])?;
        self.exact = g1 - g0;
        Ok(())
    }

    fn riemann(
        &self,
        grid: &TimeGrid,
        d: usize,
        idx: &[usize],
        strategy: &Strategy,
        v: &mut [f64],
    ) -> f64 {
        let knots = grid.knots();
        let mut sum = 0.0;
        for w in idx.windows(2) {
            let (a, b) = (w[0], w[1]);
            let ya = &self.y[a * d..(a + 1) * d];
            strategy.weights(knots[a], ya, &self.grad[a * d..(a + 1) * d], v);
            for c in 0..d {
                sum += v[c] * (self.y[b * d + c] - ya[c]);
            }
        }
        sum
    }

    fn square_function(&self, grid: &TimeGrid, idx: &[usize]) -> Result<f64> {
        let knots = grid.knots();
        let last = knots.len() - 1;
        let mut total = 0.0;
        for w in idx.windows(2) {
            let (a, b) = (w[0], w[1]);
            // H_G is not defined at the horizon; the kernel rule closes it
            let hi = if b == last { last - 1 } else { b };
            total += kernel_interval_integral(&knots[a..=hi], &self.h2[a..=hi], knots[b])?;
        }
        Ok(total.sqrt())
    }
}

fn net_indices(
    source: &NetSource,
    fixed: Option<&[usize]>,
    model: &DiffusionModel,
    path: &PathView<'_>,
) -> Result<(Vec<usize>, Option<TimeNet>)> {
    match (source, fixed) {
        (NetSource::Fixed(_), Some(idx)) => Ok((idx.to_vec(), None)),
        (NetSource::Random(rule), _) => {
            let r = realize_random_net(rule, model, path)?;
            Ok((r.indices, Some(r.net)))
        }
        (NetSource::Fixed(net), None) => Ok((path.grid.locate(net)?, None)),
    }
}

/// `∫_0^1 ∇G dY` on one path, through `g(Y_1) - G(0, Y_0)`.
pub fn exact_integral(payoff: &Payoff, model: &DiffusionModel, path: &PathView<'_>) -> Result<f64> {
    check_pair(payoff, model, path)?;
    let d = model.dim();
    let last = path.grid.len() - 1;
    let y1 = model.map_w_to_y(1.0, path.w_at(last));
    let y0 = model.map_w_to_y(0.0, path.w_at(0));
    Ok(payoff.g(&y1) - payoff.conditional_expectation(model, 0.0, &y0[..d])?)
}

/// `Σ_i v_{τ_{i-1}} (Y_{τ_i} - Y_{τ_{i-1}})` along one path.
pub fn riemann_sum(
    payoff: &Payoff,
    model: &DiffusionModel,
    path: &PathView<'_>,
    net: &TimeNet,
    strategy: &Strategy,
) -> Result<f64> {
    check_pair(payoff, model, path)?;
    let idx = path.grid.locate(net)?;
    let d = model.dim();
    let mut sum = 0.0;
    let mut v = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut hess = vec![0.0; d * d];
    for w in idx.windows(2) {
        let (a, b) = (w[0], w[1]);
        let ta = path.grid.knots()[a];
        let ya = model.map_w_to_y(ta, path.w_at(a));
        let yb = model.map_w_to_y(path.grid.knots()[b], path.w_at(b));
        if matches!(strategy, Strategy::Zero | Strategy::Custom { .. }) {
            grad.fill(0.0);
        } else {
            payoff.jet_into(model, ta, &ya, &mut grad, &mut hess)?;
        }
        strategy.weights(ta, &ya, &grad, &mut v);
        for c in 0..d {
            sum += v[c] * (yb[c] - ya[c]);
        }
    }
    Ok(sum)
}

/// Error and square function of one path for one net.
pub fn error_sample(
    payoff: &Payoff,
    model: &DiffusionModel,
    path: &PathView<'_>,
    net: &NetSource,
    strategy: Option<&Strategy>,
) -> Result<ErrorSample> {
    check_pair(payoff, model, path)?;
    let d = model.dim();
    let mut state = PathState::empty(path.grid.len(), d);
    let mut hess = vec![0.0; d * d];
    state.load(payoff, model, path, &mut hess)?;
    let (idx, realized) = net_indices(net, None, model, path)?;
    let net_used = match (realized, net) {
        (Some(n), _) => n,
        (None, NetSource::Fixed(n)) => n.clone(),
        (None, NetSource::Random(_)) => unreachable!(),
    };
    let mut v = vec![0.0; d];
    let c_simple =
        state.exact - state.riemann(path.grid, d, &idx, &Strategy::GradientAtKnot, &mut v);
    let c_strategy = strategy.map(|s| state.exact - state.riemann(path.grid, d, &idx, s, &mut v));
    Ok(ErrorSample {
        c_simple,
        c_strategy,
        sq_fn: state.square_function(path.grid, &idx)?,
        net_used,
    })
}

fn check_pair(payoff: &Payoff, model: &DiffusionModel, path: &PathView<'_>) -> Result<()> {
    if payoff.dim() != model.dim() || path.dim != model.dim() {
        return Err(FracnetError::invalid(format!(
            "dimension mismatch: payoff {}, model {}, path {}",
            payoff.dim(),
            model.dim(),
            path.dim
        )));
    }
    payoff.check_model(model)
}

/// Default simulation grid: the union of the nets' knots, a uniform grid
/// and geometric refinement `1 - 2^{-j}` towards the horizon.
pub fn study_grid(nets: &[TimeNet], uniform: usize, bands: u32) -> TimeGrid {
    let mut b = TimeGrid::builder();
    for n in nets {
        b = b.net(n);
    }
    if uniform > 0 {
        b = b.uniform(uniform);
    }
    if bands > 0 {
        b = b.horizon_refinement(bands, 8);
    }
    b.build()
}

/// Columns of per-path results for several nets simulated on shared paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTable {
    pub n_paths: usize,
    pub seed: u64,
    pub strategies: Vec<String>,
    /// `g(Y_1) - G(0, Y_0)` per path.
    pub exact: Vec<f64>,
    /// `[net][path]`.
    pub c_simple: Vec<Vec<f64>>,
    pub sq_fn: Vec<Vec<f64>>,
    /// `[net][strategy][path]`.
    pub c_strategy: Vec<Vec<Vec<f64>>>,
    /// Mean number of steps per net (differs from `n` for random nets).
    pub mean_steps: Vec<f64>,
}

/// Simulates `n_paths` paths once and evaluates every net and strategy on
/// each. Output is independent of the number of worker threads.
pub fn simulate_errors(
    payoff: &Payoff,
    model: &DiffusionModel,
    nets: &[NetSource],
    strategies: &[Strategy],
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<ErrorTable> {
    if payoff.dim() != model.dim() {
        return Err(FracnetError::invalid("payoff and model dimensions differ"));
    }
    payoff.check_model(model)?;
    if n_paths == 0 {
        return Err(FracnetError::invalid("n_paths must be at least 1"));
    }
    let fixed: Vec<Option<Vec<usize>>> = nets
        .iter()
        .map(|n| match n {
            NetSource::Fixed(net) => grid.locate(net).map(Some),
            NetSource::Random(_) => Ok(None),
        })
        .collect::<Result<_>>()?;
    let d = model.dim();
    let n_nets = nets.len();
    let n_strat = strategies.len();
    // per path: exact, then per net (c_simple, sq_fn, steps, strategies...)
    let per_net = 3 + n_strat;
    let stride = 1 + n_nets * per_net;
    let generator = PathGenerator::new(grid, d, seed);
    let n_chunks = n_paths.div_ceil(CHUNK);
    let chunks: Vec<Result<Vec<f64>>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            let mut out = Vec::with_capacity((hi - lo) * stride);
            let mut w = vec![0.0; generator.values_per_path()];
            let mut state = PathState::empty(grid.len(), d);
            let mut hess = vec![0.0; d * d];
            let mut v = vec![0.0; d];
            for p in lo..hi {
                generator.fill(p as u64, &mut w);
                let view = PathView {
                    grid,
                    dim: d,
                    w: &w,
                };
                state.load(payoff, model, &view, &mut hess)?;
                out.push(state.exact);
                for (k, net) in nets.iter().enumerate() {
                    let (idx, _) = net_indices(net, fixed[k].as_deref(), model, &view)?;
                    out.push(
                        state.exact
                            - state.riemann(grid, d, &idx, &Strategy::GradientAtKnot, &mut v),
                    );
                    out.push(state.square_function(grid, &idx)?);
                    out.push((idx.len() - 1) as f64);
                    for s in strategies {
                        out.push(state.exact - state.riemann(grid, d, &idx, s, &mut v));
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut rows = Vec::with_capacity(n_paths * stride);
    for c in chunks {
        rows.extend(c?);
    }
    let col = |j: usize| -> Vec<f64> { rows.iter().skip(j).step_by(stride).copied().collect() };
    let mut table = ErrorTable {
        n_paths,
        seed,
        strategies: strategies.iter().map(|s| s.name()).collect(),
        exact: col(0),
        c_simple: Vec::with_capacity(n_nets),
        sq_fn: Vec::with_capacity(n_nets),
        c_strategy: Vec::with_capacity(n_nets),
        mean_steps: Vec::with_capacity(n_nets),
    };
    for k in 0..n_nets {
        let base = 1 + k * per_net;
        table.c_simple.push(col(base));
        table.sq_fn.push(col(base + 1));
        let steps = col(base + 2);
        table
            .mean_steps
            .push(steps.iter().sum::<f64>() / n_paths as f64);
        table
            .c_strategy
            .push((0..n_strat).map(|s| col(base + 3 + s)).collect());
    }
    Ok(table)
}

/// Monte Carlo estimate of `‖X‖_{L_p}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LpEstimate {
    pub p: f64,
    pub value: f64,
    /// Bootstrap standard error of `value`.
    pub std_err: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Set when `p < 2`, outside the range the error theory covers.
    pub p_below_two: bool,
}

fn check_samples(samples: &[f64], p: f64) -> Result<()> {
    if !(p >= 1.0) || !p.is_finite() {
        return Err(FracnetError::invalid(format!(
            "p must be in [1, ∞), got {p}"
        )));
    }
    if samples.is_empty() {
        return Err(FracnetError::invalid("no samples"));
    }
    let bad = samples.iter().filter(|x| !x.is_finite()).count();
    if bad > 0 {
        return Err(FracnetError::NonFinite { count: bad });
    }
    Ok(())
}

/// Joint bootstrap over several sample columns of equal length: each
/// resample draws one set of path indices shared by all columns.
/// Returns the `B` resampled `p`-th power means per column.
fn bootstrap_power_means(columns: &[Vec<f64>], seed: u64) -> Vec<Vec<f64>> {
    let n = columns[0].len();
    let key = StreamKey::new(seed, DOMAIN_BOOTSTRAP);
    let per_resample: Vec<Vec<f64>> = (0..BOOTSTRAP_RESAMPLES)
        .into_par_iter()
        .map(|b| {
            let mut rng = key.stream(b as u64);
            let mut sums = vec![0.0; columns.len()];
            for _ in 0..n {
                let i = rng.random_range(0..n);
                for (s, c) in sums.iter_mut().zip(columns) {
                    *s += c[i];
                }
            }
            sums.iter().map(|s| s / n as f64).collect()
        })
        .collect();
    (0..columns.len())
        .map(|j| per_resample.iter().map(|r| r[j]).collect())
        .collect()
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// `‖X‖_{L_p}` and its bootstrap error for several columns on shared
/// resamples, plus the resampled root values for downstream ratios.
fn lp_joint(columns: &[&[f64]], p: f64, seed: u64) -> Result<(Vec<LpEstimate>, Vec<Vec<f64>>)> {
    for c in columns {
        check_samples(c, p)?;
    }
    let powers: Vec<Vec<f64>> = columns
        .iter()
        .map(|c| c.iter().map(|x| x.abs().powf(p)).collect())
        .collect();
    let boots = bootstrap_power_means(&powers, seed);
    let mut out = Vec::with_capacity(columns.len());
    let mut roots = Vec::with_capacity(columns.len());
    for (pw, bs) in powers.iter().zip(boots) {
        let value = (pw.iter().sum::<f64>() / pw.len() as f64).powf(1.0 / p);
        let r: Vec<f64> = bs.iter().map(|m| m.powf(1.0 / p)).collect();
        out.push(LpEstimate {
            p,
            value,
            std_err: std_dev(&r),
            n_paths: pw.len(),
            seed,
            p_below_two: p < 2.0,
        });
        roots.push(r);
    }
    Ok((out, roots))
}

/// `(mean |X|^p)^{1/p}` with a seeded bootstrap standard error.
pub fn lp_norm(samples: &[f64], p: f64, seed: u64) -> Result<LpEstimate> {
    Ok(lp_joint(&[samples], p, seed)?.0[0])
}

/// Draws one sample per simulated path on `grid` and estimates its norm.
pub fn lp_norm_mc<F>(
    sampler: F,
    model: &DiffusionModel,
    grid: &TimeGrid,
    p: f64,
    n_paths: usize,
    seed: u64,
) -> Result<LpEstimate>
where
    F: Fn(&PathView<'_>) -> f64 + Sync,
{
    if n_paths == 0 {
        return Err(FracnetError::invalid("n_paths must be at least 1"));
    }
    let d = model.dim();
    let generator = PathGenerator::new(grid, d, seed);
    let samples: Vec<f64> = (0..n_paths.div_ceil(CHUNK))
        .into_par_iter()
        .flat_map_iter(|c| {
            let lo = c * CHUNK;
            let hi = (lo + CHUNK).min(n_paths);
            let mut w = vec![0.0; generator.values_per_path()];
            let mut out = Vec::with_capacity(hi - lo);
            for p in lo..hi {
                generator.fill(p as u64, &mut w);
                out.push(sampler(&PathView {
                    grid,
                    dim: d,
                    w: &w,
                }));
            }
            out
        })
        .collect();
    lp_norm(&samples, p, seed)
}

/// Sample mean and its standard error.
pub fn mean_with_error(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let m = samples.iter().sum::<f64>() / n;
    (m, std_dev(samples) / n.sqrt())
}

/// `‖C_1‖_p / ‖sq_fn‖_p` for one net.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatioRow {
    pub n: usize,
    pub error: LpEstimate,
    pub square_function: LpEstimate,
    /// `None` when the denominator is within 10 standard errors of zero.
    pub ratio: Option<f64>,
    pub ratio_std_err: Option<f64>,
}

impl RatioRow {
    pub fn from_columns(n: usize, c: &[f64], sq: &[f64], p: f64, seed: u64) -> Result<Self> {
        let (est, roots) = lp_joint(&[c, sq], p, seed)?;
        let (error, square_function) = (est[0], est[1]);
        let guarded = !(square_function.value > 10.0 * square_function.std_err)
            || square_function.value == 0.0;
        let (ratio, ratio_std_err) = if guarded {
            (None, None)
        } else {
            let rs: Vec<f64> = roots[0].iter().zip(&roots[1]).map(|(a, b)| a / b).collect();
            (
                Some(error.value / square_function.value),
                Some(std_dev(&rs)),
            )
        };
        Ok(RatioRow {
            n,
            error,
            square_function,
            ratio,
            ratio_std_err,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub family: String,
    pub p: f64,
    pub rows: Vec<RatioRow>,
}

/// Two-sided comparison of the error with the square function along a
/// family of nets.
#[allow(clippy::too_many_arguments)]
pub fn equivalence_ratio(
    payoff: &Payoff,
    model: &DiffusionModel,
    family: &NetFamily,
    theta: f64,
    p: f64,
    n_list: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<EquivalenceReport> {
    let sources: Vec<NetSource> = n_list
        .iter()
        .map(|&n| NetSource::from_family(family, n, theta, payoff, model))
        .collect::<Result<_>>()?;
    let fixed: Vec<TimeNet> = sources
        .iter()
        .filter_map(|s| match s {
            NetSource::Fixed(n) => Some(n.clone()),
            NetSource::Random(_) => None,
        })
        .collect();
    let uniform = if fixed.len() == sources.len() {
        256
    } else {
        2048
    };
    let grid = study_grid(&fixed, uniform, crate::model::DEFAULT_HORIZON_BANDS);
    let table = simulate_errors(payoff, model, &sources, &[], &grid, n_paths, seed)?;
    let rows = n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| RatioRow::from_columns(n, &table.c_simple[k], &table.sq_fn[k], p, seed))
        .collect::<Result<_>>()?;
    Ok(EquivalenceReport {
        family: family.label(),
        p,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyRow {
    pub strategy: String,
    pub estimate: LpEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub rows: Vec<StrategyRow>,
    pub gradient: LpEstimate,
    /// Smallest error over the supplied strategies is at most the gradient
    /// strategy's error plus three standard errors.
    pub minimum_within_gradient: bool,
}

/// Compares hedging strategies on one net over shared paths.
pub fn strategy_comparison(
    payoff: &Payoff,
    model: &DiffusionModel,
    net: &TimeNet,
    p: f64,
    strategies: &[Strategy],
    n_paths: usize,
    seed: u64,
) -> Result<StrategyReport> {
    if !strategies
        .iter()
        .any(|s| matches!(s, Strategy::GradientAtKnot))
    {
        return Err(FracnetError::invalid(
            "the strategy list must include the gradient strategy",
        ));
    }
    let grid = study_grid(
        std::slice::from_ref(net),
        0,
        crate::model::DEFAULT_HORIZON_BANDS,
    );
    let table = simulate_errors(
        payoff,
        model,
        &[NetSource::Fixed(net.clone())],
        strategies,
        &grid,
        n_paths,
        seed,
    )?;
    let cols: Vec<&[f64]> = table.c_strategy[0].iter().map(|c| c.as_slice()).collect();
    let (est, _) = lp_joint(&cols, p, seed)?;
    let rows: Vec<StrategyRow> = strategies
        .iter()
        .zip(est)
        .map(|(s, e)| StrategyRow {
            strategy: s.name(),
            estimate: e,
        })
        .collect();
    let gradient = rows
        .iter()
        .zip(strategies)
        .find(|(_, s)| matches!(s, Strategy::GradientAtKnot))
        .map(|(r, _)| r.estimate)
        .unwrap();
    let min = rows
        .iter()
        .map(|r| r.estimate.value)
        .fold(f64::INFINITY, f64::min);
    Ok(StrategyReport {
        minimum_within_gradient: min <= gradient.value + 3.0 * gradient.std_err,
        rows,
        gradient,
    })
}

/// One line of the simulation CSV.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationRow {
    pub net_family: String,
    pub n: usize,
    pub p: f64,
    pub strategy: String,
    pub lp_value: f64,
    pub std_err: f64,
    pub sq_fn_value: f64,
    pub sq_fn_std_err: f64,
    pub ratio: Option<f64>,
    pub n_paths: usize,
    pub seed: u64,
}

pub const SIMULATION_CSV_HEADER: &str =
    "net_family,n,p,strategy,lp_value,std_err,sq_fn_value,sq_fn_std_err,ratio,n_paths,seed";

/// Writes rows under [`SIMULATION_CSV_HEADER`]; floats use the shortest
/// round-trip representation so reruns are byte-identical.
pub fn write_simulation_csv<W: Write>(mut out: W, rows: &[SimulationRow]) -> Result<()> {
    writeln!(out, "{SIMULATION_CSV_HEADER}")?;
    for r in rows {
        let ratio = r.ratio.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.net_family,
            r.n,
            r.p,
            r.strategy,
            r.lp_value,
            r.std_err,
            r.sq_fn_value,
            r.sq_fn_std_err,
            ratio,
            r.n_paths,
            r.seed
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::simulate_paths;
    use approx::assert_relative_eq;

    fn bm() -> DiffusionModel {
        DiffusionModel::brownian(1).unwrap()
    }

    #[test]
    fn identity_payoff_has_no_error() {
        let net = TimeNet::theta_net(7, 0.5).unwrap();
        let grid = study_grid(std::slice::from_ref(&net), 16, 10);
        let batch = simulate_paths(&bm(), &grid, 20, 3).unwrap();
        let p = Payoff::identity(1);
        for i in 0..20 {
            let path = batch.path(i);
            let w1 = path.w_at(grid.len() - 1)[0];
            assert_relative_eq!(
                exact_integral(&p, &bm(), &path).unwrap(),
                w1,
                epsilon = 1e-15
            );
            let r = riemann_sum(&p, &bm(), &path, &net, &Strategy::GradientAtKnot).unwrap();
            assert!((r - w1).abs() < 1e-12);
            assert_eq!(
                riemann_sum(&p, &bm(), &path, &net, &Strategy::Zero).unwrap(),
                0.0
            );
            let e = error_sample(&p, &bm(), &path, &NetSource::Fixed(net.clone()), None).unwrap();
            assert!(e.c_simple.abs() < 1e-12);
            assert_eq!(e.sq_fn, 0.0);
        }
    }

    #[test]
    fn quadratic_payoff_closed_forms() {
        let n = 8;
        let net = TimeNet::equidistant(n).unwrap();
        let grid = study_grid(std::slice::from_ref(&net), 0, 40);
        let batch = simulate_paths(&bm(), &grid, 10, 11).unwrap();
        let p = Payoff::quadratic(1);
        let src = NetSource::Fixed(net.clone());
        let idx = grid.locate(&net).unwrap();
        for i in 0..10 {
            let path = batch.path(i);
            let w = |k: usize| path.w_at(idx[k])[0];
            let w1 = w(n);
            assert_relative_eq!(
                exact_integral(&p, &bm(), &path).unwrap(),
                w1 * w1 - 1.0,
                epsilon = 1e-13
            );
            let direct: f64 = (1..=n).map(|k| 2.0 * w(k - 1) * (w(k) - w(k - 1))).sum();
            let r = riemann_sum(&p, &bm(), &path, &net, &Strategy::GradientAtKnot).unwrap();
            assert_relative_eq!(r, direct, epsilon = 1e-12);
            let e = error_sample(&p, &bm(), &path, &src, None).unwrap();
            let ito: f64 = (1..=n)
                .map(|k| (w(k) - w(k - 1)).powi(2) - 1.0 / n as f64)
                .sum();
            assert!((e.c_simple - ito).abs() < 1e-10);
            assert!((e.sq_fn - (2.0 / n as f64).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn binary_exact_integral_is_centered_indicator() {
        let grid = TimeGrid::from_net(&TimeNet::equidistant(4).unwrap());
        let batch = simulate_paths(&bm(), &grid, 50, 2).unwrap();
        let p = Payoff::binary(0.0, 1);
        for i in 0..50 {
            let path = batch.path(i);
            let w1 = path.w_at(4)[0];
            let want = if w1 >= 0.0 { 0.5 } else { -0.5 };
            assert_relative_eq!(
                exact_integral(&p, &bm(), &path).unwrap(),
                want,
                epsilon = 1e-15
            );
        }
    }

    #[test]
    fn missing_knot_is_rejected() {
        let grid = TimeGrid::from_net(&TimeNet::equidistant(4).unwrap());
        let batch = simulate_paths(&bm(), &grid, 1, 0).unwrap();
        let net = TimeNet::equidistant(3).unwrap();
        let r = riemann_sum(
            &Payoff::quadratic(1),
            &bm(),
            &batch.path(0),
            &net,
            &Strategy::Zero,
        );
        assert!(matches!(r, Err(FracnetError::MissingKnot { .. })));
    }

    #[test]
    fn lp_norm_of_constant_and_bad_samples() {
        let e = lp_norm(&[3.0; 100], 3.0, 0).unwrap();
        assert_relative_eq!(e.value, 3.0, epsilon = 1e-14);
        assert!(e.std_err < 1e-14);
        assert!(lp_norm(&[1.0, 2.0], 1.5, 0).unwrap().p_below_two);
        assert!(matches!(
            lp_norm(&[1.0, f64::NAN, f64::INFINITY], 2.0, 0),
            Err(FracnetError::NonFinite { count: 2 })
        ));
        assert!(lp_norm(&[1.0], 0.5, 0).is_err());
    }

    #[test]
    fn lp_norm_mc_is_deterministic() {
        let grid = TimeGrid::from_net(&TimeNet::equidistant(1).unwrap());
        let w1 = |p: &PathView<'_>| p.w_at(1)[0];
        let a = lp_norm_mc(w1, &bm(), &grid, 2.0, 5000, 9).unwrap();
        let b = lp_norm_mc(w1, &bm(), &grid, 2.0, 5000, 9).unwrap();
        assert_eq!(a, b);
        assert!((a.value - 1.0).abs() < 4.0 * a.std_err);
    }

    #[test]
    fn identity_ratio_is_guarded() {
        let r = equivalence_ratio(
            &Payoff::identity(1),
            &bm(),
            &NetFamily::Equidistant,
            1.0,
            2.0,
            &[4, 8],
            200,
            0,
        )
        .unwrap();
        assert!(r.rows.iter().all(|row| row.ratio.is_none()));
    }

    #[test]
    fn csv_header_and_row() {
        let mut buf = Vec::new();
        let row = SimulationRow {
            net_family: "equidistant".into(),
            n: 4,
            p: 2.0,
            strategy: "gradient".into(),
            lp_value: 0.5,
            std_err: 0.01,
            sq_fn_value: 0.5,
            sq_fn_std_err: 0.0,
            ratio: Some(1.0),
            n_paths: 10,
            seed: 0,
        };
        write_simulation_csv(&mut buf, &[row]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(
            s,
            format!("{SIMULATION_CSV_HEADER}\nequidistant,4,2,gradient,0.5,0.01,0.5,0,1,10,0\n")
        );
    }
}
