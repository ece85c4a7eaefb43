//! Weighted norms on `[0, 1)` under `dt / (1 - t)`, kernel integrals with a
//! singular right endpoint, and numerical witnesses for the Hardy-type
//! inequalities and the net/kernel equivalence.
//!
//! Integrands here are power-singular at `t = 1`. Work is done in the
//! variable `u = -ln(1 - t)` and each grid cell interpolates the integrand
//! as a power of `1 - t`, so pure power laws are integrated exactly. The
//! piece beyond the last sample is closed off with a power law fitted to
//! the samples closest to the horizon.

use serde::Serialize;

use crate::error::{FracnetError, Result};
use crate::gauss::integrate_adaptive;
use crate::timenet::TimeNet;

/// Horizon truncation used by the default grids.
pub const DEFAULT_DELTA: f64 = 1e-6;

/// A tail larger than this multiple of the finite part marks divergence.
pub const DIVERGENCE_FACTOR: f64 = 10.0;

/// Samples within this multiple of `delta` of the horizon feed the tail fit.
const TAIL_WINDOW: f64 = 100.0;

/// Non-negative samples `φ(t_i)` on `[0, 1 - δ]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightedCurve {
    t_grid: Vec<f64>,
    values: Vec<f64>,
    delta: f64,
}

impl WeightedCurve {
    pub fn new(t_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if t_grid.len() != values.len() {
            return Err(FracnetError::invalid(format!(
                "{} times but {} values",
                t_grid.len(),
                values.len()
            )));
        }
        if t_grid.len() < 2 {
            return Err(FracnetError::TooFewPoints {
                found: t_grid.len(),
                required: 2,
            });
        }
        if t_grid[0] < 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(FracnetError::invalid(
                "t_grid must be strictly increasing in [0, 1)",
            ));
        }
        let last = *t_grid.last().unwrap();
        if !(last < 1.0) {
            return Err(FracnetError::invalid("t_grid must stop before 1"));
        }
        let bad = values.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            return Err(FracnetError::NonFinite { count: bad });
        }
        if values.iter().any(|&v| v < 0.0) {
            return Err(FracnetError::invalid(
                "weighted curve values must be non-negative",
            ));
        }
        Ok(WeightedCurve {
            delta: 1.0 - last,
            t_grid,
            values,
        })
    }

    /// Samples `phi` on `m + 1` points equally spaced in `-ln(1 - t)` over
    /// `[0, 1 - delta]`.
    pub fn sample<F: FnMut(f64) -> f64>(mut phi: F, m: usize, delta: f64) -> Result<Self> {
        let t_grid = log_grid(m, delta)?;
        let values = t_grid.iter().map(|&t| phi(t)).collect();
        WeightedCurve::new(t_grid, values)
    }

    pub fn t_grid(&self) -> &[f64] {
        &self.t_grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    /// Pointwise product with `(1 - t)^a`.
    pub fn scaled(&self, a: f64) -> WeightedCurve {
        let values = self
            .t_grid
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| if v == 0.0 { 0.0 } else { v * (1.0 - t).powf(a) })
            .collect();
        WeightedCurve {
            t_grid: self.t_grid.clone(),
            values,
            delta: self.delta,
        }
    }
}

/// `m + 1` times equally spaced in `u = -ln(1 - t)` on `[0, 1 - delta]`.
pub fn log_grid(m: usize, delta: f64) -> Result<Vec<f64>> {
    if m < 1 || !(delta > 0.0 && delta < 1.0) {
        return Err(FracnetError::invalid(format!(
            "log grid needs m >= 1 and delta in (0, 1), got m={m}, delta={delta}"
        )));
    }
    let umax = -delta.ln();
    let mut t: Vec<f64> = (0..=m)
        .map(|i| -(-(umax * i as f64 / m as f64)).exp_m1())
        .collect();
    t[m] = 1.0 - delta;
    Ok(t)
}

/// Outcome of a weighted norm evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightedNorm {
    pub q: f64,
    /// `(finite_part + tail)^{1/q}`, or the supremum for `q = ∞`.
    pub value: f64,
    /// Integral of `φ^q` over the sampled range.
    pub finite_part: f64,
    /// Power-law closure of `φ^q` beyond the last sample.
    pub tail: f64,
    /// Fitted `a` in `φ(t) ≈ C (1 - t)^a` near the horizon.
    pub fitted_exponent: f64,
    pub divergent: bool,
}

impl WeightedNorm {
    pub fn is_finite(&self) -> bool {
        !self.divergent && self.value.is_finite()
    }
}

/// Least-squares power law `y ≈ C x^a` through positive samples.
/// Returns `(C, a)`, or `None` with fewer than two usable points.
pub(crate) fn fit_power(xs: &[f64], ys: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = xs
        .iter()
        .zip(ys)
        .filter(|(&x, &y)| x > 0.0 && y > 0.0 && y.is_finite())
        .map(|(&x, &y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = sxy / sxx;
    // anchor the amplitude at the point closest to the horizon
    let (x0, y0) = pts
        .iter()
        .min_by(|p, q| p.0.total_cmp(&q.0))
        .copied()
        .unwrap();
    Some(((y0 - a * x0).exp(), a))
}

/// Samples used for the horizon fit: all with `1 - t ≤ 100 δ`, at least 3.
fn tail_samples(t: &[f64], v: &[f64], delta: f64) -> (Vec<f64>, Vec<f64>) {
    let n = t.len();
    let mut start = t.partition_point(|&ti| 1.0 - ti > TAIL_WINDOW * delta);
    start = start.min(n.saturating_sub(3));
    (
        t[start..].iter().map(|ti| 1.0 - ti).collect(),
        v[start..].to_vec(),
    )
}

/// Integral of an exponential through two samples (logarithmic mean).
#[inline]
fn log_mean_cell(du: f64, f0: f64, f1: f64) -> f64 {
    if f0 > 0.0 && f1 > 0.0 {
        let r = f1 / f0;
        if (r - 1.0).abs() < 1e-6 {
            let l = r - 1.0;
            // series of (r - 1) / ln r around r = 1
            du * f0 * (1.0 + l / 2.0 - l * l / 12.0)
        } else {
            du * (f1 - f0) / r.ln()
        }
    } else {
        0.5 * du * (f0 + f1)
    }
}

/// `‖φ‖_{L_q([0,1), dt/(1-t))}` with horizon tail closure.
pub fn weighted_q_norm(curve: &WeightedCurve, q: f64) -> Result<WeightedNorm> {
    if !(q >= 1.0) {
        return Err(FracnetError::invalid(format!(
            "q must be in [1, ∞], got {q}"
        )));
    }
    let t = &curve.t_grid;
    let v = &curve.values;
    let delta = curve.delta;
    let (xs, ys) = tail_samples(t, v, delta);
    let fit = fit_power(&xs, &ys);
    let exponent = fit.map(|f| f.1).unwrap_or(0.0);
    let last = *v.last().unwrap();

    if q.is_infinite() {
        let sup = v.iter().copied().fold(0.0, f64::max);
        let divergent = last > 0.0 && fit.is_some() && exponent < -0.01;
        return Ok(WeightedNorm {
            q,
            value: if divergent { f64::INFINITY } else { sup },
            finite_part: sup,
            tail: if divergent { f64::INFINITY } else { 0.0 },
            fitted_exponent: exponent,
            divergent,
        });
    }

    let mut finite = 0.0;
    for i in 1..t.len() {
        let du = (1.0 - t[i - 1]).ln() - (1.0 - t[i]).ln();
        finite += log_mean_cell(du, v[i - 1].powf(q), v[i].powf(q));
    }
    let tail = match fit {
        _ if last == 0.0 => 0.0,
        Some((c, a)) => {
            let aq = a * q;
            if aq <= 0.0 {
                f64::INFINITY
            } else {
                c.powf(q) * delta.powf(aq) / aq
            }
        }
        None => f64::INFINITY,
    };
    let divergent = tail > DIVERGENCE_FACTOR * finite;
    let value = if divergent {
        f64::INFINITY
    } else {
        (finite + tail).powf(1.0 / q)
    };
    Ok(WeightedNorm {
        q,
        value,
        finite_part: finite,
        tail,
        fitted_exponent: exponent,
        divergent,
    })
}

/// `∫ h dt` over one cell, exact when `h` is a power of `1 - t`.
pub(crate) fn plain_cell(t0: f64, t1: f64, h0: f64, h1: f64) -> f64 {
    let x0 = 1.0 - t0;
    let x1 = 1.0 - t1;
    if h0 > 0.0 && h1 > 0.0 && h0 != h1 {
        let alpha = (h0 / h1).ln() / (x0 / x1).ln();
        if alpha.is_finite() && alpha.abs() <= 8.0 {
            if (alpha + 1.0).abs() < 1e-9 {
                return h0 * x0 * (x0 / x1).ln();
            }
            return h0 * x0 * (1.0 - (x1 / x0).powf(alpha + 1.0)) / (alpha + 1.0);
        }
    }
    0.5 * (t1 - t0) * (h0 + h1)
}

/// Exact `∫ (b - t) h(t) dt` over one cell when `h` is a power of `1 - t`.
fn power_cell(t0: f64, t1: f64, h0: f64, h1: f64, b: f64) -> Option<f64> {
    let x0 = 1.0 - t0;
    let x1 = 1.0 - t1;
    if !(x1 > 0.0) || !(h0 > 0.0 && h1 > 0.0) || h0 == h1 {
        return None;
    }
    let alpha = (h0 / h1).ln() / (x0 / x1).ln();
    if !alpha.is_finite()
        || alpha.abs() > 8.0
        || (alpha + 1.0).abs() < 1e-6
        || (alpha + 2.0).abs() < 1e-6
    {
        return None;
    }
    let xb = 1.0 - b;
    let r = x1 / x0;
    // h(x) = h0 (x / x0)^α;  ∫_{x1}^{x0} (x - xb) h(x) dx
    let i2 = h0 * x0 * x0 * (1.0 - r.powf(alpha + 2.0)) / (alpha + 2.0);
    let i1 = h0 * x0 * (1.0 - r.powf(alpha + 1.0)) / (alpha + 1.0);
    Some(i2 - xb * i1)
}

/// `∫_a^b (b - t) h(t) dt` from samples of `h ≥ 0` on `ts` (with
/// `a = ts[0]`). The grid must reach `b`, except for `b = 1` where the
/// remainder past the last sample is closed with a fitted power law.
pub fn kernel_interval_integral(ts: &[f64], hs: &[f64], b: f64) -> Result<f64> {
    if ts.is_empty() || ts.len() != hs.len() {
        return Err(FracnetError::invalid(
            "kernel integral needs a non-empty sub-grid",
        ));
    }
    let a = ts[0];
    if !(a < b) || b > 1.0 {
        return Err(FracnetError::invalid(format!(
            "need a < b <= 1, got a={a}, b={b}"
        )));
    }
    let last = *ts.last().unwrap();
    if last > b || (last < b && b < 1.0) {
        return Err(FracnetError::MissingKnot { time: b });
    }
    let mut total = 0.0;
    for i in 1..ts.len() {
        let (t0, t1, h0, h1) = (ts[i - 1], ts[i], hs[i - 1], hs[i]);
        let cell = power_cell(t0, t1, h0, h1, b).unwrap_or_else(|| {
            let d = t1 - t0;
            let (f0, f1) = (b - t0, b - t1);
            d / 6.0 * (2.0 * f0 * h0 + f0 * h1 + f1 * h0 + 2.0 * f1 * h1)
        });
        total += cell;
    }
    if last < b {
        // b = 1: close [last, 1) with h ≈ C (1 - t)^a
        let delta = 1.0 - last;
        let (xs, ys) = tail_samples(ts, hs, delta);
        let tail = if *hs.last().unwrap() == 0.0 {
            0.0
        } else {
            match fit_power(&xs, &ys) {
                Some((c, e)) if e > -2.0 => c * delta.powf(e + 2.0) / (e + 2.0),
                Some(_) => f64::INFINITY,
                // a single sample: hold it constant
                None => hs.last().unwrap() * delta * delta / 2.0,
            }
        };
        total += tail;
    }
    Ok(total)
}

/// Relative slack of the Hardy check. For `q = 2` the inequality is an
/// identity (integrate by parts), so the comparison is only as sharp as the
/// grid; 4000 log-spaced cells on `[0, 1 - 1e-6]` resolve it to ~3e-6.
pub const HARDY_SLACK: f64 = 1e-5;

/// Budget of the Hardy-type inequality for the given `(θ, q)`.
pub fn hardy_constant(theta: f64, q: f64) -> f64 {
    if q >= 2.0 {
        (1.0 / (1.0 - theta)).sqrt()
    } else {
        ((2.0 - theta) / (1.0 - theta)).powf(1.0 / q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardyReport {
    pub theta: f64,
    pub q: f64,
    /// `‖(1-t)^{(1-θ)/2} (∫_0^t φ²)^{1/2}‖`.
    pub lhs: WeightedNorm,
    /// `‖(1-t)^{1-θ/2} φ‖`.
    pub rhs: WeightedNorm,
    pub constant: f64,
    /// `lhs / rhs`, zero when both vanish.
    pub ratio: f64,
    pub holds: bool,
}

/// Replaces the fitted tail of the Hardy left side by one built from the
/// power law `φ ≈ c (1-t)^a` near the horizon. The running integral then has
/// the closed form `Φ(s) = Φ(δ) + c² (δ^k - s^k) / k`, `k = 2a + 1` (a
/// logarithm for `k = 0`), and the outer integral is carried on in
/// `u = -ln s` until the rest is below `e^{-40}` of the integrand at `δ`.
fn close_hardy_lhs(
    norm: WeightedNorm,
    (c, a): (f64, f64),
    phi_delta: f64,
    delta: f64,
    theta: f64,
    q: f64,
) -> WeightedNorm {
    let beta = (1.0 - theta) / 2.0;
    let k = 2.0 * a + 1.0;
    let l0 = -delta.ln();
    let c2 = c * c;
    // ln Φ at u = l0 + x
    let ln_phi = |x: f64| -> f64 {
        let extra_ln = if c2 == 0.0 {
            f64::NEG_INFINITY
        } else if k.abs() < 1e-12 {
            (c2 * x).ln()
        } else if k > 0.0 {
            (c2 * delta.powf(k) / k).ln() + (-(-k * x).exp_m1()).ln()
        } else {
            // grows like e^{|k| x}
            (c2 * delta.powf(k) / -k).ln() + (-k * x) + (-(k * x).exp_m1()).ln()
        };
        if phi_delta > 0.0 {
            let base = phi_delta.ln();
            let (hi, lo) = if base >= extra_ln {
                (base, extra_ln)
            } else {
                (extra_ln, base)
            };
            hi + (lo - hi).exp().ln_1p()
        } else {
            extra_ln
        }
    };
    // integrand exponent in u far from the horizon sample
    let decay = beta + if c2 > 0.0 { k.min(0.0) / 2.0 } else { 0.0 };
    let log_f = |x: f64| -beta * (l0 + x) + 0.5 * ln_phi(x);
    if q.is_infinite() {
        if decay < 0.0 || (decay == 0.0 && c2 > 0.0 && k.abs() < 1e-12) {
            return WeightedNorm {
                value: f64::INFINITY,
                tail: f64::INFINITY,
                fitted_exponent: decay,
                divergent: true,
                ..norm
            };
        }
        let span = if decay > 0.0 {
            (40.0 / decay).min(600.0)
        } else {
            600.0
        };
        let sup = (1..=4000)
            .map(|i| log_f(span * i as f64 / 4000.0).exp())
            .fold(norm.finite_part, f64::max);
        return WeightedNorm {
            value: sup,
            tail: 0.0,
            fitted_exponent: decay,
            divergent: false,
            ..norm
        };
    }
    if decay <= 0.0 {
        return WeightedNorm {
            value: f64::INFINITY,
            tail: f64::INFINITY,
            fitted_exponent: decay,
            divergent: true,
            ..norm
        };
    }
    let span = 40.0 / (q * decay);
    let cells = 4000;
    let h = span / cells as f64;
    let mut tail = 0.0;
    let mut prev = (q * log_f(0.0)).exp();
    for i in 1..=cells {
        let cur = (q * log_f(h * i as f64)).exp();
        tail += log_mean_cell(h, prev, cur);
        prev = cur;
    }
    tail += prev / (q * decay);
    let divergent = tail > DIVERGENCE_FACTOR * norm.finite_part;
    WeightedNorm {
        value: if divergent {
            f64::INFINITY
        } else {
            (norm.finite_part + tail).powf(1.0 / q)
        },
        tail,
        fitted_exponent: decay,
        divergent,
        ..norm
    }
}

/// Checks `lhs ≤ constant · rhs` for one curve.
pub fn hardy_check(phi: &WeightedCurve, theta: f64, q: f64) -> Result<HardyReport> {
    if !(theta > 0.0 && theta < 1.0) {
        return Err(FracnetError::invalid(format!(
            "theta must be in (0, 1), got {theta}"
        )));
    }
    if q < 2.0 && phi.values.windows(2).any(|w| w[1] < w[0]) {
        return Err(FracnetError::Domain(
            "the Hardy inequality for q < 2 needs a non-decreasing φ".into(),
        ));
    }
    let t = &phi.t_grid;
    let sq: Vec<f64> = phi.values.iter().map(|v| v * v).collect();
    // running ∫_0^t φ², exact on powers of 1 - t
    let mut cumulative = vec![0.0; t.len()];
    for i in 1..t.len() {
        cumulative[i] = cumulative[i - 1] + plain_cell(t[i - 1], t[i], sq[i - 1], sq[i]);
    }
    let inner = WeightedCurve {
        t_grid: t.clone(),
        values: cumulative.iter().map(|c| c.sqrt()).collect(),
        delta: phi.delta,
    };
    let mut lhs = weighted_q_norm(&inner.scaled((1.0 - theta) / 2.0), q)?;
    let mut rhs = weighted_q_norm(&phi.scaled(1.0 - theta / 2.0), q)?;
    let (xs, ys) = tail_samples(t, &phi.values, phi.delta);
    if let Some(fit) = fit_power(&xs, &ys) {
        let fit = if *phi.values.last().unwrap() == 0.0 {
            (0.0, 0.0)
        } else {
            fit
        };
        lhs = close_hardy_lhs(lhs, fit, *cumulative.last().unwrap(), phi.delta, theta, q);
        // both sides decay like (1-t)^{a + 1 - θ/2}; judge them on the same fit
        if q.is_infinite() && fit.0 > 0.0 && fit.1 + 1.0 - theta / 2.0 < 0.0 {
            rhs.value = f64::INFINITY;
            rhs.tail = f64::INFINITY;
            rhs.divergent = true;
        }
    }
    let constant = hardy_constant(theta, q);
    let ratio = if lhs.value == 0.0 {
        0.0
    } else {
        lhs.value / rhs.value
    };
    let holds = rhs.divergent || lhs.value <= constant * rhs.value * (1.0 + HARDY_SLACK);
    Ok(HardyReport {
        theta,
        q,
        lhs,
        rhs,
        constant,
        ratio,
        holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NetKernelReport {
    pub theta: f64,
    pub n_list: Vec<usize>,
    /// `n · Σ_i ∫ (t_i - u) φ(u) du` over the θ-net with `n` steps.
    pub scaled_sums: Vec<f64>,
    /// `∫ (1 - u)^{1-θ} φ(u) du`.
    pub kernel: WeightedNorm,
    /// Log-log slope of `scaled_sums` against `n`.
    pub growth_slope: f64,
    pub sums_bounded: bool,
    /// Both sides agree on finiteness.
    pub consistent: bool,
}

/// Compares the net sums with the kernel integral for a closed-form `φ`.
pub fn net_kernel_equivalence_check<F>(
    phi: F,
    theta: f64,
    n_list: &[usize],
) -> Result<NetKernelReport>
where
    F: Fn(f64) -> f64,
{
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(FracnetError::invalid(format!(
            "theta must be in (0, 1], got {theta}"
        )));
    }
    if n_list.len() < 2 {
        return Err(FracnetError::TooFewPoints {
            found: n_list.len(),
            required: 2,
        });
    }
    let mut scaled = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let net = TimeNet::theta_net(n, theta)?;
        let k = net.knots();
        let mut sum = 0.0;
        for w in k.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let part = integrate_adaptive(|u| (hi - u) * phi(u), lo, hi, 1e-14, 1e-10, 2000);
            sum += part.value;
        }
        scaled.push(n as f64 * sum);
    }
    let curve = WeightedCurve::sample(
        |t| (1.0 - t).powf(2.0 - theta) * phi(t),
        2000,
        DEFAULT_DELTA,
    )?;
    let kernel = weighted_q_norm(&curve, 1.0)?;
    let xs: Vec<f64> = n_list.iter().map(|&n| n as f64).collect();
    let growth_slope = fit_power(&xs, &scaled).map(|f| f.1).unwrap_or(0.0);
    let sums_bounded = growth_slope <= 0.05;
    Ok(NetKernelReport {
        theta,
        n_list: n_list.to_vec(),
        scaled_sums: scaled,
        consistent: sums_bounded == kernel.is_finite(),
        kernel,
        growth_slope,
        sums_bounded,
    })
}
