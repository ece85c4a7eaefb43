//! Terminal payoffs `g` and their conditional expectations
//! `G(t, y) = E(g(Y_1) | Y_t = y)` with gradient and Hessian.
//!
//! Catalog payoffs carry closed forms for `G`, `∇G` and `D²G` under both
//! models. Any payoff (including user closures) can also be evaluated by
//! quadrature against the Gaussian transition law; derivatives then use
//! the Gaussian integration-by-parts weights `Z / √s` and `(Z² - 1) / s`,
//! which stay stable where differentiating the quadrature would not.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FracnetError, Result};
use crate::gauss::{self, gaussian_expectation, hermite_128, hermite_64, norm_cdf, norm_pdf};
use crate::model::{DiffusionModel, ModelKind};

/// One-dimensional factor of a separable payoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Marginal {
    One,
    Identity,
    Square,
    Call {
        strike: f64,
    },
    Binary {
        strike: f64,
    },
    /// `(ln y + 1/2)²`, the geometric pull-back of `x²`.
    LogSquare,
}

impl Marginal {
    #[inline]
    fn g(&self, y: f64) -> f64 {
        match *self {
            Marginal::One => 1.0,
            Marginal::Identity => y,
            Marginal::Square => y * y,
            Marginal::Call { strike } => (y - strike).max(0.0),
            Marginal::Binary { strike } => {
                if y >= strike {
                    1.0
                } else {
                    0.0
                }
            }
            Marginal::LogSquare => {
                let u = y.ln() + 0.5;
                u * u
            }
        }
    }

    /// `(G, ∂G/∂y, ∂²G/∂y²)` at time-to-horizon `s > 0`.
    #[inline]
    fn jet(&self, kind: ModelKind, s: f64, y: f64) -> (f64, f64, f64) {
        let rs = s.sqrt();
        match (kind, *self) {
            (_, Marginal::One) => (1.0, 0.0, 0.0),
            (_, Marginal::Identity) => (y, 1.0, 0.0),
            (ModelKind::BrownianMotion, Marginal::Square) => (y * y + s, 2.0 * y, 2.0),
            (ModelKind::BrownianMotion, Marginal::Call { strike }) => {
                let d = (y - strike) / rs;
                let pdf = norm_pdf(d);
                ((y - strike) * norm_cdf(d) + rs * pdf, norm_cdf(d), pdf / rs)
            }
            (ModelKind::BrownianMotion, Marginal::Binary { strike }) => {
                let d = (y - strike) / rs;
                let pdf = norm_pdf(d);
                (norm_cdf(d), pdf / rs, -d * pdf / s)
            }
            (ModelKind::BrownianMotion, Marginal::LogSquare) => (f64::NAN, f64::NAN, f64::NAN),
            (ModelKind::GeometricBrownianMotion, Marginal::Square) => {
                let e = s.exp();
                (y * y * e, 2.0 * y * e, 2.0 * e)
            }
            (ModelKind::GeometricBrownianMotion, Marginal::Call { strike }) => {
                let lm = (y / strike).ln();
                let dp = (lm + 0.5 * s) / rs;
                let dm = dp - rs;
                (
                    y * norm_cdf(dp) - strike * norm_cdf(dm),
                    norm_cdf(dp),
                    norm_pdf(dp) / (y * rs),
                )
            }
            (ModelKind::GeometricBrownianMotion, Marginal::Binary { strike }) => {
                let dm = ((y / strike).ln() - 0.5 * s) / rs;
                let pdf = norm_pdf(dm);
                (
                    norm_cdf(dm),
                    pdf / (y * rs),
                    -pdf * (1.0 + dm / rs) / (y * y * rs),
                )
            }
            (ModelKind::GeometricBrownianMotion, Marginal::LogSquare) => {
                let t = 1.0 - s;
                let x = y.ln() + 0.5 * t;
                (x * x + s, 2.0 * x / y, (2.0 - 2.0 * x) / (y * y))
            }
        }
    }

    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            Marginal::Call { strike } | Marginal::Binary { strike } => vec![strike],
            _ => Vec::new(),
        }
    }

    fn known_theta(&self, p: f64) -> f64 {
        match self {
            Marginal::Binary { .. } => 1.0 / p,
            _ => 1.0,
        }
    }

    fn check_model(&self, kind: ModelKind) -> Result<()> {
        match (kind, self) {
            (ModelKind::BrownianMotion, Marginal::LogSquare) => Err(FracnetError::Domain(
                "log-quadratic payoff needs the geometric model".into(),
            )),
            (
                ModelKind::GeometricBrownianMotion,
                Marginal::Call { strike } | Marginal::Binary { strike },
            ) if !(*strike > 0.0) => Err(FracnetError::Domain(format!(
                "strike must be positive under the geometric model, got {strike}"
            ))),
            _ => Ok(()),
        }
    }
}

type PayoffFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// User payoff evaluated by quadrature only.
#[derive(Clone)]
pub struct CustomPayoff {
    g: Arc<PayoffFn>,
    /// Per axis, points where `g` jumps or kinks (native coordinates).
    breakpoints: Vec<Vec<f64>>,
}

#[derive(Clone)]
enum PayoffKind {
    Separable(Vec<Marginal>),
    /// `Σ_k y_k²`.
    Quadratic,
    /// Brownian view `f(x) = g(y(1))` of a geometric payoff.
    Pullback(Box<Payoff>),
    Custom(CustomPayoff),
}

#[derive(Clone)]
pub struct Payoff {
    name: String,
    dim: usize,
    kind: PayoffKind,
}

impl fmt::Debug for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Payoff")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .finish()
    }
}

impl fmt::Display for Payoff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// `H_G = (Σ_{k,l} (σ_kk σ_ll ∂²G/∂y_k∂y_l)²)^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct HValue(f64);

impl HValue {
    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Default tolerance for the quadrature fallback.
pub const QUADRATURE_TOL: f64 = 1e-8;

impl Payoff {
    pub fn separable(name: impl Into<String>, marginals: Vec<Marginal>) -> Result<Self> {
        if marginals.is_empty() {
            return Err(FracnetError::invalid("separable payoff needs a marginal"));
        }
        Ok(Payoff {
            name: name.into(),
            dim: marginals.len(),
            kind: PayoffKind::Separable(marginals),
        })
    }

    /// `g(y) = y_1`.
    pub fn identity(dim: usize) -> Self {
        let mut m = vec![Marginal::One; dim.max(1)];
        m[0] = Marginal::Identity;
        Payoff {
            name: "identity".into(),
            dim: dim.max(1),
            kind: PayoffKind::Separable(m),
        }
    }

    /// `g(y) = Σ_k y_k²`.
    pub fn quadratic(dim: usize) -> Self {
        Payoff {
            name: "quadratic".into(),
            dim: dim.max(1),
            kind: PayoffKind::Quadratic,
        }
    }

    /// `Π_k (y_k - K)_+`.
    pub fn call(strike: f64, dim: usize) -> Self {
        Payoff {
            name: format!("call(k={strike})"),
            dim: dim.max(1),
            kind: PayoffKind::Separable(vec![Marginal::Call { strike }; dim.max(1)]),
        }
    }

    /// `Π_k 1_{[K,∞)}(y_k)`.
    pub fn binary(strike: f64, dim: usize) -> Self {
        Payoff {
            name: format!("binary(k={strike})"),
            dim: dim.max(1),
            kind: PayoffKind::Separable(vec![Marginal::Binary { strike }; dim.max(1)]),
        }
    }

    /// `Π_k (ln y_k + 1/2)²` (geometric model only).
    pub fn log_quadratic(dim: usize) -> Self {
        Payoff {
            name: "log-quadratic".into(),
            dim: dim.max(1),
            kind: PayoffKind::Separable(vec![Marginal::LogSquare; dim.max(1)]),
        }
    }

    /// Arbitrary payoff evaluated by quadrature (`dim <= 3`).
    pub fn custom<F>(
        name: impl Into<String>,
        dim: usize,
        breakpoints: Vec<Vec<f64>>,
        g: F,
    ) -> Result<Self>
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        if dim == 0 || dim > 3 {
            return Err(FracnetError::invalid(
                "custom payoffs support 1 <= dim <= 3",
            ));
        }
        let mut breakpoints = breakpoints;
        breakpoints.resize(dim, Vec::new());
        Ok(Payoff {
            name: name.into(),
            dim,
            kind: PayoffKind::Custom(CustomPayoff {
                g: Arc::new(g),
                breakpoints,
            }),
        })
    }

    /// Catalog lookup by name with a parameter map (`k` / `strike`).
    pub fn from_name(name: &str, params: &BTreeMap<String, f64>, dim: usize) -> Result<Self> {
        let strike = |default: f64| {
            params
                .get("k")
                .or_else(|| params.get("strike"))
                .copied()
                .unwrap_or(default)
        };
        Ok(match name {
            "identity" => Payoff::identity(dim),
            "quadratic" => Payoff::quadratic(dim),
            "call" => Payoff::call(strike(1.0), dim),
            "binary" | "digital" => Payoff::binary(strike(0.0), dim),
            "log-quadratic" | "log_quadratic" => Payoff::log_quadratic(dim),
            other => return Err(FracnetError::invalid(format!("unknown payoff `{other}`"))),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn has_analytic(&self) -> bool {
        match &self.kind {
            PayoffKind::Separable(_) | PayoffKind::Quadratic => true,
            PayoffKind::Pullback(inner) => inner.has_analytic(),
            PayoffKind::Custom(_) => false,
        }
    }

    /// Analytic `(G, ∇G, D²G)` family, when the payoff has one.
    pub fn analytic(&self) -> Option<AnalyticG<'_>> {
        self.has_analytic().then_some(AnalyticG { payoff: self })
    }

    /// Fractional smoothness index θ for marginal index `p`, when known.
    pub fn known_theta(&self, p: f64) -> Option<f64> {
        match &self.kind {
            PayoffKind::Separable(m) => {
                Some(m.iter().map(|m| m.known_theta(p)).fold(1.0, f64::min))
            }
            PayoffKind::Quadratic => Some(1.0),
            PayoffKind::Pullback(inner) => inner.known_theta(p),
            PayoffKind::Custom(_) => None,
        }
    }

    /// Per-axis jump/kink locations of `g` in the payoff's native
    /// coordinates.
    pub fn breakpoints(&self) -> Vec<Vec<f64>> {
        match &self.kind {
            PayoffKind::Separable(m) => m.iter().map(Marginal::breakpoints).collect(),
            PayoffKind::Quadratic => vec![Vec::new(); self.dim],
            PayoffKind::Pullback(inner) => inner
                .breakpoints()
                .into_iter()
                .map(|axis| {
                    axis.into_iter()
                        .filter(|b| *b > 0.0)
                        .map(|b| b.ln() + 0.5)
                        .collect()
                })
                .collect(),
            PayoffKind::Custom(c) => c.breakpoints.clone(),
        }
    }

    /// Validates that the payoff can be used with `model`.
    pub fn check_model(&self, model: &DiffusionModel) -> Result<()> {
        if model.dim() != self.dim {
            return Err(FracnetError::invalid(format!(
                "payoff `{}` has dimension {}, model has {}",
                self.name,
                self.dim,
                model.dim()
            )));
        }
        match &self.kind {
            PayoffKind::Separable(m) => m.iter().try_for_each(|m| m.check_model(model.kind())),
            PayoffKind::Quadratic | PayoffKind::Custom(_) => Ok(()),
            PayoffKind::Pullback(inner) => {
                if model.is_geometric() {
                    Err(FracnetError::Domain(
                        "a Brownian view payoff cannot be driven by the geometric model".into(),
                    ))
                } else {
                    inner.check_model(&DiffusionModel::geometric(self.dim)?)
                }
            }
        }
    }

    /// Terminal payoff `g(y)`.
    pub fn g(&self, y: &[f64]) -> f64 {
        match &self.kind {
            PayoffKind::Separable(m) => m.iter().zip(y).map(|(m, &v)| m.g(v)).product(),
            PayoffKind::Quadratic => y.iter().map(|v| v * v).sum(),
            PayoffKind::Pullback(inner) => {
                let yy: Vec<f64> = y.iter().map(|x| (x - 0.5).exp()).collect();
                inner.g(&yy)
            }
            PayoffKind::Custom(c) => (c.g)(y),
        }
    }

    /// `G(t, y) = E(g(Y_1) | Y_t = y)`: analytic when available, otherwise
    /// quadrature against the transition law.
    pub fn conditional_expectation(
        &self,
        model: &DiffusionModel,
        t: f64,
        y: &[f64],
    ) -> Result<f64> {
        self.check_args(model, t, y)?;
        if t >= 1.0 {
            return Ok(self.g(y));
        }
        if self.has_analytic() {
            Ok(self.analytic_jet(model.kind(), t, y, None, None))
        } else {
            Ok(self
                .quadrature_jet(model.kind(), t, y, false, QUADRATURE_TOL)?
                .0)
        }
    }

    /// Gradient `∇G(t, y)` as a row vector.
    pub fn gradient(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim];
        let mut hess = vec![0.0; self.dim * self.dim];
        self.jet_into(model, t, y, &mut grad, &mut hess)?;
        Ok(grad)
    }

    /// Hessian `D²G(t, y)`.
    pub fn hessian(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<DMatrix<f64>> {
        let mut grad = vec![0.0; self.dim];
        let mut hess = vec![0.0; self.dim * self.dim];
        self.jet_into(model, t, y, &mut grad, &mut hess)?;
        Ok(DMatrix::from_row_slice(self.dim, self.dim, &hess))
    }

    /// `H_G(t, y)`; undefined at the horizon.
    pub fn h_value(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<HValue> {
        let mut grad = vec![0.0; self.dim];
        let mut hess = vec![0.0; self.dim * self.dim];
        Ok(HValue(
            self.h_squared(model, t, y, &mut grad, &mut hess)?.sqrt(),
        ))
    }

    /// `H_G²(t, y)` using caller-provided scratch space.
    pub fn h_squared(
        &self,
        model: &DiffusionModel,
        t: f64,
        y: &[f64],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> Result<f64> {
        self.jet_into(model, t, y, grad, hess)?;
        let d = self.dim;
        let mut sum = 0.0;
        for k in 0..d {
            let sk = model.sigma_diag(y[k]);
            for l in 0..d {
                let v = sk * model.sigma_diag(y[l]) * hess[k * d + l];
                sum += v * v;
            }
        }
        Ok(sum)
    }

    /// Evaluates `G`, writing `∇G` into `grad` and `D²G` (row-major)
    /// into `hess`. Requires `t < 1`.
    pub fn jet_into(
        &self,
        model: &DiffusionModel,
        t: f64,
        y: &[f64],
        grad: &mut [f64],
        hess: &mut [f64],
    ) -> Result<f64> {
        self.check_args(model, t, y)?;
        if t >= 1.0 {
            return Err(FracnetError::Domain(
                "derivatives of G are singular at t = 1".into(),
            ));
        }
        if self.has_analytic() {
            Ok(self.analytic_jet(model.kind(), t, y, Some(grad), Some(hess)))
        } else {
            let (v, g, h) = self.quadrature_jet(model.kind(), t, y, true, QUADRATURE_TOL)?;
            grad.copy_from_slice(&g);
            hess.copy_from_slice(&h);
            Ok(v)
        }
    }

    /// `G(t, y)` by quadrature regardless of any closed form: split
    /// adaptive Gauss–Kronrod when `d = 1` and breakpoints are known,
    /// tensor Gauss–Hermite (128 nodes per axis) otherwise.
    pub fn quadrature_expectation(
        &self,
        model: &DiffusionModel,
        t: f64,
        y: &[f64],
        tol: f64,
    ) -> Result<f64> {
        self.check_args(model, t, y)?;
        if t >= 1.0 {
            return Ok(self.g(y));
        }
        Ok(self.quadrature_jet(model.kind(), t, y, false, tol)?.0)
    }

    /// Brownian view `f(x) = g(y(1))` with `F(t, x) = G(t, y(t))`.
    pub fn f_view(&self, model: &DiffusionModel) -> Result<Payoff> {
        self.check_model(model)?;
        if !model.is_geometric() {
            return Ok(self.clone());
        }
        Ok(Payoff {
            name: format!("{}@bm", self.name),
            dim: self.dim,
            kind: PayoffKind::Pullback(Box::new(self.clone())),
        })
    }

    fn check_args(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<()> {
        if !(0.0..=1.0).contains(&t) {
            return Err(FracnetError::invalid(format!("time {t} outside [0, 1]")));
        }
        self.check_model(model)?;
        model.check_state(y)
    }

    /// Closed-form jet; only called when `has_analytic()` and `t < 1`.
    fn analytic_jet(
        &self,
        kind: ModelKind,
        t: f64,
        y: &[f64],
        grad: Option<&mut [f64]>,
        hess: Option<&mut [f64]>,
    ) -> f64 {
        let s = 1.0 - t;
        let d = self.dim;
        match &self.kind {
            PayoffKind::Separable(m) if d == 1 => {
                let (v, a, b) = m[0].jet(kind, s, y[0]);
                if let Some(g) = grad {
                    g[0] = a;
                }
                if let Some(h) = hess {
                    h[0] = b;
                }
                v
            }
            PayoffKind::Separable(m) => {
                let jets: Vec<(f64, f64, f64)> =
                    m.iter().zip(y).map(|(m, &v)| m.jet(kind, s, v)).collect();
                let prod_except = |skip: &[usize]| -> f64 {
                    jets.iter()
                        .enumerate()
                        .filter(|(i, _)| !skip.contains(i))
                        .map(|(_, j)| j.0)
                        .product()
                };
                if let Some(g) = grad {
                    for k in 0..d {
                        g[k] = jets[k].1 * prod_except(&[k]);
                    }
                }
                if let Some(h) = hess {
                    for k in 0..d {
                        for l in 0..d {
                            h[k * d + l] = if k == l {
                                jets[k].2 * prod_except(&[k])
                            } else {
                                jets[k].1 * jets[l].1 * prod_except(&[k, l])
                            };
                        }
                    }
                }
                jets.iter().map(|j| j.0).product()
            }
            PayoffKind::Quadratic => {
                let scale = match kind {
                    ModelKind::BrownianMotion => 1.0,
                    ModelKind::GeometricBrownianMotion => s.exp(),
                };
                if let Some(g) = grad {
                    for k in 0..d {
                        g[k] = 2.0 * y[k] * scale;
                    }
                }
                if let Some(h) = hess {
                    for k in 0..d {
                        for l in 0..d {
                            h[k * d + l] = if k == l { 2.0 * scale } else { 0.0 };
                        }
                    }
                }
                let sq: f64 = y.iter().map(|v| v * v).sum();
                match kind {
                    ModelKind::BrownianMotion => sq + d as f64 * s,
                    ModelKind::GeometricBrownianMotion => sq * scale,
                }
            }
            PayoffKind::Pullback(inner) => {
                let yy: Vec<f64> = y.iter().map(|x| (x - 0.5 * t).exp()).collect();
                let mut gi = vec![0.0; d];
                let mut hi = vec![0.0; d * d];
                let v = inner.analytic_jet(
                    ModelKind::GeometricBrownianMotion,
                    t,
                    &yy,
                    Some(&mut gi),
                    Some(&mut hi),
                );
                if let Some(g) = grad {
                    for k in 0..d {
                        g[k] = yy[k] * gi[k];
                    }
                }
                if let Some(h) = hess {
                    for k in 0..d {
                        for l in 0..d {
                            let mut v = yy[k] * yy[l] * hi[k * d + l];
                            if k == l {
                                v += yy[k] * gi[k];
                            }
                            h[k * d + l] = v;
                        }
                    }
                }
                v
            }
            PayoffKind::Custom(_) => unreachable!("custom payoffs have no closed form"),
        }
    }

    /// Terminal value at time-to-horizon `s` as a function of the normal
    /// shocks `z`, starting from `y`.
    fn terminal(&self, kind: ModelKind, s: f64, y: &[f64], z: &[f64], buf: &mut [f64]) -> f64 {
        let rs = s.sqrt();
        for k in 0..y.len() {
            buf[k] = match kind {
                ModelKind::BrownianMotion => y[k] + rs * z[k],
                ModelKind::GeometricBrownianMotion => y[k] * (rs * z[k] - 0.5 * s).exp(),
            };
        }
        self.g(buf)
    }

    /// Returns `(G, ∇G, D²G)` by quadrature. Derivatives use
    /// `E[g Z_k]` and `E[g (Z_k Z_l - δ_kl)]`.
    fn quadrature_jet(
        &self,
        kind: ModelKind,
        t: f64,
        y: &[f64],
        derivatives: bool,
        tol: f64,
    ) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let d = self.dim;
        let s = 1.0 - t;
        let rs = s.sqrt();
        // moments: m0 = E g, m1[k] = E g Z_k, m2[k,l] = E g (Z_k Z_l - δ)
        let (m0, m1, m2) = if d == 1 && self.breakpoints()[0].iter().any(|_| true) {
            let cuts: Vec<f64> = self.breakpoints()[0]
                .iter()
                .filter_map(|&b| match kind {
                    ModelKind::BrownianMotion => Some((b - y[0]) / rs),
                    ModelKind::GeometricBrownianMotion => {
                        (b > 0.0).then(|| ((b / y[0]).ln() + 0.5 * s) / rs)
                    }
                })
                .collect();
            let mut buf = [0.0];
            let abs_tol = (tol * 1e-3).max(1e-15);
            let check = |r: gauss::Integral| -> Result<f64> {
                if r.error > tol.max(tol * r.value.abs()) || !r.value.is_finite() {
                    Err(FracnetError::Quadrature {
                        achieved: r.error,
                        tolerance: tol,
                    })
                } else {
                    Ok(r.value)
                }
            };
            let m0 = check(gaussian_expectation(
                |z| self.terminal(kind, s, y, &[z], &mut buf),
                &cuts,
                abs_tol,
            ))?;
            let (m1, m2) = if derivatives {
                let m1 = check(gaussian_expectation(
                    |z| z * self.terminal(kind, s, y, &[z], &mut buf),
                    &cuts,
                    abs_tol,
                ))?;
                let m2 = check(gaussian_expectation(
                    |z| (z * z - 1.0) * self.terminal(kind, s, y, &[z], &mut buf),
                    &cuts,
                    abs_tol,
                ))?;
                (vec![m1], vec![m2])
            } else {
                (vec![0.0], vec![0.0])
            };
            (m0, m1, m2)
        } else {
            if d > 3 {
                return Err(FracnetError::invalid(
                    "tensor quadrature fallback supports dim <= 3",
                ));
            }
            let fine = self.tensor_moments(kind, s, y, hermite_128(), derivatives);
            let coarse = self.tensor_moments(kind, s, y, hermite_64(), false);
            let achieved = (fine.0 - coarse.0).abs();
            if achieved > tol.max(tol * fine.0.abs()) || !fine.0.is_finite() {
                return Err(FracnetError::Quadrature {
                    achieved,
                    tolerance: tol,
                });
            }
            fine
        };
        let mut grad = vec![0.0; d];
        let mut hess = vec![0.0; d * d];
        if derivatives {
            for k in 0..d {
                grad[k] = match kind {
                    ModelKind::BrownianMotion => m1[k] / rs,
                    ModelKind::GeometricBrownianMotion => m1[k] / (y[k] * rs),
                };
            }
            for k in 0..d {
                for l in 0..d {
                    let base = m2[k * d + l] / s;
                    hess[k * d + l] = match kind {
                        ModelKind::BrownianMotion => base,
                        ModelKind::GeometricBrownianMotion => {
                            let corr = if k == l { m1[k] / rs } else { 0.0 };
                            (base - corr) / (y[k] * y[l])
                        }
                    };
                }
            }
        }
        Ok((m0, grad, hess))
    }

    fn tensor_moments(
        &self,
        kind: ModelKind,
        s: f64,
        y: &[f64],
        rule: &gauss::HermiteRule,
        derivatives: bool,
    ) -> (f64, Vec<f64>, Vec<f64>) {
        let d = self.dim;
        let n = rule.nodes.len();
        let total = n.pow(d as u32);
        let mut z = vec![0.0; d];
        let mut buf = vec![0.0; d];
        let mut m0 = 0.0;
        let mut m1 = vec![0.0; d];
        let mut m2 = vec![0.0; d * d];
        for flat in 0..total {
            let mut rem = flat;
            let mut w = 1.0;
            for k in 0..d {
                let i = rem % n;
                rem /= n;
                z[k] = rule.nodes[i];
                w *= rule.weights[i];
            }
            let gv = w * self.terminal(kind, s, y, &z, &mut buf);
            m0 += gv;
            if derivatives {
                for k in 0..d {
                    m1[k] += gv * z[k];
                    for l in 0..d {
                        let delta = if k == l { 1.0 } else { 0.0 };
                        m2[k * d + l] += gv * (z[k] * z[l] - delta);
                    }
                }
            }
        }
        (m0, m1, m2)
    }
}

/// Closed-form `(G, ∇G, D²G)` family of a catalog payoff.
#[derive(Debug, Clone, Copy)]
pub struct AnalyticG<'a> {
    payoff: &'a Payoff,
}

impl AnalyticG<'_> {
    pub fn value(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<f64> {
        self.payoff.conditional_expectation(model, t, y)
    }

    pub fn gradient(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<Vec<f64>> {
        self.payoff.gradient(model, t, y)
    }

    pub fn hessian(&self, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<DMatrix<f64>> {
        self.payoff.hessian(model, t, y)
    }
}

pub fn conditional_expectation(
    payoff: &Payoff,
    model: &DiffusionModel,
    t: f64,
    y: &[f64],
) -> Result<f64> {
    payoff.conditional_expectation(model, t, y)
}

pub fn h_value(payoff: &Payoff, model: &DiffusionModel, t: f64, y: &[f64]) -> Result<HValue> {
    payoff.h_value(model, t, y)
}

pub fn f_view(payoff: &Payoff, model: &DiffusionModel) -> Result<Payoff> {
    payoff.f_view(model)
}

/// Payoff selection as it appears in configs and on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayoffSpec {
    pub name: String,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl PayoffSpec {
    pub fn build(&self, dim: usize) -> Result<Payoff> {
        Payoff::from_name(&self.name, &self.params, dim)
    }
}

/// Outcome of comparing both sides of
/// `y_k y_l ∂²G/∂y_k∂y_l = ∂²F/∂x_k∂x_l - δ_kl ∂F/∂x_k`.
#[derive(Debug, Clone, Serialize)]
pub struct HessianIdentityReport {
    pub probes: usize,
    pub max_residual: f64,
    pub residuals: Vec<f64>,
}

/// Base step of the extrapolated differences, in units of `(1-t)^{1/2}`.
const FD_RICHARDSON_STEP: f64 = 0.02;

/// Checks the geometric/Brownian Hessian identity at `(t, x)` probes.
///
/// The left side uses the analytic geometric Hessian; the right side uses
/// central finite differences of `F(t, x) = G(t, y(t))` at steps
/// `h, h/2, h/4` with `h = 0.02 (1-t)^{1/2}`, extrapolated twice
/// (Richardson), which leaves `O(h^6)` truncation and keeps rounding noise
/// near `1e-11`. Residuals are relative to
/// `max(1, |F|/(1-t), |lhs|, |rhs|)`, the scale of finite-difference noise
/// in a second derivative.
pub fn check_bm_gbm_hessian_identity(
    payoff: &Payoff,
    probes: &[(f64, Vec<f64>)],
) -> Result<HessianIdentityReport> {
    let d = payoff.dim();
    let gbm = DiffusionModel::geometric(d)?;
    payoff.check_model(&gbm)?;
    if !payoff.has_analytic() {
        return Err(FracnetError::invalid(
            "the Hessian identity check needs an analytic payoff",
        ));
    }
    let f_of = |t: f64, x: &[f64]| -> Result<f64> {
        let y = gbm.map_w_to_y(t, x);
        payoff.conditional_expectation(&gbm, t, &y)
    };
    let mut residuals = Vec::with_capacity(probes.len());
    for (t, x) in probes {
        let t = *t;
        if t > 1.0 - 1e-3 || x.len() != d {
            return Err(FracnetError::invalid(
                "probes need t <= 1 - 1e-3 and matching dimension",
            ));
        }
        let s = 1.0 - t;
        let y = gbm.map_w_to_y(t, x);
        let hess = payoff.hessian(&gbm, t, &y)?;
        let f0 = f_of(t, x)?;
        let mut worst: f64 = 0.0;
        for k in 0..d {
            for l in 0..d {
                let lhs = y[k] * y[l] * hess[(k, l)];
                let shifted = |dk: f64, dl: f64| -> Result<f64> {
                    let mut xs = x.clone();
                    xs[k] += dk;
                    xs[l] += dl;
                    f_of(t, &xs)
                };
                // central differences of ∂²F/∂x_k∂x_l - δ_kl ∂F/∂x_k at step h
                let rhs_at = |h: f64| -> Result<f64> {
                    if k == l {
                        let (fp, fm) = (shifted(h, 0.0)?, shifted(-h, 0.0)?);
                        Ok((fp - 2.0 * f0 + fm) / (h * h) - (fp - fm) / (2.0 * h))
                    } else {
                        Ok(
                            (shifted(h, h)? - shifted(h, -h)? - shifted(-h, h)? + shifted(-h, -h)?)
                                / (4.0 * h * h),
                        )
                    }
                };
                let h = FD_RICHARDSON_STEP * s.sqrt();
                let (d1, d2, d4) = (rhs_at(h)?, rhs_at(h / 2.0)?, rhs_at(h / 4.0)?);
                let (r1, r2) = ((4.0 * d2 - d1) / 3.0, (4.0 * d4 - d2) / 3.0);
                let rhs = (16.0 * r2 - r1) / 15.0;
                let scale = 1f64.max(f0.abs() / s).max(lhs.abs()).max(rhs.abs());
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
        residuals.push(worst);
    }
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(HessianIdentityReport {
        probes: probes.len(),
        max_residual,
        residuals,
    })
}
