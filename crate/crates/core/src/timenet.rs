//! Time-nets: deterministic knot sequences, the θ-adapted family and
//! predictable step rules producing random nets.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{FracnetError, Result};
use crate::model::{DiffusionModel, PathView};
use crate::payoff::Payoff;

/// Knots `0 = t_0 <= ... <= t_{n-1} < t_n = 1`.
///
/// The distances `1 - t_i` and the step lengths are kept alongside the
/// knots. For strongly adapted nets they are far below the spacing of
/// doubles near 1, and the θ-mesh is computed from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeNet {
    knots: Vec<f64>,
    tails: Vec<f64>,
    gaps: Vec<f64>,
}

impl TimeNet {
    pub fn new(knots: Vec<f64>) -> Result<Self> {
        let n = knots.len();
        if n < 2 {
            return Err(FracnetError::invalid("a time-net needs at least two knots"));
        }
        if knots[0] != 0.0 || knots[n - 1] != 1.0 {
            return Err(FracnetError::invalid(
                "a time-net must start at 0 and end at 1",
            ));
        }
        if !(knots[n - 2] < 1.0) {
            return Err(FracnetError::invalid(
                "the second-to-last knot must be below 1",
            ));
        }
        if knots.windows(2).any(|w| !(w[1] >= w[0])) {
            return Err(FracnetError::invalid(
                "time-net knots must be nondecreasing",
            ));
        }
        let tails = knots.iter().map(|t| 1.0 - t).collect();
        let gaps = knots.windows(2).map(|w| w[1] - w[0]).collect();
        Ok(TimeNet { knots, tails, gaps })
    }

    /// Knots `i/n`.
    pub fn equidistant(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FracnetError::invalid("step count must be at least 1"));
        }
        let nf = n as f64;
        Ok(TimeNet {
            knots: (0..=n).map(|i| i as f64 / nf).collect(),
            tails: (0..=n).map(|i| (n - i) as f64 / nf).collect(),
            gaps: vec![1.0 / nf; n],
        })
    }

    /// Knots `1 - (1 - i/n)^{1/θ}`, concentrating near the horizon.
    pub fn theta_net(n: usize, theta: f64) -> Result<Self> {
        if !(theta > 0.0 && theta <= 1.0) {
            return Err(FracnetError::invalid(format!(
                "theta must lie in (0, 1], got {theta}"
            )));
        }
        if theta == 1.0 {
            return Self::equidistant(n);
        }
        if n == 0 {
            return Err(FracnetError::invalid("step count must be at least 1"));
        }
        let nf = n as f64;
        let tails: Vec<f64> = (0..=n)
            .map(|i| ((n - i) as f64 / nf).powf(1.0 / theta))
            .collect();
        // near the horizon several knots may round to 1.0; the tails stay exact
        let knots = tails.iter().map(|s| 1.0 - s).collect();
        // u^{1/θ} - (u - 1/n)^{1/θ} with u = (n - i + 1)/n, free of cancellation
        let gaps = (1..=n)
            .map(|i| {
                let left = tails[i - 1];
                -left * ((-1.0 / (n - i + 1) as f64).ln_1p() / theta).exp_m1()
            })
            .collect();
        let net = TimeNet { knots, tails, gaps };
        if net.tails.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(FracnetError::invalid(format!(
                "theta-net with n={n}, theta={theta} collapses knots in floating point"
            )));
        }
        Ok(net)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of steps `n`.
    /// Distances `1 - t_i` to the horizon.
    pub fn tails(&self) -> &[f64] {
        &self.tails
    }

    pub fn steps(&self) -> usize {
        self.knots.len() - 1
    }

    /// `sup_i (t_i - t_{i-1}) / (1 - t_{i-1})^{1-θ}`; θ = 1 gives the
    /// ordinary mesh.
    pub fn mesh_theta(&self, theta: f64) -> f64 {
        assert!(theta > 0.0 && theta <= 1.0, "theta must lie in (0, 1]");
        self.gaps
            .iter()
            .zip(&self.tails)
            .map(|(&gap, &tail)| {
                if theta == 1.0 {
                    gap
                } else {
                    gap / tail.powf(1.0 - theta)
                }
            })
            .fold(0.0, f64::max)
    }

    pub fn mesh(&self) -> f64 {
        self.mesh_theta(1.0)
    }

    /// Largest step `max_i (t_i - t_{i-1})`.
    pub fn max_step(&self) -> f64 {
        self.mesh()
    }
}

pub fn mesh_theta(net: &TimeNet, theta: f64) -> f64 {
    net.mesh_theta(theta)
}

/// Net family as selected on the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum NetFamily {
    Equidistant,
    Theta { theta: f64 },
    Rule { name: String },
}

impl NetFamily {
    /// Deterministic member with `n` steps; `None` for rule families.
    pub fn net(&self, n: usize) -> Option<Result<TimeNet>> {
        match self {
            NetFamily::Equidistant => Some(TimeNet::equidistant(n)),
            NetFamily::Theta { theta } => Some(TimeNet::theta_net(n, *theta)),
            NetFamily::Rule { .. } => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            NetFamily::Equidistant => "equidistant".to_string(),
            NetFamily::Theta { theta } => format!("theta:{theta}"),
            NetFamily::Rule { name } => format!("rule:{name}"),
        }
    }
}

impl std::str::FromStr for NetFamily {
    type Err = FracnetError;

    /// Parses `equidistant`, `theta` / `theta:<x>` (θ defaults to 1/2) and
    /// `rule:<name>`.
    fn from_str(s: &str) -> Result<Self> {
        if s == "equidistant" {
            return Ok(NetFamily::Equidistant);
        }
        if s == "theta" {
            return Ok(NetFamily::Theta { theta: 0.5 });
        }
        if let Some(x) = s.strip_prefix("theta:") {
            let theta: f64 = x
                .parse()
                .map_err(|_| FracnetError::invalid(format!("bad theta in net spec `{s}`")))?;
            return Ok(NetFamily::Theta { theta });
        }
        if let Some(name) = s.strip_prefix("rule:") {
            if name.is_empty() {
                return Err(FracnetError::invalid("empty rule name"));
            }
            return Ok(NetFamily::Rule {
                name: name.to_string(),
            });
        }
        Err(FracnetError::invalid(format!("unknown net family `{s}`")))
    }
}

/// Next decision time as a function of the current time and state only.
/// Any such rule yields nets whose knot `τ_i` is known at `τ_{i-1}`.
pub trait StepRule: Send + Sync {
    fn name(&self) -> &str;
    fn next_time(&self, current: f64, state: &[f64]) -> f64;
}

/// Fixed step `τ_i = τ_{i-1} + step`.
#[derive(Debug, Clone)]
pub struct ConstantStep {
    pub step: f64,
}

impl StepRule for ConstantStep {
    fn name(&self) -> &str {
        "constant"
    }

    fn next_time(&self, current: f64, _state: &[f64]) -> f64 {
        current + self.step
    }
}

/// `τ_i = τ_{i-1} + fraction · (1 - τ_{i-1})`.
#[derive(Debug, Clone)]
pub struct GeometricStep {
    pub fraction: f64,
}

impl StepRule for GeometricStep {
    fn name(&self) -> &str {
        "geometric"
    }

    fn next_time(&self, current: f64, _state: &[f64]) -> f64 {
        current + self.fraction * (1.0 - current)
    }
}

/// θ-adapted step shrunk where the curvature `H_G` of the payoff is large:
/// `Δ = (1-τ)^{1-θ} / (θ n) / (1 + (1-τ) H_G(τ, Y_τ))`.
#[derive(Clone)]
pub struct CurvatureStep {
    pub payoff: Payoff,
    pub model: DiffusionModel,
    pub theta: f64,
    pub n: usize,
}

impl fmt::Debug for CurvatureStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CurvatureStep")
            .field("payoff", &self.payoff.name())
            .field("theta", &self.theta)
            .field("n", &self.n)
            .finish()
    }
}

impl StepRule for CurvatureStep {
    fn name(&self) -> &str {
        "curvature"
    }

    fn next_time(&self, current: f64, state: &[f64]) -> f64 {
        let s = 1.0 - current;
        let base = s.powf(1.0 - self.theta) / (self.theta * self.n as f64);
        let h = self
            .payoff
            .h_value(&self.model, current, state)
            .map(|h| h.value())
            .unwrap_or(0.0);
        current + base / (1.0 + s * h)
    }
}

/// Intermediate decision times never exceed this value.
pub const DECISION_CAP: f64 = 1.0 - 1e-9;

#[derive(Clone)]
pub struct AdaptiveNetRule {
    rule: Arc<dyn StepRule>,
    max_steps: usize,
}

impl fmt::Debug for AdaptiveNetRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AdaptiveNetRule")
            .field("rule", &self.rule.name())
            .field("max_steps", &self.max_steps)
            .finish()
    }
}

impl AdaptiveNetRule {
    pub fn new(rule: Arc<dyn StepRule>, max_steps: usize) -> Result<Self> {
        if max_steps == 0 {
            return Err(FracnetError::invalid("max_steps must be at least 1"));
        }
        Ok(AdaptiveNetRule { rule, max_steps })
    }

    /// Builds a named rule: `constant` (step 1/n), `geometric` (fraction
    /// 1/2) or `curvature` (needs a payoff).
    pub fn named(
        name: &str,
        n: usize,
        theta: f64,
        payoff: Option<(&Payoff, &DiffusionModel)>,
    ) -> Result<Self> {
        let rule: Arc<dyn StepRule> = match name {
            "constant" => Arc::new(ConstantStep {
                step: 1.0 / n.max(1) as f64,
            }),
            "geometric" => Arc::new(GeometricStep { fraction: 0.5 }),
            "curvature" => {
                let (p, m) = payoff.ok_or_else(|| {
                    FracnetError::invalid("the curvature rule needs a payoff and model")
                })?;
                Arc::new(CurvatureStep {
                    payoff: p.clone(),
                    model: *m,
                    theta,
                    n: n.max(1),
                })
            }
            other => {
                return Err(FracnetError::invalid(format!(
                    "unknown step rule `{other}`"
                )))
            }
        };
        Self::new(rule, n)
    }

    pub fn name(&self) -> &str {
        self.rule.name()
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }
}

/// A per-path net together with the grid indices of its knots.
#[derive(Debug, Clone, PartialEq)]
pub struct RealizedNet {
    pub net: TimeNet,
    pub indices: Vec<usize>,
}

/// Runs the step rule along one path. Decision times are snapped up to the
/// nearest grid knot; the last knot is always 1.
pub fn realize_random_net(
    rule: &AdaptiveNetRule,
    model: &DiffusionModel,
    path: &PathView<'_>,
) -> Result<RealizedNet> {
    let grid = path.grid;
    let knots = grid.knots();
    let last = knots.len() - 1;
    let mut indices = Vec::with_capacity(rule.max_steps + 1);
    indices.push(0usize);
    let mut state = vec![0.0; model.dim()];
    for i in 1..rule.max_steps {
        let current_idx = *indices.last().unwrap();
        let current = knots[current_idx];
        model.map_w_to_y_into(current, path.w_at(current_idx), &mut state);
        let proposed = rule.rule.next_time(current, &state);
        if !(proposed > current) {
            return Err(FracnetError::NonIncreasingRule {
                index: i,
                previous: current,
                proposed,
            });
        }
        let capped = proposed.min(DECISION_CAP);
        let mut j = grid
            .first_at_or_after(capped)
            .expect("grid always contains 1");
        if j <= current_idx {
            j = current_idx + 1;
        }
        if j >= last {
            break;
        }
        indices.push(j);
    }
    indices.push(last);
    let net = TimeNet::new(indices.iter().map(|&i| knots[i]).collect())?;
    Ok(RealizedNet { net, indices })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{simulate_paths, TimeGrid};

    #[test]
    fn equidistant_knots() {
        assert_eq!(
            TimeNet::equidistant(4).unwrap().knots(),
            &[0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(TimeNet::equidistant(1).unwrap().knots(), &[0.0, 1.0]);
        assert!(TimeNet::equidistant(0).is_err());
    }

    #[test]
    fn theta_net_examples() {
        assert_eq!(
            TimeNet::theta_net(7, 1.0).unwrap(),
            TimeNet::equidistant(7).unwrap()
        );
        let net = TimeNet::theta_net(2, 0.5).unwrap();
        assert_eq!(net.knots(), &[0.0, 0.75, 1.0]);
        // max{0.75 / 1, 0.25 / 0.25^{1/2}} = 0.75
        assert_eq!(net.mesh_theta(0.5), 0.75);
    }

    #[test]
    fn theta_outside_unit_interval_rejected() {
        assert!(TimeNet::theta_net(4, 0.0).is_err());
        assert!(TimeNet::theta_net(4, 1.5).is_err());
        assert!(TimeNet::theta_net(4, f64::NAN).is_err());
    }

    #[test]
    fn trivial_net_has_unit_mesh() {
        let net = TimeNet::equidistant(1).unwrap();
        for theta in [0.1, 0.5, 1.0] {
            assert_eq!(net.mesh_theta(theta), 1.0);
        }
    }

    #[test]
    fn invalid_nets_rejected() {
        assert!(TimeNet::new(vec![0.0, 1.0, 1.0]).is_err());
        assert!(TimeNet::new(vec![0.0, 0.6, 0.4, 1.0]).is_err());
        assert!(TimeNet::new(vec![0.1, 1.0]).is_err());
        assert!(TimeNet::new(vec![0.0, 0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn net_family_parsing() {
        assert_eq!(
            "equidistant".parse::<NetFamily>().unwrap(),
            NetFamily::Equidistant
        );
        assert_eq!(
            "theta:0.25".parse::<NetFamily>().unwrap(),
            NetFamily::Theta { theta: 0.25 }
        );
        assert_eq!(
            "rule:geometric".parse::<NetFamily>().unwrap(),
            NetFamily::Rule {
                name: "geometric".into()
            }
        );
        assert!("bogus".parse::<NetFamily>().is_err());
    }

    fn fine_grid() -> TimeGrid {
        TimeGrid::builder()
            .uniform(64)
            .horizon_refinement(40, 4)
            .build()
    }

    #[test]
    fn constant_rule_realizes_equidistant_net() {
        let model = DiffusionModel::brownian(1).unwrap();
        let batch = simulate_paths(&model, &fine_grid(), 5, 1).unwrap();
        let rule = AdaptiveNetRule::named("constant", 8, 1.0, None).unwrap();
        for i in 0..5 {
            let r = realize_random_net(&rule, &model, &batch.path(i)).unwrap();
            assert_eq!(r.net, TimeNet::equidistant(8).unwrap());
        }
    }

    #[test]
    fn geometric_rule_hand_iteration() {
        let model = DiffusionModel::brownian(1).unwrap();
        let batch = simulate_paths(&model, &fine_grid(), 3, 1).unwrap();
        let rule = AdaptiveNetRule::new(Arc::new(GeometricStep { fraction: 0.5 }), 3).unwrap();
        for i in 0..3 {
            let r = realize_random_net(&rule, &model, &batch.path(i)).unwrap();
            assert_eq!(r.net.knots(), &[0.0, 0.5, 0.75, 1.0]);
        }
    }

    struct Stuck;
    impl StepRule for Stuck {
        fn name(&self) -> &str {
            "stuck"
        }
        fn next_time(&self, current: f64, _: &[f64]) -> f64 {
            if current > 0.0 {
                current
            } else {
                0.5
            }
        }
    }

    #[test]
    fn non_increasing_rule_reports_index() {
        let model = DiffusionModel::brownian(1).unwrap();
        let batch = simulate_paths(&model, &fine_grid(), 1, 1).unwrap();
        let rule = AdaptiveNetRule::new(Arc::new(Stuck), 5).unwrap();
        match realize_random_net(&rule, &model, &batch.path(0)) {
            Err(FracnetError::NonIncreasingRule { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected rejection, got {other:?}"),
        }
    }
}
