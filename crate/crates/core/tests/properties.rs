use fracnet::quadrature::{hardy_check, hardy_constant, WeightedCurve, HARDY_SLACK};
use fracnet::{DiffusionModel, Payoff, TimeNet};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn theta_net_meets_mesh_bound(n in 1usize..5000, theta in 0.01f64..=1.0) {
        let net = TimeNet::theta_net(n, theta).unwrap();
        prop_assert_eq!(net.steps(), n);
        prop_assert!(net.mesh_theta(theta) <= 1.0 / (theta * n as f64));
        prop_assert!(net.knots().windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(net.knots()[0], 0.0);
        prop_assert_eq!(*net.knots().last().unwrap(), 1.0);
    }

    #[test]
    fn equidistant_is_theta_one(n in 1usize..2000) {
        let net = TimeNet::equidistant(n).unwrap();
        let mesh = net.mesh_theta(1.0);
        prop_assert!((mesh - 1.0 / n as f64).abs() <= 1e-12);
    }

    #[test]
    fn hardy_holds_for_powers(a in -0.95f64..2.0, theta in 0.05f64..0.95, qi in 0usize..4) {
        let q = [1.0, 2.0, 4.0, f64::INFINITY][qi];
        // (1-t)^a with a <= 0 is non-decreasing; q < 2 needs that
        prop_assume!(q >= 2.0 || a <= 0.0);
        let phi = WeightedCurve::sample(|t| (1.0 - t).powf(a), 4000, 1e-9).unwrap();
        let r = hardy_check(&phi, theta, q).unwrap();
        prop_assert!(r.holds, "a={a} θ={theta} q={q} ratio={} C={}", r.ratio, r.constant);
        if r.lhs.is_finite() && r.rhs.is_finite() {
            prop_assert!(r.ratio <= hardy_constant(theta, q) * (1.0 + HARDY_SLACK));
        }
    }
}

fn probes() -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            out.push((0.99 * i as f64 / 9.0, -1.0 + 2.0 * j as f64 / 9.0));
        }
    }
    out
}

fn worst_gap(payoff: &Payoff, model: &DiffusionModel) -> f64 {
    let mut worst: f64 = 0.0;
    for (t, x) in probes() {
        let y = model.map_w_to_y(t, &[x]);
        let exact = payoff.conditional_expectation(model, t, &y).unwrap();
        let quad = payoff.quadrature_expectation(model, t, &y, 1e-12).unwrap();
        worst = worst.max((exact - quad).abs() / exact.abs().max(1.0));
    }
    worst
}

#[test]
fn analytic_matches_quadrature_bm() {
    let bm = DiffusionModel::brownian(1).unwrap();
    for p in [
        Payoff::identity(1),
        Payoff::quadratic(1),
        Payoff::call(0.0, 1),
        Payoff::binary(0.2, 1),
    ] {
        let gap = worst_gap(&p, &bm);
        assert!(gap <= 1e-8, "{}: {gap:e}", p.name());
    }
}

#[test]
fn analytic_matches_quadrature_gbm() {
    let gbm = DiffusionModel::geometric(1).unwrap();
    for p in [
        Payoff::identity(1),
        Payoff::call(1.0, 1),
        Payoff::binary(1.0, 1),
        Payoff::log_quadratic(1),
    ] {
        let gap = worst_gap(&p, &gbm);
        assert!(gap <= 1e-8, "{}: {gap:e}", p.name());
    }
}

#[test]
fn theta_net_rejects_bad_arguments() {
    assert!(TimeNet::theta_net(0, 0.5).is_err());
    assert!(TimeNet::theta_net(4, 0.0).is_err());
    assert!(TimeNet::theta_net(4, 1.5).is_err());
    assert!(TimeNet::theta_net(4, f64::NAN).is_err());
    assert!(TimeNet::new(vec![0.0, 0.6, 0.4, 1.0]).is_err());
}
