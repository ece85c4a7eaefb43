//! Gaussian special functions and the one-dimensional integration rules
//! shared by the payoff, smoothness and quadrature modules.

use std::sync::OnceLock;

use crate::error::{FracnetError, Result};

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard normal density.
#[inline]
pub fn norm_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard normal distribution function, accurate in both tails.
#[inline]
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Gauss–Hermite rule for expectations under N(0,1):
/// `E f(Z) ≈ Σ weights[i] f(nodes[i])`.
#[derive(Debug, Clone)]
pub struct HermiteRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl HermiteRule {
    /// Builds the n-point rule by Newton iteration on the orthonormal
    /// Hermite recurrence (physicists' weight), then rescales to the
    /// standard normal.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Hermite rule needs at least one node");
        const PIM4: f64 = 0.751_125_544_464_942_5;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let nf = n as f64;
        let m = n.div_ceil(2);
        let mut z = 0.0_f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.855_75 * (2.0 * nf + 1.0).powf(-0.166_67),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        let mut nodes: Vec<f64> = x.iter().map(|v| v * std::f64::consts::SQRT_2).collect();
        let mut weights: Vec<f64> = w.iter().map(|v| v / sqrt_pi).collect();
        // ascending order
        nodes.reverse();
        weights.reverse();
        HermiteRule { nodes, weights }
    }

    pub fn expect<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// The 128-node rule used by the quadrature fallback.
pub fn hermite_128() -> &'static HermiteRule {
    static RULE: OnceLock<HermiteRule> = OnceLock::new();
    RULE.get_or_init(|| HermiteRule::new(128))
}

/// The 64-node companion rule used to estimate the fallback's error.
pub fn hermite_64() -> &'static HermiteRule {
    static RULE: OnceLock<HermiteRule> = OnceLock::new();
    RULE.get_or_init(|| HermiteRule::new(64))
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integral {
    pub value: f64,
    pub error: f64,
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Integral {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for j in 0..7 {
        let dx = h * XGK[j];
        let s = f(c - dx) + f(c + dx);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    Integral {
        value: kron * h,
        error: ((kron - gauss) * h).abs(),
    }
}

/// Globally adaptive 7/15-point Gauss–Kronrod integration over `[a, b]`.
///
/// Returns the best estimate even when the tolerance is not met; the
/// caller inspects `error`.
pub fn integrate_adaptive<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_intervals: usize,
) -> Integral {
    if a == b {
        return Integral {
            value: 0.0,
            error: 0.0,
        };
    }
    let mut parts = vec![(a, b, kronrod15(&mut f, a, b))];
    loop {
        let value: f64 = parts.iter().map(|p| p.2.value).sum();
        let error: f64 = parts.iter().map(|p| p.2.error).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) || parts.len() >= max_intervals {
            return Integral { value, error };
        }
        let (worst, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .expect("non-empty");
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            // interval exhausted at machine precision
            let value: f64 = parts.iter().map(|p| p.2.value).sum::<f64>();
            return Integral {
                value: value + kronrod15(&mut f, lo, hi).value,
                error,
            };
        }
        parts.push((lo, mid, kronrod15(&mut f, lo, mid)));
        parts.push((mid, hi, kronrod15(&mut f, mid, hi)));
    }
}

/// Half-width of the standard normal range integrated explicitly.
pub const GAUSS_RANGE: f64 = 12.0;

/// `E h(Z)` for `Z ~ N(0,1)`, splitting at `breakpoints` (where `h` may
/// jump or kink) and integrating each piece adaptively.
pub fn gaussian_expectation<F: FnMut(f64) -> f64>(
    mut h: F,
    breakpoints: &[f64],
    abs_tol: f64,
) -> Integral {
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|b| b.is_finite() && b.abs() < GAUSS_RANGE)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = Vec::with_capacity(cuts.len() + 2);
    edges.push(-GAUSS_RANGE);
    edges.extend(cuts);
    edges.push(GAUSS_RANGE);
    let pieces = edges.len() - 1;
    let mut total = Integral {
        value: 0.0,
        error: 0.0,
    };
    for win in edges.windows(2) {
        let part = integrate_adaptive(
            |z| norm_pdf(z) * h(z),
            win[0],
            win[1],
            abs_tol / pieces as f64,
            0.0,
            400,
        );
        total.value += part.value;
        total.error += part.error;
    }
    total
}

/// Like [`gaussian_expectation`] but fails when the error estimate
/// exceeds `tol`.
pub fn gaussian_expectation_checked<F: FnMut(f64) -> f64>(
    h: F,
    breakpoints: &[f64],
    tol: f64,
) -> Result<f64> {
    let r = gaussian_expectation(h, breakpoints, tol);
    if r.error > tol.max(1e-14 * r.value.abs()) * 10.0 || !r.value.is_finite() {
        return Err(FracnetError::Quadrature {
            achieved: r.error,
            tolerance: tol,
        });
    }
    Ok(r.value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        let rule = hermite_128();
        assert_relative_eq!(rule.weights.iter().sum::<f64>(), 1.0, epsilon = 1e-13);
        assert_relative_eq!(rule.expect(|z| z * z), 1.0, epsilon = 1e-12);
        assert_relative_eq!(rule.expect(|z| z.powi(4)), 3.0, epsilon = 1e-11);
        assert_relative_eq!(rule.expect(|z| z.powi(6)), 15.0, epsilon = 1e-10);
        assert!(rule.expect(|z| z.powi(3)).abs() < 1e-12);
    }

    #[test]
    fn small_hermite_rule_matches_known_nodes() {
        // probabilists' 3-point rule: nodes 0, ±√3 with weights 2/3, 1/6
        let rule = HermiteRule::new(3);
        assert_relative_eq!(rule.nodes[2], 3f64.sqrt(), epsilon = 1e-14);
        assert!(rule.nodes[1].abs() < 1e-14);
        assert_relative_eq!(rule.weights[1], 2.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(rule.weights[0], 1.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn adaptive_handles_endpoint_singularity() {
        // ∫_0^1 x^{-1/2} dx = 2
        let r = integrate_adaptive(|x| x.powf(-0.5), 0.0, 1.0, 1e-10, 0.0, 2000);
        assert_relative_eq!(r.value, 2.0, epsilon = 1e-8);
    }

    #[test]
    fn gaussian_expectation_of_step_with_breakpoint() {
        let r = gaussian_expectation(|z| if z >= 0.5 { 1.0 } else { 0.0 }, &[0.5], 1e-13);
        assert_relative_eq!(r.value, 1.0 - norm_cdf(0.5), epsilon = 1e-12);
    }

    #[test]
    fn cdf_tails_are_accurate() {
        assert_relative_eq!(norm_cdf(0.0), 0.5, epsilon = 1e-16);
        // Φ(-8) ≈ 6.220960574271785e-16
        assert_relative_eq!(
            norm_cdf(-8.0),
            6.220_960_574_271_785e-16,
            max_relative = 1e-10
        );
    }
}
