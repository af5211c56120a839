//! Quadrature primitives: Gauss–Legendre rules and composite Simpson.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

/// Gauss–Legendre rule rescaled to the reference interval [0, 1].
#[derive(Debug, Clone)]
pub struct GlRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GlRule {
    /// Builds the order-`q` rule by Newton iteration on the Legendre
    /// polynomial P_q, seeded with the Chebyshev-angle approximation.
    fn build(q: usize) -> Self {
        assert!(q >= 1, "Gauss-Legendre order must be at least 1");
        let n = q;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        for i in 0..n {
            // Root guess for P_n on [-1, 1], descending.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                // Evaluate P_n(x) and P_n'(x) by the three-term recurrence.
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                let p = if n == 1 { x } else { p1 };
                let pm1 = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (pm1 - x * p) / (1.0 - x * x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            nodes[i] = 0.5 * (1.0 - x); // map from [-1,1] (descending) to [0,1] ascending
            weights[i] = 1.0 / ((1.0 - x * x) * dp * dp); // includes the 1/2 interval scaling
        }
        GlRule { nodes, weights }
    }

    /// ∫₀¹ f(u) du.
    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// ∫ₐᵇ f(u) du.
    pub fn integrate_on(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let span = b - a;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(a + span * x))
            .sum::<f64>()
            * span
    }
}

/// Shared, lazily-built rule cache. Rules are immutable once constructed.
pub fn gl_rule(q: usize) -> Arc<GlRule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GlRule>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard.entry(q).or_insert_with(|| Arc::new(GlRule::build(q))).clone()
}

/// Composite Simpson on [a, b] with `n_sub` subintervals (forced even).
pub fn composite_simpson(a: f64, b: f64, n_sub: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    if (b - a).abs() == 0.0 {
        return 0.0;
    }
    let n = if n_sub % 2 == 0 { n_sub.max(2) } else { n_sub + 1 };
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let coeff = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += coeff * f(a + h * k as f64);
    }
    acc * h / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gl_exact_on_polynomials() {
        let r = gl_rule(2);
        assert_relative_eq!(r.integrate(|u| u), 0.5, max_relative = 1e-14);
        assert_relative_eq!(r.integrate(|u| u * u * u), 0.25, max_relative = 1e-14);
        let r16 = gl_rule(16);
        // degree-31 monomial is the highest exactly integrated at Q=16
        assert_relative_eq!(r16.integrate(|u| u.powi(31)), 1.0 / 32.0, max_relative = 1e-12);
    }

    #[test]
    fn gl_weights_sum_to_interval_length() {
        for q in [1, 2, 3, 5, 8, 16, 32, 64] {
            let r = gl_rule(q);
            let s: f64 = r.weights.iter().sum();
            assert_relative_eq!(s, 1.0, max_relative = 1e-13);
        }
    }

    #[test]
    fn gl_integrate_on_subinterval() {
        let r = gl_rule(8);
        let v = r.integrate_on(1.0, 3.0, |u| u * u);
        assert_relative_eq!(v, (27.0 - 1.0) / 3.0, max_relative = 1e-13);
    }

    #[test]
    fn simpson_matches_exponential_antiderivative() {
        // 64 subintervals = a 65-point column
        let v = composite_simpson(0.0, 1.0, 64, |x| (2.0 * x).exp());
        let exact = ((2.0f64).exp() - 1.0) / 2.0;
        // composite-Simpson bound: (b−a)h⁴ max|f⁗|/180 = 16e²/(180·64⁴) ≈ 3.9e-8
        assert!((v - exact).abs() < 4.0e-8, "err = {:e}", (v - exact).abs());
    }
}
