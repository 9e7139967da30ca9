//! Gauss-Legendre rules and product quadrature on `S^2`.

use crate::geometry::{S2Point, SpherePoint};
use std::f64::consts::PI;

/// Gauss-Legendre nodes and weights on [-1, 1], found by Newton iteration
/// on the Legendre three-term recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "need at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess.
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d.is_finite() { d } else { dp };
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

/// `(P_n(z), P_n'(z))`.
pub fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Gauss-Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_interval(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&v| half * v).collect(),
    )
}

/// Product rule on `S^2`: Gauss-Legendre in `cos(colatitude)` times the
/// uniform rule in longitude. Weights are for the normalized measure.
///
/// Exact for polynomials of total degree `< min(2 n_colat, n_lon)`.
#[derive(Debug, Clone)]
pub struct SphereQuadrature {
    pub points: Vec<S2Point>,
    pub weights: Vec<f64>,
}

impl SphereQuadrature {
    pub fn product(n_colat: usize, n_lon: usize) -> Self {
        let (z, wz) = gauss_legendre(n_colat);
        let mut points = Vec::with_capacity(n_colat * n_lon);
        let mut weights = Vec::with_capacity(n_colat * n_lon);
        for (zi, wi) in z.iter().zip(&wz) {
            let s = (1.0 - zi * zi).max(0.0).sqrt();
            for j in 0..n_lon {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n_lon as f64;
                points.push(SpherePoint::normalized([s * phi.cos(), s * phi.sin(), *zi]));
                weights.push(0.5 * wi / n_lon as f64);
            }
        }
        Self { points, weights }
    }

    /// Rule exact for polynomials of degree `<= degree`.
    pub fn for_degree(degree: usize) -> Self {
        Self::product(degree / 2 + 1, degree + 1)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(&S2Point) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(10);
        for k in 0..20usize {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
            let exact = if k % 2 == 1 {
                0.0
            } else {
                2.0 / (k as f64 + 1.0)
            };
            assert!((q - exact).abs() < 1e-14, "k={k}: {q} vs {exact}");
        }
        let total: f64 = w.iter().sum();
        assert!((total - 2.0).abs() < 1e-14);
    }

    #[test]
    fn large_rules_stay_accurate() {
        let (x, w) = gauss_legendre_interval(301, 0.0, PI);
        let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.sin().powi(3)).sum();
        assert!((q - 4.0 / 3.0).abs() < 1e-13);
    }

    #[test]
    fn sphere_rule_moments() {
        let q = SphereQuadrature::for_degree(8);
        assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
        for i in 0..3 {
            let m2 = q.integrate(|p| p.coords()[i].powi(2));
            assert!((m2 - 1.0 / 3.0).abs() < 1e-14);
            let m4 = q.integrate(|p| p.coords()[i].powi(4));
            assert!((m4 - 0.2).abs() < 1e-14);
        }
        let mixed = q.integrate(|p| (p.coords()[0] * p.coords()[1]).powi(2));
        assert!((mixed - 1.0 / 15.0).abs() < 1e-14);
    }
}
