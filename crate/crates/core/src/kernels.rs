//! Isotropic covariance kernels of divergence-free Gaussian fields on `S^d`.
//!
//! The angular building block is
//!
//! ```text
//! γ_ℓ(t) = (1/c_d) Re ∫_0^π (t - i √(1-t²) cos φ)^{ℓ-1} sin^d φ dφ,   c_d = ∫_0^π sin^d φ dφ
//! ```
//!
//! which is the Gegenbauer polynomial `C_{ℓ-1}^{(d+1)/2}` normalized to 1 at
//! `t = 1`. [`gamma_ell`] evaluates it by quadrature; [`GammaRecurrence`] by
//! the three-term recurrence. Kernel sums over long spectra use the
//! recurrence, and the two are cross-checked in tests.

use crate::error::{Error, Result};
use crate::geometry::{angle_between, dot, SpherePoint};
use crate::quadrature::gauss_legendre_interval;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Coefficient law `{b_ℓ}` of the driving field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientLaw {
    /// `b_1 = 0`, `b_ℓ = b / (ℓ-1)^{1+α}` for `ℓ >= 2`.
    Power { alpha: f64, b: f64 },
    /// Explicit nonnegative `b_1, ..., b_{L_max}`.
    Explicit { values: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    pub d: usize,
    pub l_max: usize,
    pub law: CoefficientLaw,
    pub nu: f64,
}

impl SpectrumConfig {
    pub fn power(d: usize, l_max: usize, alpha: f64, b: f64, nu: f64) -> Self {
        Self {
            d,
            l_max,
            law: CoefficientLaw::Power { alpha, b },
            nu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.d < 2 {
            return bad(format!("dimension d = {} must be >= 2", self.d));
        }
        if self.l_max < 1 {
            return bad("l_max must be >= 1".into());
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad(format!(
                "viscosity nu = {} must be finite and >= 0",
                self.nu
            ));
        }
        match &self.law {
            CoefficientLaw::Power { alpha, b } => {
                if !(alpha.is_finite() && *alpha > 0.0) {
                    return bad(format!("alpha = {alpha} must be > 0"));
                }
                if !(b.is_finite() && *b > 0.0) {
                    return bad(format!("b = {b} must be > 0"));
                }
                if self.l_max < 2 {
                    return bad("power law has b_1 = 0; l_max must be >= 2".into());
                }
            }
            CoefficientLaw::Explicit { values } => {
                if values.len() != self.l_max {
                    return bad(format!(
                        "explicit law lists {} coefficients, l_max = {}",
                        values.len(),
                        self.l_max
                    ));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return bad("explicit coefficients must be finite and >= 0".into());
                }
                if values.iter().sum::<f64>() <= 0.0 {
                    return bad("explicit coefficients sum to zero".into());
                }
            }
        }
        Ok(())
    }
}

/// A validated, truncated spectrum.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    config: SpectrumConfig,
    /// `coeffs[ℓ]` for `ℓ = 0..=l_max`; index 0 is unused and zero.
    coeffs: Vec<f64>,
    c: f64,
    tail_bound: f64,
}

impl Spectrum {
    pub fn new(config: SpectrumConfig) -> Result<Self> {
        config.validate()?;
        let mut coeffs = vec![0.0; config.l_max + 1];
        let tail_bound = match &config.law {
            CoefficientLaw::Power { alpha, b } => {
                for (ell, slot) in coeffs.iter_mut().enumerate().skip(2) {
                    *slot = b / ((ell - 1) as f64).powf(1.0 + alpha);
                }
                // Σ_{m >= L} m^{-1-α} <= L^{-1-α} + L^{-α}/α
                let l = config.l_max as f64;
                b * (l.powf(-1.0 - alpha) + l.powf(-alpha) / alpha)
            }
            CoefficientLaw::Explicit { values } => {
                coeffs[1..].copy_from_slice(values);
                0.0
            }
        };
        let c = 0.5 * coeffs.iter().sum::<f64>();
        Ok(Self {
            config,
            coeffs,
            c,
            tail_bound,
        })
    }

    pub fn power(d: usize, l_max: usize, alpha: f64, b: f64, nu: f64) -> Result<Self> {
        Self::new(SpectrumConfig::power(d, l_max, alpha, b, nu))
    }

    pub fn config(&self) -> &SpectrumConfig {
        &self.config
    }

    pub fn d(&self) -> usize {
        self.config.d
    }

    pub fn l_max(&self) -> usize {
        self.config.l_max
    }

    pub fn nu(&self) -> f64 {
        self.config.nu
    }

    /// `b_ℓ`, zero beyond the truncation.
    #[inline]
    pub fn b(&self, ell: usize) -> f64 {
        self.coeffs.get(ell).copied().unwrap_or(0.0)
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coeffs
    }

    /// `c = ½ Σ b_ℓ` over the truncation.
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Upper bound on the discarded mass `Σ_{ℓ > L_max} b_ℓ`.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    /// Divergence-free eigenvalue `(ℓ+1)(ℓ+d-2)`.
    pub fn eigenvalue(&self, ell: usize) -> f64 {
        ((ell + 1) * (ell + self.config.d - 2)) as f64
    }

    /// Same law with a different viscosity.
    pub fn with_nu(&self, nu: f64) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.nu = nu;
        Self::new(cfg)
    }

    /// The spectrum cut at degree `n` (Galerkin truncation). The tail bound
    /// is not recomputed for explicit laws.
    pub fn truncated(&self, n: usize) -> Result<Self> {
        let mut cfg = self.config.clone();
        cfg.l_max = n;
        if let CoefficientLaw::Explicit { values } = &mut cfg.law {
            values.resize(n, 0.0);
        }
        Self::new(cfg)
    }
}

/// `c_d = ∫_0^π sin^d φ dφ` by Gauss-Legendre.
pub fn c_d_constant(d: usize) -> f64 {
    let (x, w) = gauss_legendre_interval(64 + d, 0.0, PI);
    x.iter()
        .zip(&w)
        .map(|(x, w)| w * x.sin().powi(d as i32))
        .sum()
}

/// Default distance from `|t| = 1` below which γ′ switches to extrapolated
/// one-sided differences.
pub const DEFAULT_EPS_END: f64 = 1e-8;

/// Quadrature rule for the γ integrals with the weight `sin^d φ / c_d` folded in.
#[derive(Debug, Clone)]
pub struct GammaQuadrature {
    d: usize,
    cos_phi: Vec<f64>,
    weights: Vec<f64>,
}

impl GammaQuadrature {
    /// Rule accurate to rounding for degrees `ℓ <= l_max`.
    pub fn new(d: usize, l_max: usize) -> Self {
        let n = l_max + d + 48;
        let (x, w) = gauss_legendre_interval(n, 0.0, PI);
        let raw: Vec<f64> = x
            .iter()
            .zip(&w)
            .map(|(x, w)| w * x.sin().powi(d as i32))
            .collect();
        let cd: f64 = raw.iter().sum();
        Self {
            d,
            cos_phi: x.iter().map(|x| x.cos()).collect(),
            weights: raw.iter().map(|w| w / cd).collect(),
        }
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `γ_1(t), ..., γ_L(t)` as complex integrals; the imaginary parts vanish
    /// by symmetry and are returned for diagnostics.
    pub fn gamma_complex(&self, l_max: usize, t: f64) -> Vec<Complex64> {
        let t = t.clamp(-1.0, 1.0);
        let s = (1.0 - t * t).max(0.0).sqrt();
        let mut out = vec![Complex64::new(0.0, 0.0); l_max];
        for (c, w) in self.cos_phi.iter().zip(&self.weights) {
            let z = Complex64::new(t, -s * c);
            let mut p = Complex64::new(*w, 0.0);
            for slot in out.iter_mut() {
                *slot += p;
                p *= z;
            }
        }
        out
    }

    /// `γ_1(t), ..., γ_L(t)`.
    pub fn gamma_all(&self, l_max: usize, t: f64) -> Vec<f64> {
        self.gamma_complex(l_max, t).iter().map(|z| z.re).collect()
    }

    /// `γ'_1(t), ..., γ'_L(t)` by differentiating under the integral; the
    /// integrand carries `1/√(1-t²)`, so near `|t| = 1` (within `eps_end`)
    /// Richardson-extrapolated one-sided differences are used instead.
    pub fn gamma_prime_all(&self, l_max: usize, t: f64, eps_end: f64) -> Vec<f64> {
        if 1.0 - t.abs() <= eps_end.max(1e-3) {
            return self.gamma_prime_endpoint(l_max, t);
        }
        let s = (1.0 - t * t).sqrt();
        let mut out = vec![0.0; l_max];
        for (c, w) in self.cos_phi.iter().zip(&self.weights) {
            let z = Complex64::new(t, -s * c);
            let dz = Complex64::new(1.0, t * c / s);
            // d/dt z^n = n z^{n-1} dz
            let mut p = Complex64::new(*w, 0.0);
            for (n, slot) in out.iter_mut().enumerate().skip(1) {
                *slot += (p * dz).re * n as f64;
                p *= z;
            }
        }
        out
    }

    fn gamma_prime_endpoint(&self, l_max: usize, t: f64) -> Vec<f64> {
        // One-sided differences pointing into [-1, 1]; γ is a polynomial of
        // degree ℓ-1, so a short Richardson table is exact to rounding for
        // moderate ℓ.
        let dir = if t >= 0.0 { -1.0 } else { 1.0 };
        let levels = 6;
        let h0 = 0.25 / (l_max as f64).max(1.0).powi(2);
        let f0 = self.gamma_all(l_max, t);
        let mut table: Vec<Vec<f64>> = Vec::with_capacity(levels);
        for lvl in 0..levels {
            let h = h0 / (1u64 << lvl) as f64;
            let f1 = self.gamma_all(l_max, t + dir * h);
            let f2 = self.gamma_all(l_max, t + 2.0 * dir * h);
            // second-order one-sided difference
            let est: Vec<f64> = (0..l_max)
                .map(|i| dir * (-3.0 * f0[i] + 4.0 * f1[i] - f2[i]) / (2.0 * h))
                .collect();
            table.push(est);
        }
        // error expansion in h^2, h^3, ... for this stencil
        let mut cur = table;
        let mut power = 2;
        while cur.len() > 1 {
            let fac = (1u64 << power) as f64;
            cur = cur
                .windows(2)
                .map(|w| {
                    w[0].iter()
                        .zip(&w[1])
                        .map(|(a, b)| (fac * b - a) / (fac - 1.0))
                        .collect()
                })
                .collect();
            power += 1;
        }
        cur.pop().unwrap()
    }
}

/// `γ_ℓ(t)` by quadrature.
pub fn gamma_ell(d: usize, ell: usize, t: f64) -> f64 {
    assert!(ell >= 1, "gamma_ell is indexed from 1");
    GammaQuadrature::new(d, ell).gamma_all(ell, t)[ell - 1]
}

/// `γ'_ℓ(t)` by quadrature (differentiation under the integral).
pub fn gamma_ell_prime(d: usize, ell: usize, t: f64) -> f64 {
    assert!(ell >= 1, "gamma_ell is indexed from 1");
    GammaQuadrature::new(d, ell).gamma_prime_all(ell, t, DEFAULT_EPS_END)[ell - 1]
}

/// Streaming evaluation of `γ_ℓ(t)` and `γ'_ℓ(t)` for `ℓ = 1, 2, ...` through
/// the normalized Gegenbauer recurrence with `λ = (d+1)/2`:
///
/// ```text
/// g_n = [2(n+λ-1) t g_{n-1} - (n-1) g_{n-2}] / (n+2λ-1),   γ_ℓ = g_{ℓ-1}
/// γ'_ℓ = n(n+2λ)/(2λ+1) · h_{n-1}   with n = ℓ-1, h the same recurrence at λ+1
/// ```
#[derive(Debug, Clone)]
pub struct GammaRecurrence {
    lambda: f64,
    t: f64,
    n: usize,
    g_prev: f64,
    g: f64,
    h_prev: f64,
    h: f64,
}

impl GammaRecurrence {
    pub fn new(d: usize, t: f64) -> Self {
        Self {
            lambda: 0.5 * (d as f64 + 1.0),
            t,
            n: 0,
            g_prev: 0.0,
            g: 1.0,
            h_prev: 0.0,
            h: 1.0,
        }
    }
}

impl Iterator for GammaRecurrence {
    /// `(γ_ℓ(t), γ'_ℓ(t))` for `ℓ = 1, 2, ...`.
    type Item = (f64, f64);

    #[inline]
    fn next(&mut self) -> Option<(f64, f64)> {
        let n = self.n as f64;
        let lam = self.lambda;
        let value = self.g;
        let deriv = if self.n == 0 {
            0.0
        } else {
            n * (n + 2.0 * lam) / (2.0 * lam + 1.0) * self.h_prev
        };
        // advance g to n+1 and h to n
        let m = n + 1.0;
        let g_next = (2.0 * (m + lam - 1.0) * self.t * self.g - (m - 1.0) * self.g_prev)
            / (m + 2.0 * lam - 1.0);
        self.g_prev = self.g;
        self.g = g_next;
        if self.n >= 1 {
            let lam2 = lam + 1.0;
            let h_next = (2.0 * (m + lam2 - 1.0) * self.t * self.h - (m - 1.0) * self.h_prev)
                / (m + 2.0 * lam2 - 1.0);
            self.h_prev = self.h;
            self.h = h_next;
        } else {
            // h_0 = 1 becomes h_prev for n = 1; h_1 = t
            self.h_prev = 1.0;
            self.h = self.t;
        }
        self.n += 1;
        Some((value, deriv))
    }
}

/// Values of `G` and its derivative at one angle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GPair {
    pub g: f64,
    pub g_prime: f64,
}

/// Closed-form scalar kernels of a configured spectrum.
#[derive(Debug, Clone)]
pub struct Kernel {
    spectrum: Spectrum,
}

impl Kernel {
    pub fn new(spectrum: Spectrum) -> Self {
        Self { spectrum }
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn d(&self) -> usize {
        self.spectrum.d()
    }

    pub fn nu(&self) -> f64 {
        self.spectrum.nu()
    }

    pub fn c(&self) -> f64 {
        self.spectrum.c()
    }

    /// `G(0) = Σ b_ℓ = 2c`.
    pub fn g0(&self) -> f64 {
        2.0 * self.spectrum.c()
    }

    /// `G(θ) = Σ b_ℓ γ_ℓ(cos θ)` and `G'(θ) = -sin θ Σ b_ℓ γ'_ℓ(cos θ)`.
    pub fn g_pair(&self, theta: f64) -> GPair {
        let (s, t) = theta.sin_cos();
        let (mut g, mut gp) = (0.0, 0.0);
        let coeffs = self.spectrum.coefficients();
        for ((val, der), b) in GammaRecurrence::new(self.d(), t).zip(&coeffs[1..]) {
            g += b * val;
            gp += b * der;
        }
        GPair {
            g,
            g_prime: -s * gp,
        }
    }

    pub fn g(&self, theta: f64) -> f64 {
        self.g_pair(theta).g
    }

    pub fn g_prime(&self, theta: f64) -> f64 {
        self.g_pair(theta).g_prime
    }

    /// `G_1(θ) = 2d[G(0) - cos θ G(θ)] - 2 sin θ G'(θ)`.
    pub fn g1(&self, theta: f64) -> f64 {
        let p = self.g_pair(theta);
        self.g1_from(theta, p)
    }

    #[inline]
    pub fn g1_from(&self, theta: f64, p: GPair) -> f64 {
        let d = self.d() as f64;
        2.0 * d * (self.g0() - theta.cos() * p.g) - 2.0 * theta.sin() * p.g_prime
    }

    /// `G_2(θ) = 2 sin²θ [G(0) - G(θ)]`.
    pub fn g2(&self, theta: f64) -> f64 {
        let s = theta.sin();
        2.0 * s * s * (self.g0() - self.g(theta))
    }

    /// `(φ(cos θ), ψ(cos θ))` from the `G` relations
    /// `φ = cos θ G + sin θ G'/(d-1)` and `ψ = -G + cot θ G'/(d-1)`.
    /// At `θ = 0` the `ψ` limit uses `G'(θ)/sin θ → -Σ b_ℓ γ'_ℓ(1)`.
    pub fn phi_psi(&self, theta: f64) -> (f64, f64) {
        let dm1 = self.d() as f64 - 1.0;
        let (s, c) = theta.sin_cos();
        if s.abs() < 1e-12 {
            let coeffs = self.spectrum.coefficients();
            let (mut g, mut gp) = (0.0, 0.0);
            for ((val, der), b) in GammaRecurrence::new(self.d(), c).zip(&coeffs[1..]) {
                g += b * val;
                gp += b * der;
            }
            // G'/sin θ = -Σ b γ'
            return (c * g, -g - c * gp / dm1);
        }
        let p = self.g_pair(theta);
        (
            c * p.g + s * p.g_prime / dm1,
            -p.g + c / s * p.g_prime / dm1,
        )
    }

    /// `(φ(t), ψ(t))` from the series definitions with quadrature γ and γ'.
    pub fn phi_psi_series(&self, theta: f64) -> (f64, f64) {
        let l = self.spectrum.l_max();
        let q = GammaQuadrature::new(self.d(), l);
        let t = theta.cos();
        let g = q.gamma_all(l, t);
        let gp = q.gamma_prime_all(l, t, DEFAULT_EPS_END);
        let dm1 = self.d() as f64 - 1.0;
        let (mut phi, mut psi) = (0.0, 0.0);
        for ell in 1..=l {
            let b = self.spectrum.b(ell);
            phi += b * (t * g[ell - 1] - (1.0 - t * t) / dm1 * gp[ell - 1]);
            psi += b * (-g[ell - 1] - t / dm1 * gp[ell - 1]);
        }
        (phi, psi)
    }

    /// Covariance `C((x,u),(y,v)) = φ(cos θ)<u,v> + ψ(cos θ)<y,u><x,v>`.
    pub fn covariance<const N: usize>(
        &self,
        x: &SpherePoint<N>,
        u: &[f64; N],
        y: &SpherePoint<N>,
        v: &[f64; N],
    ) -> Result<f64> {
        for (p, w) in [(x, u), (y, v)] {
            let inner = dot(p.coords(), w);
            let n = dot(w, w).sqrt();
            if inner.abs() > 1e-10 * n.max(1e-300) && inner.abs() > 1e-300 {
                return Err(Error::NonTangent { inner, norm: n });
            }
        }
        if N != self.d() + 1 {
            return Err(Error::Unsupported(format!(
                "points in R^{N} but the spectrum is configured for d = {}",
                self.d()
            )));
        }
        let theta = angle_between(x.coords(), y.coords());
        let (phi, psi) = self.phi_psi(theta);
        Ok(phi * dot(u, v) + psi * dot(y.coords(), u) * dot(x.coords(), v))
    }

    /// `G''(0)` by Richardson extrapolation of `G'(θ)/θ` as `θ → 0`.
    pub fn g_second_at_zero(&self) -> f64 {
        let f = |h: f64| self.g_prime(h) / h;
        // G'(θ)/θ = G''(0) + a θ² + b θ⁴ + ...   (G' is odd)
        let h0 = 0.1 / (self.spectrum.l_max() as f64).max(1.0);
        let mut table: Vec<f64> = (0..5).map(|k| f(h0 / (1u64 << k) as f64)).collect();
        let mut fac = 4.0;
        while table.len() > 1 {
            table = table
                .windows(2)
                .map(|w| (fac * w[1] - w[0]) / (fac - 1.0))
                .collect();
            fac *= 4.0;
        }
        table[0]
    }

    /// Largest `|G'(θ)|/θ` over `(0, π]` on a uniform grid.
    pub fn regularity_constant(&self, n_grid: usize) -> f64 {
        (1..=n_grid)
            .map(|i| {
                let th = PI * i as f64 / n_grid as f64;
                self.g_prime(th).abs() / th
            })
            .fold(0.0, f64::max)
    }

    /// Largest `G_1(θ)/θ²` over `(0, π]`: uniform grid (plus one tiny angle
    /// for the `θ → 0` limit), then golden-section refinement around the
    /// best grid point.
    pub fn g1_quadratic_constant(&self, n_grid: usize) -> f64 {
        let f = |th: f64| self.g1(th) / (th * th);
        let h = PI / n_grid as f64;
        let (mut best_th, mut best) = (1e-4, f(1e-4));
        for i in 1..=n_grid {
            let th = h * i as f64;
            let v = f(th);
            if v > best {
                best = v;
                best_th = th;
            }
        }
        let (mut a, mut b) = ((best_th - h).max(1e-4), (best_th + h).min(PI));
        let r = 0.5 * (5f64.sqrt() - 1.0);
        let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
        let (mut fc, mut fd) = (f(c), f(d));
        for _ in 0..60 {
            if fc > fd {
                b = d;
                d = c;
                fd = fc;
                c = b - r * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + r * (b - a);
                fd = f(d);
            }
        }
        best.max(fc).max(fd)
    }

    /// `((G(0)-G(θ))/θ^α, -G'(θ)/(α θ^{α-1}))`; both tend to `K G(0)` for
    /// rough power laws.
    pub fn asymptotic_ratios(&self, theta: f64, alpha: f64) -> (f64, f64) {
        let p = self.g_pair(theta);
        (
            (self.g0() - p.g) / theta.powf(alpha),
            -p.g_prime / (alpha * theta.powf(alpha - 1.0)),
        )
    }
}

/// Richardson-extrapolated small-angle limits of the two ratio estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticLimit {
    pub alpha: f64,
    pub theta: f64,
    pub ratio_value: f64,
    pub ratio_derivative: f64,
    pub limit_value: f64,
    pub limit_derivative: f64,
    /// `K` such that both limits equal `K G(0)`.
    pub k: f64,
    pub relative_gap: f64,
}

/// Extrapolates both ratios from `θ` and `θ/2` assuming a `θ^{2-α}`
/// correction, which is the leading regular term of `G(0) - G(θ)`.
pub fn asymptotic_limit(kernel: &Kernel, alpha: f64, theta: f64) -> AsymptoticLimit {
    let (a1, b1) = kernel.asymptotic_ratios(theta, alpha);
    let (a2, b2) = kernel.asymptotic_ratios(0.5 * theta, alpha);
    let f = 2f64.powf(2.0 - alpha);
    let la = (f * a2 - a1) / (f - 1.0);
    let lb = (f * b2 - b1) / (f - 1.0);
    let mean = 0.5 * (la + lb);
    AsymptoticLimit {
        alpha,
        theta,
        ratio_value: a1,
        ratio_derivative: b1,
        limit_value: la,
        limit_derivative: lb,
        k: mean / kernel.g0(),
        relative_gap: (la - lb).abs() / mean.abs(),
    }
}
