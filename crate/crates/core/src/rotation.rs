//! Rotation of two nearby particles on `S^2`: Jacobi fields along the
//! connecting geodesic, the quadratic variation of the rotation martingale,
//! the curvature drift, and the integrated Jacobi energy with its closed form.

use crate::basis::BasisRegistry;
use crate::error::{Error, Result};
use crate::flow::{FlowModel, NoiseRealization};
use crate::geometry::{
    axpy, dot, geodesic_frame, point_at_distance, scaled, GeodesicFrame, S2Point, TangentVector,
    Vec3, DEFAULT_EPS_CUT,
};
use crate::kernels::{gamma_ell, gamma_ell_prime, Kernel, Spectrum};
use crate::quadrature::gauss_legendre_interval;
use crate::rng::key;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Boundary data `J(0) = X ∈ T_x`, `J(1) = Y ∈ T_y` along the minimal geodesic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobiBoundary {
    pub frame: GeodesicFrame,
    pub x_vec: Vec3,
    pub y_vec: Vec3,
}

impl JacobiBoundary {
    pub fn new(
        frame: GeodesicFrame,
        x_vec: &TangentVector<3>,
        y_vec: &TangentVector<3>,
    ) -> Result<Self> {
        let tol = 1e-12;
        let dx: f64 = (0..3)
            .map(|i| (x_vec.base().coords()[i] - frame.x.coords()[i]).abs())
            .sum();
        let dy: f64 = (0..3)
            .map(|i| (y_vec.base().coords()[i] - frame.y.coords()[i]).abs())
            .sum();
        if dx > tol || dy > tol {
            return Err(Error::InvalidPoint(
                "boundary vectors must sit at the frame endpoints".into(),
            ));
        }
        Ok(Self {
            frame,
            x_vec: *x_vec.vec(),
            y_vec: *y_vec.vec(),
        })
    }

    fn projections(&self) -> (f64, f64, f64, f64) {
        let f = &self.frame;
        let n = f.normal.vec();
        (
            dot(&self.x_vec, f.y.coords()),
            dot(&self.y_vec, f.x.coords()),
            dot(&self.x_vec, n),
            dot(&self.y_vec, n),
        )
    }

    /// Tangential and normal coefficients `(J_1(a), J_2(a))`.
    pub fn components(&self, a: f64) -> (f64, f64) {
        let th = self.frame.theta;
        let (s, c) = th.sin_cos();
        let (xy, yx, xn, yn) = self.projections();
        let (sa, ca) = (a * th).sin_cos();
        (
            ((1.0 - a) * xy - a * yx) / s,
            sa / s * yn + (ca - c / s * sa) * xn,
        )
    }

    /// `(dJ_1/da, dJ_2/da)`.
    pub fn derivatives(&self, a: f64) -> (f64, f64) {
        let th = self.frame.theta;
        let (s, c) = th.sin_cos();
        let (xy, yx, xn, yn) = self.projections();
        let (sa, ca) = (a * th).sin_cos();
        (-(xy + yx) / s, th * (ca / s * yn - (sa + c / s * ca) * xn))
    }
}

/// `J(a) = J_1(a) e_a + J_2(a) N`.
pub fn jacobi_field(bnd: &JacobiBoundary, a: f64) -> Vec3 {
    let (j1, j2) = bnd.components(a);
    let mut v = scaled(j1, &bnd.frame.tangent_at(a));
    axpy(j2, bnd.frame.normal.vec(), &mut v);
    v
}

/// Normal coefficient of `(1/ρ) J̇_0` for normal boundary data `wx`, `wy`:
/// `(wy - cos ρ wx) / sin ρ`.
pub fn normal_jacobi_derivative(frame: &GeodesicFrame, wx: f64, wy: f64) -> f64 {
    let (s, c) = frame.theta.sin_cos();
    (wy - c * wx) / s
}

/// Brute-force sums at one degree and the closed-form prediction of the mixed sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameSums {
    /// `(2/D) Σ <A(x),N>²`
    pub s1: f64,
    /// `(2/D) Σ <A(y),N>²`
    pub s2: f64,
    /// `(2/D) Σ <A(x),N><A(y),N>`
    pub s3: f64,
    /// `cos ρ γ_ℓ(cos ρ) - sin²ρ γ'_ℓ(cos ρ)`
    pub s3_closed: f64,
}

pub fn frame_sums(registry: &BasisRegistry, ell: usize, frame: &GeodesicFrame) -> FrameSums {
    let ax = registry.fields_raw(ell, frame.x.coords());
    let ay = registry.fields_raw(ell, frame.y.coords());
    let n = frame.normal.vec();
    let scale = 2.0 / ax.len() as f64;
    let (mut s1, mut s2, mut s3) = (0.0, 0.0, 0.0);
    for (u, v) in ax.iter().zip(&ay) {
        let (un, vn) = (dot(u, n), dot(v, n));
        s1 += un * un;
        s2 += vn * vn;
        s3 += un * vn;
    }
    let t = frame.theta.cos();
    let s = frame.theta.sin();
    FrameSums {
        s1: scale * s1,
        s2: scale * s2,
        s3: scale * s3,
        s3_closed: t * gamma_ell(2, ell, t) - s * s * gamma_ell_prime(2, ell, t),
    }
}

/// Closed-form rate in terms of `ν/c`, `G(0)`, `G(ρ)`, `G'(ρ)`.
fn qv_rate_from(nc: f64, g0: f64, g: f64, gp: f64, rho: f64) -> f64 {
    let (s, c) = rho.sin_cos();
    let cot = c / s;
    nc * ((1.0 + c * c) / (s * s) * g0 - 2.0 * cot * cot * g - 2.0 * cot * gp)
}

fn jacobi_energy_from(nc: f64, g0: f64, g: f64, gp: f64, rho: f64) -> f64 {
    let (s, c) = rho.sin_cos();
    let cot = c / s;
    let sinc2 = (2.0 * rho).sin() / (2.0 * rho);
    let br = rho * rho * (1.0 + sinc2) - (1.0 - sinc2);
    let q = (1.0 - (2.0 * rho).cos()) / (4.0 * rho);
    let r2 = 1.0 + rho * rho;
    nc * ((g0 - g) * (1.0 + 0.5 * cot * cot * br + q * r2 * cot) + 0.5 * g0 * (rho * rho - 1.0)
        - gp * q * r2
        - gp * 0.5 * cot * br)
}

/// `d<ξ,ξ>/dt = 2ν + (2ν/c) cot²ρ [G(0) - G(ρ)] - (2ν/c) cot ρ G'(ρ)`.
pub fn rotation_qv_rate(kernel: &Kernel, rho: f64) -> f64 {
    let p = kernel.g_pair(rho);
    qv_rate_from(kernel.nu() / kernel.c(), kernel.g0(), p.g, p.g_prime, rho)
}

/// Small-`ρ` limit of the rate for smooth spectra: `2ν - 3ν G''(0)/c`.
pub fn rotation_qv_limit(kernel: &Kernel) -> f64 {
    2.0 * kernel.nu() - 3.0 * kernel.nu() * kernel.g_second_at_zero() / kernel.c()
}

/// Closed form of the integrated Jacobi energy
/// `(ν/(2cρ²)) Σ (2b_ℓ/D_ℓ) Σ_k ∫_0^1 (|∇_{T_a} J|² - <R(T_a,J)J,T_a>) da`.
pub fn jacobi_energy_value(kernel: &Kernel, rho: f64) -> f64 {
    let p = kernel.g_pair(rho);
    jacobi_energy_from(kernel.nu() / kernel.c(), kernel.g0(), p.g, p.g_prime, rho)
}

/// Tangential and normal parts of the curvature drift at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvatureDrift {
    /// Coefficient of `e(t)`; always `-ν`.
    pub e_coeff: f64,
    /// `(ν/c) Σ (b_ℓ/D_ℓ) Σ_k <A(x),e_0><A(x),N>`.
    pub n_coeff: f64,
}

/// Brute-force spectral evaluations at matched truncation, for checking the
/// closed forms.
#[derive(Debug, Clone)]
pub struct RotationOracle {
    spectrum: Spectrum,
    registry: BasisRegistry,
    /// Kernel of the spectrum truncated at `n`.
    kernel: Kernel,
    n: usize,
    nc: f64,
    a_nodes: (Vec<f64>, Vec<f64>),
}

impl RotationOracle {
    pub fn new(spectrum: Spectrum) -> Result<Self> {
        let registry = BasisRegistry::new(spectrum.l_max())?;
        Self::with_registry(spectrum, registry)
    }

    pub fn with_registry(spectrum: Spectrum, registry: BasisRegistry) -> Result<Self> {
        if spectrum.d() != 2 {
            return Err(Error::Unsupported(
                "rotation process is implemented on S^2 only".into(),
            ));
        }
        let n = spectrum.l_max().min(registry.l_max());
        let kernel = Kernel::new(spectrum.truncated(n)?);
        let nc = spectrum.nu() / spectrum.c();
        Ok(Self {
            spectrum,
            registry,
            kernel,
            n,
            nc,
            a_nodes: gauss_legendre_interval(24, 0.0, 1.0),
        })
    }

    pub fn from_model(model: &FlowModel) -> Result<Self> {
        let mut o = Self::with_registry(model.spectrum().clone(), model.registry().clone())?;
        if model.truncation() < o.n {
            o.n = model.truncation();
            o.kernel = Kernel::new(model.spectrum().truncated(o.n)?);
        }
        Ok(o)
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn registry(&self) -> &BasisRegistry {
        &self.registry
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    fn weight(&self, ell: usize) -> f64 {
        2.0 * self.spectrum.b(ell) / self.registry.dim_eigenspace(ell) as f64
    }

    pub fn qv_rate(&self, rho: f64) -> f64 {
        let p = self.kernel.g_pair(rho);
        qv_rate_from(self.nc, self.kernel.g0(), p.g, p.g_prime, rho)
    }

    pub fn jacobi_energy_value(&self, rho: f64) -> f64 {
        let p = self.kernel.g_pair(rho);
        jacobi_energy_from(self.nc, self.kernel.g0(), p.g, p.g_prime, rho)
    }

    /// `(ν/(c sin²ρ)) Σ (2b_ℓ/D_ℓ) Σ_k (<A(y),N> - <A(x),N> cos ρ)²`.
    pub fn qv_rate_bruteforce(&self, frame: &GeodesicFrame) -> f64 {
        let (s, c) = frame.theta.sin_cos();
        let n = frame.normal.vec();
        let mut acc = 0.0;
        for ell in 1..=self.n {
            let ax = self.registry.fields_raw(ell, frame.x.coords());
            let ay = self.registry.fields_raw(ell, frame.y.coords());
            let part: f64 = ax
                .iter()
                .zip(&ay)
                .map(|(u, v)| (dot(v, n) - dot(u, n) * c).powi(2))
                .sum();
            acc += self.weight(ell) * part;
        }
        self.nc * acc / (s * s)
    }

    /// Curvature drift with an explicit orthonormal pair `(e0, N)` at `x`.
    pub fn curvature_drift_with(&self, x: &Vec3, e0: &Vec3, normal: &Vec3) -> CurvatureDrift {
        let mut acc = 0.0;
        for ell in 1..=self.n {
            let ax = self.registry.fields_raw(ell, x);
            let part: f64 = ax.iter().map(|u| dot(u, e0) * dot(u, normal)).sum();
            acc += 0.5 * self.weight(ell) * part;
        }
        CurvatureDrift {
            e_coeff: -self.spectrum.nu(),
            n_coeff: self.nc * acc,
        }
    }

    pub fn curvature_drift(&self, frame: &GeodesicFrame) -> CurvatureDrift {
        self.curvature_drift_with(frame.x.coords(), frame.e0.vec(), frame.normal.vec())
    }

    /// Jacobi energy integrand summed over modes, Gauss quadrature in `a`.
    /// `|∇_{T_a} J|²` is taken as `ρ²((dJ_1/da)² + (dJ_2/da)²)` and the
    /// curvature term as `ρ² J_2²`.
    pub fn jacobi_energy_bruteforce(&self, frame: &GeodesicFrame) -> Result<f64> {
        let rho = frame.theta;
        let (an, aw) = &self.a_nodes;
        let mut acc = 0.0;
        for ell in 1..=self.n {
            let ax = self.registry.fields_raw(ell, frame.x.coords());
            let ay = self.registry.fields_raw(ell, frame.y.coords());
            let mut part = 0.0;
            for (u, v) in ax.iter().zip(&ay) {
                let bnd = JacobiBoundary {
                    frame: *frame,
                    x_vec: *u,
                    y_vec: *v,
                };
                for (a, w) in an.iter().zip(aw) {
                    let (_, j2) = bnd.components(*a);
                    let (d1, d2) = bnd.derivatives(*a);
                    part += w * rho * rho * (d1 * d1 + d2 * d2 - j2 * j2);
                }
            }
            acc += self.weight(ell) * part;
        }
        Ok(0.5 * self.nc * acc / (rho * rho))
    }
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Small-`ρ` behaviour of the rate and the Jacobi energy for a rough spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoughAsymptotics {
    pub alpha: f64,
    pub l_max: usize,
    pub rho: Vec<f64>,
    pub rate_excess: Vec<f64>,
    pub energy_excess: Vec<f64>,
    /// Fitted slope of `rate - 2ν`; expected `α - 2`.
    pub rate_slope: f64,
    /// Fitted slope of `jacobi_energy_value + ν`; expected `α`.
    pub energy_slope: f64,
    /// `K` from the kernel ratio limits, and the prefactor
    /// `(rate - 2ν) / (4νK(1+α)ρ^{α-2})` at the smallest `ρ`.
    pub k: f64,
    pub prefactor_ratio: f64,
}

/// `n_rho` log-spaced radii in `[rho_lo, rho_hi]`.
pub fn rough_asymptotics(
    kernel: &Kernel,
    alpha: f64,
    rho_lo: f64,
    rho_hi: f64,
    n_rho: usize,
) -> RoughAsymptotics {
    let nu = kernel.nu();
    let rho: Vec<f64> = (0..n_rho)
        .map(|i| (rho_lo.ln() + (rho_hi / rho_lo).ln() * i as f64 / (n_rho - 1) as f64).exp())
        .collect();
    let rate_excess: Vec<f64> = rho
        .iter()
        .map(|&r| rotation_qv_rate(kernel, r) - 2.0 * nu)
        .collect();
    let energy_excess: Vec<f64> = rho
        .iter()
        .map(|&r| jacobi_energy_value(kernel, r) + nu)
        .collect();
    let k = crate::kernels::asymptotic_limit(kernel, alpha, 1e-2).k;
    RoughAsymptotics {
        alpha,
        l_max: kernel.spectrum().l_max(),
        rate_slope: loglog_slope(&rho, &rate_excess),
        energy_slope: loglog_slope(&rho, &energy_excess),
        k,
        prefactor_ratio: rate_excess[0] / (4.0 * nu * k * (1.0 + alpha) * rho[0].powf(alpha - 2.0)),
        rho,
        rate_excess,
        energy_excess,
    }
}

/// Supremum of `f` on `[a, b]`: grid then golden-section refinement.
fn sup_on_interval<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    if b <= a {
        return f(a);
    }
    let h = (b - a) / n as f64;
    let (mut best_x, mut best) = (a, f(a));
    for i in 1..=n {
        let x = a + h * i as f64;
        let v = f(x);
        if v > best {
            best = v;
            best_x = x;
        }
    }
    let (mut lo, mut hi) = ((best_x - h).max(a), (best_x + h).min(b));
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..50 {
        let c = hi - r * (hi - lo);
        let d = lo + r * (hi - lo);
        let (fc, fd) = (f(c), f(d));
        best = best.max(fc).max(fd);
        if fc > fd {
            hi = d;
        } else {
            lo = c;
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationConfig {
    pub rho0: f64,
    pub replicas: usize,
    pub steps: usize,
    pub window: usize,
    pub dt: f64,
    pub seed: u64,
}

/// Per-window statistics pooled over the replicas alive for the whole window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RotationWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub replicas: usize,
    /// Mean realized `Σ dξ² / Δt`.
    pub qv_empirical: f64,
    /// Mean `Σ rate(ρ_s) ds / Δt`.
    pub qv_predicted: f64,
    pub qv_z: f64,
    /// Mean of the tangential drift `-ν - jacobi_energy_value(ρ_t)`.
    pub tangential_mean: f64,
    /// Mean and standard error of `Σ dξ / Δt`.
    pub xi_mean: f64,
    pub xi_se: f64,
    pub mean_rho: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationReport {
    pub config: RotationConfig,
    pub windows: Vec<RotationWindow>,
    pub stopped: usize,
    pub rho_min: f64,
    pub rho_max: f64,
    /// Sup of the closed-form rate over `[rho_min, rho_max]`.
    pub c1: f64,
    /// Largest `∫ rate ds / (C_1 t)` over all paths and steps.
    pub max_bracket_ratio: f64,
    pub bracket_violations: usize,
    /// Largest realized `Σ dξ² / (C_1 t)` at the final step, informational.
    pub max_realized_ratio: f64,
}

impl RotationReport {
    pub fn max_abs_qv_z(&self) -> f64 {
        self.windows
            .iter()
            .map(|w| w.qv_z.abs())
            .fold(0.0, f64::max)
    }

    /// Tangential drift within three noise standard errors in every window.
    pub fn tangential_vanishes(&self) -> bool {
        self.windows
            .iter()
            .all(|w| w.tangential_mean.abs() <= 3.0 * w.xi_se)
    }
}

#[derive(Default, Clone)]
struct WindowAcc {
    alive: bool,
    xi2: f64,
    rate: f64,
    xi: f64,
    tang: f64,
    rho: f64,
}

struct PathSummary {
    windows: Vec<WindowAcc>,
    stopped: bool,
    rho_min: f64,
    rho_max: f64,
    /// Predictable bracket after each completed step.
    bracket: Vec<f64>,
    realized: f64,
}

fn run_path(
    model: &FlowModel,
    oracle: &RotationOracle,
    cfg: &RotationConfig,
    r: usize,
) -> Result<PathSummary> {
    let n = model.truncation();
    let dt = cfg.dt;
    let noise = NoiseRealization::new(key(&[cfg.seed, r as u64]), dt, n);
    let x0 = S2Point::new([0.0, 0.0, 1.0])?;
    let mut x = *x0.coords();
    let mut y = *point_at_distance(&x0, &[1.0, 0.0, 0.0], cfg.rho0).coords();
    let n_windows = cfg.steps / cfg.window;
    let mut windows = vec![WindowAcc::default(); n_windows];
    let (mut fa, mut fb, mut buf, mut dw) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut bracket = Vec::with_capacity(cfg.steps);
    let (mut rho_min, mut rho_max) = (cfg.rho0, cfg.rho0);
    let mut acc = 0.0;
    let mut realized = 0.0;
    let mut stopped = false;
    let scale = model.noise_scale();
    let mut t = 0.0;
    for step in 0..cfg.steps {
        let frame = match geodesic_frame(
            &S2Point::normalized(x),
            &S2Point::normalized(y),
            DEFAULT_EPS_CUT,
        ) {
            Ok(f) => f,
            Err(_) => {
                stopped = true;
                break;
            }
        };
        let rho = frame.theta;
        rho_min = rho_min.min(rho);
        rho_max = rho_max.max(rho);
        model.registry().all_fields_into(&x, n, &mut fa);
        model.registry().all_fields_into(&y, n, &mut fb);
        noise.increments(step, &mut dw);
        let nv = frame.normal.vec();
        let mut coef = 0.0;
        for p in 0..fa.len() {
            coef += scale[p] * dw[p] * (dot(&fb[p], nv) - dot(&fa[p], nv) * rho.cos());
        }
        let dxi = coef / rho.sin();
        let rate = oracle.qv_rate(rho);
        let tang = -model.spectrum().nu() - oracle.jacobi_energy_value(rho);
        let wi = step / cfg.window;
        if wi < n_windows {
            let w = &mut windows[wi];
            w.xi2 += dxi * dxi;
            w.rate += rate * dt;
            w.xi += dxi;
            w.tang += tang;
            w.rho += rho;
            if (step + 1) % cfg.window == 0 {
                w.alive = true;
            }
        }
        acc += rate * dt;
        realized += dxi * dxi;
        bracket.push(acc);
        let a = model.step_coefficients(t, dt, &dw);
        let mut vx = [0.0; 3];
        let mut vy = [0.0; 3];
        for p in 0..fa.len() {
            axpy(a[p], &fa[p], &mut vx);
            axpy(a[p], &fb[p], &mut vy);
        }
        x = model.heun_from(&x, &vx, &a, &mut buf)?;
        y = model.heun_from(&y, &vy, &a, &mut buf)?;
        t += dt;
    }
    Ok(PathSummary {
        windows,
        stopped,
        rho_min,
        rho_max,
        bracket,
        realized,
    })
}

/// Two particles at separation `rho0` driven by the same noise; replica `r`
/// uses seed `key([seed, r])`. Paths reaching the cut locus are truncated and
/// drop out of every window they do not complete.
pub fn simulate_rotation(model: &FlowModel, cfg: &RotationConfig) -> Result<RotationReport> {
    if !(cfg.rho0 > DEFAULT_EPS_CUT && cfg.rho0 < 0.5 * PI) {
        return Err(Error::InvalidConfig(format!(
            "initial separation {} outside (eps_cut, pi/2)",
            cfg.rho0
        )));
    }
    if cfg.window == 0 || cfg.steps < cfg.window || cfg.replicas < 2 {
        return Err(Error::InvalidConfig(
            "rotation run needs >= 2 replicas and >= 1 full window".into(),
        ));
    }
    let oracle = RotationOracle::from_model(model)?;
    let paths: Vec<PathSummary> = (0..cfg.replicas)
        .into_par_iter()
        .map(|r| run_path(model, &oracle, cfg, r))
        .collect::<Result<_>>()?;
    let span = cfg.window as f64 * cfg.dt;
    let n_windows = cfg.steps / cfg.window;
    let mut windows = Vec::with_capacity(n_windows);
    for wi in 0..n_windows {
        let alive: Vec<&WindowAcc> = paths
            .iter()
            .map(|p| &p.windows[wi])
            .filter(|w| w.alive)
            .collect();
        let m = alive.len() as f64;
        let stats = |f: &dyn Fn(&WindowAcc) -> f64| -> (f64, f64) {
            let v: Vec<f64> = alive.iter().map(|w| f(w)).collect();
            let mean = v.iter().sum::<f64>() / m;
            let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            (mean, (var / m).sqrt())
        };
        let (qe, _) = stats(&|w| w.xi2 / span);
        let (qp, _) = stats(&|w| w.rate / span);
        let (qd, qd_se) = stats(&|w| (w.xi2 - w.rate) / span);
        let (tm, _) = stats(&|w| w.tang / cfg.window as f64);
        let (xm, xse) = stats(&|w| w.xi / span);
        let (rm, _) = stats(&|w| w.rho / cfg.window as f64);
        windows.push(RotationWindow {
            t_start: wi as f64 * span,
            t_end: (wi + 1) as f64 * span,
            replicas: alive.len(),
            qv_empirical: qe,
            qv_predicted: qp,
            qv_z: if qd_se > 0.0 { qd / qd_se } else { 0.0 },
            tangential_mean: tm,
            xi_mean: xm,
            xi_se: xse,
            mean_rho: rm,
        });
    }
    let rho_min = paths
        .iter()
        .map(|p| p.rho_min)
        .fold(f64::INFINITY, f64::min);
    let rho_max = paths.iter().map(|p| p.rho_max).fold(0.0, f64::max);
    let c1 = sup_on_interval(|r| oracle.qv_rate(r), rho_min, rho_max, 512);
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    let mut max_realized: f64 = 0.0;
    for p in &paths {
        for (i, b) in p.bracket.iter().enumerate() {
            let ratio = b / (c1 * (i + 1) as f64 * cfg.dt);
            max_ratio = max_ratio.max(ratio);
            if ratio > 1.0 {
                violations += 1;
            }
        }
        if !p.bracket.is_empty() {
            max_realized = max_realized.max(p.realized / (c1 * p.bracket.len() as f64 * cfg.dt));
        }
    }
    Ok(RotationReport {
        config: *cfg,
        windows,
        stopped: paths.iter().filter(|p| p.stopped).count(),
        rho_min,
        rho_max,
        c1,
        max_bracket_ratio: max_ratio,
        bracket_violations: violations,
        max_realized_ratio: max_realized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::DriftField;
    use crate::geometry::project_raw;
    use crate::rng::CounterRng;

    fn random_point(rng: &mut CounterRng) -> S2Point {
        S2Point::new([rng.normal(), rng.normal(), rng.normal()]).unwrap()
    }

    fn frame_at(rng: &mut CounterRng, rho: f64) -> GeodesicFrame {
        let x = random_point(rng);
        let y = point_at_distance(&x, &[rng.normal(), rng.normal(), rng.normal()], rho);
        geodesic_frame(&x, &y, DEFAULT_EPS_CUT).unwrap()
    }

    fn tangent_at(rng: &mut CounterRng, p: &S2Point) -> TangentVector<3> {
        let v = project_raw(p.coords(), &[rng.normal(), rng.normal(), rng.normal()]);
        TangentVector::new(*p, v).unwrap()
    }

    fn oracle() -> RotationOracle {
        RotationOracle::new(Spectrum::power(2, 5, 3.0, 1.0, 0.1).unwrap()).unwrap()
    }

    #[test]
    fn jacobi_boundary_values() {
        let mut rng = CounterRng::new(1, 0);
        for _ in 0..20 {
            let rho = 0.3 + 2.0 * rng.uniform();
            let f = frame_at(&mut rng, rho);
            let (xv, yv) = (tangent_at(&mut rng, &f.x), tangent_at(&mut rng, &f.y));
            let b = JacobiBoundary::new(f, &xv, &yv).unwrap();
            let (j0, j1) = (jacobi_field(&b, 0.0), jacobi_field(&b, 1.0));
            for i in 0..3 {
                assert!((j0[i] - xv.vec()[i]).abs() < 1e-14);
                assert!((j1[i] - yv.vec()[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pure_normal_boundary() {
        let mut rng = CounterRng::new(2, 0);
        let f = frame_at(&mut rng, 0.8);
        let xv = TangentVector::new(f.x, *f.normal.vec()).unwrap();
        let b = JacobiBoundary::new(f, &xv, &TangentVector::zero(f.y)).unwrap();
        for i in 0..=10 {
            let a = i as f64 / 10.0;
            let (j1, j2) = b.components(a);
            assert!(j1.abs() < 1e-15);
            let th = f.theta;
            assert!((j2 - ((a * th).cos() - th.cos() / th.sin() * (a * th).sin())).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobi_equation_residual() {
        let mut rng = CounterRng::new(3, 0);
        let f = frame_at(&mut rng, 1.3);
        let b = JacobiBoundary::new(f, &tangent_at(&mut rng, &f.x), &tangent_at(&mut rng, &f.y))
            .unwrap();
        let h = 1e-3;
        for i in 1..10 {
            let a = i as f64 / 10.0;
            let j = |a: f64| b.components(a).1;
            let second = (j(a + h) - 2.0 * j(a) + j(a - h)) / (h * h);
            assert!((second + f.theta * f.theta * j(a)).abs() < 1e-6);
        }
    }

    #[test]
    fn analytic_derivatives_match_fd() {
        let mut rng = CounterRng::new(4, 0);
        let f = frame_at(&mut rng, 0.9);
        let b = JacobiBoundary::new(f, &tangent_at(&mut rng, &f.x), &tangent_at(&mut rng, &f.y))
            .unwrap();
        let h = 1e-5;
        for a in [0.0, 0.3, 0.7, 1.0] {
            let (d1, d2) = b.derivatives(a);
            let (p, m) = (b.components(a + h), b.components(a - h));
            assert!((d1 - (p.0 - m.0) / (2.0 * h)).abs() < 1e-8);
            assert!((d2 - (p.1 - m.1) / (2.0 * h)).abs() < 1e-8);
        }
    }

    #[test]
    fn normal_derivative_cases() {
        let mut rng = CounterRng::new(5, 0);
        let f = frame_at(&mut rng, 0.6);
        assert!((normal_jacobi_derivative(&f, 0.0, 0.7) - 0.7 / 0.6f64.sin()).abs() < 1e-14);
        let small = frame_at(&mut rng, 1e-4);
        assert!(normal_jacobi_derivative(&small, 0.5, 0.5).abs() < 1e-4);
        // against FD of the full field at a = 0, scaled by 1/ρ
        let (wx, wy) = (0.3, -0.8);
        let xv = TangentVector::new(f.x, scaled(wx, f.normal.vec())).unwrap();
        let yv = TangentVector::new(f.y, scaled(wy, f.normal.vec())).unwrap();
        let b = JacobiBoundary::new(f, &xv, &yv).unwrap();
        let h = 1e-6;
        let fd = (b.components(h).1 - b.components(0.0).1) / h / f.theta;
        assert!((fd - normal_jacobi_derivative(&f, wx, wy)).abs() < 1e-5);
        let fd2 = (b.components(h).1 - b.components(-h).1) / (2.0 * h) / f.theta;
        assert!((fd2 - normal_jacobi_derivative(&f, wx, wy)).abs() < 1e-7);
    }

    #[test]
    fn frame_sum_identities() {
        let o = oracle();
        let mut rng = CounterRng::new(6, 0);
        for _ in 0..50 {
            let rho = 0.05 + 3.0 * rng.uniform();
            let f = frame_at(&mut rng, rho);
            for ell in 1..=5 {
                let s = frame_sums(o.registry(), ell, &f);
                assert!((s.s1 - 1.0).abs() < 1e-8);
                assert!((s.s2 - 1.0).abs() < 1e-8);
                assert!((s.s3 - s.s3_closed).abs() < 1e-7, "{ell}: {s:?}");
            }
        }
        let f = frame_at(&mut rng, 1e-5);
        for ell in 1..=5 {
            assert!((frame_sums(o.registry(), ell, &f).s3 - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn qv_rate_closed_form_matches_bruteforce() {
        let o = oracle();
        let mut rng = CounterRng::new(7, 0);
        for rho in [0.05, 0.3, 1.0, 2.0, 2.9] {
            let f = frame_at(&mut rng, rho);
            let brute = o.qv_rate_bruteforce(&f);
            assert!((o.qv_rate(rho) - brute).abs() <= 1e-6 * brute.max(1.0));
            assert!((rotation_qv_rate(o.kernel(), rho) - brute).abs() <= 1e-6 * brute.max(1.0));
        }
    }

    #[test]
    fn qv_rate_small_separation_limit() {
        let k = Kernel::new(Spectrum::power(2, 12, 3.0, 1.0, 0.1).unwrap());
        let lim = rotation_qv_limit(&k);
        let e1 = (rotation_qv_rate(&k, 1e-2) - lim).abs();
        let e2 = (rotation_qv_rate(&k, 5e-3) - lim).abs();
        assert!(e1 < 1e-3 * lim.abs().max(1.0));
        assert!(e2 < 0.3 * e1);
    }

    #[test]
    fn qv_rate_at_least_2nu_for_smooth_spectrum() {
        let k = Kernel::new(Spectrum::power(2, 16, 3.0, 1.0, 0.1).unwrap());
        for i in 1..=200 {
            let rho = 0.5 * PI * i as f64 / 200.0;
            assert!(rotation_qv_rate(&k, rho) >= 0.2 - 1e-12);
        }
    }

    #[test]
    fn curvature_drift_bound_and_flip() {
        let o = oracle();
        let mut rng = CounterRng::new(8, 0);
        for _ in 0..100 {
            let rho = 0.05 + 3.0 * rng.uniform();
            let f = frame_at(&mut rng, rho);
            let d = o.curvature_drift(&f);
            assert_eq!(d.e_coeff, -0.1);
            assert!(d.n_coeff <= 0.1);
            let flip =
                o.curvature_drift_with(f.x.coords(), f.e0.vec(), &scaled(-1.0, f.normal.vec()));
            assert!((flip.n_coeff + d.n_coeff).abs() < 1e-15);
        }
    }

    #[test]
    fn jacobi_energy_oracle_equivalence() {
        let o = oracle();
        let mut rng = CounterRng::new(9, 0);
        for rho in [0.1, 0.5, 1.0, 2.0] {
            let f = frame_at(&mut rng, rho);
            let brute = o.jacobi_energy_bruteforce(&f).unwrap();
            assert!(
                (o.jacobi_energy_value(rho) - brute).abs() <= 1e-6,
                "{rho}: {} vs {brute}",
                o.jacobi_energy_value(rho)
            );
        }
    }

    #[test]
    fn jacobi_energy_small_rho_tends_to_minus_nu() {
        let k = Kernel::new(Spectrum::power(2, 12, 3.0, 1.0, 0.1).unwrap());
        let dev: Vec<f64> = [0.2, 0.1, 0.05, 0.02]
            .iter()
            .map(|&r| (jacobi_energy_value(&k, r) + 0.1).abs() / r)
            .collect();
        assert!(dev.windows(2).all(|w| w[1] < w[0]), "{dev:?}");
    }

    #[test]
    fn swapping_endpoints_leaves_scalars_unchanged() {
        let o = oracle();
        let mut rng = CounterRng::new(10, 0);
        let f = frame_at(&mut rng, 0.7);
        let r = f.reversed();
        assert!((o.qv_rate_bruteforce(&f) - o.qv_rate_bruteforce(&r)).abs() < 1e-12);
        assert!(
            (o.jacobi_energy_bruteforce(&f).unwrap() - o.jacobi_energy_bruteforce(&r).unwrap())
                .abs()
                < 1e-12
        );
        for ell in 1..=5 {
            let (a, b) = (
                frame_sums(o.registry(), ell, &f),
                frame_sums(o.registry(), ell, &r),
            );
            assert!((a.s3 - b.s3).abs() < 1e-12);
        }
    }

    #[test]
    fn loglog_slope_of_power() {
        let x = [1.0, 2.0, 4.0, 8.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-1.5)).collect();
        assert!((loglog_slope(&x, &y) + 1.5).abs() < 1e-12);
    }

    #[test]
    fn short_rotation_run() {
        let sp = Spectrum::power(2, 5, 3.0, 1.0, 0.1).unwrap();
        let model = FlowModel::new(sp, 5, DriftField::zero(5)).unwrap();
        let cfg = RotationConfig {
            rho0: 0.5,
            replicas: 64,
            steps: 40,
            window: 20,
            dt: 1e-3,
            seed: 1,
        };
        let r = simulate_rotation(&model, &cfg).unwrap();
        assert_eq!(r.windows.len(), 2);
        assert_eq!(r.bracket_violations, 0);
        assert!(r.max_bracket_ratio <= 1.0);
        assert_eq!(r, simulate_rotation(&model, &cfg).unwrap());
        let bad = RotationConfig { rho0: 2.0, ..cfg };
        assert!(simulate_rotation(&model, &bad).is_err());
    }
}
