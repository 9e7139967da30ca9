//! Volume-preserving stochastic flows on `S^2` driven by truncated spectral noise.
//!
//! One step of the flow moves every particle by the same random vector field
//!
//! ```text
//! V(x) = u(t,x) dt + √(ν/c) Σ_ℓ √(2 b_ℓ / D_ℓ) Σ_k A_{ℓ,k}(x) Δw_{ℓ,k}
//! ```
//!
//! integrated with a Stratonovich Heun predictor-corrector on the sphere.

use crate::basis::{packed_offset, BasisRegistry};
use crate::error::{Error, Result};
use crate::geometry::{angle_between, axpy, cross, dot, exp_raw, norm, project_raw, S2Point, Vec3};
use crate::kernels::Spectrum;
use crate::quadrature::SphereQuadrature;
use crate::rng::{key, normal_from_key};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::FRAC_PI_4;
use std::io::{BufRead, Write};

/// Brownian increments `Δw_{ℓ,k}` as a pure function of `(seed, ℓ, k, step)`.
///
/// A reversed realization replays the increments of a forward run backwards
/// with flipped sign, which is the increment sequence of `w(t0 - s) - w(t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseRealization {
    pub seed: u64,
    pub dt: f64,
    pub n: usize,
    reverse_from: Option<usize>,
}

impl NoiseRealization {
    pub fn new(seed: u64, dt: f64, n: usize) -> Self {
        Self {
            seed,
            dt,
            n,
            reverse_from: None,
        }
    }

    /// The realization driving the inverse flow of an `n_steps` forward run.
    pub fn reversed(&self, n_steps: usize) -> Self {
        Self {
            reverse_from: Some(n_steps),
            ..*self
        }
    }

    /// Standard normal `Z_{ℓ,k,step}`; the increment is `√dt` times this.
    #[inline]
    pub fn normal(&self, ell: usize, k: usize, step: u64) -> f64 {
        normal_from_key(key(&[self.seed, ell as u64, k as u64, step]))
    }

    /// Increments at `step` for all modes `ℓ <= n`, packed.
    pub fn increments(&self, step: usize, out: &mut Vec<f64>) {
        out.clear();
        let (src, sign) = match self.reverse_from {
            None => (step, 1.0),
            Some(total) => (total - 1 - step, -1.0),
        };
        let s = sign * self.dt.sqrt();
        for ell in 1..=self.n {
            for k in 1..=2 * ell + 1 {
                out.push(s * self.normal(ell, k, src as u64));
            }
        }
    }
}

/// Divergence-free drift `u(t,x) = Σ (1+c_ℓ)^{-1/2} Σ_k u_{ℓ,k}(t) A_{ℓ,k}(x)`,
/// piecewise constant in time on slots of width `slot_dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftField {
    pub l_max: usize,
    pub slot_dt: f64,
    /// `coeffs[slot][packed mode]`, the raw `u_{ℓ,k}` before scaling.
    pub coeffs: Vec<Vec<f64>>,
    sign: f64,
    reverse_at: Option<f64>,
}

/// JSON header of a drift file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftHeader {
    pub l_max: usize,
    pub n_slots: usize,
    /// `None` for a drift constant in time.
    pub slot_dt: Option<f64>,
    pub scaling: String,
}

const DRIFT_SCALING: &str = "(1+c_l)^(-1/2)";

impl DriftField {
    pub fn zero(l_max: usize) -> Self {
        Self {
            l_max,
            slot_dt: f64::INFINITY,
            coeffs: vec![vec![0.0; packed_offset(l_max + 1)]],
            sign: 1.0,
            reverse_at: None,
        }
    }

    /// Rigid rotation `x ↦ ω θ_axis × x`, constant in time.
    pub fn rigid_rotation(l_max: usize, axis: usize, omega: f64) -> Self {
        let mut f = Self::zero(l_max.max(1));
        // A_{1,i} = √(3/2) θ_i × x and (1+c_1)^{-1/2} = 1/√3
        f.coeffs[0][axis] = omega * 2f64.sqrt();
        f
    }

    /// Constant-in-time field from raw packed coefficients.
    pub fn constant(l_max: usize, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != packed_offset(l_max + 1) {
            return Err(Error::InvalidConfig(format!(
                "drift lists {} coefficients, expected {}",
                coeffs.len(),
                packed_offset(l_max + 1)
            )));
        }
        Ok(Self {
            l_max,
            slot_dt: f64::INFINITY,
            coeffs: vec![coeffs],
            sign: 1.0,
            reverse_at: None,
        })
    }

    /// Piecewise-constant field on `coeffs.len()` slots of width `slot_dt`.
    pub fn piecewise(l_max: usize, slot_dt: f64, coeffs: Vec<Vec<f64>>) -> Result<Self> {
        if !(slot_dt > 0.0) || coeffs.is_empty() {
            return Err(Error::InvalidConfig(
                "drift needs slot_dt > 0 and one slot".into(),
            ));
        }
        let width = packed_offset(l_max + 1);
        if coeffs.iter().any(|c| c.len() != width) {
            return Err(Error::InvalidConfig(format!(
                "every drift slot needs {width} coefficients"
            )));
        }
        Ok(Self {
            l_max,
            slot_dt,
            coeffs,
            sign: 1.0,
            reverse_at: None,
        })
    }

    /// `s ↦ -u(t0 - s)`.
    pub fn time_reversed(&self, t0: f64) -> Self {
        let mut out = self.clone();
        out.sign = -self.sign;
        out.reverse_at = Some(t0);
        out
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|s| s.iter().all(|v| *v == 0.0))
    }

    fn slot(&self, t: f64) -> &[f64] {
        let tau = match self.reverse_at {
            Some(t0) => t0 - t,
            None => t,
        };
        let i = if self.slot_dt.is_finite() {
            ((tau / self.slot_dt).floor().max(0.0) as usize).min(self.coeffs.len() - 1)
        } else {
            0
        };
        &self.coeffs[i]
    }

    /// Scaled coefficient `±(1+c_ℓ)^{-1/2} u_{ℓ,k}(t)` for packed modes `ℓ <= n`.
    pub fn scaled_coefficients(&self, t: f64, n: usize, out: &mut [f64]) {
        let raw = self.slot(t);
        let n = n.min(self.l_max);
        for ell in 1..=n {
            let s = self.sign / (1.0 + (ell * (ell + 1)) as f64).sqrt();
            for p in packed_offset(ell)..packed_offset(ell + 1) {
                out[p] += s * raw[p];
            }
        }
    }

    /// Time-grid `L²` norms summed over modes.
    pub fn l2_mass(&self) -> f64 {
        let width = packed_offset(self.l_max + 1);
        let dt = if self.slot_dt.is_finite() {
            self.slot_dt
        } else {
            1.0
        };
        (0..width)
            .map(|p| {
                self.coeffs
                    .iter()
                    .map(|s| s[p] * s[p] * dt)
                    .sum::<f64>()
                    .sqrt()
            })
            .sum()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let header = DriftHeader {
            l_max: self.l_max,
            n_slots: self.coeffs.len(),
            slot_dt: self.slot_dt.is_finite().then_some(self.slot_dt),
            scaling: DRIFT_SCALING.into(),
        };
        writeln!(w, "# {}", serde_json::to_string(&header)?)?;
        writeln!(w, "ell,k,t_index,value")?;
        for (i, slot) in self.coeffs.iter().enumerate() {
            for ell in 1..=self.l_max {
                for k in 1..=2 * ell + 1 {
                    let v = slot[packed_offset(ell) + k - 1];
                    if v != 0.0 {
                        writeln!(w, "{ell},{k},{i},{v:.16e}")?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::Parse("empty drift file".into()))??;
        let json = first
            .strip_prefix("# ")
            .ok_or_else(|| Error::Parse("missing drift JSON header".into()))?;
        let h: DriftHeader = serde_json::from_str(json)?;
        if h.scaling != DRIFT_SCALING {
            return Err(Error::Parse(format!(
                "unknown drift scaling {:?}",
                h.scaling
            )));
        }
        lines.next();
        let width = packed_offset(h.l_max + 1);
        let mut coeffs = vec![vec![0.0; width]; h.n_slots.max(1)];
        for (row, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = |m: &str| Error::Parse(format!("drift row {row}: {m}"));
            if f.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let ell: usize = f[0].parse().map_err(|_| bad("ell"))?;
            let k: usize = f[1].parse().map_err(|_| bad("k"))?;
            let ti: usize = f[2].parse().map_err(|_| bad("t_index"))?;
            let v: f64 = f[3].parse().map_err(|_| bad("value"))?;
            if ell == 0 || ell > h.l_max || k == 0 || k > 2 * ell + 1 || ti >= coeffs.len() {
                return Err(bad("index out of range"));
            }
            coeffs[ti][packed_offset(ell) + k - 1] = v;
        }
        let mut out = Self::piecewise(h.l_max, h.slot_dt.unwrap_or(1.0), coeffs)?;
        out.slot_dt = h.slot_dt.unwrap_or(f64::INFINITY);
        Ok(out)
    }
}

/// Noise, drift, and truncation of one flow.
#[derive(Debug, Clone)]
pub struct FlowModel {
    spectrum: Spectrum,
    registry: BasisRegistry,
    n: usize,
    drift: DriftField,
    pub trust_region: f64,
    /// `√(ν/c) √(2 b_ℓ / D_ℓ)` per packed mode.
    noise_scale: Vec<f64>,
}

impl FlowModel {
    /// Flow truncated at degree `n <= spectrum.l_max()`; `c` always comes from
    /// the full configured spectrum.
    pub fn new(spectrum: Spectrum, n: usize, drift: DriftField) -> Result<Self> {
        if spectrum.d() != 2 {
            return Err(Error::Unsupported("flows are simulated on S^2 only".into()));
        }
        if n == 0 || n > spectrum.l_max() {
            return Err(Error::InvalidConfig(format!(
                "truncation n = {n} must be in 1..={}",
                spectrum.l_max()
            )));
        }
        let registry = BasisRegistry::new(n)?;
        Self::with_registry(spectrum, registry, drift)
    }

    /// Reuses an existing registry; its truncation becomes the flow's.
    pub fn with_registry(
        spectrum: Spectrum,
        registry: BasisRegistry,
        drift: DriftField,
    ) -> Result<Self> {
        let n = registry.l_max();
        let pref = (spectrum.nu() / spectrum.c()).sqrt();
        let mut noise_scale = Vec::with_capacity(packed_offset(n + 1));
        for ell in 1..=n {
            let dim = registry.dim_eigenspace(ell);
            let s = pref * (2.0 * spectrum.b(ell) / dim as f64).sqrt();
            noise_scale.extend(std::iter::repeat(s).take(dim));
        }
        Ok(Self {
            spectrum,
            registry,
            n,
            drift,
            trust_region: FRAC_PI_4,
            noise_scale,
        })
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn registry(&self) -> &BasisRegistry {
        &self.registry
    }

    pub fn truncation(&self) -> usize {
        self.n
    }

    pub fn drift(&self) -> &DriftField {
        &self.drift
    }

    pub fn mode_count(&self) -> usize {
        self.noise_scale.len()
    }

    pub fn noise_scale(&self) -> &[f64] {
        &self.noise_scale
    }

    /// The same model driving the inverse flow over `[0, t0]`.
    pub fn inverse(&self, t0: f64) -> Self {
        let mut m = self.clone();
        m.drift = self.drift.time_reversed(t0);
        m
    }

    /// Packed mode weights `a_p` of the step field `V = Σ a_p A_p` over `[t, t+dt]`.
    /// The drift is sampled at the step midpoint.
    pub fn step_coefficients(&self, t: f64, dt: f64, dw: &[f64]) -> Vec<f64> {
        let mut a: Vec<f64> = self
            .noise_scale
            .iter()
            .zip(dw)
            .map(|(s, w)| s * w)
            .collect();
        if !self.drift.is_zero() {
            let mut u = vec![0.0; a.len()];
            self.drift.scaled_coefficients(t + 0.5 * dt, self.n, &mut u);
            for (ai, ui) in a.iter_mut().zip(&u) {
                *ai += ui * dt;
            }
        }
        a
    }

    /// `Σ_p a_p A_p(p)` at an arbitrary point, reusing `buf` for the fields.
    pub fn field(&self, a: &[f64], p: &Vec3, buf: &mut Vec<Vec3>) -> Vec3 {
        self.registry.all_fields_into(p, self.n, buf);
        let mut v = [0.0; 3];
        for (ai, f) in a.iter().zip(buf.iter()) {
            axpy(*ai, f, &mut v);
        }
        v
    }

    fn check_trust(&self, v: &Vec3) -> Result<()> {
        let n = norm(v);
        if n > self.trust_region {
            return Err(Error::StepTooLarge {
                norm: n,
                limit: self.trust_region,
            });
        }
        Ok(())
    }

    /// One Heun step of a single particle for the step field with weights `a`.
    pub fn heun_step(&self, x: &Vec3, a: &[f64], buf: &mut Vec<Vec3>) -> Result<Vec3> {
        let v0 = self.field(a, x, buf);
        self.heun_from(x, &v0, a, buf)
    }

    /// Heun step when the start-point field `v0` is already known.
    pub fn heun_from(&self, x: &Vec3, v0: &Vec3, a: &[f64], buf: &mut Vec<Vec3>) -> Result<Vec3> {
        self.check_trust(v0)?;
        let xp = exp_raw(x, v0);
        let v1 = self.field(a, &xp, buf);
        let avg = std::array::from_fn(|i| 0.5 * (v0[i] + v1[i]));
        let vb = project_raw(x, &avg);
        self.check_trust(&vb)?;
        Ok(exp_raw(x, &vb))
    }

    /// Advances every point by one step, in parallel; output is independent of
    /// the worker count.
    pub fn step_points(&self, pts: &mut [Vec3], a: &[f64]) -> Result<()> {
        pts.par_iter_mut()
            .map_init(Vec::new, |buf, p| {
                *p = self.heun_step(p, a, buf)?;
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        Ok(())
    }
}

/// Particles started on quadrature nodes; positions share one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowEnsemble {
    pub initial: Vec<Vec3>,
    pub points: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub t: f64,
}

impl FlowEnsemble {
    pub fn from_quadrature(q: &SphereQuadrature) -> Self {
        let pts: Vec<Vec3> = q.points.iter().map(|p| *p.coords()).collect();
        Self {
            initial: pts.clone(),
            points: pts,
            weights: q.weights.clone(),
            t: 0.0,
        }
    }

    /// Ensemble whose current positions are `map(initial)`.
    pub fn mapped<F: Fn(&Vec3) -> Vec3>(&self, map: F) -> Self {
        Self {
            initial: self.initial.clone(),
            points: self.initial.iter().map(map).collect(),
            weights: self.weights.clone(),
            t: self.t,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn integrate<F: Fn(&Vec3) -> f64>(&self, f: F) -> f64 {
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| w * f(p))
            .sum()
    }

    pub fn max_norm_defect(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (norm(p) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// One step with explicit noise; `step` indexes the realization.
    pub fn step(
        &mut self,
        model: &FlowModel,
        noise: &NoiseRealization,
        step: usize,
        dt: f64,
    ) -> Result<()> {
        let mut dw = Vec::new();
        noise.increments(step, &mut dw);
        let a = model.step_coefficients(self.t, dt, &dw);
        model.step_points(&mut self.points, &a)?;
        self.t += dt;
        Ok(())
    }
}

/// Test functions with known gradient and Laplacian on `S^2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    Constant,
    /// `<θ_i, x>`
    Coordinate(usize),
    /// `<θ_i, x><θ_j, x>`
    Quadratic(usize, usize),
}

impl TestFunction {
    pub fn value(&self, x: &Vec3) -> f64 {
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Coordinate(i) => x[i],
            TestFunction::Quadratic(i, j) => x[i] * x[j],
        }
    }

    /// Ambient gradient projected onto `T_x`.
    pub fn gradient(&self, x: &Vec3) -> Vec3 {
        let mut g = [0.0; 3];
        match *self {
            TestFunction::Constant => {}
            TestFunction::Coordinate(i) => g[i] = 1.0,
            TestFunction::Quadratic(i, j) => {
                g[i] += x[j];
                g[j] += x[i];
            }
        }
        project_raw(x, &g)
    }

    /// Laplace-Beltrami on the unit sphere `S^2`.
    pub fn laplacian(&self, x: &Vec3) -> f64 {
        match *self {
            TestFunction::Constant => 0.0,
            TestFunction::Coordinate(i) => -2.0 * x[i],
            TestFunction::Quadratic(i, j) => -6.0 * x[i] * x[j] + if i == j { 2.0 } else { 0.0 },
        }
    }

    /// `∫ f dx` against the normalized measure.
    pub fn exact_integral(&self) -> f64 {
        match *self {
            TestFunction::Constant => 1.0,
            TestFunction::Coordinate(_) => 0.0,
            TestFunction::Quadratic(i, j) => {
                if i == j {
                    1.0 / 3.0
                } else {
                    0.0
                }
            }
        }
    }

    /// The volume-diagnostic set: coordinates and all quadratics.
    pub fn standard_set() -> Vec<TestFunction> {
        let mut v: Vec<TestFunction> = (0..3).map(TestFunction::Coordinate).collect();
        for i in 0..3 {
            for j in i..3 {
                v.push(TestFunction::Quadratic(i, j));
            }
        }
        v
    }
}

/// Trajectory and volume diagnostics of a flow run.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPath {
    pub times: Vec<f64>,
    pub frames: Vec<Vec<Vec3>>,
    pub tests: Vec<TestFunction>,
    /// `volume[s][f] = Σ w_j f(g_t(x_j)) - ∫ f` at save `s`.
    pub volume: Vec<Vec<f64>>,
    pub max_norm_defect: f64,
}

impl FlowPath {
    pub fn max_volume_error(&self) -> f64 {
        self.volume
            .iter()
            .flat_map(|r| r.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

fn volume_row(ens: &FlowEnsemble, tests: &[TestFunction]) -> Vec<f64> {
    tests
        .iter()
        .map(|f| ens.integrate(|p| f.value(p)) - f.exact_integral())
        .collect()
}

/// Integrates `n_steps = round(t_end/dt)` steps, saving every `save_every`.
pub fn simulate_flow(
    ensemble: &mut FlowEnsemble,
    model: &FlowModel,
    noise: &NoiseRealization,
    t_end: f64,
    save_every: usize,
    tests: &[TestFunction],
) -> Result<FlowPath> {
    let dt = noise.dt;
    let n_steps = (t_end / dt).round() as usize;
    let save_every = save_every.max(1);
    let mut path = FlowPath {
        times: vec![ensemble.t],
        frames: vec![ensemble.points.clone()],
        tests: tests.to_vec(),
        volume: vec![volume_row(ensemble, tests)],
        max_norm_defect: ensemble.max_norm_defect(),
    };
    for i in 0..n_steps {
        ensemble.step(model, noise, i, dt)?;
        path.max_norm_defect = path.max_norm_defect.max(ensemble.max_norm_defect());
        if (i + 1) % save_every == 0 || i + 1 == n_steps {
            path.times.push(ensemble.t);
            path.frames.push(ensemble.points.clone());
            path.volume.push(volume_row(ensemble, tests));
        }
    }
    Ok(path)
}

/// Advances `points` from time 0 through `n_steps` steps without recording.
pub fn flow_points(
    points: &mut [Vec3],
    model: &FlowModel,
    noise: &NoiseRealization,
    n_steps: usize,
) -> Result<()> {
    let dt = noise.dt;
    let mut dw = Vec::new();
    for i in 0..n_steps {
        noise.increments(i, &mut dw);
        let a = model.step_coefficients(i as f64 * dt, dt, &dw);
        model.step_points(points, &a)?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InverseReport {
    pub t0: f64,
    pub dt: f64,
    /// `g^{t0}(t0, x_j)`.
    pub inverse_images: Vec<Vec3>,
    /// `sup_j d(g(t0, g^{t0}(t0, x_j)), x_j)`.
    pub residual: f64,
    /// The same with the composition order swapped.
    pub residual_reverse_order: f64,
}

/// Runs the inverse flow from the ensemble's initial nodes and composes it with
/// the forward flow driven by the same noise.
pub fn simulate_inverse_flow(
    ensemble: &FlowEnsemble,
    model: &FlowModel,
    noise: &NoiseRealization,
    t0: f64,
) -> Result<InverseReport> {
    let dt = noise.dt;
    let n_steps = (t0 / dt).round() as usize;
    let inv_model = model.inverse(t0);
    let inv_noise = noise.reversed(n_steps);

    let mut inv = ensemble.initial.clone();
    flow_points(&mut inv, &inv_model, &inv_noise, n_steps)?;
    let mut back = inv.clone();
    flow_points(&mut back, model, noise, n_steps)?;

    let mut fwd = ensemble.initial.clone();
    flow_points(&mut fwd, model, noise, n_steps)?;
    flow_points(&mut fwd, &inv_model, &inv_noise, n_steps)?;

    let sup = |pts: &[Vec3]| {
        pts.iter()
            .zip(&ensemble.initial)
            .map(|(p, x)| angle_between(p, x))
            .fold(0.0, f64::max)
    };
    Ok(InverseReport {
        t0,
        dt,
        residual: sup(&back),
        residual_reverse_order: sup(&fwd),
        inverse_images: inv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeneratorReport {
    pub empirical: f64,
    pub analytic: f64,
    pub std_error: f64,
    pub z: f64,
    pub n_samples: usize,
}

/// Monte Carlo estimate of `(E f(g_dt(x)) - f(x))/dt` against
/// `νΔf(x) + <u(0,x), ∇f(x)>`.
pub fn generator_check(
    model: &FlowModel,
    x: &S2Point,
    f: TestFunction,
    dt: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GeneratorReport> {
    let xc = *x.coords();
    let n_modes = model.mode_count();
    let mut fields = Vec::new();
    model
        .registry()
        .all_fields_into(&xc, model.truncation(), &mut fields);
    let mut u = vec![0.0; n_modes];
    model
        .drift()
        .scaled_coefficients(0.5 * dt, model.truncation(), &mut u);
    let mut u_x = [0.0; 3];
    for (c, a) in u.iter().zip(&fields) {
        axpy(*c, a, &mut u_x);
    }
    let analytic = model.spectrum().nu() * f.laplacian(&xc) + dot(&u_x, &f.gradient(&xc));
    let f0 = f.value(&xc);

    const CHUNK: usize = 4096;
    let n_chunks = n_samples.div_ceil(CHUNK);
    let partial: Vec<Result<(f64, f64)>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut buf = Vec::new();
            let mut dw = vec![0.0; n_modes];
            let (mut s1, mut s2) = (0.0, 0.0);
            let sqdt = dt.sqrt();
            for s in (c * CHUNK)..((c + 1) * CHUNK).min(n_samples) {
                let mut p = 0;
                for ell in 1..=model.truncation() {
                    for k in 1..=2 * ell + 1 {
                        dw[p] =
                            sqdt * normal_from_key(key(&[seed, s as u64, ell as u64, k as u64]));
                        p += 1;
                    }
                }
                let a = model.step_coefficients(0.0, dt, &dw);
                let mut v0 = [0.0; 3];
                for (ai, fa) in a.iter().zip(&fields) {
                    axpy(*ai, fa, &mut v0);
                }
                let x1 = model.heun_from(&xc, &v0, &a, &mut buf)?;
                let y = (f.value(&x1) - f0) / dt;
                s1 += y;
                s2 += y * y;
            }
            Ok((s1, s2))
        })
        .collect();
    let (mut s1, mut s2) = (0.0, 0.0);
    for r in partial {
        let (a, b) = r?;
        s1 += a;
        s2 += b;
    }
    let n = n_samples as f64;
    let mean = s1 / n;
    let var = (s2 / n - mean * mean).max(0.0) * n / (n - 1.0);
    let se = (var / n).sqrt();
    let z = if se > 0.0 {
        (mean - analytic) / se
    } else if (mean - analytic).abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(GeneratorReport {
        empirical: mean,
        analytic,
        std_error: se,
        z,
        n_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GalerkinRow {
    pub n: usize,
    /// Mean over replicas of `Σ_j w_j sup_t d²(g_n, g_ref)`.
    pub mean: f64,
    pub std_error: f64,
    /// Standard error of the paired difference to the previous row.
    pub diff_std_error: f64,
}

/// Nested-noise comparison of truncations against the reference truncation
/// `model_ref.truncation()`; all flows share the low-mode increments.
pub fn galerkin_convergence(
    model_ref: &FlowModel,
    truncations: &[usize],
    ensemble: &FlowEnsemble,
    t_end: f64,
    dt: f64,
    replicas: usize,
    seed: u64,
) -> Result<Vec<GalerkinRow>> {
    let n_steps = (t_end / dt).round() as usize;
    let models: Vec<FlowModel> = truncations
        .iter()
        .map(|&n| {
            let reg = BasisRegistry::new(n)?;
            let drift = model_ref.drift().clone();
            FlowModel::with_registry(model_ref.spectrum().clone(), reg, drift)
        })
        .collect::<Result<_>>()?;
    // per replica, per truncation
    let per_rep: Vec<Result<Vec<f64>>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = NoiseRealization::new(key(&[seed, r as u64]), dt, model_ref.truncation());
            let mut dw = Vec::new();
            let mut reference = ensemble.points.clone();
            let mut runs: Vec<Vec<Vec3>> = vec![ensemble.points.clone(); models.len()];
            let mut sup = vec![vec![0.0f64; ensemble.len()]; models.len()];
            let mut buf = Vec::new();
            for i in 0..n_steps {
                noise.increments(i, &mut dw);
                let t = i as f64 * dt;
                let a = model_ref.step_coefficients(t, dt, &dw);
                for p in reference.iter_mut() {
                    *p = model_ref.heun_step(p, &a, &mut buf)?;
                }
                for (m, model) in models.iter().enumerate() {
                    let am = model.step_coefficients(t, dt, &dw[..model.mode_count()]);
                    for (j, p) in runs[m].iter_mut().enumerate() {
                        *p = model.heun_step(p, &am, &mut buf)?;
                        let d = angle_between(p, &reference[j]);
                        sup[m][j] = sup[m][j].max(d * d);
                    }
                }
            }
            Ok(sup
                .iter()
                .map(|s| s.iter().zip(&ensemble.weights).map(|(v, w)| v * w).sum())
                .collect())
        })
        .collect();
    let vals: Vec<Vec<f64>> = per_rep.into_iter().collect::<Result<_>>()?;
    let nr = replicas as f64;
    let stats = |xs: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = xs.collect();
        let m = v.iter().sum::<f64>() / nr;
        let var = if replicas > 1 {
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (nr - 1.0)
        } else {
            0.0
        };
        (m, (var / nr).sqrt())
    };
    Ok(truncations
        .iter()
        .enumerate()
        .map(|(m, &n)| {
            let (mean, se) = stats(&mut vals.iter().map(|v| v[m]));
            let diff_se = if m == 0 {
                0.0
            } else {
                stats(&mut vals.iter().map(|v| v[m] - v[m - 1])).1
            };
            GalerkinRow {
                n,
                mean,
                std_error: se,
                diff_std_error: diff_se,
            }
        })
        .collect())
}

/// Rigid rotation of `x` about coordinate axis `axis` by `angle`.
pub fn rotate_about_axis(x: &Vec3, axis: usize, angle: f64) -> Vec3 {
    let mut e = [0.0; 3];
    e[axis] = 1.0;
    let (s, c) = angle.sin_cos();
    let along = dot(&e, x);
    let perp = cross(&e, x);
    std::array::from_fn(|i| c * x[i] + s * perp[i] + (1.0 - c) * along * e[i])
}
