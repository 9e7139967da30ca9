//! Distance between two flows driven by the same noise from different initial maps.
//!
//! With `β_t(x) = |g_t(x) - g̃_t(x)|` and `γ_t = (∫ β_t²)^{1/2}`, the distance
//! satisfies `dγ = γ[σ dz + b dt + <n_g, δu> dt]` with
//!
//! ```text
//! σ² = (ν/c) Σ_ℓ (2 b_ℓ/D_ℓ) Σ_k <n_g, δA_{ℓ,k}>²
//! b  = -2ν + (ν/(2cγ²)) ∫ G_1(ρ_t) - σ²/2
//! ```
//!
//! All integrals are weighted sums over the ensemble nodes; the identities
//! hold exactly for that discrete measure.

use crate::error::{Error, Result};
use crate::flow::{FlowEnsemble, FlowModel, NoiseRealization};
use crate::geometry::{angle_between, axpy, dot, norm, sub, Vec3};
use crate::kernels::Kernel;
use crate::rng::key;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

/// Both flows, sharing one noise realization.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledState {
    pub a: FlowEnsemble,
    pub b: FlowEnsemble,
}

impl CoupledState {
    pub fn new(a: FlowEnsemble, b: FlowEnsemble) -> Result<Self> {
        if a.len() != b.len() || a.weights != b.weights {
            return Err(Error::InvalidConfig(
                "coupled ensembles must share nodes and weights".into(),
            ));
        }
        Ok(Self { a, b })
    }

    /// Intrinsic distances `ρ_t(x_j)`.
    pub fn rho(&self) -> Vec<f64> {
        self.a
            .points
            .iter()
            .zip(&self.b.points)
            .map(|(p, q)| angle_between(p, q))
            .collect()
    }

    /// Extrinsic distances `β_t(x_j)`.
    pub fn beta(&self) -> Vec<f64> {
        self.a
            .points
            .iter()
            .zip(&self.b.points)
            .map(|(p, q)| norm(&sub(p, q)))
            .collect()
    }

    pub fn gamma(&self) -> f64 {
        self.beta()
            .iter()
            .zip(&self.a.weights)
            .map(|(b, w)| w * b * b)
            .sum::<f64>()
            .sqrt()
    }

    /// Largest violation of `β <= ρ <= (π/2) β` over the nodes; `<= 0` when it holds.
    pub fn sandwich_violation(&self) -> f64 {
        self.rho()
            .iter()
            .zip(self.beta())
            .map(|(r, b)| (b - r).max(r - 0.5 * PI * b))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Both ensembles advance with the same step field.
    pub fn advance(
        &mut self,
        model: &FlowModel,
        noise: &NoiseRealization,
        step: usize,
    ) -> Result<()> {
        let dt = noise.dt;
        let mut dw = Vec::new();
        noise.increments(step, &mut dw);
        let a = model.step_coefficients(self.a.t, dt, &dw);
        model.step_points(&mut self.a.points, &a)?;
        model.step_points(&mut self.b.points, &a)?;
        self.a.t += dt;
        self.b.t += dt;
        Ok(())
    }
}

/// Quantities entering the distance SDE at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceDiagnostics {
    pub t: f64,
    pub gamma: f64,
    pub sigma_sq: f64,
    pub b: f64,
    /// `<n_g, δu>`.
    pub coupling: f64,
    /// `(ν/(cγ²)) Σ_j w_j G_1(ρ_j)`.
    pub qv_bound: f64,
    /// `C_0 ν π² / (4c)`.
    pub c0_bound: f64,
}

/// Evaluates the distance diagnostics of a model against its kernel.
#[derive(Debug, Clone)]
pub struct DistanceProcess {
    model: FlowModel,
    /// Kernel of the spectrum truncated to the model's truncation.
    kernel: Kernel,
    c0: f64,
}

impl DistanceProcess {
    pub fn new(model: FlowModel) -> Result<Self> {
        let kernel = Kernel::new(model.spectrum().truncated(model.truncation())?);
        let c0 = kernel.g1_quadratic_constant(4096);
        Ok(Self { model, kernel, c0 })
    }

    pub fn model(&self) -> &FlowModel {
        &self.model
    }

    /// Empirical `C_0 = sup G_1(θ)/θ²`.
    pub fn c0(&self) -> f64 {
        self.c0
    }

    fn nu_over_c(&self) -> f64 {
        self.model.spectrum().nu() / self.model.spectrum().c()
    }

    /// Diagnostics from precomputed packed fields at every node of both ensembles.
    fn diagnostics_from(
        &self,
        state: &CoupledState,
        fa: &[Vec<Vec3>],
        fb: &[Vec<Vec3>],
    ) -> Result<DistanceDiagnostics> {
        let gamma = state.gamma();
        if gamma <= 1e-14 {
            return Err(Error::DegenerateDistance(gamma));
        }
        let g2 = gamma * gamma;
        let modes = self.model.mode_count();
        let w = &state.a.weights;
        let mut inner = vec![0.0; modes];
        for j in 0..state.a.len() {
            let diff = sub(&state.a.points[j], &state.b.points[j]);
            for p in 0..modes {
                inner[p] += w[j] * dot(&diff, &sub(&fa[j][p], &fb[j][p]));
            }
        }
        let sigma_sq: f64 = inner
            .iter()
            .zip(self.model.noise_scale())
            .map(|(i, s)| (s * i / g2).powi(2))
            .sum();
        let g1_int: f64 = state
            .rho()
            .iter()
            .zip(w)
            .map(|(r, w)| w * self.kernel.g1(*r))
            .sum();
        let nc = self.nu_over_c();
        let nu = self.model.spectrum().nu();
        let d = self.model.spectrum().d() as f64;
        let coupling = if self.model.drift().is_zero() {
            0.0
        } else {
            let mut u = vec![0.0; modes];
            self.model
                .drift()
                .scaled_coefficients(state.a.t, self.model.truncation(), &mut u);
            let mut acc = 0.0;
            for j in 0..state.a.len() {
                let mut ua = [0.0; 3];
                let mut ub = [0.0; 3];
                for p in 0..modes {
                    axpy(u[p], &fa[j][p], &mut ua);
                    axpy(u[p], &fb[j][p], &mut ub);
                }
                acc += w[j] * dot(&sub(&state.a.points[j], &state.b.points[j]), &sub(&ua, &ub));
            }
            acc / g2
        };
        Ok(DistanceDiagnostics {
            t: state.a.t,
            gamma,
            sigma_sq,
            b: -d * nu + 0.5 * nc * g1_int / g2 - 0.5 * sigma_sq,
            coupling,
            qv_bound: nc * g1_int / g2,
            c0_bound: self.c0 * nu * PI * PI / (4.0 * self.model.spectrum().c()),
        })
    }

    fn fields(&self, pts: &[Vec3]) -> Vec<Vec<Vec3>> {
        pts.iter()
            .map(|p| {
                let mut buf = Vec::new();
                self.model
                    .registry()
                    .all_fields_into(p, self.model.truncation(), &mut buf);
                buf
            })
            .collect()
    }

    pub fn diagnostics(&self, state: &CoupledState) -> Result<DistanceDiagnostics> {
        let fa = self.fields(&state.a.points);
        let fb = self.fields(&state.b.points);
        self.diagnostics_from(state, &fa, &fb)
    }

    pub fn sigma_sq(&self, state: &CoupledState) -> Result<f64> {
        Ok(self.diagnostics(state)?.sigma_sq)
    }

    pub fn b_drift(&self, state: &CoupledState) -> Result<f64> {
        Ok(self.diagnostics(state)?.b)
    }

    /// Diagnostics at the current state, then one coupled step reusing the
    /// node fields for the Heun predictor.
    pub fn diagnose_and_step(
        &self,
        state: &mut CoupledState,
        noise: &NoiseRealization,
        step: usize,
    ) -> Result<DistanceDiagnostics> {
        let fa = self.fields(&state.a.points);
        let fb = self.fields(&state.b.points);
        let diag = self.diagnostics_from(state, &fa, &fb)?;
        let dt = noise.dt;
        let mut dw = Vec::new();
        noise.increments(step, &mut dw);
        let a = self.model.step_coefficients(state.a.t, dt, &dw);
        let mut buf = Vec::new();
        for (pts, fields) in [(&mut state.a.points, &fa), (&mut state.b.points, &fb)] {
            for (p, f) in pts.iter_mut().zip(fields) {
                let mut v0 = [0.0; 3];
                for (ai, fi) in a.iter().zip(f) {
                    axpy(*ai, fi, &mut v0);
                }
                *p = self.model.heun_from(p, &v0, &a, &mut buf)?;
            }
        }
        state.a.t += dt;
        state.b.t += dt;
        Ok(diag)
    }
}

/// Invariant checks accumulated over saved steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Default)]
pub struct BoundChainReport {
    pub steps_checked: usize,
    /// Largest `σ² - qv_bound` (should be `<= 0`).
    pub max_sigma_excess: f64,
    /// Largest `qv_bound - c0_bound`.
    pub max_qv_excess: f64,
    /// Smallest `b + dν`.
    pub min_b_margin: f64,
    /// Largest violation of the node sandwich.
    pub max_sandwich_violation: f64,
    pub violations: usize,
}

impl BoundChainReport {
    fn new() -> Self {
        Self {
            max_sigma_excess: f64::NEG_INFINITY,
            max_qv_excess: f64::NEG_INFINITY,
            min_b_margin: f64::INFINITY,
            max_sandwich_violation: f64::NEG_INFINITY,
            ..Default::default()
        }
    }

    fn record(&mut self, d: &DistanceDiagnostics, dnu: f64, sandwich: f64) {
        self.steps_checked += 1;
        let se = d.sigma_sq - d.qv_bound;
        let qe = d.qv_bound - d.c0_bound;
        let bm = d.b + dnu;
        self.max_sigma_excess = self.max_sigma_excess.max(se);
        self.max_qv_excess = self.max_qv_excess.max(qe);
        self.min_b_margin = self.min_b_margin.min(bm);
        self.max_sandwich_violation = self.max_sandwich_violation.max(sandwich);
        if se > 0.0 || qe > 0.0 || bm < 0.0 || sandwich > 0.0 {
            self.violations += 1;
        }
    }

    fn merge(&mut self, o: &Self) {
        self.steps_checked += o.steps_checked;
        self.max_sigma_excess = self.max_sigma_excess.max(o.max_sigma_excess);
        self.max_qv_excess = self.max_qv_excess.max(o.max_qv_excess);
        self.min_b_margin = self.min_b_margin.min(o.min_b_margin);
        self.max_sandwich_violation = self.max_sandwich_violation.max(o.max_sandwich_violation);
        self.violations += o.violations;
    }

    pub fn holds(&self) -> bool {
        self.violations == 0 && self.steps_checked > 0
    }
}

/// Monte Carlo regression of `Δγ/γ` against the predicted drift and
/// quadratic variation, pooled over replicas and steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceRegression {
    pub replicas: usize,
    pub steps: usize,
    pub dt: f64,
    /// Mean of `Δγ/γ / dt`.
    pub drift_empirical: f64,
    /// Mean of `b + <n_g, δu>`.
    pub drift_predicted: f64,
    /// Unpaired (conservative) z-score of empirical against predicted drift.
    pub drift_z: f64,
    /// Mean of `(Δγ/γ - (b + <n_g, δu>) dt)² / dt`.
    pub qv_empirical: f64,
    /// Mean of `σ²`.
    pub qv_predicted: f64,
    /// Paired z-score of the squared martingale increment against `σ² dt`.
    pub qv_z: f64,
    /// Mean and standard error of the paired difference behind `qv_z`.
    pub qv_excess: f64,
    pub qv_excess_se: f64,
    /// Paired z-score of `Δγ/γ - (b + <n_g, δu>) dt`.
    pub martingale_z: f64,
    pub bounds: BoundChainReport,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (m, (var / n).sqrt())
}

/// Runs `replicas` coupled pairs for `steps` steps; pair `r` uses the noise
/// seed `key([seed, r])`. `make_state` builds the initial pair.
pub fn verify_distance_sde<F>(
    process: &DistanceProcess,
    make_state: F,
    replicas: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<DistanceRegression>
where
    F: Fn() -> CoupledState + Sync,
{
    let n = process.model().truncation();
    let dnu = process.model().spectrum().d() as f64 * process.model().spectrum().nu();
    // per replica: (Σ r, Σ pred dt, Σ r², Σ σ² dt, bounds)
    let per: Vec<Result<(f64, f64, f64, f64, BoundChainReport)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let noise = NoiseRealization::new(key(&[seed, r as u64]), dt, n);
            let mut state = make_state();
            let mut bounds = BoundChainReport::new();
            let (mut sr, mut sp, mut sq, mut ss) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..steps {
                let sandwich = state.sandwich_violation();
                let d = process.diagnose_and_step(&mut state, &noise, i)?;
                bounds.record(&d, dnu, sandwich);
                let g1 = state.gamma();
                let ratio = (g1 - d.gamma) / d.gamma;
                let pred = (d.b + d.coupling) * dt;
                sr += ratio;
                sp += pred;
                // centred: the squared drift would bias the raw square by b² dt²
                sq += (ratio - pred).powi(2);
                ss += d.sigma_sq * dt;
            }
            Ok((sr, sp, sq, ss, bounds))
        })
        .collect();
    let per: Vec<_> = per.into_iter().collect::<Result<_>>()?;
    let scale = 1.0 / (steps as f64 * dt);
    let col = |f: &dyn Fn(&(f64, f64, f64, f64, BoundChainReport)) -> f64| -> Vec<f64> {
        per.iter().map(|x| f(x) * scale).collect()
    };
    let (re, re_se) = mean_se(&col(&|x| x.0));
    let (rp, rp_se) = mean_se(&col(&|x| x.1));
    let (qe, _) = mean_se(&col(&|x| x.2));
    let (qp, _) = mean_se(&col(&|x| x.3));
    let (md, md_se) = mean_se(&col(&|x| x.0 - x.1));
    let (qd, qd_se) = mean_se(&col(&|x| x.2 - x.3));
    let mut bounds = BoundChainReport::new();
    for x in &per {
        bounds.merge(&x.4);
    }
    let z = |a: f64, b: f64, se: f64| if se > 0.0 { (a - b) / se } else { 0.0 };
    Ok(DistanceRegression {
        replicas,
        steps,
        dt,
        drift_empirical: re,
        drift_predicted: rp,
        drift_z: z(re, rp, (re_se * re_se + rp_se * rp_se).sqrt()),
        qv_empirical: qe,
        qv_predicted: qp,
        qv_z: z(qd, 0.0, qd_se),
        qv_excess: qd,
        qv_excess_se: qd_se,
        martingale_z: z(md, 0.0, md_se),
        bounds,
    })
}

/// The regression at `dt` and `dt/2` over the same horizon, with the
/// quadratic-variation excess extrapolated to `dt -> 0`.
///
/// The squared increment carries an `O(ν dt)` relative bias from second-order
/// Wiener terms of the step, which do not cancel the way `<n_g, δA>` does;
/// `2 E_{dt/2} - E_{dt}` removes it to first order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DistanceStudy {
    pub coarse: DistanceRegression,
    pub fine: DistanceRegression,
    /// Extrapolated mean of `(Δγ/γ - pred)² / dt - σ²`.
    pub qv_excess_extrapolated: f64,
    pub qv_extrapolated_z: f64,
}

impl DistanceStudy {
    pub fn bounds(&self) -> BoundChainReport {
        let mut b = self.coarse.bounds;
        b.merge(&self.fine.bounds);
        b
    }

    /// Largest `|z|` among the drift and martingale regressions of both levels.
    pub fn max_drift_z(&self) -> f64 {
        [
            self.coarse.drift_z,
            self.fine.drift_z,
            self.coarse.martingale_z,
            self.fine.martingale_z,
        ]
        .iter()
        .map(|z| z.abs())
        .fold(0.0, f64::max)
    }
}

/// Coarse level uses `seed`, fine level `key([seed, 1])`; the two are independent.
pub fn distance_study<F>(
    process: &DistanceProcess,
    make_state: F,
    replicas: usize,
    steps: usize,
    dt: f64,
    seed: u64,
) -> Result<DistanceStudy>
where
    F: Fn() -> CoupledState + Sync,
{
    let coarse = verify_distance_sde(process, &make_state, replicas, steps, dt, seed)?;
    let fine = verify_distance_sde(
        process,
        &make_state,
        replicas,
        2 * steps,
        0.5 * dt,
        key(&[seed, 1]),
    )?;
    let ext = 2.0 * fine.qv_excess - coarse.qv_excess;
    let se = (4.0 * fine.qv_excess_se.powi(2) + coarse.qv_excess_se.powi(2)).sqrt();
    Ok(DistanceStudy {
        coarse,
        fine,
        qv_excess_extrapolated: ext,
        qv_extrapolated_z: if se > 0.0 { ext / se } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{rotate_about_axis, DriftField};
    use crate::kernels::Spectrum;
    use crate::quadrature::SphereQuadrature;

    fn process(nu: f64) -> DistanceProcess {
        let sp = Spectrum::power(2, 6, 3.0, 1.0, nu).unwrap();
        DistanceProcess::new(FlowModel::new(sp, 6, DriftField::zero(6)).unwrap()).unwrap()
    }

    fn rotated_pair(delta: f64) -> CoupledState {
        let e = FlowEnsemble::from_quadrature(&SphereQuadrature::product(4, 8));
        let f = e.mapped(|x| rotate_about_axis(x, 2, delta));
        CoupledState::new(e, f).unwrap()
    }

    #[test]
    fn identical_initial_conditions_stay_together() {
        let p = process(0.1);
        let e = FlowEnsemble::from_quadrature(&SphereQuadrature::product(4, 8));
        let mut s = CoupledState::new(e.clone(), e).unwrap();
        let noise = NoiseRealization::new(3, 1e-2, 6);
        for i in 0..20 {
            s.advance(p.model(), &noise, i).unwrap();
            assert_eq!(s.gamma(), 0.0);
        }
        assert!(matches!(p.sigma_sq(&s), Err(Error::DegenerateDistance(_))));
    }

    #[test]
    fn gamma_of_rotation_matches_closed_form() {
        for delta in [0.05, 0.2, 1.0] {
            let s = rotated_pair(delta);
            // ∫ |x - Rx|² = 2(1 - cos δ) ∫ (1 - x_3²) = (4/3)(1 - cos δ)
            let exact = (4.0 / 3.0 * (1.0 - f64::cos(delta))).sqrt();
            assert!((s.gamma() - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn swap_symmetry() {
        let p = process(0.1);
        let s = rotated_pair(0.2);
        let swapped = CoupledState::new(s.b.clone(), s.a.clone()).unwrap();
        let (d1, d2) = (p.diagnostics(&s).unwrap(), p.diagnostics(&swapped).unwrap());
        assert!((d1.gamma - d2.gamma).abs() < 1e-15);
        assert!((d1.sigma_sq - d2.sigma_sq).abs() < 1e-13);
        assert!((d1.b - d2.b).abs() < 1e-13);
    }

    #[test]
    fn single_node_difference_matches_hand_evaluation() {
        let p = process(0.1);
        let e = FlowEnsemble::from_quadrature(&SphereQuadrature::product(2, 4));
        let mut f = e.clone();
        f.points[3] = rotate_about_axis(&f.points[3], 0, 0.3);
        let s = CoupledState::new(e.clone(), f.clone()).unwrap();
        let d = p.diagnostics(&s).unwrap();
        // with one differing node j: <n_g, δA_p> = <Δ, ΔA_p>/β_j² (weights cancel)
        let j = 3;
        let diff = sub(&e.points[j], &f.points[j]);
        let b2 = dot(&diff, &diff);
        let reg = p.model().registry();
        let (mut fa, mut fb) = (Vec::new(), Vec::new());
        reg.all_fields_into(&e.points[j], 6, &mut fa);
        reg.all_fields_into(&f.points[j], 6, &mut fb);
        let hand: f64 = fa
            .iter()
            .zip(&fb)
            .zip(p.model().noise_scale())
            .map(|((x, y), s)| (s * dot(&diff, &sub(x, y)) / b2).powi(2))
            .sum();
        assert!((d.sigma_sq - hand).abs() <= 1e-12 * hand.max(1.0));
        assert!((d.gamma - (e.weights[j] * b2).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn bound_chain_and_drift_floor() {
        let p = process(0.1);
        for delta in [0.05, 0.2, 1.0] {
            let mut s = rotated_pair(delta);
            let noise = NoiseRealization::new(9, 1e-2, 6);
            for i in 0..30 {
                let d = p.diagnose_and_step(&mut s, &noise, i).unwrap();
                assert!(d.sigma_sq <= d.qv_bound);
                assert!(d.qv_bound <= d.c0_bound);
                assert!(d.b >= -2.0 * 0.1);
                assert!(s.sandwich_violation() <= 0.0);
            }
        }
    }

    #[test]
    fn small_separation_limit() {
        // For a uniform tiny rotation, G_1(ρ) ≈ (G_1''(0)/2) ρ² and the
        // drift approaches -dν + (ν/(2c)) lim G_1(ρ)/ρ² · Σwρ²/γ² - σ²/2.
        let p = process(0.1);
        let s = rotated_pair(1e-4);
        let d = p.diagnostics(&s).unwrap();
        let k = &p.kernel;
        let h = 1e-3;
        let lim = k.g1(h) / (h * h);
        let rho = s.rho();
        let ratio: f64 = rho
            .iter()
            .zip(&s.a.weights)
            .map(|(r, w)| w * r * r)
            .sum::<f64>()
            / (d.gamma * d.gamma);
        let nc = p.nu_over_c();
        let predicted = -0.2 + 0.5 * nc * lim * ratio - 0.5 * d.sigma_sq;
        assert!((d.b - predicted).abs() < 1e-5, "{} vs {predicted}", d.b);
    }

    #[test]
    fn drift_is_linear_in_viscosity() {
        let s = rotated_pair(0.2);
        let b1 = process(0.1).b_drift(&s).unwrap();
        let b2 = process(0.2).b_drift(&s).unwrap();
        let b4 = process(0.4).b_drift(&s).unwrap();
        let slope1 = (b2 - b1) / 0.1;
        let slope2 = (b4 - b2) / 0.2;
        assert!((slope1 - slope2).abs() <= 0.05 * slope1.abs());
        assert!((b1 / 0.1 - slope1).abs() <= 0.05 * slope1.abs());
    }
}
