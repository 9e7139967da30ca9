//! Run configuration for the harness, read from TOML.
//!
//! Every section and key is optional; missing keys take the defaults below,
//! unknown keys are rejected. A minimal file:
//!
//! ```toml
//! seed = 7
//!
//! [spectrum]
//! d = 2
//! l_max = 8
//! nu = 0.1
//! law = { kind = "power", alpha = 3.0, b = 1.0 }
//! ```

use crate::error::{Error, Result};
use crate::flow::DriftField;
use crate::kernels::{CoefficientLaw, SpectrumConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; every random stream is keyed from it.
    pub seed: u64,
    /// Artifact directory, `out` by default. The `--out` flag overrides it.
    pub out_dir: PathBuf,
    pub spectrum: SpectrumConfig,
    pub integrator: IntegratorConfig,
    pub drift: DriftConfig,
    pub kernels: KernelsConfig,
    pub identities: IdentitiesConfig,
    pub simulate: SimulateConfig,
    pub inverse: InverseConfig,
    pub distance: DistanceConfig,
    pub rotation: RotationSection,
    pub tolerances: Tolerances,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2024,
            out_dir: PathBuf::from("out"),
            spectrum: SpectrumConfig::power(2, 8, 3.0, 1.0, 0.1),
            integrator: IntegratorConfig::default(),
            drift: DriftConfig::default(),
            kernels: KernelsConfig::default(),
            identities: IdentitiesConfig::default(),
            simulate: SimulateConfig::default(),
            inverse: InverseConfig::default(),
            distance: DistanceConfig::default(),
            rotation: RotationSection::default(),
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegratorConfig {
    pub dt: f64,
    /// Horizon `T` of the flow simulations.
    pub t_end: f64,
    /// Largest geodesic step accepted by the integrator, at most `π/4`.
    pub trust_region: f64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 1.0,
            trust_region: std::f64::consts::FRAC_PI_4,
        }
    }
}

/// Deterministic drift `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriftConfig {
    Zero,
    /// Rigid rotation about coordinate axis `axis` at angular speed `omega`.
    Rotation {
        axis: usize,
        omega: f64,
    },
    /// Drift file in the CSV format of [`DriftField::write_csv`].
    File {
        path: PathBuf,
    },
}

impl Default for DriftConfig {
    fn default() -> Self {
        DriftConfig::Rotation {
            axis: 2,
            omega: 0.7,
        }
    }
}

impl DriftConfig {
    pub fn build(&self, l_max: usize) -> Result<DriftField> {
        match self {
            DriftConfig::Zero => Ok(DriftField::zero(l_max)),
            DriftConfig::Rotation { axis, omega } => {
                Ok(DriftField::rigid_rotation(l_max, *axis, *omega))
            }
            DriftConfig::File { path } => {
                let f = std::fs::File::open(path)?;
                let d = DriftField::read_csv(std::io::BufReader::new(f))?;
                if d.l_max > l_max {
                    return Err(Error::InvalidConfig(format!(
                        "drift file has l_max {} above the spectrum's {l_max}",
                        d.l_max
                    )));
                }
                Ok(d)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KernelsConfig {
    pub n_uniform: usize,
    pub n_log: usize,
    /// Exponents for the rough-spectrum limit ratios.
    pub alphas: Vec<f64>,
    pub asymptotic_l_max: usize,
}

impl Default for KernelsConfig {
    fn default() -> Self {
        Self {
            n_uniform: 2048,
            n_log: 64,
            alphas: vec![0.5, 1.0, 1.5],
            asymptotic_l_max: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdentitiesConfig {
    /// Degree cutoff of the brute-force sums; the spectrum is truncated to it.
    pub l_max: usize,
    pub basis_pairs: usize,
    pub kernel_pairs: usize,
    pub covariance_pairs: usize,
    pub gram_points: usize,
    pub frames: usize,
    pub rhos: Vec<f64>,
    /// Decreasing separations for the small-ρ limit of the Jacobi energy.
    pub small_rhos: Vec<f64>,
}

impl Default for IdentitiesConfig {
    fn default() -> Self {
        Self {
            l_max: 5,
            basis_pairs: 50,
            kernel_pairs: 20,
            covariance_pairs: 20,
            gram_points: 24,
            frames: 100,
            rhos: vec![0.1, 0.5, 1.0, 2.0],
            small_rhos: vec![0.2, 0.1, 0.05, 0.02],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    /// Product rule of the ensemble (colatitudes x longitudes); the volume
    /// check also runs the doubled rule to estimate quadrature error.
    pub n_colat: usize,
    pub n_lon: usize,
    pub save_every: usize,
    pub generator_samples: usize,
    pub generator_point: [f64; 3],
    pub galerkin_truncations: Vec<usize>,
    pub galerkin_reference: usize,
    pub galerkin_replicas: usize,
    pub galerkin_dt: f64,
    pub galerkin_n_colat: usize,
    pub galerkin_n_lon: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            n_colat: 12,
            n_lon: 24,
            save_every: 50,
            generator_samples: 1_000_000,
            generator_point: [0.3, -0.5, 0.7],
            galerkin_truncations: vec![2, 4, 8, 16],
            galerkin_reference: 24,
            galerkin_replicas: 16,
            galerkin_dt: 0.01,
            galerkin_n_colat: 4,
            galerkin_n_lon: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InverseConfig {
    /// Step sizes, each half the previous.
    pub dts: Vec<f64>,
    /// Step of the zero-viscosity rotation case, whose residual must vanish.
    pub deterministic_dt: f64,
    pub t0: f64,
    pub n_colat: usize,
    pub n_lon: usize,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            dts: vec![0.01, 0.005, 0.0025],
            deterministic_dt: 1e-3,
            t0: 1.0,
            n_colat: 6,
            n_lon: 12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistanceConfig {
    pub replicas: usize,
    /// Steps of the coarse level; the fine level runs twice as many at `dt/2`.
    pub steps: usize,
    pub dt: f64,
    /// The second flow starts at the first rotated by `delta` about the x axis.
    pub deltas: Vec<f64>,
    pub n_colat: usize,
    pub n_lon: usize,
}

impl Default for DistanceConfig {
    fn default() -> Self {
        Self {
            replicas: 10_000,
            steps: 20,
            dt: 1e-3,
            deltas: vec![0.05, 0.2, 1.0],
            n_colat: 3,
            n_lon: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RotationSection {
    /// Initial separations of the Monte Carlo runs.
    pub rho0: Vec<f64>,
    pub replicas: usize,
    pub steps: usize,
    pub window: usize,
    pub dt: f64,
    pub alphas: Vec<f64>,
    pub asymptotic_l_max: usize,
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub n_rho: usize,
}

impl Default for RotationSection {
    fn default() -> Self {
        Self {
            rho0: vec![0.5, 0.02],
            replicas: 1000,
            steps: 500,
            window: 100,
            dt: 1e-3,
            alphas: vec![0.5, 1.0, 1.5],
            asymptotic_l_max: 200_000,
            rho_lo: 1e-3,
            rho_hi: 1e-2,
            n_rho: 9,
        }
    }
}

/// Pass/fail thresholds. Each defaults to the acceptance level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub basis_fd: f64,
    pub basis_closed_form: f64,
    pub kernel_closed_form: f64,
    pub covariance: f64,
    pub gram_min_eigenvalue: f64,
    pub frame_sums: f64,
    pub energy: f64,
    pub qv_rate: f64,
    pub z_max: f64,
    pub inverse_ratio: f64,
    pub inverse_exact: f64,
    pub volume_dt_factor: f64,
    pub galerkin_se: f64,
    pub slope: f64,
    pub table_interpolation: f64,
    /// Relative gap between the two small-angle ratio limits of a rough kernel.
    pub asymptotic_gap: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            basis_fd: 1e-5,
            basis_closed_form: 1e-7,
            kernel_closed_form: 1e-6,
            covariance: 1e-6,
            gram_min_eigenvalue: -1e-8,
            frame_sums: 1e-7,
            energy: 1e-6,
            qv_rate: 1e-6,
            z_max: 3.0,
            inverse_ratio: 1.3,
            inverse_exact: 1e-10,
            volume_dt_factor: 5.0,
            galerkin_se: 2.0,
            slope: 0.1,
            table_interpolation: 1e-9,
            asymptotic_gap: 0.05,
        }
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "{name} = {v} must be finite and > 0"
        )))
    }
}

fn nonzero(name: &str, v: usize) -> Result<()> {
    if v > 0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("{name} must be > 0")))
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(s).map_err(|e| Error::InvalidConfig(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path)?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Schema checks beyond what deserialization enforces.
    pub fn validate(&self) -> Result<()> {
        self.spectrum.validate()?;
        if self.spectrum.d != 2 {
            return Err(Error::InvalidConfig(format!(
                "the harness runs on S^2 only; got d = {}",
                self.spectrum.d
            )));
        }
        let i = &self.integrator;
        positive("integrator.dt", i.dt)?;
        positive("integrator.t_end", i.t_end)?;
        positive("integrator.trust_region", i.trust_region)?;
        if i.trust_region > std::f64::consts::FRAC_PI_4 {
            return Err(Error::InvalidConfig(
                "integrator.trust_region must be <= pi/4".into(),
            ));
        }
        if let DriftConfig::Rotation { axis, omega } = &self.drift {
            if *axis > 2 || !omega.is_finite() {
                return Err(Error::InvalidConfig(
                    "drift rotation needs axis in 0..=2 and finite omega".into(),
                ));
            }
        }
        let k = &self.kernels;
        if k.n_uniform < 8 {
            return Err(Error::InvalidConfig(
                "kernels.n_uniform must be >= 8".into(),
            ));
        }
        for a in k.alphas.iter().chain(&self.rotation.alphas) {
            if !(a.is_finite() && *a > 0.0 && *a < 2.0) {
                return Err(Error::InvalidConfig(format!(
                    "asymptotic alpha = {a} must lie in (0, 2)"
                )));
            }
        }
        nonzero("kernels.asymptotic_l_max", k.asymptotic_l_max)?;

        let id = &self.identities;
        nonzero("identities.l_max", id.l_max)?;
        if id.l_max > self.spectrum.l_max {
            return Err(Error::InvalidConfig(
                "identities.l_max exceeds spectrum.l_max".into(),
            ));
        }
        for r in id.rhos.iter().chain(&id.small_rhos) {
            if !(*r > 0.0 && *r < std::f64::consts::PI) {
                return Err(Error::InvalidConfig(format!(
                    "separation {r} must lie in (0, pi)"
                )));
            }
        }

        let s = &self.simulate;
        nonzero("simulate.n_colat", s.n_colat)?;
        nonzero("simulate.n_lon", s.n_lon)?;
        nonzero("simulate.generator_samples", s.generator_samples)?;
        if s.generator_samples < 2 {
            return Err(Error::InvalidConfig(
                "simulate.generator_samples must be >= 2".into(),
            ));
        }
        positive("simulate.galerkin_dt", s.galerkin_dt)?;
        nonzero("simulate.galerkin_replicas", s.galerkin_replicas)?;
        if s.galerkin_truncations.is_empty()
            || s.galerkin_truncations.windows(2).any(|w| w[0] >= w[1])
            || s.galerkin_truncations
                .iter()
                .any(|&n| n == 0 || n >= s.galerkin_reference)
        {
            return Err(Error::InvalidConfig(
                "simulate.galerkin_truncations must be increasing, nonzero and below galerkin_reference".into(),
            ));
        }

        let inv = &self.inverse;
        if inv.dts.len() < 2 {
            return Err(Error::InvalidConfig(
                "inverse.dts needs at least two levels".into(),
            ));
        }
        for dt in &inv.dts {
            positive("inverse.dts", *dt)?;
        }
        positive("inverse.deterministic_dt", inv.deterministic_dt)?;
        positive("inverse.t0", inv.t0)?;

        let d = &self.distance;
        nonzero("distance.replicas", d.replicas)?;
        nonzero("distance.steps", d.steps)?;
        positive("distance.dt", d.dt)?;
        if d.replicas < 2 {
            return Err(Error::InvalidConfig(
                "distance.replicas must be >= 2".into(),
            ));
        }
        for delta in &d.deltas {
            positive("distance.deltas", *delta)?;
        }

        let r = &self.rotation;
        for rho in &r.rho0 {
            if !(*rho > 0.0 && *rho < std::f64::consts::PI) {
                return Err(Error::InvalidConfig(format!(
                    "rotation.rho0 = {rho} must lie in (0, pi)"
                )));
            }
        }
        if r.replicas < 2 {
            return Err(Error::InvalidConfig(
                "rotation.replicas must be >= 2".into(),
            ));
        }
        nonzero("rotation.steps", r.steps)?;
        nonzero("rotation.window", r.window)?;
        positive("rotation.dt", r.dt)?;
        if !(r.rho_lo > 0.0 && r.rho_lo < r.rho_hi) || r.n_rho < 2 {
            return Err(Error::InvalidConfig(
                "rotation slope fit needs 0 < rho_lo < rho_hi and n_rho >= 2".into(),
            ));
        }

        let t = &self.tolerances;
        for (name, v) in [
            ("basis_fd", t.basis_fd),
            ("basis_closed_form", t.basis_closed_form),
            ("kernel_closed_form", t.kernel_closed_form),
            ("covariance", t.covariance),
            ("frame_sums", t.frame_sums),
            ("energy", t.energy),
            ("qv_rate", t.qv_rate),
            ("z_max", t.z_max),
            ("inverse_ratio", t.inverse_ratio),
            ("inverse_exact", t.inverse_exact),
            ("volume_dt_factor", t.volume_dt_factor),
            ("galerkin_se", t.galerkin_se),
            ("slope", t.slope),
            ("table_interpolation", t.table_interpolation),
            ("asymptotic_gap", t.asymptotic_gap),
        ] {
            positive(&format!("tolerances.{name}"), v)?;
        }
        if !t.gram_min_eigenvalue.is_finite() {
            return Err(Error::InvalidConfig(
                "tolerances.gram_min_eigenvalue must be finite".into(),
            ));
        }
        Ok(())
    }

    /// The power-law exponent, when the spectrum uses one.
    pub fn alpha(&self) -> Option<f64> {
        match self.spectrum.law {
            CoefficientLaw::Power { alpha, .. } => Some(alpha),
            CoefficientLaw::Explicit { .. } => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(RunConfig::from_toml_str("").unwrap(), RunConfig::default());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn negative_viscosity_is_rejected() {
        let s = "[spectrum]\nd = 2\nl_max = 8\nnu = -0.1\nlaw = { kind = \"power\", alpha = 3.0, b = 1.0 }\n";
        assert!(matches!(
            RunConfig::from_toml_str(s),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("seeed = 1").is_err());
        assert!(RunConfig::from_toml_str("[distance]\nreplica = 5").is_err());
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let c = RunConfig::from_toml_str("seed = 9\n[distance]\nreplicas = 50").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.distance.replicas, 50);
        assert_eq!(c.distance.steps, DistanceConfig::default().steps);
    }
}
