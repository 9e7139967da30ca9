//! Experiment driver behind the `isoflow` binary: runs one suite, collects its
//! checks and artifacts, and writes them with a manifest.
//!
//! Everything numeric is computed before the output directory is touched, and
//! each file is written to a temporary name and renamed into place.

use crate::basis::BasisRegistry;
use crate::config::RunConfig;
use crate::distance::{distance_study, CoupledState, DistanceProcess};
use crate::error::{Error, Result};
use crate::flow::{
    galerkin_convergence, generator_check, rotate_about_axis, simulate_flow, simulate_inverse_flow,
    DriftField, FlowEnsemble, FlowModel, NoiseRealization, TestFunction,
};
use crate::geometry::{geodesic_frame, point_at_distance, S2Point, DEFAULT_EPS_CUT};
use crate::identities::{
    basis_identities, covariance_identities, kernel_identities, rotation_identities,
};
use crate::kernel_table::KernelTable;
use crate::kernels::{asymptotic_limit, CoefficientLaw, Kernel, Spectrum, SpectrumConfig};
use crate::quadrature::SphereQuadrature;
use crate::rng::key;
use crate::rotation::{rough_asymptotics, simulate_rotation, RotationConfig, RotationOracle};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Kernels,
    Identities,
    Simulate,
    Inverse,
    Distance,
    Rotation,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Kernels,
        Suite::Identities,
        Suite::Simulate,
        Suite::Inverse,
        Suite::Distance,
        Suite::Rotation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Kernels => "kernels",
            Suite::Identities => "identities",
            Suite::Simulate => "simulate",
            Suite::Inverse => "inverse",
            Suite::Distance => "distance",
            Suite::Rotation => "rotation",
        }
    }
}

/// One pass/fail comparison of a measured value against a tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    /// `"<="` or `">="`.
    pub relation: String,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured <= tolerance`; NaN fails.
    pub fn at_most(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: "<=".into(),
            tolerance,
            passed: measured <= tolerance,
        }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            measured,
            relation: ">=".into(),
            tolerance,
            passed: measured >= tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub name: String,
    pub contents: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SuiteOutput {
    pub checks: Vec<Check>,
    pub artifacts: Vec<Artifact>,
}

impl SuiteOutput {
    fn csv(&mut self, name: &str, contents: String) {
        self.artifacts.push(Artifact {
            name: name.into(),
            contents: contents.into_bytes(),
        });
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut contents = serde_json::to_vec_pretty(value)?;
        contents.push(b'\n');
        self.artifacts.push(Artifact {
            name: name.into(),
            contents,
        });
        Ok(())
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    pub name: String,
    /// SHA-256 of the file contents.
    pub content_id: String,
    pub bytes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub suite: Suite,
    pub code_version: String,
    /// SHA-256 of the effective configuration as TOML, without `out_dir`.
    pub config_hash: String,
    pub seed: u64,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub checks_enabled: bool,
    pub passed: bool,
    pub checks: Vec<Check>,
    pub artifacts: Vec<ArtifactEntry>,
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        write!(s, "{b:02x}").unwrap();
    }
    s
}

/// Where the artifacts go does not change what they contain, so the output
/// directory is left out of the hash.
pub fn config_hash(cfg: &RunConfig) -> String {
    let mut c = cfg.clone();
    c.out_dir = PathBuf::new();
    hex_digest(c.to_toml_string().as_bytes())
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Writes `contents` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = PathBuf::from(tmp);
    {
        use std::io::Write;
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path).inspect_err(|_| {
        let _ = std::fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Runs one suite: computes, then writes artifacts and `manifest.json` into
/// `<out_dir>/<suite>/`.
pub fn execute(suite: Suite, cfg: &RunConfig, checks_enabled: bool) -> Result<RunManifest> {
    cfg.validate()?;
    let started = now();
    let out = run_suite(suite, cfg)?;
    let dir = cfg.out_dir.join(suite.name());
    std::fs::create_dir_all(&dir)?;
    let mut artifacts = Vec::with_capacity(out.artifacts.len());
    for a in &out.artifacts {
        write_atomic(&dir.join(&a.name), &a.contents)?;
        artifacts.push(ArtifactEntry {
            name: a.name.clone(),
            content_id: hex_digest(&a.contents),
            bytes: a.contents.len(),
        });
    }
    let manifest = RunManifest {
        suite,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config_hash(cfg),
        seed: cfg.seed,
        started,
        finished: now(),
        checks_enabled,
        passed: out.passed(),
        checks: out.checks,
        artifacts,
    };
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    write_atomic(&dir.join("manifest.json"), &bytes)?;
    Ok(manifest)
}

pub fn run_suite(suite: Suite, cfg: &RunConfig) -> Result<SuiteOutput> {
    match suite {
        Suite::Kernels => cmd_kernels(cfg),
        Suite::Identities => cmd_identities(cfg),
        Suite::Simulate => cmd_simulate(cfg),
        Suite::Inverse => cmd_inverse(cfg),
        Suite::Distance => cmd_distance(cfg),
        Suite::Rotation => cmd_rotation(cfg),
    }
}

fn power_b(cfg: &RunConfig) -> f64 {
    match cfg.spectrum.law {
        CoefficientLaw::Power { b, .. } => b,
        CoefficientLaw::Explicit { .. } => 1.0,
    }
}

/// Same law and viscosity with a different cutoff. Explicit laws cannot be
/// extended past their listed coefficients.
fn with_l_max(cfg: &RunConfig, l_max: usize) -> Result<Spectrum> {
    let mut sc = cfg.spectrum.clone();
    match &mut sc.law {
        CoefficientLaw::Power { .. } => sc.l_max = l_max,
        CoefficientLaw::Explicit { values } => {
            if l_max > values.len() {
                return Err(Error::InvalidConfig(format!(
                    "explicit law lists {} coefficients; {l_max} are needed",
                    values.len()
                )));
            }
            values.truncate(l_max);
            sc.l_max = l_max;
        }
    }
    Spectrum::new(sc)
}

fn model(cfg: &RunConfig, drift: DriftField) -> Result<FlowModel> {
    let sp = Spectrum::new(cfg.spectrum.clone())?;
    let n = sp.l_max();
    let mut m = FlowModel::new(sp, n, drift)?;
    m.trust_region = cfg.integrator.trust_region;
    Ok(m)
}

fn configured_model(cfg: &RunConfig) -> Result<FlowModel> {
    model(cfg, cfg.drift.build(cfg.spectrum.l_max)?)
}

pub fn cmd_kernels(cfg: &RunConfig) -> Result<SuiteOutput> {
    let tol = &cfg.tolerances;
    let kernel = Kernel::new(Spectrum::new(cfg.spectrum.clone())?);
    let table = KernelTable::build(&kernel, cfg.kernels.n_uniform, cfg.kernels.n_log)?;
    let mut out = SuiteOutput::default();

    let findings = table.check_invariants(kernel.c());
    out.checks.push(Check::at_most(
        "kernel_table.invariant_violations",
        findings.len() as f64,
        0.0,
    ));
    let n_probe = 64;
    let mut interp_err: f64 = 0.0;
    for i in 0..n_probe {
        let th = 1e-3 + (std::f64::consts::PI - 2e-3) * (i as f64 + 0.37) / n_probe as f64;
        interp_err = interp_err.max((table.g_at(th) - kernel.g(th)).abs());
    }
    out.checks.push(Check::at_most(
        "kernel_table.interpolation",
        interp_err,
        tol.table_interpolation,
    ));

    let mut limits = Vec::new();
    for &alpha in &cfg.kernels.alphas {
        let sp = Spectrum::new(SpectrumConfig::power(
            2,
            cfg.kernels.asymptotic_l_max,
            alpha,
            power_b(cfg),
            cfg.spectrum.nu,
        ))?;
        let lim = asymptotic_limit(&Kernel::new(sp), alpha, 1e-2);
        out.checks.push(Check::at_most(
            format!("asymptotics.ratio_gap[alpha={alpha}]"),
            lim.relative_gap,
            tol.asymptotic_gap,
        ));
        limits.push(lim);
    }

    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    out.artifacts.push(Artifact {
        name: "kernel_table.csv".into(),
        contents: csv,
    });
    #[derive(Serialize)]
    struct Report<'a> {
        c: f64,
        g0: f64,
        g_second_at_zero: f64,
        regularity_constant: f64,
        c0: f64,
        invariant_findings: &'a [String],
        asymptotic_l_max: usize,
        limits: &'a [crate::kernels::AsymptoticLimit],
    }
    out.json(
        "asymptotics.json",
        &Report {
            c: kernel.c(),
            g0: kernel.g0(),
            g_second_at_zero: kernel.g_second_at_zero(),
            regularity_constant: kernel.regularity_constant(4096),
            c0: kernel.g1_quadratic_constant(4096),
            invariant_findings: &findings,
            asymptotic_l_max: cfg.kernels.asymptotic_l_max,
            limits: &limits,
        },
    )?;
    Ok(out)
}

pub fn cmd_identities(cfg: &RunConfig) -> Result<SuiteOutput> {
    let id = &cfg.identities;
    let tol = &cfg.tolerances;
    let l = id.l_max;
    let sp = Spectrum::new(cfg.spectrum.clone())?.truncated(l)?;
    let reg = BasisRegistry::new(l)?;
    let kernel = Kernel::new(sp.clone());
    let mut out = SuiteOutput::default();
    let c = &mut out.checks;

    let b = basis_identities(&reg, l, id.basis_pairs, key(&[cfg.seed, 10]))?;
    c.push(Check::at_most(
        "basis.self_derivative",
        b.max_self_derivative,
        tol.basis_fd,
    ));
    c.push(Check::at_most(
        "basis.inner_sum",
        b.max_inner_err,
        tol.basis_closed_form,
    ));
    c.push(Check::at_most(
        "basis.normal_sum",
        b.max_normal_err,
        tol.basis_closed_form,
    ));
    c.push(Check::at_most(
        "basis.symmetric_sum",
        b.max_symmetric_err,
        tol.basis_closed_form,
    ));

    let k = kernel_identities(&kernel, &reg, id.kernel_pairs, key(&[cfg.seed, 11]))?;
    c.push(Check::at_most(
        "kernel.g1_spectral",
        k.max_g1_err,
        tol.kernel_closed_form,
    ));
    c.push(Check::at_most(
        "kernel.g2_spectral",
        k.max_g2_err,
        tol.kernel_closed_form,
    ));
    c.push(Check::at_most("kernel.g1_at_zero", k.g1_at_zero.abs(), 0.0));
    c.push(Check::at_most("kernel.g2_at_zero", k.g2_at_zero.abs(), 0.0));

    let cov = covariance_identities(
        &kernel,
        &reg,
        id.covariance_pairs,
        id.gram_points,
        key(&[cfg.seed, 12]),
    )?;
    c.push(Check::at_most(
        "covariance.spectral",
        cov.max_err,
        tol.covariance,
    ));
    c.push(Check::at_least(
        "covariance.gram_min_eigenvalue",
        cov.min_eigenvalue,
        tol.gram_min_eigenvalue,
    ));

    let oracle = RotationOracle::with_registry(sp, reg)?;
    let r = rotation_identities(&oracle, l, id.frames, &id.rhos, key(&[cfg.seed, 13]))?;
    c.push(Check::at_most(
        "rotation.unit_sums",
        r.max_unit_err,
        tol.frame_sums,
    ));
    c.push(Check::at_most(
        "rotation.mixed_sum",
        r.max_mixed_err,
        tol.frame_sums,
    ));
    c.push(Check::at_most(
        "rotation.normal_drift_coefficient",
        r.max_normal_coeff,
        r.nu,
    ));
    c.push(Check::at_most(
        "rotation.qv_rate_closed_form",
        r.max_rate_err,
        tol.qv_rate,
    ));
    c.push(Check::at_most(
        "rotation.energy_closed_form",
        r.max_energy_err(),
        tol.energy,
    ));

    // |value(ρ) + ν| / ρ must shrink along the decreasing separations.
    let ratios: Vec<(f64, f64)> = id
        .small_rhos
        .iter()
        .map(|&rho| (rho, (oracle.jacobi_energy_value(rho) + r.nu).abs() / rho))
        .collect();
    let worst_increase = ratios
        .windows(2)
        .map(|w| w[1].1 - w[0].1)
        .fold(f64::NEG_INFINITY, f64::max);
    if ratios.len() >= 2 {
        c.push(Check::at_most(
            "rotation.energy_small_rho_increase",
            worst_increase,
            0.0,
        ));
    }

    let mut csv = String::from("check,measured,relation,tolerance,passed\n");
    for ch in &out.checks {
        writeln!(
            csv,
            "{},{:e},{},{:e},{}",
            ch.name, ch.measured, ch.relation, ch.tolerance, ch.passed
        )
        .unwrap();
    }
    out.csv("identities.csv", csv);
    #[derive(Serialize)]
    struct Report<'a> {
        basis: &'a crate::identities::BasisIdentityReport,
        kernel: &'a crate::identities::KernelIdentityReport,
        covariance: &'a crate::identities::CovarianceReport,
        rotation: &'a crate::identities::RotationIdentityReport,
        energy_small_rho: &'a [(f64, f64)],
    }
    out.json(
        "identities.json",
        &Report {
            basis: &b,
            kernel: &k,
            covariance: &cov,
            rotation: &r,
            energy_small_rho: &ratios,
        },
    )?;
    Ok(out)
}

fn test_label(f: &TestFunction) -> String {
    match f {
        TestFunction::Constant => "one".into(),
        TestFunction::Coordinate(i) => format!("x{i}"),
        TestFunction::Quadratic(i, j) => format!("x{i}x{j}"),
    }
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<SuiteOutput> {
    let s = &cfg.simulate;
    let tol = &cfg.tolerances;
    let dt = cfg.integrator.dt;
    let m = configured_model(cfg)?;
    let tests = TestFunction::standard_set();
    let mut out = SuiteOutput::default();

    // Volume: the coarse ensemble against the exact integrals, with the
    // doubled rule under the same noise as the quadrature-error estimate.
    let noise = NoiseRealization::new(key(&[cfg.seed, 20]), dt, m.truncation());
    let mut coarse = FlowEnsemble::from_quadrature(&SphereQuadrature::product(s.n_colat, s.n_lon));
    let mut fine =
        FlowEnsemble::from_quadrature(&SphereQuadrature::product(2 * s.n_colat, 2 * s.n_lon));
    let pc = simulate_flow(
        &mut coarse,
        &m,
        &noise,
        cfg.integrator.t_end,
        s.save_every,
        &tests,
    )?;
    let pf = simulate_flow(
        &mut fine,
        &m,
        &noise,
        cfg.integrator.t_end,
        s.save_every,
        &tests,
    )?;
    let quad_err = pc
        .volume
        .iter()
        .zip(&pf.volume)
        .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    out.checks.push(Check::at_most(
        "volume.max_drift",
        pc.max_volume_error(),
        quad_err + tol.volume_dt_factor * dt,
    ));

    let mut path_csv = String::from("t,particle,x,y,z\n");
    for (t, frame) in pc.times.iter().zip(&pc.frames) {
        for (i, p) in frame.iter().enumerate() {
            writeln!(
                path_csv,
                "{t:.6},{i},{:.16e},{:.16e},{:.16e}",
                p[0], p[1], p[2]
            )
            .unwrap();
        }
    }
    out.csv("flow_path.csv", path_csv);
    let mut vol_csv = String::from("t");
    for suffix in ["", "_fine"] {
        for f in &tests {
            write!(vol_csv, ",{}{suffix}", test_label(f)).unwrap();
        }
    }
    vol_csv.push('\n');
    for ((t, a), b) in pc.times.iter().zip(&pc.volume).zip(&pf.volume) {
        write!(vol_csv, "{t:.6}").unwrap();
        for v in a.iter().chain(b) {
            write!(vol_csv, ",{v:.6e}").unwrap();
        }
        vol_csv.push('\n');
    }
    out.csv("volume.csv", vol_csv);

    // Generator of the coordinate functions at one point.
    let x = S2Point::new(s.generator_point)?;
    let mut gens = Vec::new();
    for i in 0..3 {
        let r = generator_check(
            &m,
            &x,
            TestFunction::Coordinate(i),
            dt,
            s.generator_samples,
            key(&[cfg.seed, 21, i as u64]),
        )?;
        out.checks.push(Check::at_most(
            format!("generator.z[x{i}]"),
            r.z.abs(),
            tol.z_max,
        ));
        gens.push(r);
    }
    out.json("generator.json", &gens)?;

    // Galerkin: nested-noise truncations against a finer reference flow.
    let sp_ref = with_l_max(cfg, s.galerkin_reference)?;
    let mref = FlowModel::new(
        sp_ref,
        s.galerkin_reference,
        cfg.drift.build(s.galerkin_reference)?,
    )?;
    let ens = FlowEnsemble::from_quadrature(&SphereQuadrature::product(
        s.galerkin_n_colat,
        s.galerkin_n_lon,
    ));
    let rows = galerkin_convergence(
        &mref,
        &s.galerkin_truncations,
        &ens,
        cfg.integrator.t_end,
        s.galerkin_dt,
        s.galerkin_replicas,
        key(&[cfg.seed, 22]),
    )?;
    let mut gal_csv = String::from("n,mean,std_error,diff_std_error\n");
    for r in &rows {
        writeln!(
            gal_csv,
            "{},{:.10e},{:.10e},{:.10e}",
            r.n, r.mean, r.std_error, r.diff_std_error
        )
        .unwrap();
    }
    for w in rows.windows(2) {
        out.checks.push(Check::at_most(
            format!("galerkin.increase[n={}->{}]", w[0].n, w[1].n),
            w[1].mean - w[0].mean,
            tol.galerkin_se * w[1].diff_std_error,
        ));
    }
    out.csv("galerkin.csv", gal_csv);
    Ok(out)
}

pub fn cmd_inverse(cfg: &RunConfig) -> Result<SuiteOutput> {
    let inv = &cfg.inverse;
    let tol = &cfg.tolerances;
    let m = configured_model(cfg)?;
    let ens = FlowEnsemble::from_quadrature(&SphereQuadrature::product(inv.n_colat, inv.n_lon));
    let mut out = SuiteOutput::default();
    let mut csv = String::from("case,dt,residual,residual_reverse_order\n");
    let mut residuals = Vec::new();
    for &dt in &inv.dts {
        let noise = NoiseRealization::new(key(&[cfg.seed, 30]), dt, m.truncation());
        let r = simulate_inverse_flow(&ens, &m, &noise, inv.t0)?;
        writeln!(
            csv,
            "stochastic,{dt},{:.10e},{:.10e}",
            r.residual, r.residual_reverse_order
        )
        .unwrap();
        residuals.push((dt, r.residual));
    }
    for w in residuals.windows(2) {
        out.checks.push(Check::at_least(
            format!("inverse.residual_ratio[dt={}->{}]", w[0].0, w[1].0),
            w[0].1 / w[1].1,
            tol.inverse_ratio,
        ));
    }

    // Zero viscosity with a rigid-rotation drift: the flow is deterministic.
    let drift = match cfg.drift {
        crate::config::DriftConfig::Rotation { axis, omega } => {
            DriftField::rigid_rotation(cfg.spectrum.l_max, axis, omega)
        }
        _ => DriftField::rigid_rotation(cfg.spectrum.l_max, 2, 0.7),
    };
    let mut det_cfg = cfg.clone();
    det_cfg.spectrum.nu = 0.0;
    let m0 = model(&det_cfg, drift)?;
    let dt = inv.deterministic_dt;
    let noise = NoiseRealization::new(key(&[cfg.seed, 31]), dt, m0.truncation());
    let r = simulate_inverse_flow(&ens, &m0, &noise, inv.t0)?;
    writeln!(
        csv,
        "deterministic,{dt},{:.10e},{:.10e}",
        r.residual, r.residual_reverse_order
    )
    .unwrap();
    out.checks.push(Check::at_most(
        "inverse.deterministic_residual",
        r.residual,
        tol.inverse_exact,
    ));
    out.csv("inverse.csv", csv);
    Ok(out)
}

pub fn cmd_distance(cfg: &RunConfig) -> Result<SuiteOutput> {
    let d = &cfg.distance;
    let tol = &cfg.tolerances;
    let process = DistanceProcess::new(configured_model(cfg)?)?;
    let ens = FlowEnsemble::from_quadrature(&SphereQuadrature::product(d.n_colat, d.n_lon));
    let pair =
        |delta: f64| CoupledState::new(ens.clone(), ens.mapped(|p| rotate_about_axis(p, 0, delta)));
    let mut out = SuiteOutput::default();
    let mut csv = String::from(
        "delta,level,dt,steps,replicas,drift_empirical,drift_predicted,drift_z,qv_empirical,qv_predicted,qv_z,qv_excess,qv_excess_se,martingale_z\n",
    );
    let mut studies = Vec::new();
    for (i, &delta) in d.deltas.iter().enumerate() {
        pair(delta)?;
        let make = || pair(delta).expect("validated above");
        let st = distance_study(
            &process,
            make,
            d.replicas,
            d.steps,
            d.dt,
            key(&[cfg.seed, 40, i as u64]),
        )?;
        for (level, r) in [("coarse", &st.coarse), ("fine", &st.fine)] {
            writeln!(
                csv,
                "{delta},{level},{},{},{},{:.10e},{:.10e},{:.4},{:.10e},{:.10e},{:.4},{:.10e},{:.10e},{:.4}",
                r.dt,
                r.steps,
                r.replicas,
                r.drift_empirical,
                r.drift_predicted,
                r.drift_z,
                r.qv_empirical,
                r.qv_predicted,
                r.qv_z,
                r.qv_excess,
                r.qv_excess_se,
                r.martingale_z
            )
            .unwrap();
        }
        let b = st.bounds();
        out.checks.push(Check::at_most(
            format!("distance.drift_z[delta={delta}]"),
            st.max_drift_z(),
            tol.z_max,
        ));
        out.checks.push(Check::at_most(
            format!("distance.qv_extrapolated_z[delta={delta}]"),
            st.qv_extrapolated_z.abs(),
            tol.z_max,
        ));
        out.checks.push(Check::at_most(
            format!("distance.bound_violations[delta={delta}]"),
            b.violations as f64,
            0.0,
        ));
        studies.push((delta, st));
    }
    out.csv("distance_regression.csv", csv);

    // One diagnostic path at the first separation.
    if let Some(&delta) = d.deltas.first() {
        let mut state = pair(delta)?;
        let noise = NoiseRealization::new(key(&[cfg.seed, 41]), d.dt, process.model().truncation());
        let mut path = String::from("t,gamma,sigma_sq,b,qv_bound,c0_bound,coupling\n");
        for step in 0..d.steps {
            let g = process.diagnose_and_step(&mut state, &noise, step)?;
            writeln!(
                path,
                "{:.6},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e},{:.10e}",
                g.t, g.gamma, g.sigma_sq, g.b, g.qv_bound, g.c0_bound, g.coupling
            )
            .unwrap();
        }
        out.csv("distance_path.csv", path);
    }
    #[derive(Serialize)]
    struct Entry<'a> {
        delta: f64,
        c0: f64,
        study: &'a crate::distance::DistanceStudy,
    }
    let entries: Vec<Entry> = studies
        .iter()
        .map(|(delta, st)| Entry {
            delta: *delta,
            c0: process.c0(),
            study: st,
        })
        .collect();
    out.json("distance.json", &entries)?;
    Ok(out)
}

pub fn cmd_rotation(cfg: &RunConfig) -> Result<SuiteOutput> {
    let r = &cfg.rotation;
    let tol = &cfg.tolerances;
    let m = configured_model(cfg)?;
    let oracle = RotationOracle::from_model(&m)?;
    let mut out = SuiteOutput::default();

    // Closed-form rate against the brute spectral sum on fixed separations.
    let x = S2Point::axis(2);
    let mut rate_err: f64 = 0.0;
    for &rho in r.rho0.iter().chain(&cfg.identities.rhos) {
        let y = point_at_distance(&x, &[1.0, 0.3, 0.0], rho);
        let f = geodesic_frame(&x, &y, DEFAULT_EPS_CUT)?;
        rate_err = rate_err.max((oracle.qv_rate(rho) - oracle.qv_rate_bruteforce(&f)).abs());
    }
    out.checks.push(Check::at_most(
        "rotation.qv_rate_closed_form",
        rate_err,
        tol.qv_rate,
    ));

    let mut csv = String::from(
        "rho0,t_start,t_end,replicas,mean_rho,qv_empirical,qv_predicted,qv_z,tangential_mean,xi_mean,xi_se\n",
    );
    let mut reports = Vec::new();
    for (i, &rho0) in r.rho0.iter().enumerate() {
        let rc = RotationConfig {
            rho0,
            replicas: r.replicas,
            steps: r.steps,
            window: r.window,
            dt: r.dt,
            seed: key(&[cfg.seed, 50, i as u64]),
        };
        let rep = simulate_rotation(&m, &rc)?;
        for w in &rep.windows {
            writeln!(
                csv,
                "{rho0},{:.6},{:.6},{},{:.10e},{:.10e},{:.10e},{:.4},{:.10e},{:.10e},{:.10e}",
                w.t_start,
                w.t_end,
                w.replicas,
                w.mean_rho,
                w.qv_empirical,
                w.qv_predicted,
                w.qv_z,
                w.tangential_mean,
                w.xi_mean,
                w.xi_se
            )
            .unwrap();
        }
        out.checks.push(Check::at_most(
            format!("rotation.window_qv_z[rho0={rho0}]"),
            rep.max_abs_qv_z(),
            tol.z_max,
        ));
        out.checks.push(Check::at_most(
            format!("rotation.bracket_violations[rho0={rho0}]"),
            rep.bracket_violations as f64,
            0.0,
        ));
        let tang = rep
            .windows
            .iter()
            .map(|w| w.tangential_mean.abs() / w.xi_se)
            .fold(0.0, f64::max);
        out.checks.push(Check::at_most(
            format!("rotation.tangential_drift[rho0={rho0}]"),
            tang,
            tol.z_max,
        ));
        reports.push(rep);
    }
    out.csv("rotation_windows.csv", csv);

    let mut asym = Vec::new();
    for &alpha in &r.alphas {
        let sp = Spectrum::new(SpectrumConfig::power(
            2,
            r.asymptotic_l_max,
            alpha,
            power_b(cfg),
            cfg.spectrum.nu,
        ))?;
        let a = rough_asymptotics(&Kernel::new(sp), alpha, r.rho_lo, r.rho_hi, r.n_rho);
        out.checks.push(Check::at_most(
            format!("asymptotics.rate_slope[alpha={alpha}]"),
            (a.rate_slope - (alpha - 2.0)).abs(),
            tol.slope,
        ));
        out.checks.push(Check::at_most(
            format!("asymptotics.energy_slope[alpha={alpha}]"),
            (a.energy_slope - alpha).abs(),
            tol.slope,
        ));
        asym.push(a);
    }
    #[derive(Serialize)]
    struct Report<'a> {
        runs: &'a [crate::rotation::RotationReport],
        asymptotics: &'a [crate::rotation::RoughAsymptotics],
    }
    out.json(
        "rotation.json",
        &Report {
            runs: &reports,
            asymptotics: &asym,
        },
    )?;
    Ok(out)
}
