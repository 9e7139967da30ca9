//! C ABI over `isoflow`.
//!
//! Objects are opaque handles created by `isoflow_*_new` and released by the
//! matching `isoflow_*_free`. Every fallible call returns an [`IsoflowStatus`];
//! on failure a message is kept per thread and read with
//! [`isoflow_last_error_message`]. Panics are caught at the boundary.

use isoflow::basis::{BasisRegistry, EigenfieldIndex};
use isoflow::config::RunConfig;
use isoflow::flow::{DriftField, FlowEnsemble, FlowModel, NoiseRealization};
use isoflow::geometry::S2Point;
use isoflow::harness::{execute, Suite};
use isoflow::kernels::{CoefficientLaw, Kernel, Spectrum, SpectrumConfig};
use isoflow::rotation::{jacobi_energy_value, rotation_qv_rate};
use isoflow::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IsoflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidConfig = 3,
    /// Degenerate geometry: coincident or antipodal points, cut locus.
    Degenerate = 4,
    /// A step left the integrator's trust region.
    StepTooLarge = 5,
    Io = 6,
    /// A check of a harness suite failed; the artifacts were still written.
    ChecksFailed = 7,
    Panic = 8,
}

/// Kernel functions of one isotropic spectrum.
pub struct IsoflowKernel {
    kernel: Kernel,
}

/// Divergence-free eigenfields up to a degree cutoff.
pub struct IsoflowBasis {
    registry: BasisRegistry,
}

/// A particle ensemble moved by one noise realization.
pub struct IsoflowFlow {
    model: FlowModel,
    ensemble: FlowEnsemble,
    noise: NoiseRealization,
    step: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> IsoflowStatus {
    match e {
        Error::InvalidConfig(_) | Error::Parse(_) => IsoflowStatus::InvalidConfig,
        Error::DegenerateGeodesic { .. }
        | Error::DegenerateDistance(_)
        | Error::StoppedAtCutLocus { .. } => IsoflowStatus::Degenerate,
        Error::StepTooLarge { .. } => IsoflowStatus::StepTooLarge,
        Error::Io(_) | Error::Json(_) => IsoflowStatus::Io,
        Error::InvalidPoint(_)
        | Error::NonTangent { .. }
        | Error::Unsupported(_)
        | Error::Calibration(_) => IsoflowStatus::InvalidArgument,
    }
}

fn fail(status: IsoflowStatus, msg: impl Into<String>) -> IsoflowStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into a status.
fn guard<F: FnOnce() -> Result<(), IsoflowStatus>>(f: F) -> IsoflowStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IsoflowStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(IsoflowStatus::Panic, "panic inside isoflow"),
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, IsoflowStatus>;
}

impl<T> OrStatus<T> for isoflow::Result<T> {
    fn or_status(self) -> Result<T, IsoflowStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), IsoflowStatus> {
    if p.is_null() {
        Err(fail(IsoflowStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn isoflow_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn isoflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

fn new_kernel(config: SpectrumConfig, out: *mut *mut IsoflowKernel) -> IsoflowStatus {
    guard(|| {
        non_null(out, "out")?;
        let kernel = Kernel::new(Spectrum::new(config).or_status()?);
        unsafe { *out = Box::into_raw(Box::new(IsoflowKernel { kernel })) };
        Ok(())
    })
}

/// Power law `b_ℓ = b / (ℓ-1)^{1+alpha}` for `ℓ >= 2`, `b_1 = 0`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_new_power(
    d: usize,
    l_max: usize,
    alpha: f64,
    b: f64,
    nu: f64,
    out: *mut *mut IsoflowKernel,
) -> IsoflowStatus {
    new_kernel(SpectrumConfig::power(d, l_max, alpha, b, nu), out)
}

/// Explicit coefficients `b_1..b_{n}`.
///
/// # Safety
/// `coeffs` must point to `n` doubles; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_new_explicit(
    d: usize,
    coeffs: *const f64,
    n: usize,
    nu: f64,
    out: *mut *mut IsoflowKernel,
) -> IsoflowStatus {
    if coeffs.is_null() {
        return fail(IsoflowStatus::NullPointer, "coeffs is null");
    }
    let values = unsafe { std::slice::from_raw_parts(coeffs, n) }.to_vec();
    new_kernel(
        SpectrumConfig {
            d,
            l_max: n,
            law: CoefficientLaw::Explicit { values },
            nu,
        },
        out,
    )
}

/// # Safety
/// `kernel` must come from `isoflow_kernel_new_*` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_free(kernel: *mut IsoflowKernel) {
    if !kernel.is_null() {
        drop(unsafe { Box::from_raw(kernel) });
    }
}

/// `c = Σ b_ℓ / 2`.
///
/// # Safety
/// `kernel` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_c(
    kernel: *const IsoflowKernel,
    out: *mut f64,
) -> IsoflowStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(out, "out")?;
        unsafe { *out = (*kernel).kernel.c() };
        Ok(())
    })
}

/// `G`, `G'`, `G1`, `G2` at angle `theta`. Any output pointer may be null.
///
/// # Safety
/// `kernel` must be a live handle; non-null outputs valid for a write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_eval(
    kernel: *const IsoflowKernel,
    theta: f64,
    g: *mut f64,
    g_prime: *mut f64,
    g1: *mut f64,
    g2: *mut f64,
) -> IsoflowStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        if !(theta.is_finite() && (0.0..=std::f64::consts::PI).contains(&theta)) {
            return Err(fail(
                IsoflowStatus::InvalidArgument,
                format!("theta = {theta} outside [0, pi]"),
            ));
        }
        let k = unsafe { &(*kernel).kernel };
        let p = k.g_pair(theta);
        let vals = [p.g, p.g_prime, k.g1_from(theta, p), k.g2(theta)];
        for (ptr, v) in [g, g_prime, g1, g2].into_iter().zip(vals) {
            if !ptr.is_null() {
                unsafe { *ptr = v };
            }
        }
        Ok(())
    })
}

/// Longitudinal and transverse covariance functions at `theta`.
///
/// # Safety
/// `kernel` must be a live handle; outputs valid for a write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_phi_psi(
    kernel: *const IsoflowKernel,
    theta: f64,
    phi: *mut f64,
    psi: *mut f64,
) -> IsoflowStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(phi, "phi")?;
        non_null(psi, "psi")?;
        let (a, b) = unsafe { (*kernel).kernel.phi_psi(theta) };
        unsafe {
            *phi = a;
            *psi = b;
        }
        Ok(())
    })
}

fn rho_in_range(rho: f64) -> Result<(), IsoflowStatus> {
    if rho.is_finite() && rho > 0.0 && rho < std::f64::consts::PI {
        Ok(())
    } else {
        Err(fail(
            IsoflowStatus::InvalidArgument,
            format!("rho = {rho} outside (0, pi)"),
        ))
    }
}

/// Quadratic-variation rate of the rotation process at separation `rho`.
///
/// # Safety
/// `kernel` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_rotation_rate(
    kernel: *const IsoflowKernel,
    rho: f64,
    out: *mut f64,
) -> IsoflowStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(out, "out")?;
        rho_in_range(rho)?;
        unsafe { *out = rotation_qv_rate(&(*kernel).kernel, rho) };
        Ok(())
    })
}

/// Closed-form Jacobi-field energy at separation `rho`; tends to `-nu` as
/// `rho -> 0` for smooth spectra.
///
/// # Safety
/// `kernel` must be a live handle; `out` valid for a write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_kernel_jacobi_energy(
    kernel: *const IsoflowKernel,
    rho: f64,
    out: *mut f64,
) -> IsoflowStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(out, "out")?;
        rho_in_range(rho)?;
        unsafe { *out = jacobi_energy_value(&(*kernel).kernel, rho) };
        Ok(())
    })
}

/// Eigenfields of degrees `1..=l_max` on `S^2`.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_basis_new(
    l_max: usize,
    out: *mut *mut IsoflowBasis,
) -> IsoflowStatus {
    guard(|| {
        non_null(out, "out")?;
        let registry = BasisRegistry::new(l_max).or_status()?;
        unsafe { *out = Box::into_raw(Box::new(IsoflowBasis { registry })) };
        Ok(())
    })
}

/// # Safety
/// `basis` must come from `isoflow_basis_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn isoflow_basis_free(basis: *mut IsoflowBasis) {
    if !basis.is_null() {
        drop(unsafe { Box::from_raw(basis) });
    }
}

/// Number of eigenfields, `Σ_{ℓ <= l_max} (2ℓ+1)`; zero for a null handle.
///
/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn isoflow_basis_mode_count(basis: *const IsoflowBasis) -> usize {
    if basis.is_null() {
        0
    } else {
        unsafe { (*basis).registry.mode_count() }
    }
}

/// Eigenfield `A_{ell,k}` (`1 <= k <= 2 ell + 1`) at the unit vector `x`,
/// written to `out[0..3]`.
///
/// # Safety
/// `basis` must be a live handle; `x` readable and `out` writable for 3 doubles.
#[no_mangle]
pub unsafe extern "C" fn isoflow_basis_eval(
    basis: *const IsoflowBasis,
    ell: usize,
    k: usize,
    x: *const f64,
    out: *mut f64,
) -> IsoflowStatus {
    guard(|| {
        non_null(basis, "basis")?;
        non_null(x, "x")?;
        non_null(out, "out")?;
        let reg = unsafe { &(*basis).registry };
        if ell == 0 || ell > reg.l_max() {
            return Err(fail(
                IsoflowStatus::InvalidArgument,
                format!("degree {ell} outside 1..={}", reg.l_max()),
            ));
        }
        let idx = EigenfieldIndex::new(ell, k).or_status()?;
        let xs = unsafe { std::slice::from_raw_parts(x, 3) };
        let p = S2Point::new([xs[0], xs[1], xs[2]]).or_status()?;
        let v = reg.eval_eigenfield(idx, &p).or_status()?;
        unsafe { std::slice::from_raw_parts_mut(out, 3) }.copy_from_slice(v.vec());
        Ok(())
    })
}

/// Flow of `n_points` particles (`points` holds `3 n_points` coordinates, each
/// triple normalized on entry) driven by the kernel's spectrum truncated at
/// `truncation`, zero drift, step `dt`, and noise keyed by `seed`.
///
/// # Safety
/// `kernel` must be a live handle, `points` readable for `3 n_points` doubles,
/// `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn isoflow_flow_new(
    kernel: *const IsoflowKernel,
    truncation: usize,
    dt: f64,
    seed: u64,
    points: *const f64,
    n_points: usize,
    out: *mut *mut IsoflowFlow,
) -> IsoflowStatus {
    guard(|| {
        non_null(kernel, "kernel")?;
        non_null(points, "points")?;
        non_null(out, "out")?;
        if !(dt.is_finite() && dt > 0.0) {
            return Err(fail(
                IsoflowStatus::InvalidArgument,
                format!("dt = {dt} must be > 0"),
            ));
        }
        if n_points == 0 {
            return Err(fail(IsoflowStatus::InvalidArgument, "no points"));
        }
        let spectrum = unsafe { (*kernel).kernel.spectrum().clone() };
        let model =
            FlowModel::new(spectrum, truncation, DriftField::zero(truncation)).or_status()?;
        let raw = unsafe { std::slice::from_raw_parts(points, 3 * n_points) };
        let pts = raw
            .chunks_exact(3)
            .map(|c| S2Point::new([c[0], c[1], c[2]]).map(|p| *p.coords()))
            .collect::<isoflow::Result<Vec<_>>>()
            .or_status()?;
        let ensemble = FlowEnsemble {
            initial: pts.clone(),
            points: pts,
            weights: vec![1.0 / n_points as f64; n_points],
            t: 0.0,
        };
        let noise = NoiseRealization::new(seed, dt, truncation);
        let flow = IsoflowFlow {
            model,
            ensemble,
            noise,
            step: 0,
        };
        unsafe { *out = Box::into_raw(Box::new(flow)) };
        Ok(())
    })
}

/// # Safety
/// `flow` must come from `isoflow_flow_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn isoflow_flow_free(flow: *mut IsoflowFlow) {
    if !flow.is_null() {
        drop(unsafe { Box::from_raw(flow) });
    }
}

/// Advances every particle by `n_steps` steps. On error the particles stay
/// at the last completed step.
///
/// # Safety
/// `flow` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn isoflow_flow_step(
    flow: *mut IsoflowFlow,
    n_steps: usize,
) -> IsoflowStatus {
    guard(|| {
        non_null(flow, "flow")?;
        let f = unsafe { &mut *flow };
        for _ in 0..n_steps {
            let mut next = f.ensemble.clone();
            next.step(&f.model, &f.noise, f.step, f.noise.dt)
                .or_status()?;
            f.ensemble = next;
            f.step += 1;
        }
        Ok(())
    })
}

/// Current time; NaN for a null handle.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn isoflow_flow_time(flow: *const IsoflowFlow) -> f64 {
    if flow.is_null() {
        f64::NAN
    } else {
        unsafe { (*flow).ensemble.t }
    }
}

/// Number of particles; zero for a null handle.
///
/// # Safety
/// `flow` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn isoflow_flow_len(flow: *const IsoflowFlow) -> usize {
    if flow.is_null() {
        0
    } else {
        unsafe { (*flow).ensemble.len() }
    }
}

/// Copies the current positions into `out`, which holds `len` doubles; `len`
/// must be at least `3 * isoflow_flow_len(flow)`.
///
/// # Safety
/// `flow` must be a live handle and `out` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn isoflow_flow_positions(
    flow: *const IsoflowFlow,
    out: *mut f64,
    len: usize,
) -> IsoflowStatus {
    guard(|| {
        non_null(flow, "flow")?;
        non_null(out, "out")?;
        let pts = unsafe { &(*flow).ensemble.points };
        if len < 3 * pts.len() {
            return Err(fail(
                IsoflowStatus::InvalidArgument,
                format!("buffer holds {len} doubles, {} needed", 3 * pts.len()),
            ));
        }
        let dst = unsafe { std::slice::from_raw_parts_mut(out, 3 * pts.len()) };
        for (chunk, p) in dst.chunks_exact_mut(3).zip(pts) {
            chunk.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Runs one harness suite (`"kernels"`, `"identities"`, `"simulate"`,
/// `"inverse"`, `"distance"`, `"rotation"`) with a TOML configuration, writing
/// artifacts and a manifest under the configured output directory. Returns
/// `ChecksFailed` when a check fails.
///
/// # Safety
/// `config_toml` and `suite` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn isoflow_run_suite(
    config_toml: *const c_char,
    suite: *const c_char,
) -> IsoflowStatus {
    guard(|| {
        non_null(config_toml, "config_toml")?;
        non_null(suite, "suite")?;
        let text = unsafe { CStr::from_ptr(config_toml) }
            .to_str()
            .map_err(|e| fail(IsoflowStatus::InvalidArgument, e.to_string()))?;
        let name = unsafe { CStr::from_ptr(suite) }
            .to_str()
            .map_err(|e| fail(IsoflowStatus::InvalidArgument, e.to_string()))?;
        let suite = Suite::ALL
            .into_iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| {
                fail(
                    IsoflowStatus::InvalidArgument,
                    format!("unknown suite {name:?}"),
                )
            })?;
        let cfg = RunConfig::from_toml_str(text).or_status()?;
        let manifest = execute(suite, &cfg, true).or_status()?;
        if manifest.passed {
            Ok(())
        } else {
            let failed: Vec<&str> = manifest
                .checks
                .iter()
                .filter(|c| !c.passed)
                .map(|c| c.name.as_str())
                .collect();
            Err(fail(
                IsoflowStatus::ChecksFailed,
                format!("failed checks: {}", failed.join(", ")),
            ))
        }
    })
}
