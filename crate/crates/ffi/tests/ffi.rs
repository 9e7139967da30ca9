use isoflow_ffi::*;
use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::ptr;

fn last_error() -> String {
    let p = isoflow_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn kernel(nu: f64) -> *mut IsoflowKernel {
    let mut k = ptr::null_mut();
    assert_eq!(
        unsafe { isoflow_kernel_new_power(2, 8, 3.0, 1.0, nu, &mut k) },
        IsoflowStatus::Ok
    );
    k
}

#[test]
fn kernel_values_at_zero() {
    let k = kernel(0.1);
    let mut c = 0.0;
    assert_eq!(unsafe { isoflow_kernel_c(k, &mut c) }, IsoflowStatus::Ok);
    let (mut g, mut gp, mut g1, mut g2) = (0.0, 1.0, 1.0, 1.0);
    assert_eq!(
        unsafe { isoflow_kernel_eval(k, 0.0, &mut g, &mut gp, &mut g1, &mut g2) },
        IsoflowStatus::Ok
    );
    assert!((g - 2.0 * c).abs() < 1e-12);
    assert_eq!((g1, g2), (0.0, 0.0));
    let (mut phi, mut psi) = (0.0, 0.0);
    assert_eq!(
        unsafe { isoflow_kernel_phi_psi(k, 0.0, &mut phi, &mut psi) },
        IsoflowStatus::Ok
    );
    // At coincident points only φ contributes to the covariance.
    assert!((phi - g).abs() < 1e-12);
    assert!(psi.is_finite());
    unsafe { isoflow_kernel_free(k) };
}

#[test]
fn explicit_kernel_matches_power_law() {
    let coeffs: Vec<f64> = (1..=8)
        .map(|l: i32| {
            if l == 1 {
                0.0
            } else {
                f64::from(l - 1).powi(-4)
            }
        })
        .collect();
    let mut a = ptr::null_mut();
    assert_eq!(
        unsafe { isoflow_kernel_new_explicit(2, coeffs.as_ptr(), coeffs.len(), 0.1, &mut a) },
        IsoflowStatus::Ok
    );
    let b = kernel(0.1);
    let (mut ga, mut gb) = (0.0, 0.0);
    unsafe {
        isoflow_kernel_eval(
            a,
            0.7,
            &mut ga,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        );
        isoflow_kernel_eval(
            b,
            0.7,
            &mut gb,
            ptr::null_mut(),
            ptr::null_mut(),
            ptr::null_mut(),
        );
        isoflow_kernel_free(a);
        isoflow_kernel_free(b);
    }
    assert!((ga - gb).abs() < 1e-14);
}

#[test]
fn errors_carry_status_and_message() {
    let mut k = ptr::null_mut();
    assert_eq!(
        unsafe { isoflow_kernel_new_power(2, 8, 3.0, 1.0, -0.5, &mut k) },
        IsoflowStatus::InvalidConfig
    );
    assert!(k.is_null());
    assert!(last_error().contains("nu"));

    assert_eq!(
        unsafe { isoflow_kernel_new_power(2, 8, 3.0, 1.0, 0.1, ptr::null_mut()) },
        IsoflowStatus::NullPointer
    );
    let k = kernel(0.1);
    let mut v = 0.0;
    assert_eq!(
        unsafe { isoflow_kernel_rotation_rate(k, 0.0, &mut v) },
        IsoflowStatus::InvalidArgument
    );
    assert_eq!(
        unsafe {
            isoflow_kernel_eval(
                k,
                4.0,
                &mut v,
                ptr::null_mut(),
                ptr::null_mut(),
                ptr::null_mut(),
            )
        },
        IsoflowStatus::InvalidArgument
    );
    unsafe { isoflow_kernel_free(k) };
    unsafe { isoflow_kernel_free(ptr::null_mut()) };
}

#[test]
fn rotation_closed_forms() {
    let k = kernel(0.1);
    let (mut e, mut r) = (0.0, 0.0);
    assert_eq!(
        unsafe { isoflow_kernel_jacobi_energy(k, 1e-3, &mut e) },
        IsoflowStatus::Ok
    );
    assert!((e + 0.1).abs() < 1e-4, "{e}");
    assert_eq!(
        unsafe { isoflow_kernel_rotation_rate(k, 0.5, &mut r) },
        IsoflowStatus::Ok
    );
    assert!(r > 0.0);
    unsafe { isoflow_kernel_free(k) };
}

#[test]
fn basis_fields_are_tangent() {
    let mut b = ptr::null_mut();
    assert_eq!(unsafe { isoflow_basis_new(5, &mut b) }, IsoflowStatus::Ok);
    assert_eq!(unsafe { isoflow_basis_mode_count(b) }, 35);
    let x = [0.6, 0.0, 0.8];
    let mut v = [0.0; 3];
    for ell in 1..=5 {
        for k in 1..=2 * ell + 1 {
            assert_eq!(
                unsafe { isoflow_basis_eval(b, ell, k, x.as_ptr(), v.as_mut_ptr()) },
                IsoflowStatus::Ok
            );
            assert!((v[0] * x[0] + v[1] * x[1] + v[2] * x[2]).abs() < 1e-12);
        }
    }
    assert_eq!(
        unsafe { isoflow_basis_eval(b, 6, 1, x.as_ptr(), v.as_mut_ptr()) },
        IsoflowStatus::InvalidArgument
    );
    assert_eq!(
        unsafe { isoflow_basis_eval(b, 2, 6, x.as_ptr(), v.as_mut_ptr()) },
        IsoflowStatus::InvalidArgument
    );
    unsafe { isoflow_basis_free(b) };
}

fn flow(k: *const IsoflowKernel, seed: u64) -> *mut IsoflowFlow {
    let pts = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
    let mut f = ptr::null_mut();
    assert_eq!(
        unsafe { isoflow_flow_new(k, 8, 1e-3, seed, pts.as_ptr(), 3, &mut f) },
        IsoflowStatus::Ok
    );
    f
}

fn positions(f: *const IsoflowFlow) -> Vec<f64> {
    let mut out = vec![0.0; 9];
    assert_eq!(
        unsafe { isoflow_flow_positions(f, out.as_mut_ptr(), out.len()) },
        IsoflowStatus::Ok
    );
    out
}

#[test]
fn flows_are_reproducible_and_stay_on_the_sphere() {
    let k = kernel(0.1);
    let (a, b, c) = (flow(k, 5), flow(k, 5), flow(k, 6));
    for f in [a, b, c] {
        assert_eq!(unsafe { isoflow_flow_step(f, 200) }, IsoflowStatus::Ok);
    }
    assert_eq!(unsafe { isoflow_flow_len(a) }, 3);
    assert!((unsafe { isoflow_flow_time(a) } - 0.2).abs() < 1e-12);
    let (pa, pb, pc) = (positions(a), positions(b), positions(c));
    assert_eq!(pa, pb);
    assert_ne!(pa, pc);
    for p in pa.chunks(3) {
        assert!(((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - 1.0).abs() < 1e-12);
    }
    let mut small = [0.0; 8];
    assert_eq!(
        unsafe { isoflow_flow_positions(a, small.as_mut_ptr(), small.len()) },
        IsoflowStatus::InvalidArgument
    );
    unsafe {
        isoflow_flow_free(a);
        isoflow_flow_free(b);
        isoflow_flow_free(c);
        isoflow_kernel_free(k);
    }
}

#[test]
fn zero_viscosity_flow_does_not_move() {
    let k = kernel(0.0);
    let f = flow(k, 1);
    let before = positions(f);
    assert_eq!(unsafe { isoflow_flow_step(f, 10) }, IsoflowStatus::Ok);
    assert_eq!(positions(f), before);
    unsafe {
        isoflow_flow_free(f);
        isoflow_kernel_free(k);
    }
}

#[test]
fn identity_suite_runs_through_the_abi() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = CString::new(format!("out_dir = {:?}\n", tmp.path().to_str().unwrap())).unwrap();
    let suite = CString::new("identities").unwrap();
    assert_eq!(
        unsafe { isoflow_run_suite(cfg.as_ptr(), suite.as_ptr()) },
        IsoflowStatus::Ok
    );
    assert!(tmp.path().join("identities").join("manifest.json").exists());

    let strict = CString::new(format!(
        "out_dir = {:?}\n[tolerances]\nbasis_closed_form = 1e-30\n",
        tmp.path().to_str().unwrap()
    ))
    .unwrap();
    assert_eq!(
        unsafe { isoflow_run_suite(strict.as_ptr(), suite.as_ptr()) },
        IsoflowStatus::ChecksFailed
    );
    assert!(last_error().contains("basis.inner_sum"));

    let unknown = CString::new("bogus").unwrap();
    assert_eq!(
        unsafe { isoflow_run_suite(cfg.as_ptr(), unknown.as_ptr()) },
        IsoflowStatus::InvalidArgument
    );
    let bad = CString::new(
        "[spectrum]\nd = 2\nl_max = 8\nnu = -1.0\nlaw = { kind = \"power\", alpha = 3.0, b = 1.0 }\n",
    ).unwrap();
    assert_eq!(
        unsafe { isoflow_run_suite(bad.as_ptr(), suite.as_ptr()) },
        IsoflowStatus::InvalidConfig
    );
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("isoflow.h")
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(header()).unwrap();
    for name in [
        "isoflow_last_error_message",
        "isoflow_version",
        "isoflow_kernel_new_power",
        "isoflow_kernel_new_explicit",
        "isoflow_kernel_free",
        "isoflow_kernel_c",
        "isoflow_kernel_eval",
        "isoflow_kernel_phi_psi",
        "isoflow_kernel_rotation_rate",
        "isoflow_kernel_jacobi_energy",
        "isoflow_basis_new",
        "isoflow_basis_free",
        "isoflow_basis_mode_count",
        "isoflow_basis_eval",
        "isoflow_flow_new",
        "isoflow_flow_free",
        "isoflow_flow_step",
        "isoflow_flow_time",
        "isoflow_flow_len",
        "isoflow_flow_positions",
        "isoflow_run_suite",
        "typedef struct IsoflowKernel IsoflowKernel",
        "ISOFLOW_STATUS_CHECKS_FAILED = 7",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}

/// Builds the static library into its own target directory (integration tests
/// only get the rlib, and the workspace build directory is locked while tests
/// run), then compiles and runs the C smoke test against the header.
#[test]
fn c_program_links_and_runs() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let target = manifest.join("../../target/c-abi");
    let status = std::process::Command::new(env!("CARGO"))
        .args([
            "build",
            "--release",
            "--lib",
            "-p",
            "isoflow-ffi",
            "--target-dir",
        ])
        .arg(&target)
        .current_dir(manifest)
        .status()
        .expect("cargo runs");
    assert!(status.success());
    let lib = target.join("release").join("libisoflow_ffi.a");
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let src = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("c")
        .join("smoke.c");
    let status = std::process::Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .expect("C compiler available");
    assert!(status.success());
    let out = std::process::Command::new(&bin).output().unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
