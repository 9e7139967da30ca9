use isoflow::config::RunConfig;
use isoflow::harness::RunManifest;
use std::path::Path;
use std::process::{Command, Output};

fn isoflow(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_isoflow"));
    cmd.args(args);
    match threads {
        Some(n) => cmd.env("ISOFLOW_THREADS", n),
        None => cmd.env_remove("ISOFLOW_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn manifest(dir: &Path, suite: &str) -> RunManifest {
    let s = std::fs::read_to_string(dir.join(suite).join("manifest.json")).unwrap();
    serde_json::from_str(&s).unwrap()
}

/// A small stochastic configuration that finishes in a few seconds.
const SMALL: &str = r#"
seed = 11

[integrator]
dt = 0.01
t_end = 0.1

[simulate]
n_colat = 4
n_lon = 8
save_every = 5
generator_samples = 4000
galerkin_truncations = [2, 4]
galerkin_reference = 8
galerkin_replicas = 3
galerkin_n_colat = 2
galerkin_n_lon = 4
"#;

#[test]
fn negative_viscosity_is_a_schema_error_with_no_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(
        tmp.path(),
        "[spectrum]\nd = 2\nl_max = 8\nnu = -0.1\nlaw = { kind = \"power\", alpha = 3.0, b = 1.0 }\n",
    );
    let o = isoflow(
        &[
            "identities",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("nu"));
    assert!(!out.exists());
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = write_config(tmp.path(), "[integrator]\nstep = 0.1\n");
    let o = isoflow(
        &["inverse", "--config", &cfg, "--out", out.to_str().unwrap()],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn identity_suite_passes_at_default_tolerances() {
    let tmp = tempfile::tempdir().unwrap();
    let o = isoflow(&["identities", "--out", tmp.path().to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let m = manifest(tmp.path(), "identities");
    assert!(m.passed && m.checks_enabled);
    assert!(m.checks.len() >= 15);
    assert!(m.checks.iter().all(|c| c.passed));
    assert_eq!(
        m.config_hash,
        isoflow::harness::config_hash(&RunConfig::default())
    );
    let names: Vec<String> = std::fs::read_dir(tmp.path().join("identities"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    assert!(names.iter().all(|n| !n.contains(".tmp")), "{names:?}");
    for a in &m.artifacts {
        assert!(names.contains(&a.name));
    }
}

#[test]
fn reruns_reproduce_manifests_except_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let run = |dir: &str, threads: &str| {
        let out = tmp.path().join(dir);
        let o = isoflow(
            &["simulate", "--config", &cfg, "--out", out.to_str().unwrap()],
            Some(threads),
        );
        assert!(o.status.code().is_some());
        let mut m = manifest(&out, "simulate");
        m.started = 0.0;
        m.finished = 0.0;
        (out, m)
    };
    let (a_dir, a) = run("a", "1");
    let (b_dir, b) = run("b", "3");
    assert_eq!(a, b);
    for art in &a.artifacts {
        let x = std::fs::read(a_dir.join("simulate").join(&art.name)).unwrap();
        let y = std::fs::read(b_dir.join("simulate").join(&art.name)).unwrap();
        assert_eq!(x, y, "{}", art.name);
    }
}

#[test]
fn seed_flag_overrides_the_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    let o = isoflow(
        &[
            "inverse",
            "--config",
            &cfg,
            "--seed",
            "99",
            "--out",
            out.to_str().unwrap(),
        ],
        None,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(manifest(&out, "inverse").seed, 99);
}

#[test]
fn failed_checks_set_the_exit_code_unless_disabled() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[tolerances]\nbasis_closed_form = 1e-30\n");
    let out = tmp.path().join("out");
    let args = [
        "identities",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
    ];
    let o = isoflow(&args, None);
    assert_eq!(o.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&o.stderr);
    let report: serde_json::Value = serde_json::from_str(stderr.lines().last().unwrap()).unwrap();
    assert_eq!(report["suite"], "identities");
    assert!(report["failed"]
        .as_array()
        .unwrap()
        .iter()
        .any(|c| c["name"] == "basis.inner_sum"));
    let m = manifest(&out, "identities");
    assert!(!m.passed);

    let mut relaxed = args.to_vec();
    relaxed.push("--no-check");
    let o = isoflow(&relaxed, None);
    assert_eq!(o.status.code(), Some(0));
    assert!(!manifest(&out, "identities").checks_enabled);
}

#[test]
fn show_config_round_trips() {
    let o = isoflow(&["show-config"], None);
    assert!(o.status.success());
    let c = RunConfig::from_toml_str(&String::from_utf8(o.stdout).unwrap()).unwrap();
    assert_eq!(c, RunConfig::default());
}
