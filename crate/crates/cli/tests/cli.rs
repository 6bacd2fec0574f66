use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn preset(name: &str) -> PathBuf {
    workspace_root().join("presets").join(name)
}

fn rip(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rip"))
        .args(args)
        .output()
        .expect("spawn rip")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path
}

#[test]
fn verify_default_passes() {
    let out = rip(&["verify", "--cells", "100000"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn verify_json_lists_all_checks() {
    let out = rip(&["--json", "verify", "--cells", "100000"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let names: Vec<&str> = v
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        names,
        [
            "kinetic_matching",
            "riccati",
            "potential_matching",
            "closed_loop_equivalence",
            "region_rho",
            "md_definiteness",
            "hessian_vd"
        ]
    );
    assert!(v.as_array().unwrap().iter().all(|r| r["pass"] == true));
}

#[test]
fn perturbed_psi3_fails_kinetic_check() {
    let out = rip(&[
        "--json",
        "verify",
        "--cells",
        "10000",
        "--perturb-psi3",
        "1e-2",
    ]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let kinetic = v
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["name"] == "kinetic_matching")
        .unwrap();
    assert_eq!(kinetic["pass"], false);
    assert!(kinetic["max_abs_residual"].as_f64().unwrap() > 1e-4);
}

#[test]
fn malformed_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[controller]\nk1 = \"oops\"\n");
    let out = rip(&["--config", cfg.to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 2);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("controller.k1"), "{err}");
}

#[test]
fn unknown_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[controller]\nk3 = 1.0\n");
    let out = rip(&["--config", cfg.to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k3"));
}

#[test]
fn invalid_gain_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[controller]\nk2 = -1.0\n");
    let out = rip(&["--config", cfg.to_str().unwrap(), "verify"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn missing_config_file_is_not_a_config_error() {
    let out = rip(&["--config", "/nonexistent/rip.toml", "verify"]);
    assert_ne!(code(&out), 0);
}

#[test]
fn unknown_regressor_variable_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[simulation]\nmode = \"disturbed_nominal\"\n[disturbance]\nf = [\"q3\"]\ntheta = [1.0]\n",
    );
    let out = rip(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn empty_region_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[robot]\np = [2.0, 1.0, 1.0, 2.0, 1.0]\n[controller]\nk1 = 0.6\nkappa = 1.0\nkv = 1.0\n",
    );
    let out = rip(&[
        "--config",
        cfg.to_str().unwrap(),
        "region",
        "--cells",
        "1000",
    ]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn region_synthetic_json() {
    let out = rip(&[
        "--config",
        preset("synthetic.toml").to_str().unwrap(),
        "--json",
        "region",
        "--cells",
        "100000",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let rho = v["rho"].as_f64().unwrap();
    assert!((rho - (2.2f64 / 3.0).sqrt().acos()).abs() < 1e-12);
    assert!((v["rho_scan"].as_f64().unwrap() - rho).abs() < std::f64::consts::FRAC_PI_2 / 1e5);
}

#[test]
fn counterexample_passes() {
    let out = rip(&["--json", "counterexample", "--draws", "3"]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let records = v["records"].as_array().unwrap();
    assert_eq!(records.len(), 4);
    assert!(records.iter().all(|r| r["nonvanishing"] == true));
    assert!((records[0]["residual_at_zero"].as_f64().unwrap() - 10.0).abs() < 1e-12);
}

#[test]
fn counterexample_rejects_nonpositive_constants() {
    let out = rip(&["counterexample", "--k1", "0"]);
    assert_eq!(code(&out), 2);
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|c| c.parse::<f64>().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn nominal_trace_shape_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = rip(&[
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--t-end",
        "0.5",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let (header, rows) = read_csv(&dir.path().join("trace.csv"));
    assert_eq!(
        header,
        ["t", "q1", "q2", "p1", "p2", "u", "d", "d_hat", "H", "Hd", "V_lyap", "ptilde1"]
    );
    assert_eq!(rows.len(), 501);
    assert!(rows.iter().all(|r| r.len() == header.len()));
    assert_eq!(rows[0][0], 0.0);
    assert!((rows[500][0] - 0.5).abs() < 1e-12);
    // nominal mode: no disturbance and no estimate
    assert!(rows.iter().all(|r| r[6] == 0.0 && r[7] == 0.0));
}

#[test]
fn robust_trace_has_estimate_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = rip(&[
        "--config",
        preset("fig4.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--t-end",
        "0.2",
    ]);
    assert_eq!(code(&out), 0);
    let (header, rows) = read_csv(&dir.path().join("trace.csv"));
    assert_eq!(
        &header[header.len() - 3..],
        ["theta_hat_1", "theta_hat_2", "theta_hat_3"]
    );
    assert!(rows.iter().all(|r| r.len() == header.len()));
}

#[test]
fn reruns_are_byte_identical() {
    for name in ["default.toml", "fig3.toml", "fig4.toml"] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let out = rip(&[
                "--config",
                preset(name).to_str().unwrap(),
                "--out",
                d.path().to_str().unwrap(),
                "simulate",
                "--t-end",
                "1.0",
            ]);
            assert_eq!(code(&out), 0);
        }
        let x = fs::read(a.path().join("trace.csv")).unwrap();
        let y = fs::read(b.path().join("trace.csv")).unwrap();
        assert!(x == y, "{name}");
    }
}

#[test]
fn plots_are_written_on_request() {
    let dir = tempfile::tempdir().unwrap();
    let out = rip(&[
        "--config",
        preset("fig3.toml").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--t-end",
        "0.2",
    ]);
    assert_eq!(code(&out), 0);
    for f in [
        "disturbed_nominal_q.svg",
        "disturbed_nominal_u.svg",
        "disturbed_nominal_d.svg",
    ] {
        let svg = fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
}

#[test]
fn start_outside_region_is_region_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[robot]\np = [2.0, 1.0, 1.0, 2.0, 1.0]\n[controller]\nkappa = 1.0\nkv = 1.0\n[simulation]\nq0 = [0.0, 0.7]\nt_end = 1.0\n",
    );
    let out = rip(&[
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--json",
        "simulate",
    ]);
    assert_eq!(code(&out), 1);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["status"], "region_exit");
    assert!(dir.path().join("trace.csv").exists());
}

#[test]
fn simulate_json_summary_fields() {
    let dir = tempfile::tempdir().unwrap();
    let out = rip(&[
        "--out",
        dir.path().to_str().unwrap(),
        "--json",
        "simulate",
        "--t-end",
        "1",
    ]);
    assert_eq!(code(&out), 0);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["mode"], "nominal");
    assert_eq!(v["status"], "completed");
    assert_eq!(v["steps"], 1000);
}

#[test]
fn mode_override_requires_disturbance() {
    let dir = tempfile::tempdir().unwrap();
    let out = rip(&[
        "--out",
        dir.path().to_str().unwrap(),
        "simulate",
        "--mode",
        "disturbed-robust",
    ]);
    assert_eq!(code(&out), 2);
}
