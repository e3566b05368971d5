use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bolus(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bolus"))
        .args(args)
        .current_dir(dir)
        .env_remove("BOLUS_OUT_DIR")
        .output()
        .unwrap()
}

fn scenario(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("examples")
        .join(format!("{name}.toml"))
        .display()
        .to_string()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("scenario.toml");
    fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn empty_config_runs_default_m4_to_exit() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "");
    let out = bolus(&["run", "--config", &cfg, "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let csv = fs::read_to_string(dir.path().join("res/trajectory.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t_s,x_m,v_mps,a_s_g,a_ns_g,a_nd_g,b_int_g,b_abs_g,w_g,e_g,absorbed_cum_g"
    );
    for line in lines {
        assert_eq!(line.split(',').count(), 11);
        assert!(line.split(',').all(|f| f.parse::<f64>().is_ok()), "{line}");
    }
    assert!(!csv.contains('\r'));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("res/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["model"], "M4");
    assert_eq!(summary["exit"], "exited");
    assert_eq!(summary["ledger"]["passed"], true);
}

#[test]
fn no_config_at_all_is_the_default_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let out = bolus(&["run"], dir.path());
    assert!(out.status.success());
    assert!(dir.path().join("out/trajectory.csv").exists());
}

#[test]
fn negative_mass_is_rejected_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[initial]\nrecipe = \"explicit\"\na_ns = \"-3 g\"\nw = \"10 g\"\n",
    );
    let out = bolus(&["run", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("initial.a_ns"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn validate_only_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["figure2_digestion", "figure3_velocity", "table1_starch", "sensitivity_default"] {
        let out = bolus(&["run", "--config", &scenario(name), "--validate-only"], dir.path());
        assert!(out.status.success(), "{name}");
    }
    assert!(fs::read_dir(dir.path()).unwrap().next().is_none());
}

#[test]
fn environment_overrides_configured_output_dir() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[output]\ndir = \"from_config\"\n");
    let out = Command::new(env!("CARGO_BIN_EXE_bolus"))
        .args(["run", "--config", &cfg, "--seedless"])
        .current_dir(dir.path())
        .env("BOLUS_OUT_DIR", dir.path().join("from_env"))
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(dir.path().join("from_env/trajectory.csv").exists());
    assert!(!dir.path().join("from_config").exists());
}

#[test]
fn unit_factor_sensitivity_is_all_zeros() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[sensitivity]\nfactors = [1.0]\nstudy = { a_s = [\"C_abs\"] }\n[integration]\nmax_time = \"1 h\"\n",
    );
    let out = bolus(&["sensitivity", "--config", &cfg, "--out", "s"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cell = fs::read_to_string(dir.path().join("s/sensitivity/C_abs_x1.csv")).unwrap();
    for line in cell.lines().skip(1) {
        for field in line.split(',').skip(1) {
            let v: f64 = field.parse().unwrap();
            assert!(v == 0.0 || v.is_nan(), "{line}");
        }
    }
}

#[test]
fn sensitivity_report_does_not_depend_on_jobs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[sensitivity]\nstudy = { b_abs = [\"C_abs\", \"C_iabs\", \"k_abs\"], v = [\"a\", \"b\"] }\n\
         [integration]\nmax_time = \"2 h\"\n",
    );
    let one = bolus(&["sensitivity", "--config", &cfg, "--out", "j1", "--jobs", "1"], dir.path());
    let four = bolus(&["sensitivity", "--config", &cfg, "--out", "j4", "--jobs", "4"], dir.path());
    assert!(one.status.success() && four.status.success());
    let read = |d: &str| fs::read(dir.path().join(d).join("sensitivity_summary.csv")).unwrap();
    assert_eq!(read("j1"), read("j4"));
    let cells = fs::read_dir(dir.path().join("j1/sensitivity")).unwrap().count();
    assert_eq!(cells, 10);
}

#[test]
fn homogenization_comparison_emits_traces_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = bolus(&["homog-compare", "--config", &scenario("figure3_velocity"), "--out", "h"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traces = fs::read_to_string(dir.path().join("h/velocity_traces.csv")).unwrap();
    assert!(traces.starts_with("t_s,x_m3_m,v_m3_mps,x_m4_m,v_m4_mps\n"));
    let errors = fs::read_to_string(dir.path().join("h/homogenization_errors.csv")).unwrap();
    let sup: Vec<f64> = errors
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    assert_eq!(sup.len(), 3);
    assert!(sup.windows(2).all(|w| w[1] <= w[0]), "{sup:?}");

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("h/homogenization.json")).unwrap()).unwrap();
    let m3 = summary["m3_velocity_swing_mps"].as_f64().unwrap();
    let m4 = summary["m4_velocity_swing_mps"].as_f64().unwrap();
    assert!(m3 > 10.0 * m4, "{m3} vs {m4}");
}

#[test]
fn starch_evaluation_passes_with_shipped_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let out = bolus(&["evaluate-starch", "--config", &scenario("table1_starch"), "--out", "e"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
    let r: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("e/starch_evaluation.json")).unwrap()).unwrap();
    assert_eq!(r["wet_passed"], true);
    assert_eq!(r["dry_passed"], true);
}

#[test]
fn failed_evaluation_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    // default kinetics leave far too much starch at the ileum
    let cfg = write_config(dir.path(), "[secretion]\nmode = \"water_only\"\n");
    let out = bolus(&["evaluate-starch", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
