use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use neumann_mc::config::ExperimentConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_neumann-mc"))
}

fn example(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/examples")
        .join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_with(sub: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut cmd = bin();
    cmd.arg(sub)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra);
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Copy of an example with fewer paths, written to `dir`.
fn small_copy(dir: &Path, name: &str, paths: usize) -> PathBuf {
    let text = std::fs::read_to_string(example(name)).unwrap();
    let text = regex_free_replace_paths(&text, paths);
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn regex_free_replace_paths(text: &str, paths: usize) -> String {
    text.lines()
        .map(|l| {
            if l.starts_with("paths = ") {
                format!("paths = {paths}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn validate_passes_on_unit_ball() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("validate", &example("unit_ball.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS ellipticity"));
    assert!(dir.path().join("summary.json").exists());
}

#[test]
fn degenerate_sigma_fails_ellipticity() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        "validate",
        &example("degenerate_sigma.toml"),
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL ellipticity"));
}

#[test]
fn wrong_drift_jacobian_fails_derivative_check() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        "validate",
        &example("wrong_drift_jacobian.toml"),
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL derivatives"));
    let o = run_with(
        "validate",
        &example("expression_drift.toml"),
        dir.path(),
        &[],
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn minimal_compare_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with(
        "compare",
        &example("minimal.toml"),
        dir.path(),
        &["--workers", "2"],
    );
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    for f in [
        "estimate.json",
        "estimate.csv",
        "comparison.csv",
        "summary.json",
        "metadata.json",
    ] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("comparison.csv")).unwrap();
    assert!(csv.starts_with("# schema=1\n"));
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("estimate.json")).unwrap()).unwrap();
    let rec = &json[0];
    for key in [
        "x",
        "t",
        "scheme",
        "dt",
        "paths",
        "seed",
        "u_hat",
        "u_se",
        "v_hat",
        "v_se",
        "diagnostics",
    ] {
        assert!(rec.get(key).is_some(), "{key} missing");
    }
    assert!(rec.get("n").is_none());
}

#[test]
fn outside_point_exits_with_precondition_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("estimate", &example("outside_point.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("[1.3]"), "{}", stderr(&o));
}

#[test]
fn zero_paths_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_with("estimate", &example("zero_paths.toml"), dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unreadable_config_and_bad_flags_exit_2() {
    let o = run(&["estimate", "--config", "/nonexistent/config.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["estimate", "--config", "x.toml", "--format", "xml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(example("minimal.toml")).unwrap() + "\n[extra]\nfoo = 1\n";
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let o = run_with("estimate", &path, dir.path(), &[]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let cfg = small_copy(dir.path(), "minimal.toml", 100);
    let o = run_with("estimate", &cfg, &blocker.join("sub"), &[]);
    assert_eq!(o.status.code(), Some(5), "{}", stderr(&o));
}

#[test]
fn worker_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_copy(dir.path(), "penalized_paths.toml", 500);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run_with("compare", &cfg, &a, &["--workers", "1"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run_with("compare", &cfg, &b, &["--workers", "4"])
            .status
            .code(),
        Some(0)
    );
    let mut compared = 0;
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "metadata.json" {
            continue;
        }
        let x = std::fs::read(a.join(&name)).unwrap();
        let y = std::fs::read(b.join(&name)).unwrap();
        assert_eq!(x, y, "{name:?} differs");
        compared += 1;
    }
    assert!(compared >= 8);
    let meta_a = std::fs::read_to_string(a.join("metadata.json")).unwrap();
    assert!(meta_a.contains("\"workers\": 1"));
}

#[test]
fn seed_override_and_format_flag() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_copy(dir.path(), "minimal.toml", 200);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run_with("estimate", &cfg, &a, &["--format", "json"])
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        run_with("estimate", &cfg, &b, &["--seed", "5", "--format", "csv"])
            .status
            .code(),
        Some(0)
    );
    assert!(a.join("estimate.json").exists());
    assert!(!a.join("estimate.csv").exists());
    assert!(b.join("estimate.csv").exists());
    assert!(!b.join("estimate.json").exists());
    let csv = std::fs::read_to_string(b.join("estimate.csv")).unwrap();
    assert!(csv.lines().nth(2).unwrap().contains(",5,"));
}

#[test]
fn json_config_is_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let toml_path = small_copy(dir.path(), "minimal.toml", 200);
    let cfg = ExperimentConfig::load(&toml_path).unwrap();
    let json_path = dir.path().join("minimal.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert_eq!(
        run_with("estimate", &toml_path, &a, &[]).status.code(),
        Some(0)
    );
    assert_eq!(
        run_with("estimate", &json_path, &b, &[]).status.code(),
        Some(0)
    );
    assert_eq!(
        std::fs::read(a.join("estimate.json")).unwrap(),
        std::fs::read(b.join("estimate.json")).unwrap()
    );
}

#[test]
fn path_dumps_have_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_copy(dir.path(), "penalized_paths.toml", 50);
    assert_eq!(
        run_with("estimate", &cfg, dir.path(), &[]).status.code(),
        Some(0)
    );
    let pen = std::fs::read_to_string(dir.path().join("path_penalized.csv")).unwrap();
    assert_eq!(
        pen.lines().nth(1).unwrap(),
        "step,t,X_1,X_2,J_11,J_12,J_21,J_22,T_n"
    );
    // 0.3 / 5e-4 = 600 steps plus the initial state.
    assert_eq!(pen.lines().count(), 2 + 601);
    let refl = std::fs::read_to_string(dir.path().join("path_reflected.csv")).unwrap();
    assert_eq!(
        refl.lines().nth(1).unwrap(),
        "step,t,X_1,X_2,J_11,J_12,J_21,J_22,L,contact"
    );
    let exc = std::fs::read_to_string(dir.path().join("path_reflected_excursions.csv")).unwrap();
    assert!(exc
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("path,start_t,end_t,duration,start_point_1"));
}

#[test]
fn convergence_dt_sweep_and_excursions_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut text = std::fs::read_to_string(small_copy(dir.path(), "minimal.toml", 500)).unwrap();
    text.push_str(
        "\n[convergence]\nparameter = \"dt\"\nvalues = [1e-2, 1e-3]\nquantity = \"local_time\"\n",
    );
    text.push_str("\n[excursions]\npaths = 20\nepsilon = 0.01\n");
    let cfg = dir.path().join("sweep.toml");
    std::fs::write(&cfg, text).unwrap();
    let o = run_with("convergence", &cfg, &dir.path().join("c"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("c/convergence.json")).unwrap())
            .unwrap();
    assert_eq!(rows.as_array().unwrap().len(), 2);
    let o = run_with("excursions", &cfg, &dir.path().join("e"), &[]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(stdout(&o).contains("PASS mof:excursion"));
}
