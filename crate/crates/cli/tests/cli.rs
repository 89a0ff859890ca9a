use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn instab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_instab"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

const SMALL: &str = "
model.N = 40
model.M = 60
grid.phi = { min = 0.0, max = 0.9, n = 3 }
grid.p_B = { min = 0.2, max = 0.8, n = 2 }
grid.q.values = [4, 8, 12]
qsweep.N = [40]
gap.scales = [1]
run.samples = 3
run.methods = \"diagonalization,corsi\"
simulate.steps = 20
simulate.paths = 20
";

fn setup(extra: &str) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), format!("{SMALL}{extra}")).unwrap();
    dir
}

#[test]
fn validate_config_prints_resolved_settings() {
    let dir = setup("");
    let out = instab(&["validate-config", "--config", "run.toml", "--seed", "9"], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["seed"], 9);
    assert_eq!(v["model"]["n_assets"], 40);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = setup("model.bogus = 1\n");
    assert_eq!(instab(&["validate-config", "--config", "run.toml"], dir.path()).status.code(), Some(1));
    let dir = setup("");
    assert_eq!(
        instab(&["phase-diagram", "--config", "run.toml", "--methods", "eigen"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(instab(&["gap", "--config", "missing.toml"], dir.path()).status.code(), Some(1));
    assert_eq!(instab(&["gap", "--format", "xml"], dir.path()).status.code(), Some(1));
}

#[test]
fn phase_diagram_writes_outputs() {
    let dir = setup("");
    let out = instab(&["phase-diagram", "--config", "run.toml", "--out-dir", "pd"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["phase_diagram.csv", "contours.csv", "heatmap_corsi.svg", "manifest.json"] {
        assert!(dir.path().join("pd").join(f).exists(), "{f}");
    }
}

#[test]
fn failed_cells_exit_with_two_and_still_write() {
    // p_B = 1 with φ > 0 has no solution.
    let dir = tempfile::tempdir().unwrap();
    let text = SMALL.replace("min = 0.2, max = 0.8", "min = 0.5, max = 1.0");
    fs::write(dir.path().join("run.toml"), text).unwrap();
    let out = instab(&["phase-diagram", "--config", "run.toml", "--out-dir", "pd", "--format", "json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let cells: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("pd/phase_diagram.json")).unwrap()).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), 6);
}

#[test]
fn q_sweep_and_gap_run() {
    let dir = setup("");
    let out = instab(&["q-sweep", "--config", "run.toml", "--out-dir", "qs"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("qs/q_sweep_curves.csv").exists());
    let out = instab(&["gap", "--config", "run.toml", "--out-dir", "gap", "--samples", "2"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("gap/gap.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn simulate_dumps_matrices_and_trace() {
    let dir = setup("");
    let out = instab(&["simulate", "--config", "run.toml", "--out-dir", "sim"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let x = fs::read_to_string(dir.path().join("sim/X.triplets")).unwrap();
    assert!(x.contains("# dims 40 60"));
    let trace = fs::read_to_string(dir.path().join("sim/path_trace.csv")).unwrap();
    assert_eq!(trace.lines().next(), Some("t,asset,e,running_var"));
    assert_eq!(trace.lines().count(), 21);
    let s: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("sim/simulate.json")).unwrap()).unwrap();
    assert!(s["lambda_max"].as_f64().unwrap() > 0.0);
    assert!(s["linearization_recapitalized"]["max_deviation"].as_f64().unwrap() < 1e-10);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = setup("");
    for (name, workers) in [("a", "1"), ("b", "2")] {
        let out = instab(&["phase-diagram", "--config", "run.toml", "--out-dir", name, "--workers", workers], dir.path());
        assert_eq!(out.status.code(), Some(0));
    }
    for f in ["phase_diagram.csv", "contours.csv", "heatmap_diagonalization.svg"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}
