//! End-to-end sweeps: reproducibility, contours and written outputs.

use std::fs;

use instab_core::replica::PopulationConfig;
use instab_core::spectral::Method;
use instab_core::sweep::config::{Axis, OutputFormat, SweepConfig};
use instab_core::sweep::output::{write_gap_outputs, write_phase_outputs, write_q_sweep_outputs};
use instab_core::sweep::{run_gap_analysis, run_phase_diagram, run_q_sweep, Stability, Verdict};

fn tiny() -> SweepConfig {
    let mut cfg = SweepConfig::default();
    cfg.phi_axis = Axis { min: 0.0, max: 0.95, n: 4 };
    cfg.p_big_axis = Axis { min: 0.1, max: 0.9, n: 3 };
    cfg.q_values = vec![4.0, 8.0, 12.0];
    cfg.sweep_assets = vec![40];
    cfg.model = cfg.model.with_dims(40, 60);
    cfg.scales = vec![1, 2];
    cfg.samples = 4;
    cfg.replica = PopulationConfig {
        pop_size: 1000,
        equilibration_sweeps: 10,
        measurement_sweeps: 30,
        bisection_tol: 2e-2,
        ..PopulationConfig::fast()
    };
    cfg
}

fn read_all(paths: &[std::path::PathBuf], ext: &str) -> Vec<(String, Vec<u8>)> {
    paths
        .iter()
        .filter(|p| p.extension().is_some_and(|e| e == ext))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(p).unwrap()))
        .collect()
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let mut outputs = Vec::new();
    for workers in [1usize, 3] {
        let mut cfg = tiny();
        cfg.workers = workers;
        let dir = tempfile::tempdir().unwrap();
        let mut paths = write_phase_outputs(&run_phase_diagram(&cfg).unwrap(), &cfg, dir.path()).unwrap();
        paths.extend(write_q_sweep_outputs(&run_q_sweep(&cfg).unwrap(), &cfg, dir.path()).unwrap());
        paths.extend(write_gap_outputs(&run_gap_analysis(&cfg, &cfg.scales).unwrap(), &cfg, dir.path()).unwrap());
        let mut files = read_all(&paths, "csv");
        files.extend(read_all(&paths, "svg"));
        outputs.push(files);
    }
    assert!(outputs[0].len() >= 6);
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn seed_changes_results() {
    let mut a = tiny();
    a.methods = vec![Method::Diagonalization];
    let mut b = a.clone();
    b.seed = 2;
    let da = run_phase_diagram(&a).unwrap();
    let db = run_phase_diagram(&b).unwrap();
    assert_ne!(da.cells[0].estimates, db.cells[0].estimates);
}

#[test]
fn contour_separates_stable_from_unstable() {
    // Thin liquidity pushes the heterogeneous corner of the grid past λ = 1.
    let mut cfg = tiny();
    cfg.model.gamma = 6.0;
    cfg.model = cfg.model.with_dims(100, 150);
    cfg.methods = vec![Method::Diagonalization, Method::Corsi];
    cfg.phi_axis = Axis { min: 0.0, max: 0.98, n: 8 };
    cfg.p_big_axis = Axis { min: 0.05, max: 0.95, n: 5 };
    cfg.samples = 8;
    let d = run_phase_diagram(&cfg).unwrap();
    let truth = |i, j| {
        let c = d.cell(i, j);
        Stability::of(c.estimate(Method::Diagonalization).unwrap())
    };
    assert_eq!(truth(0, 0), Stability::Stable);
    let unstable = (0..d.phi.len())
        .flat_map(|i| (0..d.p_big.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| truth(i, j) == Stability::Unstable)
        .count();
    assert!(unstable > 0, "no unstable cell");
    let contour = d.contours.iter().find(|c| c.method == Method::Diagonalization).unwrap();
    assert!(!contour.points.is_empty());
    for pt in &contour.points {
        let j = d.p_big.iter().position(|&x| x == pt.p_big).unwrap();
        // Below the crossing the column is stable, above it unstable.
        for (i, &phi) in d.phi.iter().enumerate() {
            if phi < pt.phi {
                assert_ne!(truth(i, j), Stability::Unstable, "({phi}, {})", pt.p_big);
            }
        }
    }
    let counts = &d.counts.iter().find(|(m, _)| *m == Method::Corsi).unwrap().1;
    assert_eq!(counts.total(), d.cells.len());
    // The closed form underestimates, so any miss is on the dangerous side.
    assert_eq!(counts.false_unstable, 0);
    let fs = d
        .cells
        .iter()
        .filter(|c| c.classification.as_ref().and_then(|k| k.verdict(Method::Corsi)) == Some(Verdict::FalseStable))
        .count();
    assert_eq!(fs, counts.false_stable);
}

#[test]
fn written_files_are_well_formed() {
    let mut cfg = tiny();
    cfg.methods = vec![Method::Diagonalization, Method::Corsi];
    let dir = tempfile::tempdir().unwrap();
    let d = run_phase_diagram(&cfg).unwrap();
    let paths = write_phase_outputs(&d, &cfg, dir.path()).unwrap();
    let csv = fs::read_to_string(dir.path().join("phase_diagram.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert!(header.contains(&"corsi_verdict") && header.contains(&"diagonalization_lambda"));
    for line in lines.clone() {
        assert_eq!(line.split(',').count(), header.len(), "{line}");
    }
    assert_eq!(lines.count(), 12);
    let svg = fs::read_to_string(dir.path().join("heatmap_corsi.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    let manifest: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), paths.len() - 1);
    assert_eq!(manifest["config"]["samples"], 4);

    cfg.format = OutputFormat::Json;
    let paths = write_phase_outputs(&d, &cfg, dir.path()).unwrap();
    let cells: serde_json::Value = serde_json::from_slice(&fs::read(&paths[0]).unwrap()).unwrap();
    assert_eq!(cells.as_array().unwrap().len(), 12);
}

#[test]
fn infeasible_heterogeneity_is_a_failed_cell() {
    let mut cfg = tiny();
    cfg.methods = vec![Method::Corsi];
    cfg.phi_axis = Axis { min: 0.5, max: 0.5, n: 1 };
    cfg.p_big_axis = Axis { min: 1.0, max: 1.0, n: 1 };
    let d = run_phase_diagram(&cfg).unwrap();
    assert_eq!(d.failed_cells(), 1);
    assert!(d.cells[0].estimates.is_empty());
}
