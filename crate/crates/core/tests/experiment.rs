use std::path::Path;

use nalgebra::DVector;
use romfsm::container::sha256_hex;
use romfsm::experiment::{compute_rmse, run_pipeline, ExperimentConfig, Method, Stage};
use romfsm::pod::build_pod;
use romfsm::snapshots::SnapshotSet;
use tempfile::TempDir;

const SMALL: &str = r#"
problem = "burgers1d"
seed = 4

[fom]
n = 256
t_final = 0.2

[rom]
r = 4

[obs]
times = [0.05, 0.1]
sigma = 0.01

[output]
field_times = [0.1, 0.2]
"#;

fn config(dir: &Path, body: &str) -> ExperimentConfig {
    let text = format!("output_dir = {:?}\ncache_dir = {:?}\n{body}", dir.join("out"), dir.join("cache"));
    ExperimentConfig::from_toml(&text).unwrap()
}

fn csvs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

#[test]
fn reruns_are_bit_identical_even_without_a_cache() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    run_pipeline(&config(a.path(), SMALL), Stage::Metrics).unwrap();
    let first = csvs(&a.path().join("out"));
    run_pipeline(&config(a.path(), SMALL), Stage::Metrics).unwrap();
    assert_eq!(first, csvs(&a.path().join("out")));
    run_pipeline(&config(b.path(), SMALL), Stage::Metrics).unwrap();
    assert_eq!(first, csvs(&b.path().join("out")));
    assert!(first.iter().any(|(n, _)| n == "field_t0.2.csv"));
}

#[test]
fn changing_only_the_tolerance_keeps_the_fom_cached() {
    let dir = TempDir::new().unwrap();
    let first = run_pipeline(&config(dir.path(), SMALL), Stage::Metrics).unwrap();
    assert!(first.executed(Stage::Fom) && first.executed(Stage::Pod));
    let tighter = SMALL.replace("sigma = 0.01", "sigma = 0.01\n[fsm]\ntol = 1e-9");
    let second = run_pipeline(&config(dir.path(), &tighter), Stage::Metrics).unwrap();
    assert!(!second.executed(Stage::Fom));
    assert!(!second.executed(Stage::Pod));
    assert!(second.executed(Stage::Assimilate));
    let other_basis = SMALL.replace("r = 4", "r = 3");
    let third = run_pipeline(&config(dir.path(), &other_basis), Stage::Metrics).unwrap();
    assert!(!third.executed(Stage::Fom) && third.executed(Stage::Pod));
}

#[test]
fn stages_stop_where_asked() {
    let dir = TempDir::new().unwrap();
    let out = run_pipeline(&config(dir.path(), SMALL), Stage::Pod).unwrap();
    assert!(out.report.is_none() && out.assimilation.is_none());
    assert_eq!(out.stages.iter().map(|s| s.stage).collect::<Vec<_>>(), vec![Stage::Fom, Stage::Pod]);
    assert!(dir.path().join("out/singular_values.csv").exists());
    assert!(!dir.path().join("out/rmse.csv").exists());
}

#[test]
fn zero_observation_times_give_grom_only_metrics() {
    let dir = TempDir::new().unwrap();
    let out = run_pipeline(&config(dir.path(), &SMALL.replace("times = [0.05, 0.1]", "times = []")), Stage::Metrics).unwrap();
    let report = out.report.clone().unwrap();
    assert!(report.fsm_skipped());
    assert!(report.final_nu_e.is_none());
    assert!(report.series(Method::GromFsm).is_none());
    assert!(report.series(Method::Grom).is_some() && report.series(Method::Tp).is_some());
    assert_eq!(out.exit_code(), 0);
    assert!(report.summary().contains("skipped"));
}

#[test]
fn manifest_hashes_match_the_files() {
    let dir = TempDir::new().unwrap();
    let out = run_pipeline(&config(dir.path(), SMALL), Stage::Metrics).unwrap();
    assert!(out.manifest.len() >= 10);
    for (path, hash) in &out.manifest {
        assert_eq!(&sha256_hex(&std::fs::read(path).unwrap()), hash, "{}", path.display());
    }
    let text = std::fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    for (path, hash) in &out.manifest {
        assert!(text.contains(hash.as_str()), "{} not listed", path.display());
    }
}

#[test]
fn rmse_series_share_the_rom_grid_and_are_non_negative() {
    let dir = TempDir::new().unwrap();
    let report = run_pipeline(&config(dir.path(), SMALL), Stage::Metrics).unwrap().report.unwrap();
    let times: Vec<f64> = report.series(Method::Tp).unwrap().points.iter().map(|p| p.0).collect();
    assert_eq!(times.len(), 21);
    assert_eq!(times[0], 0.0);
    for s in &report.series {
        assert!(s.points.iter().all(|p| p.1 >= 0.0));
        assert_eq!(s.points.iter().map(|p| p.0).collect::<Vec<_>>(), times);
    }
    for (t, tp) in &report.series(Method::Tp).unwrap().points {
        let grom = report.rmse_at(Method::Grom, *t).unwrap();
        assert!(*tp <= grom + 1e-12, "TP {tp} above GROM {grom} at t={t}");
    }
}

#[test]
fn true_projection_minimises_the_instantaneous_error() {
    let dir = TempDir::new().unwrap();
    run_pipeline(&config(dir.path(), SMALL), Stage::Pod).unwrap();
    let fom_file = std::fs::read_dir(dir.path().join("cache"))
        .unwrap()
        .filter_map(|e| e.ok())
        .find(|e| e.file_name().to_string_lossy().starts_with("fom-"))
        .unwrap()
        .path();
    let fom = SnapshotSet::read(&fom_file).unwrap();
    let basis = build_pod(&fom, 4).unwrap();
    let field = fom.field_at(0.1).unwrap();
    let a = basis.project(field.as_slice()).unwrap();
    let err = |c: &DVector<f64>| (basis.reconstruct(c.as_slice()).unwrap() - &field).norm();
    let best = err(&a);
    for k in 0..4 {
        for eps in [1e-3, -1e-3, 0.1] {
            let mut b = a.clone();
            b[k] += eps;
            assert!(err(&b) > best);
        }
    }
    // compute_rmse reports the same error, scaled by 1/sqrt(n)
    let one = SnapshotSet::new(
        nalgebra::DMatrix::from_columns(&[basis.reconstruct(a.as_slice()).unwrap()]),
        vec![0.1],
        fom.grid.clone(),
    )
    .unwrap();
    let truth = SnapshotSet::new(nalgebra::DMatrix::from_columns(&[field.clone()]), vec![0.1], fom.grid.clone()).unwrap();
    let rmse = compute_rmse(&one, &truth).unwrap()[0].1;
    assert!((rmse - best / (field.len() as f64).sqrt()).abs() < 1e-14);
}

#[test]
fn bad_configs_fail_before_any_work() {
    let dir = TempDir::new().unwrap();
    let cfg = config(dir.path(), &SMALL.replace("r = 4", "r = 25"));
    assert!(run_pipeline(&cfg, Stage::Metrics).is_err());
    assert!(!dir.path().join("cache").exists());
}
