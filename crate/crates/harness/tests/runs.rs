use nlmc_harness::commands;
use nlmc_harness::config::SourceKind;
use nlmc_harness::experiments::{run_convergence_study, run_test1};
use nlmc_harness::manifest::{config_hash, RunOutput};
use nlmc_harness::{ExperimentConfig, Preset, ResultTable};
use proptest::prelude::*;
use std::path::Path;

fn small(p: Preset) -> ExperimentConfig {
    let mut c = ExperimentConfig::preset(p);
    c.grid.fine_cells = 16;
    c.grid.coarse_cells = 4;
    c.convergence.coarse_cells = vec![4];
    c.convergence.layers = vec![1];
    c.source.to = [3, 3];
    c
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timings.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn repeated_runs_write_identical_files() {
    let cfg = small(Preset::Convergence);
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let mut out = RunOutput::create(d.path()).unwrap();
        commands::solve_nonlinear(&cfg, &mut out).unwrap();
        let m = out.finish("solve-nonlinear", &cfg).unwrap();
        assert_eq!(m.config_hash, config_hash(&cfg).unwrap());
        assert!(m.outputs.iter().any(|o| o == "macro.csv"));
    }
    let (a, b) = (files(dirs[0].path()), files(dirs[1].path()));
    assert!(a.iter().any(|(n, _)| n == "manifest.toml"));
    assert_eq!(a, b);
    let saved = ExperimentConfig::load(&dirs[0].path().join("config.toml")).unwrap();
    assert_eq!(saved, cfg);
}

#[test]
fn config_hash_tracks_content() {
    let a = small(Preset::Test1);
    let mut b = a.clone();
    assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
    b.media.seed += 1;
    assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
}

#[test]
fn zero_source_test1_has_zero_errors() {
    let mut cfg = small(Preset::Test1);
    cfg.source.kind = SourceKind::Zero;
    cfg.surrogate.enabled = false;
    cfg.time.steps = 2;
    cfg.time.intervals = 1;
    let out = run_test1(&cfg).unwrap();
    assert!(!out.table.is_empty());
    for r in 0..out.table.len() {
        assert_eq!(out.table.num(r, "error"), Some(0.0));
    }
}

#[test]
fn single_config_sweep_has_one_run_row() {
    let t = run_convergence_study(&small(Preset::Convergence), false).unwrap();
    let runs = t.find("kind", "run");
    assert_eq!(runs.len(), 1);
    assert_eq!(t.get(runs[0], "status").unwrap().to_string(), "ok");
    assert!(t.num(runs[0], "energy_error").unwrap().is_finite());
    // fits need at least two points
    assert!(t.find("kind", "h_ratio").is_empty());
    let csv = t.to_csv().unwrap();
    assert_eq!(ResultTable::from_csv(&csv).unwrap().len(), t.len());
}

#[test]
fn failed_sweep_point_becomes_a_row() {
    let mut cfg = small(Preset::Convergence);
    cfg.convergence.coarse_cells = vec![4, 5];
    let t = run_convergence_study(&cfg, false).unwrap();
    let runs = t.find("kind", "run");
    assert_eq!(runs.len(), 2);
    assert!(t.get(runs[1], "status").unwrap().to_string().starts_with("failed"));
}

proptest! {
    #[test]
    fn coarse_error_is_scale_invariant(
        r in prop::collection::vec(-10.0f64..10.0, 1..20),
        d in prop::collection::vec(-1.0f64..1.0, 20),
        c in 1e-3f64..1e3,
    ) {
        prop_assume!(r.iter().any(|v| v.abs() > 1e-3));
        let a: Vec<f64> = r.iter().zip(&d).map(|(x, y)| x + y).collect();
        let e = nlmc_core::surrogate::coarse_mean_error(&r, &a);
        let sr: Vec<f64> = r.iter().map(|v| c * v).collect();
        let sa: Vec<f64> = a.iter().map(|v| c * v).collect();
        let es = nlmc_core::surrogate::coarse_mean_error(&sr, &sa);
        prop_assert!((e - es).abs() <= 1e-12 * e.max(1.0));
        prop_assert_eq!(nlmc_core::surrogate::coarse_mean_error(&r, &r), 0.0);
    }
}
