use nlmc_harness::config::{Boundary, FractureSource, LawKind, SourceKind};
use nlmc_harness::{ExperimentConfig, Preset};

#[test]
fn presets_round_trip_through_toml() {
    for p in [Preset::Test1, Preset::Test2, Preset::Convergence] {
        let c = ExperimentConfig::preset(p);
        c.validate().unwrap();
        let back = ExperimentConfig::from_toml(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
    }
}

#[test]
fn partial_file_takes_defaults() {
    let c = ExperimentConfig::from_toml("[grid]\nfine_cells = 40\ncoarse_cells = 4\n").unwrap();
    assert_eq!(c.grid.fine_cells, 40);
    assert_eq!(c.media, ExperimentConfig::default().media);
}

#[test]
fn unknown_keys_are_rejected() {
    assert!(ExperimentConfig::from_toml("[grid]\nfine = 40\n").is_err());
    assert!(ExperimentConfig::from_toml("[nope]\nx = 1\n").is_err());
}

#[test]
fn overrides_parse_toml_values() {
    let mut c = ExperimentConfig::default();
    c.apply_overrides(&[
        "grid.fine_cells=40",
        "media.contrast=1000",
        "law.kind=\"linear\"",
        "nlmc.boundary=dirichlet",
        "source.kind=\"dipole\"",
        "source.to=[3, 3]",
        "media.fractures=\"none\"",
    ])
    .unwrap();
    assert_eq!(c.grid.fine_cells, 40);
    assert_eq!(c.media.contrast, 1000.0);
    assert_eq!(c.law.kind, LawKind::Linear);
    assert_eq!(c.nlmc.boundary, Boundary::Dirichlet);
    assert_eq!(c.source.kind, SourceKind::Dipole);
    assert_eq!(c.source.to, [3, 3]);
    assert_eq!(c.media.fractures, FractureSource::None);
}

#[test]
fn bad_overrides_fail() {
    let mut c = ExperimentConfig::default();
    for a in ["grid.fine_cells", "nope.x=1", "grid.fine_cells=\"many\"", "grid.bogus=3", "=3"] {
        assert!(c.apply_override(a).is_err(), "{a}");
    }
    assert_eq!(c, ExperimentConfig::default());
}

#[test]
fn validation_catches_inconsistent_settings() {
    let cases: [&[&str]; 6] = [
        &["grid.coarse_cells=7"],
        &["time.intervals=3"],
        &["nlmc.layers=0"],
        &["media.contrast=0.5"],
        &["solver.picard_tol=0"],
        &["surrogate.model=\"forest\""],
    ];
    for set in cases {
        let mut c = ExperimentConfig::default();
        c.apply_overrides(set).unwrap();
        assert!(c.validate().is_err(), "{set:?}");
    }
    let mut c = ExperimentConfig::preset(Preset::Test2);
    c.grid.coarse_cells = 4;
    assert!(c.validate().is_err(), "wells outside the coarse grid");
}

#[test]
fn load_resolves_files_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let n = 16;
    let values: Vec<f64> = (0..n * n).map(|i| 1.0 + (i % 5) as f64).collect();
    nlmc_core::media::io::write_raster(&dir.path().join("k.txt"), n, n, &values).unwrap();
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, "[grid]\nfine_cells = 16\ncoarse_cells = 4\n[media]\nfield_file = \"k.txt\"\n").unwrap();
    let c = ExperimentConfig::load(&cfg_path).unwrap();
    assert_eq!(c.media.field_file.as_deref(), Some(dir.path().join("k.txt").as_path()));
    let p = nlmc_harness::experiments::build_problem(&c).unwrap();
    assert_eq!(p.field.values.len(), n * n);

    std::fs::write(&cfg_path, "[media]\nfield_file = \"missing.txt\"\n").unwrap();
    assert!(ExperimentConfig::load(&cfg_path).is_err());
}

#[test]
fn preset_names() {
    assert_eq!(Preset::parse("test1").unwrap(), Preset::Test1);
    assert!(Preset::parse("test9").is_err());
}
