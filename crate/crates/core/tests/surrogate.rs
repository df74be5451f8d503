mod common;

use common::{setup, two_fractures};
use nlmc_core::continua::{build_continua, AuxiliarySpace};
use nlmc_core::fine_solver::{solve_two_phase, GlobalBoundary, NewtonConfig, TimeSource, TwoPhaseConfig, WellSet};
use nlmc_core::media::{compute_weights, CoefficientField, ConstitutiveSet};
use nlmc_core::mesh::{build_grids, build_partition_of_unity};
use nlmc_core::surrogate::{
    baseline_upscale, build_graph, compute_transmissibility, fit_all, generate_dataset, metrics, solve_test1_coarse,
    solve_test2_coarse, train, CoarseRun, Dataset, EdgeClass, ExactProvider, ModelKind, NodeLayout, Physics,
    PicardConfig, Regressor, SurrogateProvider, TransContext, TransmissibilityProvider, UpscaledProvider,
};
use nlmc_core::Exec;
use std::sync::Mutex;

fn linear() -> ConstitutiveSet {
    ConstitutiveSet {
        kr_exponent: 0.0,
        ..ConstitutiveSet::default()
    }
}

fn homogeneous(cells: usize, ratio: usize, k: f64) -> (AuxiliarySpace, Vec<f64>) {
    let (coarse, fine) = build_grids(cells / ratio, cells / ratio, ratio).unwrap();
    let field = CoefficientField::constant(&fine, k).unwrap();
    let pou = build_partition_of_unity(&coarse, &fine).unwrap();
    let w = compute_weights(&field, &pou).unwrap();
    let space = build_continua(&coarse, &fine, &vec![false; fine.len()], &w).unwrap();
    (space, field.values)
}

fn planar_means(space: &AuxiliarySpace) -> Vec<f64> {
    space
        .continua
        .iter()
        .map(|c| {
            let (cx, cy) = space.coarse.coords(c.coarse_cell);
            space.coarse.center(cx, cy).0
        })
        .collect()
}

fn interior_edge(space: &AuxiliarySpace, perm: &[f64], class: EdgeClass) -> nlmc_core::surrogate::Edge {
    let g = build_graph(space, perm);
    g.edges
        .into_iter()
        .find(|e| {
            let (ax, ay) = space.coarse.coords(space.continua[e.alpha].coarse_cell);
            e.class == class && ax == 3 && ay == 3
        })
        .unwrap()
}

#[test]
fn planar_data_gives_two_cell_tpfa_value() {
    let (space, perm) = homogeneous(64, 8, 1.0);
    let ctx = TransContext::new(&space, &perm, Physics::Unsaturated(linear()));
    let edge = interior_edge(&space, &perm, EdgeClass::HorizontalMatrix);
    let t = compute_transmissibility(&ctx, &edge, &planar_means(&space), None).unwrap();
    assert!(!t.linearized);
    assert!((t.t - 1.0).abs() < 1e-9, "T = {}", t.t);
}

#[test]
fn transmissibility_scales_with_permeability() {
    let s = setup(48, 8, 1e2, None, 5);
    let means: Vec<f64> = (0..s.space.len()).map(|c| (c as f64 * 0.37).sin()).collect();
    let scaled: Vec<f64> = s.field.values.iter().map(|k| 7.0 * k).collect();
    let ctx = TransContext::new(&s.space, &s.field.values, Physics::Unsaturated(linear()));
    let ctx7 = TransContext::new(&s.space, &scaled, Physics::Unsaturated(linear()));
    for edge in build_graph(&s.space, &s.field.values).edges.iter().take(6) {
        let a = compute_transmissibility(&ctx, edge, &means, None).unwrap().t;
        let b = compute_transmissibility(&ctx7, edge, &means, None).unwrap().t;
        assert!((b - 7.0 * a).abs() <= 1e-8 * b.abs(), "{a} {b}");
    }
}

#[test]
fn equal_means_take_the_linearized_branch() {
    let (space, perm) = homogeneous(64, 8, 1.0);
    let ctx = TransContext::new(&space, &perm, Physics::Unsaturated(linear()));
    let edge = interior_edge(&space, &perm, EdgeClass::VerticalMatrix);
    let a = compute_transmissibility(&ctx, &edge, &vec![0.0; space.len()], None).unwrap();
    let b = compute_transmissibility(&ctx, &edge, &vec![3.0; space.len()], None).unwrap();
    assert!(a.linearized && b.linearized);
    assert!(a.t > 0.0 && (a.t - b.t).abs() < 1e-6 * a.t);
}

#[test]
fn interior_edge_counts_per_class() {
    let (space, perm) = homogeneous(80, 8, 1.0);
    let c = build_graph(&space, &perm).class_counts();
    assert_eq!(c, [90, 90, 0, 0]);
    let s = setup(64, 8, 1e2, Some(two_fractures()), 11);
    let g = build_graph(&s.space, &s.field.values);
    let total: usize = g.class_counts().iter().sum();
    assert_eq!(total, g.edges.len());
    assert!(g.class_counts()[2] > 0);
}

#[test]
fn baseline_two_cell_harmonic_value() {
    let (coarse, fine) = build_grids(2, 2, 8).unwrap();
    let perm = fine.sample(|x, _| if x < 0.5 { 1.0 } else { 4.0 });
    let g = baseline_upscale(&coarse, &fine, &perm, Exec::Sequential).unwrap();
    assert_eq!(g.faces, vec![(0, 1), (0, 2), (1, 3), (2, 3)]);
    // square cells: T = harmonic(1, 4) across x, k itself along y
    assert!((g.t_lin[0] - 1.6).abs() < 1e-10, "{}", g.t_lin[0]);
    assert!((g.t_lin[1] - 1.0).abs() < 1e-10 && (g.t_lin[2] - 4.0).abs() < 1e-10);
    let homog = baseline_upscale(&coarse, &fine, &vec![2.5; fine.len()], Exec::Sequential).unwrap();
    assert!((homog.t_lin[0] - 2.5).abs() < 1e-10);
}

fn test1_sources(s: &common::Setup, q: f64) -> Vec<f64> {
    let n = s.coarse.nx;
    let mut f = vec![0.0; s.fine.len()];
    for (k, sign) in [(s.coarse.index(1, 1), 1.0), (s.coarse.index(n - 2, n - 2), -1.0)] {
        let b = s.coarse.fine_block(k);
        for (x, y) in b.iter() {
            f[s.fine.index(x, y)] = sign * q;
        }
    }
    f
}

#[test]
fn zero_source_keeps_zero_state() {
    let s = setup(32, 8, 10.0, None, 3);
    let cons = ConstitutiveSet::default();
    let ctx = TransContext::new(&s.space, &s.field.values, Physics::Unsaturated(cons));
    let g = build_graph(&s.space, &s.field.values);
    let p = ExactProvider::new(&ctx, &g, Exec::Parallel);
    let src = TimeSource::constant(vec![0.0; s.fine.len()]);
    let run = solve_test1_coarse(&p, &cons, &s.fractures.indicator, &src, 0.1, 2, &PicardConfig::default()).unwrap();
    assert!(run.means.iter().flatten().all(|&v| v == 0.0));
}

/// Records every query it forwards.
struct Recorder<'a> {
    inner: &'a dyn TransmissibilityProvider,
    queries: Mutex<Vec<Vec<f64>>>,
}

impl TransmissibilityProvider for Recorder<'_> {
    fn layout(&self) -> &NodeLayout {
        self.inner.layout()
    }
    fn edges(&self) -> &[(usize, usize)] {
        self.inner.edges()
    }
    fn evaluate(&self, means: &[f64], sats: Option<&[f64]>) -> nlmc_core::Result<Vec<(f64, Option<f64>)>> {
        self.queries.lock().unwrap().push(means.to_vec());
        self.inner.evaluate(means, sats)
    }
}

#[test]
fn memorized_targets_reproduce_the_exact_coarse_solve() {
    let s = setup(32, 8, 1e2, Some(two_fractures()), 11);
    let cons = ConstitutiveSet {
        c_fracture: 0.0,
        ..ConstitutiveSet::default()
    };
    let ctx = TransContext::new(&s.space, &s.field.values, Physics::Unsaturated(cons));
    let g = build_graph(&s.space, &s.field.values);
    let exact = ExactProvider::new(&ctx, &g, Exec::Parallel);
    let rec = Recorder {
        inner: &exact,
        queries: Mutex::new(Vec::new()),
    };
    let src = TimeSource::constant(test1_sources(&s, 2000.0));
    let pic = PicardConfig::default();
    let direct: CoarseRun = solve_test1_coarse(&rec, &cons, &s.fractures.indicator, &src, 0.05, 3, &pic).unwrap();
    assert!(direct.means.last().unwrap().iter().any(|v| v.abs() > 1.0));
    // dataset of ground-truth targets at every query, memorized by 1-NN
    let queries = rec.queries.into_inner().unwrap();
    let mut samples = Vec::new();
    for (step, m) in queries.iter().enumerate() {
        let t = exact.evaluate(m, None).unwrap();
        for (e, edge) in g.edges.iter().enumerate() {
            samples.push(nlmc_core::surrogate::Sample {
                edge: e,
                step,
                class: edge.class,
                features: nlmc_core::surrogate::edge_features(&ctx, edge, m, None),
                t: t[e].0,
                tw: None,
            });
        }
    }
    let data = Dataset {
        feature_names: nlmc_core::surrogate::feature_names(false),
        samples,
        two_phase: false,
        seed: 1,
    };
    let reg = fit_all(ModelKind::Knn { k: 1 }, &data, 1).unwrap();
    let surr = SurrogateProvider::new(&ctx, &g, &reg, Exec::Parallel);
    let replay = solve_test1_coarse(&surr, &cons, &s.fractures.indicator, &src, 0.05, 3, &pic).unwrap();
    for (a, b) in direct.means.iter().zip(&replay.means) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= 1e-8 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }
}

fn small_dataset(stride: usize, seed: u64) -> (Dataset, usize) {
    let s = setup(32, 8, 1e2, Some(two_fractures()), 11);
    let cons = ConstitutiveSet::default();
    let run = nlmc_core::fine_solver::solve_unsaturated(
        &s.fine,
        &s.field,
        &s.fractures.indicator,
        &cons,
        0.05,
        4,
        &TimeSource::constant(test1_sources(&s, 40.0)),
        GlobalBoundary::NoFlux,
        &NewtonConfig::default(),
    )
    .unwrap();
    let ctx = TransContext::new(&s.space, &s.field.values, Physics::Unsaturated(cons));
    let g = build_graph(&s.space, &s.field.values);
    let d = generate_dataset(&ctx, &g, &run.states, None, stride, seed, Exec::Parallel).unwrap();
    (d, g.edges.len())
}

#[test]
fn dataset_sampling_is_deterministic_and_round_trips() {
    let (a, edges) = small_dataset(2, 9);
    assert_eq!(a.samples.len(), 2 * edges);
    let (b, _) = small_dataset(2, 9);
    let text = a.to_csv().unwrap();
    assert_eq!(text, b.to_csv().unwrap());
    let back = Dataset::from_csv(&text, 9).unwrap();
    assert_eq!(back, a);
    for (c, (tr, va)) in a.split() {
        let n = a.class_indices(c).len();
        assert_eq!(va.len(), n / 5);
        assert_eq!(tr.len() + va.len(), n);
        assert!(tr.iter().all(|i| !va.contains(i)));
    }
}

#[test]
fn regressor_families_train_and_serialize() {
    let (d, _) = small_dataset(1, 3);
    for kind in ["ridge", "knn", "mlp"] {
        let kind = ModelKind::parse(kind).unwrap();
        let (reg, report) = train(kind, &d, 3).unwrap();
        let (reg2, report2) = train(kind, &d, 3).unwrap();
        assert_eq!(reg, reg2);
        assert_eq!(report, report2);
        let back = Regressor::from_text(&reg.to_text()).unwrap();
        for s in d.samples.iter().take(40) {
            let a = reg.predict(s.class, &s.features).unwrap().0;
            let b = back.predict(s.class, &s.features).unwrap().0;
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} {b}");
        }
        assert!(report.max_rmse().is_some());
    }
}

#[test]
fn one_nearest_neighbor_memorizes() {
    let (d, _) = small_dataset(1, 3);
    let reg = fit_all(ModelKind::Knn { k: 1 }, &d, 3).unwrap();
    let y: Vec<f64> = d.samples.iter().map(|s| s.t).collect();
    let yh: Vec<f64> = d.samples.iter().map(|s| reg.predict(s.class, &s.features).unwrap().0).collect();
    let m = metrics(&y, &yh).unwrap();
    assert!(m.mae < 1e-14, "{m:?}");
}

#[test]
fn duplicated_samples_leave_ridge_unchanged() {
    let (d, _) = small_dataset(1, 3);
    let mut dup = d.clone();
    dup.samples.extend(d.samples.iter().cloned());
    let kind = ModelKind::Ridge { lambda: 1e-4 };
    let a = fit_all(kind, &d, 1).unwrap();
    let b = fit_all(kind, &dup, 1).unwrap();
    for s in &d.samples {
        let x = a.predict(s.class, &s.features).unwrap().0;
        let y = b.predict(s.class, &s.features).unwrap().0;
        assert!((x - y).abs() <= 1e-9 * x.abs(), "{x} {y}");
    }
}

#[test]
fn untrained_class_fails_loudly() {
    let (space, perm) = homogeneous(32, 8, 1.0);
    let ctx = TransContext::new(&space, &perm, Physics::Unsaturated(linear()));
    let g = build_graph(&space, &perm);
    let means = planar_means(&space);
    let samples = g
        .edges
        .iter()
        .enumerate()
        .map(|(e, edge)| nlmc_core::surrogate::Sample {
            edge: e,
            step: 1,
            class: edge.class,
            features: nlmc_core::surrogate::edge_features(&ctx, edge, &means, None),
            t: 1.0,
            tw: None,
        })
        .collect();
    let d = Dataset {
        feature_names: nlmc_core::surrogate::feature_names(false),
        samples,
        two_phase: false,
        seed: 0,
    };
    let reg = fit_all(ModelKind::Knn { k: 2 }, &d, 0).unwrap();
    assert!(!reg.is_trained(EdgeClass::MatrixFracture));
    let f = &d.samples[0].features;
    assert!(matches!(
        reg.predict(EdgeClass::MatrixFracture, f),
        Err(nlmc_core::NlmcError::Untrained(_))
    ));
}

#[test]
fn coarse_impes_conserves_water_and_tracks_fine_pressure() {
    let s = setup(32, 8, 1e2, None, 4);
    let cons = ConstitutiveSet::default();
    let wells = WellSet {
        injector: vec![s.fine.index(0, 0)],
        producer: vec![s.fine.index(31, 31)],
        rate: 1.0,
    };
    let s0 = vec![0.0; s.fine.len()];
    let cfg = TwoPhaseConfig::new(0.01, 5);
    let fine = solve_two_phase(&s.fine, &s.field, &s.fractures.indicator, &cons, &wells, &s0, &cfg).unwrap();
    let ctx = TransContext::new(&s.space, &s.field.values, Physics::TwoPhase(cons));
    let g = build_graph(&s.space, &s.field.values);
    let exact = ExactProvider::new(&ctx, &g, Exec::Parallel);
    let pic = PicardConfig::default();
    let run = solve_test2_coarse(&exact, &cons, &s.fractures.indicator, &wells, &s0, &cfg, &pic).unwrap();
    assert!(run.water_balance.iter().all(|&b| b <= 1e-10), "{:?}", run.water_balance);
    let layout = exact.layout();
    let pref = layout.cell_means(&layout.means(fine.pressure.last().unwrap()));
    let p = layout.cell_means(run.pressure.last().unwrap());
    let e = nlmc_core::surrogate::coarse_mean_error(&pref, &p);
    let cells = baseline_upscale(&s.coarse, &s.fine, &s.field.values, Exec::Parallel).unwrap();
    let up = UpscaledProvider {
        cells: &cells,
        physics: Physics::TwoPhase(cons),
    };
    let urun = solve_test2_coarse(&up, &cons, &s.fractures.indicator, &wells, &s0, &cfg, &pic).unwrap();
    let eu = nlmc_core::surrogate::coarse_mean_error(&pref, urun.pressure.last().unwrap());
    assert!(e < 0.5 && eu.is_finite(), "NL {e}, UP {eu}");
}
