mod common;

use common::{rel_diff, setup, two_fractures};
use nalgebra::{DMatrix, DVector};
use nlmc_core::fine_solver::{
    assemble_linear, solve_monotone, solve_two_phase, solve_unsaturated, GlobalBoundary, NewtonConfig, TimeSource,
    TwoPhaseConfig, WellSet,
};
use nlmc_core::media::{generate_field, CoefficientField, ConstitutiveSet, MonotoneLaw};
use nlmc_core::mesh::FineGrid;

/// Five-point TPFA written out cell by cell, solved densely.
fn dense_tpfa(fine: &FineGrid, k: &[f64], f: &[f64]) -> Vec<f64> {
    let (nx, ny) = (fine.nx, fine.ny);
    let n = nx * ny;
    let h = fine.hx();
    let mut a = DMatrix::<f64>::zeros(n, n);
    let b = DVector::from_iterator(n, f.iter().map(|v| v * h * h));
    for iy in 0..ny {
        for ix in 0..nx {
            let i = iy * nx + ix;
            let nbrs = [
                (ix > 0).then(|| i - 1),
                (ix + 1 < nx).then(|| i + 1),
                (iy > 0).then(|| i - nx),
                (iy + 1 < ny).then(|| i + nx),
            ];
            for nb in nbrs {
                match nb {
                    Some(j) => {
                        let t = 2.0 * k[i] * k[j] / (k[i] + k[j]);
                        a[(i, i)] += t;
                        a[(i, j)] -= t;
                    }
                    None => a[(i, i)] += 2.0 * k[i],
                }
            }
        }
    }
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn sparse_tpfa_matches_dense_oracle() {
    let fine = FineGrid::new(12, 12).unwrap();
    let field = generate_field(&fine, 4, 1e3, 0.1).unwrap();
    let f = fine.sample(|x, y| (3.0 * x).sin() + y);
    let sys = assemble_linear(&fine, &field, &f, GlobalBoundary::DirichletZero).unwrap();
    let u = sys.solve().unwrap();
    let oracle = dense_tpfa(&fine, &field.values, &f);
    assert!(rel_diff(&u, &oracle) < 1e-12);
    let f1: f64 = sys.rhs.iter().map(|v| v.abs()).sum();
    assert!(sys.conservation_residual(&u) <= 1e-12 * f1);
}

#[test]
fn linear_solution_scales_with_source_and_coefficient() {
    let s = setup(24, 4, 1e2, Some(two_fractures()), 9);
    let u = assemble_linear(&s.fine, &s.field, &s.source, GlobalBoundary::DirichletZero)
        .unwrap()
        .solve()
        .unwrap();
    let f3: Vec<f64> = s.source.iter().map(|v| 3.0 * v).collect();
    let k2 = s.field.scaled(2.0).unwrap();
    let v = assemble_linear(&s.fine, &k2, &f3, GlobalBoundary::DirichletZero)
        .unwrap()
        .solve()
        .unwrap();
    let expect: Vec<f64> = u.iter().map(|x| 1.5 * x).collect();
    assert!(rel_diff(&v, &expect) < 1e-12);
}

#[test]
fn monotone_linear_law_equals_linear_solve() {
    let s = setup(16, 4, 1e2, None, 2);
    let lin = assemble_linear(&s.fine, &s.field, &s.source, GlobalBoundary::DirichletZero)
        .unwrap()
        .solve()
        .unwrap();
    let rep = solve_monotone(
        &s.fine,
        &s.field,
        &MonotoneLaw::Linear,
        &s.source,
        GlobalBoundary::DirichletZero,
        &NewtonConfig::default(),
    )
    .unwrap();
    assert!(rel_diff(&rep.u, &lin) < 1e-12);
}

#[test]
fn monotone_solve_conserves_and_is_odd() {
    let s = setup(32, 4, 1e4, Some(two_fractures()), 11);
    let law = MonotoneLaw::default();
    let cfg = NewtonConfig::default();
    let a = solve_monotone(&s.fine, &s.field, &law, &s.source, GlobalBoundary::DirichletZero, &cfg).unwrap();
    let f1: f64 = s.source.iter().map(|v| v.abs() * s.fine.cell_area()).sum();
    assert!(a.conservation <= 1e-10 * f1);
    let neg: Vec<f64> = s.source.iter().map(|v| -v).collect();
    let b = solve_monotone(&s.fine, &s.field, &law, &neg, GlobalBoundary::DirichletZero, &cfg).unwrap();
    let flipped: Vec<f64> = b.u.iter().map(|v| -v).collect();
    assert!(rel_diff(&flipped, &a.u) < 1e-10);
}

#[test]
fn no_flux_solve_is_gauged_to_mean_zero() {
    let s = setup(16, 4, 10.0, None, 5);
    let f = s.fine.sample(|x, _| (std::f64::consts::PI * x).cos());
    let sys = assemble_linear(&s.fine, &s.field, &f, GlobalBoundary::NoFlux).unwrap();
    let u = sys.solve().unwrap();
    let mean: f64 = u.iter().sum::<f64>() / u.len() as f64;
    assert!(mean.abs() < 1e-12 * u.iter().map(|v| v.abs()).fold(0.0, f64::max));
    let f1: f64 = sys.rhs.iter().map(|v| v.abs()).sum();
    assert!(sys.conservation_residual(&u) <= 1e-10 * f1);
}

#[test]
fn unsaturated_steps_conserve_and_zero_source_stays_zero() {
    let s = setup(16, 4, 1e2, Some(two_fractures()), 3);
    let cons = ConstitutiveSet::default();
    let cfg = NewtonConfig::default();
    let run = |src: Vec<f64>| {
        solve_unsaturated(
            &s.fine,
            &s.field,
            &s.fractures.indicator,
            &cons,
            0.01,
            4,
            &TimeSource::constant(src),
            GlobalBoundary::DirichletZero,
            &cfg,
        )
        .unwrap()
    };
    let ts = run(s.source.clone());
    assert_eq!(ts.states.len(), 5);
    for (c, f1) in ts.conservation.iter().zip(&ts.source_l1) {
        assert!(*c <= 1e-10 * f1, "{c} vs {f1}");
    }
    // with f >= 0 and zero data the state grows monotonically in time
    for w in ts.states.windows(2) {
        assert!(w[1].iter().zip(&w[0]).all(|(b, a)| b >= a));
    }
    let zero = run(vec![0.0; s.fine.len()]);
    assert!(zero.states.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn two_phase_balances_water_and_keeps_saturation_bounded() {
    let fine = FineGrid::new(16, 16).unwrap();
    let field = CoefficientField::constant(&fine, 1.0).unwrap();
    let n = fine.len();
    let wells = WellSet {
        injector: vec![0, 1, 16, 17],
        producer: vec![n - 1, n - 2, n - 17, n - 18],
        rate: 1.0,
    };
    let run = solve_two_phase(
        &fine,
        &field,
        &vec![false; n],
        &ConstitutiveSet::default(),
        &wells,
        &vec![0.0; n],
        &TwoPhaseConfig::new(0.01, 10),
    )
    .unwrap();
    assert!(run.water_balance.iter().all(|w| *w <= 1e-10));
    assert!(run.saturation.iter().flatten().all(|s| (0.0..=1.0).contains(s)));
    assert!(run.saturation.last().unwrap()[0] > 0.5);
    // diagonal symmetry of the domain and well placement
    let s = run.saturation.last().unwrap();
    for iy in 0..16 {
        for ix in 0..16 {
            assert!((s[iy * 16 + ix] - s[ix * 16 + iy]).abs() < 1e-8);
        }
    }
}
