mod common;

use common::{rel_diff, setup, two_fractures};
use nlmc_core::fine_solver::{solve_unsaturated, GlobalBoundary, LinearLaw, NewtonConfig, TimeSource, UnsaturatedLaw};
use nlmc_core::media::ConstitutiveSet;
use nlmc_core::mesh::SpaceTimePartition;
use nlmc_core::nlmc::{solve_coarse_nonlinear, CoarseConfig, NlmcContext};
use nlmc_core::spacetime::{solve_spacetime_coarse, solve_spacetime_global, storage_coefficients, SpaceTimeContext};

#[test]
fn single_interval_collapses_to_one_backward_euler_step() {
    let s = setup(32, 8, 1e2, Some(two_fractures()), 2);
    let cons = ConstitutiveSet::default();
    let law = UnsaturatedLaw { constitutive: cons };
    let dt = 0.05;
    let storage = storage_coefficients(&s.fractures.indicator, &cons);
    let area = s.fine.cell_area();
    let mass: Vec<f64> = storage.iter().map(|c| c * area / dt).collect();
    let spatial = NlmcContext::new(&s.space, &s.field.values, &law, GlobalBoundary::DirichletZero)
        .unwrap()
        .with_mass(&mass);
    let cfg = CoarseConfig::default();
    let one = solve_coarse_nonlinear(&spatial, 1, &s.source, &cfg).unwrap();

    let base = NlmcContext::new(&s.space, &s.field.values, &law, GlobalBoundary::DirichletZero).unwrap();
    let part = SpaceTimePartition::uniform(dt, 1, 1, 0).unwrap();
    let ctx = SpaceTimeContext::new(&base, &storage, &part).unwrap();
    let st = solve_spacetime_coarse(&ctx, 1, &TimeSource::constant(s.source.clone()), &cfg).unwrap();
    let scaled: Vec<f64> = one.macro_values.iter().map(|u| 0.5 * dt * u).collect();
    assert!(rel_diff(&st.macro_series[0], &scaled) < 1e-9, "{}", rel_diff(&st.macro_series[0], &scaled));
    assert!(rel_diff(&st.multipliers[0], &one.multipliers) < 1e-9);
    assert!(rel_diff(&st.states[1], &one.u_ms) < 1e-9);
}

#[test]
fn later_sources_do_not_change_earlier_intervals() {
    let s = setup(24, 8, 1e2, None, 4);
    let cons = ConstitutiveSet::default();
    let law = UnsaturatedLaw { constitutive: cons };
    let storage = storage_coefficients(&s.fractures.indicator, &cons);
    let base = NlmcContext::new(&s.space, &s.field.values, &law, GlobalBoundary::DirichletZero).unwrap();
    let part = SpaceTimePartition::uniform(0.4, 4, 2, 1).unwrap();
    let ctx = SpaceTimeContext::new(&base, &storage, &part).unwrap();
    let steps = part.fine_steps();
    let a: Vec<Vec<f64>> = (0..steps).map(|_| s.source.clone()).collect();
    let mut b = a.clone();
    for r in b.iter_mut().skip(4) {
        r.iter_mut().for_each(|v| *v *= -3.0);
    }
    let cfg = CoarseConfig::default();
    let ra = solve_spacetime_coarse(&ctx, 1, &TimeSource { rasters: a }, &cfg).unwrap();
    let rb = solve_spacetime_coarse(&ctx, 1, &TimeSource { rasters: b }, &cfg).unwrap();
    for n in 0..2 {
        assert!(rel_diff(&ra.macro_series[n], &rb.macro_series[n]) < 1e-10);
    }
    assert!(rel_diff(&ra.macro_series[3], &rb.macro_series[3]) > 1e-3);
    assert!(ra.max_constraint_residual < 1e-9);
}

#[test]
fn global_window_tracks_fine_reference() {
    let s = setup(24, 8, 1e1, None, 6);
    let cons = ConstitutiveSet::default();
    let storage = storage_coefficients(&s.fractures.indicator, &cons);
    let base = NlmcContext::new(&s.space, &s.field.values, &LinearLaw, GlobalBoundary::DirichletZero).unwrap();
    let part = SpaceTimePartition::uniform(0.3, 3, 2, 3).unwrap();
    let ctx = SpaceTimeContext::new(&base, &storage, &part).unwrap();
    let src = TimeSource::constant(s.source.clone());
    let st = solve_spacetime_global(&ctx, &src, &CoarseConfig::default()).unwrap();
    // with the window reaching t = 0 the global map reproduces the fine series moments
    let fine_cons = ConstitutiveSet { kr_exponent: 0.0, ..cons };
    let fine = solve_unsaturated(
        &s.fine, &s.field, &s.fractures.indicator, &fine_cons, part.fine_dt(0), part.fine_steps(), &src,
        GlobalBoundary::DirichletZero, &NewtonConfig::default(),
    )
    .unwrap();
    let series = s.space.extract_macro_series(&fine.states, &part);
    for n in 0..3 {
        let e = rel_diff(&st.macro_series[n], &series[n].values);
        assert!(e.is_finite() && e < 1.0, "{n}: {e}");
    }
}
