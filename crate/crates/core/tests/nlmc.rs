mod common;

use common::{rel_diff, setup, two_fractures};
use nlmc_core::fine_solver::{GlobalBoundary, LinearLaw};
use nlmc_core::media::MonotoneLaw;
use nlmc_core::nlmc::{
    assemble_upscaled, build_basis_linear, build_local_maps, solve_coarse_linear, solve_coarse_nonlinear,
    solve_coarse_superposition, solve_global_method, CoarseConfig, NlmcContext,
};

#[test]
fn linear_law_paths_agree() {
    let s = setup(32, 8, 1e2, Some(two_fractures()), 3);
    let ctx = NlmcContext::new(&s.space, &s.field.values, &LinearLaw, GlobalBoundary::DirichletZero).unwrap();
    let cfg = CoarseConfig::default();
    let nl = solve_coarse_nonlinear(&ctx, 2, &s.source, &cfg).unwrap();
    let sp = solve_coarse_superposition(&ctx, 2, &s.source).unwrap();
    assert!(rel_diff(&nl.macro_values, &sp.macro_values) < 1e-8);
    let en = ctx.energy_norm(&nl.u_ms);
    let es = ctx.energy_norm(&sp.u_ms);
    assert!((en - es).abs() / es < 1e-8);
    assert!(nl.max_constraint_residual < 1e-10);
    assert!(sp.max_constraint_residual < 1e-10);
}

#[test]
fn full_oversampling_matches_global_method() {
    let s = setup(32, 8, 1e2, Some(two_fractures()), 5);
    let law = MonotoneLaw::default();
    let ctx = NlmcContext::new(&s.space, &s.field.values, &law, GlobalBoundary::DirichletZero).unwrap();
    let cfg = CoarseConfig::default();
    let loc = solve_coarse_nonlinear(&ctx, 4, &s.source, &cfg).unwrap();
    let glo = solve_global_method(&ctx, &s.source, &cfg).unwrap();
    assert!(rel_diff(&loc.macro_values, &glo.macro_values) < 1e-10, "{}", rel_diff(&loc.macro_values, &glo.macro_values));
    assert!(rel_diff(&loc.u_ms, &glo.u_ms) < 1e-10, "{}", rel_diff(&loc.u_ms, &glo.u_ms));
}

#[test]
fn basis_moments_are_exact() {
    let s = setup(32, 8, 1e2, Some(two_fractures()), 7);
    let ctx = NlmcContext::new(&s.space, &s.field.values, &LinearLaw, GlobalBoundary::DirichletZero).unwrap();
    let basis = build_basis_linear(&ctx, 2).unwrap();
    for b in &basis.functions {
        assert!(b.moment_residual < 1e-10, "{}", b.moment_residual);
    }
    let sys = assemble_upscaled(&ctx, &basis, &s.source).unwrap();
    assert!(sys.asymmetry() < 1e-8, "{}", sys.asymmetry());
    let (m, u_ms) = solve_coarse_linear(&ctx, &sys, &basis).unwrap();
    assert!(m.values.iter().all(|v| v.is_finite()));
    assert!(u_ms.iter().all(|v| v.is_finite()));
    let maps = build_local_maps(&ctx, 2).unwrap();
    assert_eq!(maps.len(), s.coarse.len());
}
