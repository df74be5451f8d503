use super::local::LocalMap;
use super::NlmcContext;
use crate::error::{NlmcError, Result};
use crate::fine_solver::FactorPolicy;
use crate::linalg::{dense_solve, norm2, norm_inf};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoarseConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    /// Refactor the local Jacobians at the converged state before taking tangents.
    pub exact_tangents: bool,
    /// Relative residual below which a stalled line search counts as converged.
    pub stagnation_tol: f64,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-11,
            max_iter: 30,
            max_backtracks: 10,
            exact_tangents: false,
            stagnation_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoarseSolution {
    /// Macro unknowns U, one per continuum.
    pub macro_values: Vec<f64>,
    /// F₂ coefficients λ_c taken from the map owning each continuum.
    pub multipliers: Vec<f64>,
    /// Downscaled fine raster.
    pub u_ms: Vec<f64>,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    /// Largest normalized constraint residual over all final local solves.
    pub max_constraint_residual: f64,
}

/// Result of one map evaluation with the sensitivities of its own multipliers.
struct MapResult {
    u: Vec<f64>,
    lambda: Vec<f64>,
    /// dλ_p / dŪ_j, row-major over (own position p, local continuum j).
    dlambda: Vec<f64>,
    constraint_residual: f64,
}

fn evaluate_maps(
    ctx: &NlmcContext<'_>,
    maps: &[LocalMap],
    macro_values: &[f64],
    warm: Option<&[MapResult]>,
    cfg: &CoarseConfig,
    tangents: bool,
) -> Result<Vec<MapResult>> {
    let policy = match (tangents, cfg.exact_tangents) {
        (false, _) => FactorPolicy::None,
        (true, false) => FactorPolicy::Reuse,
        (true, true) => FactorPolicy::Exact,
    };
    ctx.exec.try_map_range(maps.len(), |m| {
        let map = &maps[m];
        let targets = map.gather(macro_values);
        let w = warm.map(|w| (w[m].u.as_slice(), w[m].lambda.as_slice()));
        let sol = map.evaluate(ctx, &targets, w, policy)?;
        let nl = map.n_continua();
        let mut dlambda = Vec::new();
        if tangents {
            let cols = sol.tangents(&(0..nl).collect::<Vec<_>>())?;
            let n = map.n_cells();
            dlambda = vec![0.0; map.own.len() * nl];
            for (j, col) in cols.iter().enumerate() {
                for (p, &o) in map.own.iter().enumerate() {
                    dlambda[p * nl + j] = col[n + o];
                }
            }
        }
        let constraint_residual = map.normalized_constraint_residual(ctx, &sol, &targets);
        Ok(MapResult {
            u: sol.u,
            lambda: sol.lambda,
            dlambda,
            constraint_residual,
        })
    })
}

fn macro_residual(ctx: &NlmcContext<'_>, maps: &[LocalMap], res: &[MapResult], f: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nc = ctx.space.len();
    let mut r = vec![f64::NAN; nc];
    let mut lam = vec![0.0; nc];
    for (map, mr) in maps.iter().zip(res) {
        for &o in &map.own {
            let c = map.continua[o];
            lam[c] = mr.lambda[o];
            r[c] = mr.lambda[o] * ctx.space.norms_sq[c] - f[c];
        }
    }
    (r, lam)
}

fn jacobian(ctx: &NlmcContext<'_>, maps: &[LocalMap], res: &[MapResult]) -> Vec<f64> {
    let nc = ctx.space.len();
    let mut j = vec![0.0; nc * nc];
    for (map, mr) in maps.iter().zip(res) {
        let nl = map.n_continua();
        for (p, &o) in map.own.iter().enumerate() {
            let c = map.continua[o];
            for (q, &d) in map.continua.iter().enumerate() {
                j[c * nc + d] += ctx.space.norms_sq[c] * mr.dlambda[p * nl + q];
            }
        }
    }
    j
}

fn reconstruct(ctx: &NlmcContext<'_>, maps: &[LocalMap], fields: &[&[f64]]) -> Vec<f64> {
    if maps.len() == 1 && maps[0].center.is_none() {
        return maps[0].to_global(ctx, fields[0]);
    }
    let mut u = vec![0.0; ctx.fine.len()];
    for (map, field) in maps.iter().zip(fields) {
        let k = map.center.expect("localized map");
        for (i, chi) in ctx.pou.chi_k(k) {
            let (x, y) = ctx.fine.coords(i);
            u[i] += chi * field[map.rect.local_index(x, y)];
        }
    }
    u
}

fn check_ownership(ctx: &NlmcContext<'_>, maps: &[LocalMap]) -> Result<()> {
    let mut count = vec![0usize; ctx.space.len()];
    for m in maps {
        for &o in &m.own {
            count[m.continua[o]] += 1;
        }
    }
    if count.iter().any(|&c| c != 1) {
        return Err(NlmcError::InvalidArgument(
            "every continuum must be owned by exactly one map".into(),
        ));
    }
    Ok(())
}

/// Newton on R(U)_c = λ_c(U) s(μ_c, μ_c) − ∫ f μ_c with Jacobian from the
/// local tangent sensitivities.
pub fn solve_with_maps(
    ctx: &NlmcContext<'_>,
    maps: &[LocalMap],
    source: &[f64],
    cfg: &CoarseConfig,
) -> Result<CoarseSolution> {
    check_ownership(ctx, maps)?;
    let nc = ctx.space.len();
    let f = ctx.space.source_moments(source);
    let mut u = vec![0.0; nc];
    let mut res = evaluate_maps(ctx, maps, &u, None, cfg, true)?;
    let (mut r, mut lam) = macro_residual(ctx, maps, &res, &f);
    let mut history = vec![norm_inf(&r)];
    let scale = |lam: &[f64]| {
        norm_inf(&f).max(
            lam.iter()
                .zip(&ctx.space.norms_sq)
                .map(|(l, n)| (l * n).abs())
                .fold(0.0, f64::max),
        )
    };
    let tol = |r: &[f64], lam: &[f64]| norm_inf(r) <= cfg.abs_tol + cfg.rel_tol * scale(lam);
    let mut iterations = 0;
    while !tol(&r, &lam) {
        if iterations >= cfg.max_iter {
            return Err(NlmcError::NotConverged {
                iterations,
                residual: norm_inf(&r),
                context: format!("coarse nonlinear solve (history {history:?})"),
            });
        }
        iterations += 1;
        let jac = jacobian(ctx, maps, &res);
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let step = dense_solve(nc, &jac, &neg)?;
        let mut alpha = 1.0;
        let r0 = norm2(&r);
        let mut accepted = false;
        for _ in 0..=cfg.max_backtracks {
            let trial: Vec<f64> = u.iter().zip(&step).map(|(a, d)| a + alpha * d).collect();
            let tr = evaluate_maps(ctx, maps, &trial, Some(&res), cfg, true)?;
            let (rt, lt) = macro_residual(ctx, maps, &tr, &f);
            if norm2(&rt) <= (1.0 - 1e-4 * alpha) * r0 || tol(&rt, &lt) {
                u = trial;
                res = tr;
                r = rt;
                lam = lt;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        history.push(norm_inf(&r));
        if !accepted {
            // stagnation at the accuracy floor of the local solves
            if norm_inf(&r) <= cfg.abs_tol + cfg.stagnation_tol * scale(&lam) {
                log::debug!("coarse Newton stopped at floor {:.3e}", norm_inf(&r));
                break;
            }
            return Err(NlmcError::NotConverged {
                iterations,
                residual: norm_inf(&r),
                context: format!("coarse line search failed (history {history:?})"),
            });
        }
    }
    let fields: Vec<&[f64]> = res.iter().map(|m| m.u.as_slice()).collect();
    let u_ms = reconstruct(ctx, maps, &fields);
    let max_constraint_residual = res.iter().map(|m| m.constraint_residual).fold(0.0, f64::max);
    Ok(CoarseSolution {
        macro_values: u,
        multipliers: lam,
        u_ms,
        iterations,
        residual_history: history,
        max_constraint_residual,
    })
}

pub fn build_local_maps(ctx: &NlmcContext<'_>, layers: usize) -> Result<Vec<LocalMap>> {
    if layers == 0 {
        return Err(NlmcError::InvalidArgument(
            "localized NLMC needs at least one oversampling layer".into(),
        ));
    }
    Ok(ctx.exec.map_range(ctx.coarse.len(), |k| LocalMap::new(ctx, k, layers)))
}

/// Localized nonlinear NLMC with `layers` oversampling layers.
pub fn solve_coarse_nonlinear(
    ctx: &NlmcContext<'_>,
    layers: usize,
    source: &[f64],
    cfg: &CoarseConfig,
) -> Result<CoarseSolution> {
    let maps = build_local_maps(ctx, layers)?;
    solve_with_maps(ctx, &maps, source, cfg)
}

/// Global-basis method: one downscaling map on Ω with all continua constrained.
pub fn solve_global_method(ctx: &NlmcContext<'_>, source: &[f64], cfg: &CoarseConfig) -> Result<CoarseSolution> {
    let maps = vec![LocalMap::global(ctx)];
    solve_with_maps(ctx, &maps, source, cfg)
}

/// Linear NLMC by superposition of precomputed local responses to unit
/// macro values; requires a linear face law.
pub fn solve_coarse_superposition(
    ctx: &NlmcContext<'_>,
    layers: usize,
    source: &[f64],
) -> Result<CoarseSolution> {
    if !ctx.law.is_linear() {
        return Err(NlmcError::InvalidArgument(
            "superposition requires a linear law".into(),
        ));
    }
    let maps = build_local_maps(ctx, layers)?;
    check_ownership(ctx, &maps)?;
    let nc = ctx.space.len();
    // per map: responses (field, multipliers) to every unit local macro value
    let responses = ctx.exec.try_map_range(maps.len(), |m| {
        let map = &maps[m];
        let zero = vec![0.0; map.n_continua()];
        let sol = map.evaluate(ctx, &zero, None, FactorPolicy::Exact)?;
        sol.tangents(&(0..map.n_continua()).collect::<Vec<_>>())
    })?;
    let mut jac = vec![0.0; nc * nc];
    for (map, cols) in maps.iter().zip(&responses) {
        let n = map.n_cells();
        for &o in &map.own {
            let c = map.continua[o];
            for (q, &d) in map.continua.iter().enumerate() {
                jac[c * nc + d] = ctx.space.norms_sq[c] * cols[q][n + o];
            }
        }
    }
    let f = ctx.space.source_moments(source);
    let u = dense_solve(nc, &jac, &f)?;
    let mut fields = Vec::with_capacity(maps.len());
    let mut lam = vec![0.0; nc];
    let mut max_res: f64 = 0.0;
    for (map, cols) in maps.iter().zip(&responses) {
        let n = map.n_cells();
        let mut field = vec![0.0; n + map.n_continua()];
        for (q, &d) in map.continua.iter().enumerate() {
            for (a, b) in field.iter_mut().zip(&cols[q]) {
                *a += u[d] * b;
            }
        }
        for &o in &map.own {
            lam[map.continua[o]] = field[n + o];
        }
        let bu = map.constraints.apply_b(&field[..n]);
        for (q, &d) in map.continua.iter().enumerate() {
            max_res = max_res.max((bu[q] - u[d]).abs() / ctx.space.norms_sq[d]);
        }
        field.truncate(n);
        fields.push(field);
    }
    let refs: Vec<&[f64]> = fields.iter().map(|v| v.as_slice()).collect();
    let u_ms = reconstruct(ctx, &maps, &refs);
    let r: Vec<f64> = (0..nc).map(|c| lam[c] * ctx.space.norms_sq[c] - f[c]).collect();
    Ok(CoarseSolution {
        macro_values: u,
        multipliers: lam,
        u_ms,
        iterations: 1,
        residual_history: vec![norm_inf(&r)],
        max_constraint_residual: max_res,
    })
}
