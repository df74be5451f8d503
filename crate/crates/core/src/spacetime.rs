//! Space-time NLMC for `c ∂_t u + L(u) = f`.
//!
//! Coarse unknowns are time-integrated continuum moments
//! `U_{n,c} = ∫_{I_n} s(u, μ_c) dt` (trapezoid over fine nodes). The local map
//! of interval `n` and coarse cell `K` solves backward Euler on `K⁺` over the
//! window `[t_n^-, t_{n+1}]` from a zero state, with one multiplier per
//! (interval, continuum) acting as a piecewise-constant-in-time source.

use crate::continua::AuxiliarySpace;
use crate::error::{NlmcError, Result};
use crate::fine_solver::{
    build_faces, Constraints, Face, FactorPolicy, FaceLaw, FvOperator, NonlinearOperator,
    PatchBoundary, SaddleProblem, SaddleSolution, TimeSource,
};
use crate::linalg::{dense_solve, norm2, norm_inf, TripletBuilder};
use crate::media::ConstitutiveSet;
use crate::mesh::{CellRect, SpaceTimePartition};
use crate::nlmc::{CoarseConfig, NlmcContext};
use faer::sparse::linalg::solvers::SymbolicLu;
use std::sync::OnceLock;

/// Storage coefficient `c` per fine cell.
pub fn storage_coefficients(fractures: &[bool], constitutive: &ConstitutiveSet) -> Vec<f64> {
    fractures.iter().map(|&f| constitutive.storage(f)).collect()
}

/// Backward Euler over `dt.len()` consecutive steps from a zero state:
/// block `b` is `m ⊙ (u_b − u_{b−1}) / δt_b + A(u_b)` with `u_{−1} = 0`.
pub struct SpaceTimeOperator<'a> {
    pub cells: usize,
    pub faces: &'a [Face],
    pub law: &'a dyn FaceLaw,
    /// `c · area` per cell.
    pub mass: &'a [f64],
    pub dt: &'a [f64],
}

impl SpaceTimeOperator<'_> {
    fn spatial(&self) -> FvOperator<'_> {
        FvOperator::new(self.cells, self.faces, self.law)
    }

    fn block<'u>(&self, u: &'u [f64], b: usize) -> &'u [f64] {
        &u[b * self.cells..(b + 1) * self.cells]
    }
}

impl NonlinearOperator for SpaceTimeOperator<'_> {
    fn dim(&self) -> usize {
        self.cells * self.dt.len()
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = self.cells;
        let sp = self.spatial();
        for (b, &dt) in self.dt.iter().enumerate() {
            let ub = self.block(u, b);
            let ob = &mut out[b * n..(b + 1) * n];
            sp.apply(ub, ob);
            for i in 0..n {
                let prev = if b == 0 { 0.0 } else { u[(b - 1) * n + i] };
                ob[i] += self.mass[i] * (ub[i] - prev) / dt;
            }
        }
    }

    fn magnitude(&self, u: &[f64], out: &mut [f64]) {
        let n = self.cells;
        let sp = self.spatial();
        for (b, &dt) in self.dt.iter().enumerate() {
            let ub = self.block(u, b);
            let ob = &mut out[b * n..(b + 1) * n];
            sp.magnitude(ub, ob);
            for i in 0..n {
                let prev = if b == 0 { 0.0 } else { u[(b - 1) * n + i] };
                ob[i] += self.mass[i] * (ub[i].abs() + prev.abs()) / dt;
            }
        }
    }

    fn jacobian(&self, u: &[f64], t: &mut TripletBuilder) {
        self.assemble(u, t, false);
    }

    fn secant(&self, u: &[f64], t: &mut TripletBuilder) {
        self.assemble(u, t, true);
    }

    fn is_linear(&self) -> bool {
        self.law.is_linear()
    }
}

impl SpaceTimeOperator<'_> {
    fn assemble(&self, u: &[f64], t: &mut TripletBuilder, secant: bool) {
        let n = self.cells;
        let sp = self.spatial();
        let mut local = TripletBuilder::new(n);
        for (b, &dt) in self.dt.iter().enumerate() {
            local.clear();
            if secant {
                sp.secant(self.block(u, b), &mut local);
            } else {
                sp.jacobian(self.block(u, b), &mut local);
            }
            let off = b * n;
            for e in &local.entries {
                t.push(off + e.row, off + e.col, e.val);
            }
            for i in 0..n {
                let m = self.mass[i] / dt;
                t.push(off + i, off + i, m);
                if b > 0 {
                    t.push(off + i, off - n + i, -m);
                }
            }
        }
    }
}

/// Shared state of a space-time NLMC run.
pub struct SpaceTimeContext<'a, 'b> {
    pub base: &'a NlmcContext<'b>,
    /// Storage coefficient `c` per fine cell.
    pub storage: &'a [f64],
    pub partition: &'a SpaceTimePartition,
}

impl<'a, 'b> SpaceTimeContext<'a, 'b> {
    pub fn new(base: &'a NlmcContext<'b>, storage: &'a [f64], partition: &'a SpaceTimePartition) -> Result<Self> {
        if base.mass.is_some() {
            return Err(NlmcError::InvalidArgument(
                "space-time context carries its own storage term".into(),
            ));
        }
        if storage.len() != base.fine.len() {
            return Err(NlmcError::InvalidGrid("storage raster size mismatch".into()));
        }
        if partition.extension + 1 > partition.intervals() && partition.extension > 0 {
            log::warn!("time extension exceeds the number of intervals; windows start at t = 0");
        }
        Ok(Self {
            base,
            storage,
            partition,
        })
    }

    fn space(&self) -> &AuxiliarySpace {
        self.base.space
    }
}

/// Local space-time downscaling map of one coarse cell (or of Ω).
pub struct WindowMap {
    pub center: Option<usize>,
    pub rect: CellRect,
    pub faces: Vec<Face>,
    /// `c · area` per local cell.
    pub mass: Vec<f64>,
    pub continua: Vec<usize>,
    pub own: Vec<usize>,
    /// Spatial κ̃-moment rows of `continua`, patch-local.
    rows: Vec<Vec<(usize, f64)>>,
    /// One symbolic factorization per window length.
    symbolic: Vec<OnceLock<SymbolicLu<usize>>>,
}

/// One window evaluation with the layout used to read it back.
pub struct WindowEvaluation {
    pub solution: SaddleSolution,
    /// Number of coarse intervals in the window.
    pub intervals: usize,
}

impl WindowMap {
    pub fn new(ctx: &SpaceTimeContext<'_, '_>, center: Option<usize>, layers: usize) -> Self {
        let b = ctx.base;
        let region = match center {
            Some(k) => b.coarse.oversample(k, layers).rect,
            None => b.coarse.rect(),
        };
        let rect = b.coarse.fine_rect(&region);
        let bc = PatchBoundary::local(&rect, &b.fine, b.boundary);
        let faces = build_faces(&b.fine, &rect, b.perm, &bc);
        let area = b.fine.cell_area();
        let mass = rect
            .iter()
            .map(|(x, y)| ctx.storage[b.fine.index(x, y)] * area)
            .collect();
        let continua = b.space.in_region(&region);
        let own = match center {
            Some(k) => {
                let r = b.space.of_cell(k);
                (0..continua.len()).filter(|&p| r.contains(&continua[p])).collect()
            }
            None => (0..continua.len()).collect(),
        };
        let rows = b.space.constraint_rows(&rect, &continua);
        Self {
            center,
            rect,
            faces,
            mass,
            continua,
            own,
            rows,
            symbolic: (0..=ctx.partition.extension).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rect.len()
    }

    pub fn n_continua(&self) -> usize {
        self.continua.len()
    }

    fn window(&self, ctx: &SpaceTimeContext<'_, '_>, n: usize) -> (usize, usize) {
        let n0 = ctx.partition.window_start(n);
        (n0, n - n0 + 1)
    }

    /// Trapezoid moment rows and per-interval source columns for a window of
    /// `len` intervals starting at `n0`. Constraint `(ℓ, q)` has index `ℓ·nl + q`.
    fn constraints(&self, ctx: &SpaceTimeContext<'_, '_>, n0: usize, len: usize) -> Constraints {
        let s = ctx.partition.substeps;
        let nc = self.n_cells();
        let mut rows = Vec::with_capacity(len * self.rows.len());
        let mut cols = Vec::with_capacity(len * self.rows.len());
        for l in 0..len {
            let dt = ctx.partition.fine_dt(n0 + l);
            for spatial in &self.rows {
                let mut row = Vec::with_capacity((s + 1) * spatial.len());
                for j in 0..=s {
                    if l == 0 && j == 0 {
                        continue;
                    }
                    let w = if j == 0 || j == s { 0.5 * dt } else { dt };
                    let b = l * s + j - 1;
                    row.extend(spatial.iter().map(|&(i, v)| (b * nc + i, w * v)));
                }
                let mut col = Vec::with_capacity(s * spatial.len());
                for j in 0..s {
                    let b = l * s + j;
                    col.extend(spatial.iter().map(|&(i, v)| (b * nc + i, v)));
                }
                rows.push(row);
                cols.push(col);
            }
        }
        Constraints {
            rows,
            columns: Some(cols),
        }
    }

    fn step_sizes(&self, ctx: &SpaceTimeContext<'_, '_>, n0: usize, len: usize) -> Vec<f64> {
        let s = ctx.partition.substeps;
        (0..len * s).map(|b| ctx.partition.fine_dt(n0 + b / s)).collect()
    }

    /// Solves the window of interval `n` for the macro series `series`
    /// (indexed by interval, then global continuum).
    pub fn evaluate(
        &self,
        ctx: &SpaceTimeContext<'_, '_>,
        n: usize,
        series: &[Vec<f64>],
        warm: Option<(&[f64], &[f64])>,
        policy: FactorPolicy,
    ) -> Result<WindowEvaluation> {
        let (n0, len) = self.window(ctx, n);
        let cons = self.constraints(ctx, n0, len);
        let targets: Vec<f64> = (n0..=n)
            .flat_map(|m| self.continua.iter().map(move |&c| series[m][c]))
            .collect();
        let dt = self.step_sizes(ctx, n0, len);
        let op = SpaceTimeOperator {
            cells: self.n_cells(),
            faces: &self.faces,
            law: ctx.base.law,
            mass: &self.mass,
            dt: &dt,
        };
        let rhs = vec![0.0; op.dim()];
        let solution = SaddleProblem::new(&op, &rhs, &cons, &targets)
            .with_symbolic(&self.symbolic[len - 1])
            .solve(warm, &ctx.base.newton, policy)?;
        Ok(WindowEvaluation {
            solution,
            intervals: len,
        })
    }

    /// Largest normalized constraint residual of an evaluation.
    pub fn constraint_residual(
        &self,
        ctx: &SpaceTimeContext<'_, '_>,
        n: usize,
        series: &[Vec<f64>],
        eval: &WindowEvaluation,
    ) -> f64 {
        let (n0, len) = self.window(ctx, n);
        let cons = self.constraints(ctx, n0, len);
        let bu = cons.apply_b(&eval.solution.u);
        let nl = self.n_continua();
        let mut worst: f64 = 0.0;
        for l in 0..len {
            let dtn = ctx.partition.dt(n0 + l);
            for (q, &c) in self.continua.iter().enumerate() {
                let r = (bu[l * nl + q] - series[n0 + l][c]).abs() / (dtn * ctx.space().norms_sq[c]);
                worst = worst.max(r);
            }
        }
        worst
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeSolution {
    /// `U_{n,c}` per interval.
    pub macro_series: Vec<Vec<f64>>,
    /// `λ_{n,c}` from the owning maps.
    pub multipliers: Vec<Vec<f64>>,
    /// Downscaled states at fine time nodes; entry 0 is the zero initial state.
    pub states: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub max_constraint_residual: f64,
}

struct MapResult {
    u: Vec<f64>,
    lambda: Vec<f64>,
    /// dλ_{n,own p} / dU_{n, local q}, row-major.
    dlambda: Vec<f64>,
    constraint_residual: f64,
}

fn evaluate_all(
    ctx: &SpaceTimeContext<'_, '_>,
    maps: &[WindowMap],
    n: usize,
    series: &[Vec<f64>],
    warm: Option<&[MapResult]>,
    cfg: &CoarseConfig,
) -> Result<Vec<MapResult>> {
    let policy = if cfg.exact_tangents {
        FactorPolicy::Exact
    } else {
        FactorPolicy::Reuse
    };
    ctx.base.exec.try_map_range(maps.len(), |m| {
        let map = &maps[m];
        let w = warm.map(|w| (w[m].u.as_slice(), w[m].lambda.as_slice()));
        let eval = map.evaluate(ctx, n, series, w, policy)?;
        let nl = map.n_continua();
        let last = (eval.intervals - 1) * nl;
        let cols = eval.solution.tangents(&(last..last + nl).collect::<Vec<_>>())?;
        let dim = eval.solution.u.len();
        let mut dlambda = vec![0.0; map.own.len() * nl];
        for (q, col) in cols.iter().enumerate() {
            for (p, &o) in map.own.iter().enumerate() {
                dlambda[p * nl + q] = col[dim + last + o];
            }
        }
        let constraint_residual = map.constraint_residual(ctx, n, series, &eval);
        let sol = eval.solution;
        Ok(MapResult {
            u: sol.u,
            lambda: sol.lambda,
            dlambda,
            constraint_residual,
        })
    })
}

/// Own multipliers of interval `n` and the macro residual
/// `Δt_n λ_{n,c} s(μ_c, μ_c) − Σ_k δt (f_k, μ_c)`.
fn residual(
    ctx: &SpaceTimeContext<'_, '_>,
    maps: &[WindowMap],
    res: &[MapResult],
    n: usize,
    load: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let nc = ctx.space().len();
    let dtn = ctx.partition.dt(n);
    let mut r = vec![f64::NAN; nc];
    let mut lam = vec![0.0; nc];
    for (map, mr) in maps.iter().zip(res) {
        let nl = map.n_continua();
        let last = mr.lambda.len() - nl;
        for &o in &map.own {
            let c = map.continua[o];
            lam[c] = mr.lambda[last + o];
            r[c] = dtn * lam[c] * ctx.space().norms_sq[c] - load[c];
        }
    }
    (r, lam)
}

fn jacobian(ctx: &SpaceTimeContext<'_, '_>, maps: &[WindowMap], res: &[MapResult], n: usize) -> Vec<f64> {
    let nc = ctx.space().len();
    let dtn = ctx.partition.dt(n);
    let mut j = vec![0.0; nc * nc];
    for (map, mr) in maps.iter().zip(res) {
        let nl = map.n_continua();
        for (p, &o) in map.own.iter().enumerate() {
            let c = map.continua[o];
            for (q, &d) in map.continua.iter().enumerate() {
                j[c * nc + d] += dtn * ctx.space().norms_sq[c] * mr.dlambda[p * nl + q];
            }
        }
    }
    j
}

/// Σ_k δt (f_k, μ_c) over the fine steps of interval `n`.
fn interval_load(ctx: &SpaceTimeContext<'_, '_>, source: &TimeSource, n: usize) -> Vec<f64> {
    let s = ctx.partition.substeps;
    let dt = ctx.partition.fine_dt(n);
    let mut acc = vec![0.0; ctx.space().len()];
    for k in n * s + 1..=(n + 1) * s {
        for (a, m) in acc.iter_mut().zip(ctx.space().source_moments(source.at(k))) {
            *a += dt * m;
        }
    }
    acc
}

fn reconstruct(ctx: &SpaceTimeContext<'_, '_>, maps: &[WindowMap], res: &[MapResult]) -> Vec<Vec<f64>> {
    let s = ctx.partition.substeps;
    let fine = &ctx.base.fine;
    let mut out = vec![vec![0.0; fine.len()]; s];
    for (map, mr) in maps.iter().zip(res) {
        let nc = map.n_cells();
        let blocks = mr.u.len() / nc;
        for (j, state) in out.iter_mut().enumerate() {
            let b = &mr.u[(blocks - s + j) * nc..(blocks - s + j + 1) * nc];
            match map.center {
                Some(k) => {
                    for (i, chi) in ctx.base.pou.chi_k(k) {
                        let (x, y) = fine.coords(i);
                        state[i] += chi * b[map.rect.local_index(x, y)];
                    }
                }
                None => {
                    for (l, (x, y)) in map.rect.iter().enumerate() {
                        state[fine.index(x, y)] = b[l];
                    }
                }
            }
        }
    }
    out
}

fn check_source(ctx: &SpaceTimeContext<'_, '_>, source: &TimeSource) -> Result<()> {
    let steps = ctx.partition.fine_steps();
    if source.rasters.len() != 1 && source.rasters.len() < steps {
        return Err(NlmcError::InvalidArgument(format!(
            "time source has {} rasters for {steps} fine steps",
            source.rasters.len()
        )));
    }
    if source.rasters.iter().any(|r| r.len() != ctx.base.fine.len()) {
        return Err(NlmcError::InvalidGrid("source raster size mismatch".into()));
    }
    Ok(())
}

/// Marches the space-time NLMC system interval by interval.
pub fn solve_with_windows(
    ctx: &SpaceTimeContext<'_, '_>,
    maps: &[WindowMap],
    source: &TimeSource,
    cfg: &CoarseConfig,
) -> Result<SpaceTimeSolution> {
    check_source(ctx, source)?;
    let nc = ctx.space().len();
    let intervals = ctx.partition.intervals();
    let mut out = SpaceTimeSolution {
        macro_series: Vec::with_capacity(intervals),
        multipliers: Vec::with_capacity(intervals),
        states: vec![vec![0.0; ctx.base.fine.len()]],
        iterations: Vec::with_capacity(intervals),
        max_constraint_residual: 0.0,
    };
    for n in 0..intervals {
        let load = interval_load(ctx, source, n);
        let mut series = out.macro_series.clone();
        series.push(vec![0.0; nc]);
        let mut res = evaluate_all(ctx, maps, n, &series, None, cfg).map_err(|e| e.at_step(n))?;
        let (mut r, mut lam) = residual(ctx, maps, &res, n, &load);
        let scale = |lam: &[f64]| {
            norm_inf(&load).max(
                lam.iter()
                    .zip(&ctx.space().norms_sq)
                    .map(|(l, m)| (ctx.partition.dt(n) * l * m).abs())
                    .fold(0.0, f64::max),
            )
        };
        let mut it = 0;
        while norm_inf(&r) > cfg.abs_tol + cfg.rel_tol * scale(&lam) {
            if it >= cfg.max_iter {
                return Err(NlmcError::NotConverged {
                    iterations: it,
                    residual: norm_inf(&r),
                    context: format!("space-time coarse solve on interval {n}"),
                });
            }
            it += 1;
            let jac = jacobian(ctx, maps, &res, n);
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let step = dense_solve(nc, &jac, &neg)?;
            let r0 = norm2(&r);
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..=cfg.max_backtracks {
                let mut trial = series.clone();
                for (u, d) in trial[n].iter_mut().zip(&step) {
                    *u += alpha * d;
                }
                let tr = evaluate_all(ctx, maps, n, &trial, Some(&res), cfg).map_err(|e| e.at_step(n))?;
                let (rt, lt) = residual(ctx, maps, &tr, n, &load);
                if norm2(&rt) <= (1.0 - 1e-4 * alpha) * r0
                    || norm_inf(&rt) <= cfg.abs_tol + cfg.rel_tol * scale(&lt)
                {
                    series = trial;
                    res = tr;
                    r = rt;
                    lam = lt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                if norm_inf(&r) <= cfg.abs_tol + cfg.stagnation_tol * scale(&lam) {
                    log::debug!("space-time interval {n} stopped at floor {:.3e}", norm_inf(&r));
                    break;
                }
                return Err(NlmcError::NotConverged {
                    iterations: it,
                    residual: norm_inf(&r),
                    context: format!("space-time line search failed on interval {n}"),
                });
            }
        }
        out.states.extend(reconstruct(ctx, maps, &res));
        out.max_constraint_residual = res
            .iter()
            .map(|m| m.constraint_residual)
            .fold(out.max_constraint_residual, f64::max);
        out.macro_series.push(series.pop().unwrap());
        out.multipliers.push(lam);
        out.iterations.push(it);
    }
    Ok(out)
}

/// Localized space-time NLMC with `layers` spatial oversampling layers.
pub fn solve_spacetime_coarse(
    ctx: &SpaceTimeContext<'_, '_>,
    layers: usize,
    source: &TimeSource,
    cfg: &CoarseConfig,
) -> Result<SpaceTimeSolution> {
    if layers == 0 {
        return Err(NlmcError::InvalidArgument(
            "localized NLMC needs at least one oversampling layer".into(),
        ));
    }
    let maps: Vec<WindowMap> = ctx
        .base
        .exec
        .map_range(ctx.base.coarse.len(), |k| WindowMap::new(ctx, Some(k), layers));
    solve_with_windows(ctx, &maps, source, cfg)
}

/// Space-time method with one window map on Ω.
pub fn solve_spacetime_global(
    ctx: &SpaceTimeContext<'_, '_>,
    source: &TimeSource,
    cfg: &CoarseConfig,
) -> Result<SpaceTimeSolution> {
    let maps = vec![WindowMap::new(ctx, None, 0)];
    solve_with_windows(ctx, &maps, source, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fine_solver::LinearLaw;
    use crate::mesh::{build_grids, CellRect};

    #[test]
    fn operator_jacobian_matches_finite_differences() {
        let (_, fine) = build_grids(1, 1, 4).unwrap();
        let perm = vec![1.0; 16];
        let rect = CellRect::new(0, 0, 4, 4);
        let bc = PatchBoundary::local(&rect, &fine, crate::fine_solver::GlobalBoundary::DirichletZero);
        let faces = build_faces(&fine, &rect, &perm, &bc);
        let law = crate::fine_solver::UnsaturatedLaw {
            constitutive: ConstitutiveSet::default(),
        };
        let mass = vec![0.3; 16];
        let dt = [0.1, 0.2, 0.1];
        let op = SpaceTimeOperator {
            cells: 16,
            faces: &faces,
            law: &law,
            mass: &mass,
            dt: &dt,
        };
        let u: Vec<f64> = (0..48).map(|i| (i as f64 * 0.37).sin()).collect();
        let mut t = TripletBuilder::new(48);
        op.jacobian(&u, &mut t);
        let mut base = vec![0.0; 48];
        op.apply(&u, &mut base);
        for j in [0, 17, 40] {
            let mut up = u.clone();
            up[j] += 1e-6;
            let mut o = vec![0.0; 48];
            op.apply(&up, &mut o);
            let mut e = vec![0.0; 48];
            e[j] = 1.0;
            let col = t.apply(&e);
            for i in 0..48 {
                let fd = (o[i] - base[i]) / 1e-6;
                assert!((fd - col[i]).abs() < 1e-4 * (1.0 + fd.abs()), "{i} {j}: {fd} vs {}", col[i]);
            }
        }
        assert!(!op.is_linear());
        let lin = SpaceTimeOperator { law: &LinearLaw, ..op };
        assert!(lin.is_linear());
    }
}
