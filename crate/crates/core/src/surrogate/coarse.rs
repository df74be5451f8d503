use super::dataset::edge_features;
use super::regress::Regressor;
use super::transmissibility::{compute_transmissibility_cached, MobilityLaw, PairCache, Physics, TransContext};
use super::ContinuumGraph;
use crate::continua::AuxiliarySpace;
use crate::error::{NlmcError, Result};
use crate::exec::Exec;
use crate::fine_solver::{
    build_faces, harmonic, Constraints, FactorPolicy, FvOperator, NewtonConfig, PatchBoundary, SaddleProblem,
    SideCondition, TimeSource, TwoPhaseConfig, WellSet,
};
use crate::linalg::{dense_solve, norm_inf};
use crate::media::ConstitutiveSet;
use crate::mesh::{CellRect, CoarseGrid, FineGrid};

/// Coarse unknowns as groups of fine cells.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLayout {
    /// Node of each fine cell.
    pub owner: Vec<usize>,
    /// Coarse cell of each node.
    pub node_cell: Vec<usize>,
    pub volume: Vec<f64>,
    pub n_cells: usize,
    pub cell_area: f64,
}

impl NodeLayout {
    pub fn continua(space: &AuxiliarySpace) -> Self {
        Self {
            owner: space.owner.clone(),
            node_cell: space.continua.iter().map(|c| c.coarse_cell).collect(),
            volume: (0..space.len()).map(|c| space.volume(c)).collect(),
            n_cells: space.coarse.len(),
            cell_area: space.fine.cell_area(),
        }
    }

    pub fn cells(coarse: &CoarseGrid, fine: &FineGrid) -> Self {
        let owner = (0..fine.len())
            .map(|i| {
                let (x, y) = fine.coords(i);
                coarse.owner(x, y)
            })
            .collect();
        Self {
            owner,
            node_cell: (0..coarse.len()).collect(),
            volume: vec![coarse.cell_area(); coarse.len()],
            n_cells: coarse.len(),
            cell_area: fine.cell_area(),
        }
    }

    pub fn len(&self) -> usize {
        self.volume.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volume.is_empty()
    }

    /// `Σ_{i ∈ node} w_i · area`.
    pub fn integrate(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        for (i, &v) in w.iter().enumerate() {
            out[self.owner[i]] += v * self.cell_area;
        }
        out
    }

    pub fn means(&self, u: &[f64]) -> Vec<f64> {
        self.integrate(u).iter().zip(&self.volume).map(|(s, v)| s / v).collect()
    }

    /// Volume-weighted coarse-cell means of node values.
    pub fn cell_means(&self, values: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; self.n_cells];
        let mut w = vec![0.0; self.n_cells];
        for (c, &v) in values.iter().enumerate() {
            s[self.node_cell[c]] += self.volume[c] * v;
            w[self.node_cell[c]] += self.volume[c];
        }
        s.iter().zip(&w).map(|(a, b)| a / b).collect()
    }
}

/// Relative ℓ2 difference of coarse-cell means, `‖ū_ref − ū‖ / ‖ū_ref‖`.
pub fn coarse_mean_error(reference: &[f64], approx: &[f64]) -> f64 {
    let num: f64 = reference.iter().zip(approx).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = reference.iter().map(|a| a * a).sum();
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Per-step coefficients `(T, T^w)` of every coarse connection.
pub trait TransmissibilityProvider: Sync {
    fn layout(&self) -> &NodeLayout;
    fn edges(&self) -> &[(usize, usize)];
    /// `T^w = None` means the water flux is upwinded from the node saturations.
    fn evaluate(&self, means: &[f64], sats: Option<&[f64]>) -> Result<Vec<(f64, Option<f64>)>>;
}

fn graph_edges(graph: &ContinuumGraph) -> Vec<(usize, usize)> {
    graph.edges.iter().map(|e| (e.alpha, e.beta)).collect()
}

/// Transmissibilities from local solves at every query.
pub struct ExactProvider<'a> {
    pub ctx: &'a TransContext<'a>,
    pub graph: &'a ContinuumGraph,
    pub exec: Exec,
    layout: NodeLayout,
    edges: Vec<(usize, usize)>,
    caches: Vec<PairCache>,
}

impl<'a> ExactProvider<'a> {
    pub fn new(ctx: &'a TransContext<'a>, graph: &'a ContinuumGraph, exec: Exec) -> Self {
        Self {
            ctx,
            graph,
            exec,
            layout: NodeLayout::continua(ctx.space),
            edges: graph_edges(graph),
            caches: graph.edges.iter().map(|_| PairCache::new()).collect(),
        }
    }
}

impl TransmissibilityProvider for ExactProvider<'_> {
    fn layout(&self) -> &NodeLayout {
        &self.layout
    }
    fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
    fn evaluate(&self, means: &[f64], sats: Option<&[f64]>) -> Result<Vec<(f64, Option<f64>)>> {
        self.exec.try_map_range(self.graph.edges.len(), |e| {
            let t = compute_transmissibility_cached(self.ctx, &self.graph.edges[e], means, sats, &self.caches[e])?;
            Ok((t.t, t.tw))
        })
    }
}

/// Transmissibilities predicted from engineered features.
pub struct SurrogateProvider<'a> {
    pub ctx: &'a TransContext<'a>,
    pub graph: &'a ContinuumGraph,
    pub regressor: &'a Regressor,
    pub exec: Exec,
    layout: NodeLayout,
    edges: Vec<(usize, usize)>,
}

impl<'a> SurrogateProvider<'a> {
    pub fn new(ctx: &'a TransContext<'a>, graph: &'a ContinuumGraph, regressor: &'a Regressor, exec: Exec) -> Self {
        Self {
            ctx,
            graph,
            regressor,
            exec,
            layout: NodeLayout::continua(ctx.space),
            edges: graph_edges(graph),
        }
    }
}

impl TransmissibilityProvider for SurrogateProvider<'_> {
    fn layout(&self) -> &NodeLayout {
        &self.layout
    }
    fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }
    fn evaluate(&self, means: &[f64], sats: Option<&[f64]>) -> Result<Vec<(f64, Option<f64>)>> {
        self.exec.try_map_range(self.graph.edges.len(), |e| {
            let edge = &self.graph.edges[e];
            let (t, tw) = self.regressor.predict(edge.class, &edge_features(self.ctx, edge, means, sats))?;
            if self.ctx.is_two_phase() && tw.is_none() {
                return Err(NlmcError::InvalidArgument("regressor has no water-flux model".into()));
            }
            Ok((t, tw))
        })
    }
}

/// Single-continuum coarse cells with linear flow-based face transmissibilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CellGraph {
    pub layout: NodeLayout,
    pub faces: Vec<(usize, usize)>,
    pub t_lin: Vec<f64>,
}

/// Two-cell flow driven by a unit pressure drop across the pair, no flux on
/// the lateral sides; `T = Q / (p̄_a − p̄_b)`.
fn two_cell_transmissibility(coarse: &CoarseGrid, fine: &FineGrid, perm: &[f64], a: usize, b: usize) -> Result<f64> {
    let (ax, ay) = coarse.coords(a);
    let (bx, by) = coarse.coords(b);
    let pair = CellRect::new(ax.min(bx), ay.min(by), ax.max(bx) + 1, ay.max(by) + 1);
    let rect = coarse.fine_rect(&pair);
    let horizontal = ay == by;
    let (hi, lo) = (SideCondition::Dirichlet(1.0), SideCondition::Dirichlet(0.0));
    let bc = if horizontal {
        PatchBoundary {
            west: hi,
            east: lo,
            south: SideCondition::NoFlux,
            north: SideCondition::NoFlux,
        }
    } else {
        PatchBoundary {
            west: SideCondition::NoFlux,
            east: SideCondition::NoFlux,
            south: hi,
            north: lo,
        }
    };
    let faces = build_faces(fine, &rect, perm, &bc);
    let law = MobilityLaw {
        mobility: vec![1.0; rect.len()],
    };
    let op = FvOperator::new(rect.len(), &faces, &law);
    let rhs = vec![0.0; rect.len()];
    let cons = Constraints::none();
    let sol = SaddleProblem::new(&op, &rhs, &cons, &[]).solve(None, &NewtonConfig::default(), FactorPolicy::None)?;
    let block_a = coarse.fine_block(a);
    let block_b = coarse.fine_block(b);
    let mean = |blk: &CellRect| blk.iter().map(|(x, y)| sol.u[rect.local_index(x, y)]).sum::<f64>() / blk.len() as f64;
    let mut q = 0.0;
    for (x, y) in block_a.iter() {
        let (nx, ny, ratio) = if horizontal {
            (x + 1, y, fine.hy() / fine.hx())
        } else {
            (x, y + 1, fine.hx() / fine.hy())
        };
        if block_b.contains(nx, ny) {
            let (i, j) = (fine.index(x, y), fine.index(nx, ny));
            q += harmonic(perm[i], perm[j]) * ratio * (sol.u[rect.local_index(x, y)] - sol.u[rect.local_index(nx, ny)]);
        }
    }
    Ok(q / (mean(&block_a) - mean(&block_b)))
}

/// Classical flow-based upscaling of `perm` to the coarse faces.
pub fn baseline_upscale(coarse: &CoarseGrid, fine: &FineGrid, perm: &[f64], exec: Exec) -> Result<CellGraph> {
    let mut faces = Vec::new();
    for cy in 0..coarse.ny {
        for cx in 0..coarse.nx {
            let k = coarse.index(cx, cy);
            if cx + 1 < coarse.nx {
                faces.push((k, coarse.index(cx + 1, cy)));
            }
            if cy + 1 < coarse.ny {
                faces.push((k, coarse.index(cx, cy + 1)));
            }
        }
    }
    let t_lin = exec.try_map_range(faces.len(), |f| {
        two_cell_transmissibility(coarse, fine, perm, faces[f].0, faces[f].1)
    })?;
    Ok(CellGraph {
        layout: NodeLayout::cells(coarse, fine),
        faces,
        t_lin,
    })
}

/// Upscaled linear transmissibilities with the nonlinearity applied at the
/// coarse means: arithmetic `k_r` for unsaturated flow, arithmetic `λ_t` and
/// upwind `f_w` for two-phase flow.
pub struct UpscaledProvider<'a> {
    pub cells: &'a CellGraph,
    pub physics: Physics,
}

impl TransmissibilityProvider for UpscaledProvider<'_> {
    fn layout(&self) -> &NodeLayout {
        &self.cells.layout
    }
    fn edges(&self) -> &[(usize, usize)] {
        &self.cells.faces
    }
    fn evaluate(&self, means: &[f64], sats: Option<&[f64]>) -> Result<Vec<(f64, Option<f64>)>> {
        self.cells
            .faces
            .iter()
            .zip(&self.cells.t_lin)
            .map(|(&(a, b), &t)| match self.physics {
                Physics::Unsaturated(c) => Ok((t * 0.5 * (c.kr(means[a]) + c.kr(means[b])), None)),
                Physics::TwoPhase(c) => {
                    let s = sats.ok_or_else(|| NlmcError::InvalidArgument("two-phase upscaling needs saturations".into()))?;
                    Ok((t * 0.5 * (c.total_mobility(s[a]) + c.total_mobility(s[b])), None))
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PicardConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CoarseRun {
    /// Node means at every time node; entry 0 is zero.
    pub means: Vec<Vec<f64>>,
    pub picard: Vec<usize>,
}

fn laplacian(n: usize, edges: &[(usize, usize)], t: &[(f64, Option<f64>)], a: &mut [f64], stride: usize) {
    for (&(i, j), &(c, _)) in edges.iter().zip(t) {
        a[i * stride + i] += c;
        a[j * stride + j] += c;
        a[i * stride + j] -= c;
        a[j * stride + i] -= c;
    }
    debug_assert!(stride >= n);
}

fn converged(new: &[f64], old: &[f64], tol: f64) -> bool {
    let d = new.iter().zip(old).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    d <= tol * (1.0 + norm_inf(new))
}

/// Backward-Euler coarse model of `c ∂_t u − ∇·(k k_r(u) ∇u) = f` with
/// Picard-lagged transmissibilities and no-flux boundaries.
#[allow(clippy::too_many_arguments)]
pub fn solve_test1_coarse(
    provider: &dyn TransmissibilityProvider,
    cons: &ConstitutiveSet,
    fractures: &[bool],
    source: &TimeSource,
    dt: f64,
    steps: usize,
    picard: &PicardConfig,
) -> Result<CoarseRun> {
    let layout = provider.layout();
    let n = layout.len();
    let storage: Vec<f64> = layout
        .integrate(&fractures.iter().map(|&f| cons.storage(f)).collect::<Vec<_>>())
        .iter()
        .map(|s| s / dt)
        .collect();
    if storage.iter().all(|&s| s == 0.0) {
        return Err(NlmcError::InvalidArgument("coarse model needs positive storage".into()));
    }
    let mut run = CoarseRun {
        means: vec![vec![0.0; n]],
        picard: Vec::with_capacity(steps),
    };
    for k in 1..=steps {
        let q = layout.integrate(source.at(k));
        let old = run.means.last().unwrap().clone();
        let mut u = old.clone();
        let mut iters = 0;
        loop {
            iters += 1;
            let t = provider.evaluate(&u, None).map_err(|e| e.at_step(k))?;
            let mut a = vec![0.0; n * n];
            laplacian(n, provider.edges(), &t, &mut a, n);
            for i in 0..n {
                a[i * n + i] += storage[i];
            }
            let rhs: Vec<f64> = (0..n).map(|i| q[i] + storage[i] * old[i]).collect();
            let next = dense_solve(n, &a, &rhs).map_err(|e| e.at_step(k))?;
            let done = converged(&next, &u, picard.tol);
            u = next;
            if done {
                break;
            }
            if iters >= picard.max_iter {
                return Err(NlmcError::NotConverged {
                    iterations: iters,
                    residual: 0.0,
                    context: "coarse Picard".into(),
                }
                .at_step(k));
            }
        }
        run.picard.push(iters);
        run.means.push(u);
    }
    Ok(run)
}

#[derive(Debug, Clone)]
pub struct TwoPhaseCoarseRun {
    pub pressure: Vec<Vec<f64>>,
    pub saturation: Vec<Vec<f64>>,
    pub substeps: Vec<usize>,
    pub picard: Vec<usize>,
    /// Largest relative water-mass defect over the substeps of each step.
    pub water_balance: Vec<f64>,
}

fn coarse_pressure(
    provider: &dyn TransmissibilityProvider,
    q: &[f64],
    s: &[f64],
    p0: &[f64],
    picard: &PicardConfig,
) -> Result<(Vec<f64>, Vec<(f64, Option<f64>)>, usize)> {
    let layout = provider.layout();
    let n = layout.len();
    let m = n + 1;
    let mut p = p0.to_vec();
    let mut iters = 0;
    loop {
        iters += 1;
        let t = provider.evaluate(&p, Some(s))?;
        let mut a = vec![0.0; m * m];
        laplacian(n, provider.edges(), &t, &mut a, m);
        for i in 0..n {
            a[i * m + n] = layout.volume[i];
            a[n * m + i] = layout.volume[i];
        }
        let mut rhs = q.to_vec();
        rhs.push(0.0);
        let x = dense_solve(m, &a, &rhs)?;
        let next = x[..n].to_vec();
        let done = converged(&next, &p, picard.tol);
        p = next;
        if done {
            return Ok((p, t, iters));
        }
        if iters >= picard.max_iter {
            return Err(NlmcError::NotConverged {
                iterations: iters,
                residual: 0.0,
                context: "coarse pressure Picard".into(),
            });
        }
    }
}

/// Coarse IMPES with Picard-lagged pressure transmissibilities and explicit
/// water transport.
#[allow(clippy::too_many_arguments)]
pub fn solve_test2_coarse(
    provider: &dyn TransmissibilityProvider,
    cons: &ConstitutiveSet,
    fractures: &[bool],
    wells: &WellSet,
    s0: &[f64],
    cfg: &TwoPhaseConfig,
    picard: &PicardConfig,
) -> Result<TwoPhaseCoarseRun> {
    let layout = provider.layout();
    let n = layout.len();
    let edges = provider.edges();
    let qf = wells.rates(layout.owner.len());
    let inj = layout.integrate(&qf.iter().map(|v| v.max(0.0) / layout.cell_area).collect::<Vec<_>>());
    let prod = layout.integrate(&qf.iter().map(|v| (-v).max(0.0) / layout.cell_area).collect::<Vec<_>>());
    let q: Vec<f64> = inj.iter().zip(&prod).map(|(a, b)| a - b).collect();
    let pore = layout.integrate(&fractures.iter().map(|&f| cons.porosity(f)).collect::<Vec<_>>());
    let mut s = layout.means(s0);
    let (p, mut t, it) = coarse_pressure(provider, &q, &s, &vec![0.0; n], picard).map_err(|e| e.at_step(0))?;
    let mut run = TwoPhaseCoarseRun {
        pressure: vec![p],
        saturation: vec![s.clone()],
        substeps: Vec::with_capacity(cfg.steps),
        picard: vec![it],
        water_balance: Vec::with_capacity(cfg.steps),
    };
    let fmax = cons.max_fractional_flow_derivative();
    for step in 1..=cfg.steps {
        let p = run.pressure.last().unwrap().clone();
        let flux: Vec<f64> = edges.iter().zip(&t).map(|(&(a, b), &(c, _))| c * (p[a] - p[b])).collect();
        let mut outflow = prod.clone();
        for (&(a, b), &v) in edges.iter().zip(&flux) {
            if v > 0.0 {
                outflow[a] += v;
            } else {
                outflow[b] -= v;
            }
        }
        let cfl = (0..n)
            .filter(|&i| pore[i] > 0.0)
            .map(|i| cfg.dt * fmax * outflow[i] / pore[i])
            .fold(0.0f64, f64::max);
        let limit = if cfg.cfl_limit > 0.0 { cfg.cfl_limit } else { 0.9 };
        let sub = ((cfl / limit).ceil() as usize).max(1);
        if sub > cfg.max_substeps {
            return Err(NlmcError::InvalidArgument(format!("coarse CFL {cfl:.3e} needs {sub} substeps")).at_step(step));
        }
        let h = cfg.dt / sub as f64;
        let mut balance: f64 = 0.0;
        let mut rate = vec![0.0; n];
        for _ in 0..sub {
            for i in 0..n {
                rate[i] = inj[i] - prod[i] * cons.fractional_flow(s[i]);
            }
            let external: f64 = rate.iter().sum();
            let external_abs: f64 = rate.iter().map(|v| v.abs()).sum();
            for ((&(a, b), &v), &(_, tw)) in edges.iter().zip(&flux).zip(&t) {
                let w = match tw {
                    Some(tw) => tw * (p[a] - p[b]),
                    None => cons.fractional_flow(if v > 0.0 { s[a] } else { s[b] }) * v,
                };
                rate[a] -= w;
                rate[b] += w;
            }
            let mut stored = 0.0;
            for i in 0..n {
                let ds = h * rate[i] / pore[i];
                s[i] += ds;
                stored += pore[i] * ds;
            }
            let defect = (stored - h * external).abs() / (h * external_abs).max(f64::MIN_POSITIVE);
            balance = balance.max(defect);
            s.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        }
        let (pn, tn, it) = coarse_pressure(provider, &q, &s, &p, picard).map_err(|e| e.at_step(step))?;
        t = tn;
        run.pressure.push(pn);
        run.saturation.push(s.clone());
        run.substeps.push(sub);
        run.picard.push(it);
        run.water_balance.push(balance);
    }
    Ok(run)
}
