use super::NlmcContext;
use crate::error::Result;
use crate::fine_solver::{
    build_faces, Constraints, Face, FactorPolicy, FvOperator, PatchBoundary, SaddleProblem,
    SaddleSolution,
};
use crate::mesh::CellRect;
use faer::sparse::linalg::solvers::SymbolicLu;
use std::sync::OnceLock;

/// Constrained downscaling operator F^{loc,K} on an oversampled region
/// (or on Ω for the global map).
pub struct LocalMap {
    pub center: Option<usize>,
    /// Coarse-cell rectangle of the region.
    pub region: CellRect,
    /// Fine-cell rectangle of the region.
    pub rect: CellRect,
    pub faces: Vec<Face>,
    pub mass: Option<Vec<f64>>,
    /// Global ids of the continua inside the region.
    pub continua: Vec<usize>,
    /// Positions in `continua` whose macro equations this map supplies.
    pub own: Vec<usize>,
    pub constraints: Constraints,
    symbolic: OnceLock<SymbolicLu<usize>>,
}

pub type LocalEvaluation = SaddleSolution;

impl LocalMap {
    pub fn new(ctx: &NlmcContext<'_>, center: usize, layers: usize) -> Self {
        let region = ctx.coarse.oversample(center, layers).rect;
        Self::from_region(ctx, Some(center), region)
    }

    pub fn global(ctx: &NlmcContext<'_>) -> Self {
        Self::from_region(ctx, None, ctx.coarse.rect())
    }

    fn from_region(ctx: &NlmcContext<'_>, center: Option<usize>, region: CellRect) -> Self {
        let rect = ctx.coarse.fine_rect(&region);
        let bc = PatchBoundary::local(&rect, &ctx.fine, ctx.boundary);
        let faces = build_faces(&ctx.fine, &rect, ctx.perm, &bc);
        let mass = ctx.mass.map(|m| {
            rect.iter()
                .map(|(x, y)| m[ctx.fine.index(x, y)])
                .collect::<Vec<f64>>()
        });
        let continua = ctx.space.in_region(&region);
        let own = match center {
            Some(k) => {
                let r = ctx.space.of_cell(k);
                continua
                    .iter()
                    .enumerate()
                    .filter(|(_, c)| r.contains(c))
                    .map(|(p, _)| p)
                    .collect()
            }
            None => (0..continua.len()).collect(),
        };
        let constraints = Constraints::transpose_columns(ctx.space.constraint_rows(&rect, &continua));
        Self {
            center,
            region,
            rect,
            faces,
            mass,
            continua,
            own,
            constraints,
            symbolic: OnceLock::new(),
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rect.len()
    }

    pub fn n_continua(&self) -> usize {
        self.continua.len()
    }

    pub fn gather(&self, macro_values: &[f64]) -> Vec<f64> {
        self.continua.iter().map(|&c| macro_values[c]).collect()
    }

    /// Solves the local saddle system for the local macro values `targets`.
    pub fn evaluate(
        &self,
        ctx: &NlmcContext<'_>,
        targets: &[f64],
        warm: Option<(&[f64], &[f64])>,
        policy: FactorPolicy,
    ) -> Result<LocalEvaluation> {
        let n = self.n_cells();
        let mut op = FvOperator::new(n, &self.faces, ctx.law);
        if let Some(m) = &self.mass {
            op = op.with_mass(m);
        }
        let rhs = vec![0.0; n];
        SaddleProblem::new(&op, &rhs, &self.constraints, targets)
            .with_symbolic(&self.symbolic)
            .solve(warm, &ctx.newton, policy)
    }

    /// Constraint residuals |s(F₁, μ_c) − Ū_c| / s(μ_c, μ_c), maximized over
    /// the local continua.
    pub fn normalized_constraint_residual(
        &self,
        ctx: &NlmcContext<'_>,
        sol: &LocalEvaluation,
        targets: &[f64],
    ) -> f64 {
        let bu = self.constraints.apply_b(&sol.u);
        bu.iter()
            .zip(targets)
            .zip(&self.continua)
            .map(|((a, t), &c)| (a - t).abs() / ctx.space.norms_sq[c])
            .fold(0.0, f64::max)
    }

    /// Embeds a local raster into a full fine raster (zero outside the region).
    pub fn to_global(&self, ctx: &NlmcContext<'_>, local: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; ctx.fine.len()];
        for (l, (x, y)) in self.rect.iter().enumerate() {
            out[ctx.fine.index(x, y)] = local[l];
        }
        out
    }
}

/// Global downscaling F = (F₁, F₂) on Ω with every continuum constrained.
pub fn global_downscale_nonlinear(ctx: &NlmcContext<'_>, macro_values: &[f64]) -> Result<LocalEvaluation> {
    let map = LocalMap::global(ctx);
    map.evaluate(ctx, &map.gather(macro_values), None, FactorPolicy::None)
}
