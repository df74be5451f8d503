use super::local::LocalMap;
use super::NlmcContext;
use crate::continua::MacroState;
use crate::error::{NlmcError, Result};
use crate::fine_solver::{FactorPolicy, FvOperator, GlobalBoundary, LinearLaw, NonlinearOperator};
use crate::linalg::dense_solve;
use crate::mesh::CellRect;
use std::fmt::Write as _;

/// Constrained basis function ψ_i^j on K_i⁺.
#[derive(Debug, Clone)]
pub struct BasisFunction {
    pub continuum: usize,
    /// Fine rectangle of K_i⁺.
    pub rect: CellRect,
    /// Values on `rect` (row-major).
    pub values: Vec<f64>,
    /// Multipliers for the continua inside K_i⁺.
    pub multipliers: Vec<f64>,
    /// Largest deviation of the normalized moments from the Kronecker pattern.
    pub moment_residual: f64,
}

#[derive(Debug, Clone)]
pub struct MultiscaleBasis {
    pub layers: usize,
    pub functions: Vec<BasisFunction>,
    /// Whether every K_i⁺ covers Ω.
    pub full_domain: bool,
}

impl BasisFunction {
    pub fn to_global(&self, n: usize, fine_nx: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (l, (x, y)) in self.rect.iter().enumerate() {
            out[y * fine_nx + x] = self.values[l];
        }
        out
    }
}

fn require_linear(ctx: &NlmcContext<'_>) -> Result<()> {
    if !ctx.law.is_linear() || ctx.mass.is_some() {
        return Err(NlmcError::InvalidArgument(
            "the linear basis path needs a linear elliptic context".into(),
        ));
    }
    Ok(())
}

fn basis_for_map(ctx: &NlmcContext<'_>, map: &LocalMap) -> Result<Vec<BasisFunction>> {
    let nl = map.n_continua();
    let zero = vec![0.0; nl];
    let sol = map.evaluate(ctx, &zero, None, FactorPolicy::Exact)?;
    let cols = sol.tangents(&map.own)?;
    let n = map.n_cells();
    Ok(map
        .own
        .iter()
        .zip(cols)
        .map(|(&o, col)| {
            let values = col[..n].to_vec();
            let bu = map.constraints.apply_b(&values);
            let moment_residual = bu
                .iter()
                .enumerate()
                .map(|(q, m)| {
                    let want = if q == o { 1.0 } else { 0.0 };
                    (m - want).abs()
                })
                .fold(0.0, f64::max);
            BasisFunction {
                continuum: map.continua[o],
                rect: map.rect,
                values,
                multipliers: col[n..].to_vec(),
                moment_residual,
            }
        })
        .collect())
}

/// ψ for continuum `j` of coarse cell `i`.
pub fn build_basis_entry(ctx: &NlmcContext<'_>, i: usize, j: usize, layers: usize) -> Result<BasisFunction> {
    require_linear(ctx)?;
    let map = LocalMap::new(ctx, i, layers);
    let c = ctx.space.of_cell(i).nth(j).ok_or_else(|| {
        NlmcError::InvalidArgument(format!("coarse cell {i} has no continuum {j}"))
    })?;
    basis_for_map(ctx, &map)?
        .into_iter()
        .find(|b| b.continuum == c)
        .ok_or_else(|| NlmcError::InvalidArgument("continuum not owned".into()))
}

/// Solves the constrained basis problem on every K_i⁺, one factorization per coarse cell.
pub fn build_basis_linear(ctx: &NlmcContext<'_>, layers: usize) -> Result<MultiscaleBasis> {
    require_linear(ctx)?;
    if layers == 0 {
        return Err(NlmcError::InvalidArgument("basis needs l >= 1".into()));
    }
    let per_cell = ctx.exec.try_map_range(ctx.coarse.len(), |k| {
        basis_for_map(ctx, &LocalMap::new(ctx, k, layers))
    })?;
    let mut functions: Vec<BasisFunction> = per_cell.into_iter().flatten().collect();
    functions.sort_by_key(|b| b.continuum);
    let full_domain = (0..ctx.coarse.len())
        .all(|k| ctx.coarse.oversample(k, layers).is_whole_domain(&ctx.coarse));
    Ok(MultiscaleBasis {
        layers,
        functions,
        full_domain,
    })
}

#[derive(Debug, Clone)]
pub struct UpscaledSystem {
    pub n: usize,
    /// Dense row-major A_T.
    pub a_t: Vec<f64>,
    /// F_p = (f, ψ_p).
    pub rhs: Vec<f64>,
}

impl UpscaledSystem {
    /// Nonzero entries as `row,col,value` lines.
    pub fn to_coordinate_text(&self) -> String {
        let mut s = String::new();
        for r in 0..self.n {
            for c in 0..self.n {
                let v = self.a_t[r * self.n + c];
                if v != 0.0 {
                    let _ = writeln!(s, "{r} {c} {v}");
                }
            }
        }
        s
    }

    pub fn asymmetry(&self) -> f64 {
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for r in 0..self.n {
            for c in 0..self.n {
                num = num.max((self.a_t[r * self.n + c] - self.a_t[c * self.n + r]).abs());
                den = den.max(self.a_t[r * self.n + c].abs());
            }
        }
        num / den.max(f64::MIN_POSITIVE)
    }
}

/// (A_T)_{pq} = a(ψ_p, ψ_q) with the fine TPFA form, F_p = (f, ψ_p).
pub fn assemble_upscaled(ctx: &NlmcContext<'_>, basis: &MultiscaleBasis, source: &[f64]) -> Result<UpscaledSystem> {
    let n = basis.functions.len();
    let nf = ctx.fine.len();
    let area = ctx.fine.cell_area();
    let op = FvOperator::new(nf, &ctx.energy_faces, &LinearLaw);
    let bounds = ctx.fine.rect();
    let rows = ctx.exec.map_range(n, |q| {
        let bq = &basis.functions[q];
        let g = bq.to_global(nf, ctx.fine.nx);
        let mut y = vec![0.0; nf];
        op.apply(&g, &mut y);
        let reach = bq.rect.expand(1, &bounds);
        let mut col = vec![0.0; n];
        for (p, bp) in basis.functions.iter().enumerate() {
            if !bp.rect.intersects(&reach) {
                continue;
            }
            let mut acc = 0.0;
            for (l, (x, y0)) in bp.rect.iter().enumerate() {
                acc += bp.values[l] * y[ctx.fine.index(x, y0)];
            }
            col[p] = acc;
        }
        let f: f64 = bq
            .rect
            .iter()
            .enumerate()
            .map(|(l, (x, y0))| bq.values[l] * source[ctx.fine.index(x, y0)] * area)
            .sum();
        (col, f)
    });
    let mut a_t = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (q, (col, f)) in rows.into_iter().enumerate() {
        for p in 0..n {
            a_t[p * n + q] = col[p];
        }
        rhs[q] = f;
    }
    Ok(UpscaledSystem { n, a_t, rhs })
}

/// Solves A_T U = F and returns U with u_ms = Σ U_p ψ_p.
pub fn solve_coarse_linear(
    ctx: &NlmcContext<'_>,
    system: &UpscaledSystem,
    basis: &MultiscaleBasis,
) -> Result<(MacroState, Vec<f64>)> {
    let n = system.n;
    let u = if ctx.boundary == GlobalBoundary::NoFlux && basis.full_domain {
        // constants lie in the kernel: border with Σ s(μ_c, μ_c) U_c = 0
        let m = n + 1;
        let mut a = vec![0.0; m * m];
        for r in 0..n {
            a[r * m..r * m + n].copy_from_slice(&system.a_t[r * n..(r + 1) * n]);
            let g = ctx.space.norms_sq[basis.functions[r].continuum];
            a[r * m + n] = g;
            a[n * m + r] = g;
        }
        let mut b = system.rhs.clone();
        b.push(0.0);
        let mut x = dense_solve(m, &a, &b)?;
        x.truncate(n);
        x
    } else {
        dense_solve(n, &system.a_t, &system.rhs)?
    };
    let nf = ctx.fine.len();
    let mut u_ms = vec![0.0; nf];
    for (p, b) in basis.functions.iter().enumerate() {
        for (l, (x, y)) in b.rect.iter().enumerate() {
            u_ms[ctx.fine.index(x, y)] += u[p] * b.values[l];
        }
    }
    let mut values = vec![0.0; ctx.space.len()];
    for (p, b) in basis.functions.iter().enumerate() {
        values[b.continuum] = u[p];
    }
    Ok((MacroState { values }, u_ms))
}
