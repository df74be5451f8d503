use super::Edge;
use crate::continua::{AuxiliarySpace, ContinuumKind};
use crate::error::{NlmcError, Result};
use crate::fine_solver::{
    build_faces, harmonic, Constraints, Face, FaceLaw, FactorPolicy, FvOperator, Neighbor, NewtonConfig,
    PatchBoundary, SaddleProblem, SideCondition, UnsaturatedLaw,
};
use crate::media::ConstitutiveSet;
use crate::mesh::CellRect;
use faer::sparse::linalg::solvers::SymbolicLu;
use std::sync::{Mutex, OnceLock};

/// Linear face law with a per-cell mobility factor, arithmetic on faces.
pub struct MobilityLaw {
    pub mobility: Vec<f64>,
}

impl MobilityLaw {
    fn face_mobility(&self, face: &Face) -> f64 {
        match face.b {
            Neighbor::Cell(j) => 0.5 * (self.mobility[face.a] + self.mobility[j]),
            Neighbor::Boundary(_) => self.mobility[face.a],
        }
    }
}

impl FaceLaw for MobilityLaw {
    fn flux(&self, face: &Face, ua: f64, ub: f64) -> (f64, f64, f64) {
        let c = face.trans * self.face_mobility(face);
        (c * (ua - ub), c, -c)
    }
    fn coefficient(&self, face: &Face, _ua: f64, _ub: f64) -> f64 {
        face.trans * self.face_mobility(face)
    }
    fn is_linear(&self) -> bool {
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Physics {
    /// `−∇·(k k_r(u) ∇u)`.
    Unsaturated(ConstitutiveSet),
    /// Pressure equation `−∇·(k λ_t(s) ∇p)` with saturation frozen per continuum.
    TwoPhase(ConstitutiveSet),
}

pub struct TransContext<'a> {
    pub space: &'a AuxiliarySpace,
    pub perm: &'a [f64],
    pub physics: Physics,
    pub newton: NewtonConfig,
    /// Coarse oversampling layers around the pair.
    pub layers: usize,
    /// Relative mean difference below which the linearized branch is used.
    pub epsilon: f64,
}

impl<'a> TransContext<'a> {
    pub fn new(space: &'a AuxiliarySpace, perm: &'a [f64], physics: Physics) -> Self {
        Self {
            space,
            perm,
            physics,
            newton: NewtonConfig::default(),
            layers: 1,
            epsilon: 1e-6,
        }
    }

    pub fn is_two_phase(&self) -> bool {
        matches!(self.physics, Physics::TwoPhase(_))
    }

    /// Coarse region of the pair enlarged by `layers`.
    pub fn pair_region(&self, edge: &Edge) -> (CellRect, CellRect) {
        let c = &self.space.coarse;
        let ka = self.space.continua[edge.alpha].coarse_cell;
        let kb = self.space.continua[edge.beta].coarse_cell;
        let (ax, ay) = c.coords(ka);
        let (bx, by) = c.coords(kb);
        let pair = CellRect::new(ax.min(bx), ay.min(by), ax.max(bx) + 1, ay.max(by) + 1);
        (pair, pair.expand(self.layers, &c.rect()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTarget {
    pub t: f64,
    /// Water-phase flux coefficient (two-phase only).
    pub tw: Option<f64>,
    pub linearized: bool,
}

struct PairProblem {
    rect: CellRect,
    faces: Vec<Face>,
    law: Box<dyn FaceLaw>,
    constraints: Constraints,
    /// Shared faces as local (α cell, β cell, trans).
    interface: Vec<(usize, usize, f64)>,
    /// f_w of the α and β saturations.
    fw: Option<(f64, f64)>,
}

fn same_cell(ctx: &TransContext<'_>, edge: &Edge) -> bool {
    ctx.space.continua[edge.alpha].coarse_cell == ctx.space.continua[edge.beta].coarse_cell
}

/// Oversampled-boundary data: planar along the axis between the coarse
/// centers of α and β through their means, constant for a same-cell pair.
struct PlanarData {
    mid: f64,
    slope: (f64, f64),
    origin: (f64, f64),
}

impl PlanarData {
    fn new(ctx: &TransContext<'_>, edge: &Edge, ua: f64, ub: f64) -> Self {
        if same_cell(ctx, edge) {
            let level = if ctx.space.continua[edge.alpha].kind == ContinuumKind::Matrix {
                ua
            } else {
                ub
            };
            return Self {
                mid: level,
                slope: (0.0, 0.0),
                origin: (0.0, 0.0),
            };
        }
        Self::planar(ctx, edge, 0.5 * (ua + ub), ua - ub)
    }

    fn planar(ctx: &TransContext<'_>, edge: &Edge, mid: f64, delta: f64) -> Self {
        let c = &ctx.space.coarse;
        let center = |k: usize| {
            let (x, y) = c.coords(k);
            c.center(x, y)
        };
        let ka = ctx.space.continua[edge.alpha].coarse_cell;
        let kb = ctx.space.continua[edge.beta].coarse_cell;
        let (pa, pb) = (center(ka), center(kb));
        let d2 = (pa.0 - pb.0).powi(2) + (pa.1 - pb.1).powi(2);
        Self {
            mid,
            slope: (delta * (pa.0 - pb.0) / d2, delta * (pa.1 - pb.1) / d2),
            origin: (0.5 * (pa.0 + pb.0), 0.5 * (pa.1 + pb.1)),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        self.mid + self.slope.0 * (x - self.origin.0) + self.slope.1 * (y - self.origin.1)
    }
}

fn build_problem(ctx: &TransContext<'_>, edge: &Edge, data: &PlanarData, sats: Option<&[f64]>) -> Result<PairProblem> {
    let space = ctx.space;
    let fine = &space.fine;
    let (_, region) = ctx.pair_region(edge);
    let rect = space.coarse.fine_rect(&region);
    let (hx, hy) = (fine.hx(), fine.hy());
    let side = |on_boundary: bool, pts: Vec<(f64, f64)>| {
        if on_boundary {
            SideCondition::NoFlux
        } else {
            SideCondition::DirichletData(pts.into_iter().map(|(x, y)| data.at(x, y)).collect())
        }
    };
    let bc = PatchBoundary {
        west: side(
            rect.x0 == 0,
            (rect.y0..rect.y1).map(|y| (rect.x0 as f64 * hx, (y as f64 + 0.5) * hy)).collect(),
        ),
        east: side(
            rect.x1 == fine.nx,
            (rect.y0..rect.y1).map(|y| (rect.x1 as f64 * hx, (y as f64 + 0.5) * hy)).collect(),
        ),
        south: side(
            rect.y0 == 0,
            (rect.x0..rect.x1).map(|x| ((x as f64 + 0.5) * hx, rect.y0 as f64 * hy)).collect(),
        ),
        north: side(
            rect.y1 == fine.ny,
            (rect.x0..rect.x1).map(|x| ((x as f64 + 0.5) * hx, rect.y1 as f64 * hy)).collect(),
        ),
    };
    let faces = build_faces(fine, &rect, ctx.perm, &bc);
    let area = fine.cell_area();
    let rows: Vec<Vec<(usize, f64)>> = [edge.alpha, edge.beta]
        .iter()
        .map(|&c| {
            let v = space.volume(c);
            space.continua[c]
                .cells
                .iter()
                .map(|&i| {
                    let (x, y) = fine.coords(i);
                    (rect.local_index(x, y), area / v)
                })
                .collect()
        })
        .collect();
    let (law, fw): (Box<dyn FaceLaw>, _) = match ctx.physics {
        Physics::Unsaturated(cons) => (Box::new(UnsaturatedLaw { constitutive: cons }), None),
        Physics::TwoPhase(cons) => {
            let s = sats.ok_or_else(|| NlmcError::InvalidArgument("two-phase transmissibility needs saturations".into()))?;
            let mobility = rect
                .iter()
                .map(|(x, y)| cons.total_mobility(s[space.owner[fine.index(x, y)]]))
                .collect();
            let fw = (cons.fractional_flow(s[edge.alpha]), cons.fractional_flow(s[edge.beta]));
            (Box::new(MobilityLaw { mobility }), Some(fw))
        }
    };
    let interface = edge
        .faces
        .iter()
        .map(|&(a, b)| {
            let (ax, ay) = fine.coords(a);
            let (bx, by) = fine.coords(b);
            let ratio = if ay == by { hy / hx } else { hx / hy };
            (
                rect.local_index(ax, ay),
                rect.local_index(bx, by),
                harmonic(ctx.perm[a], ctx.perm[b]) * ratio,
            )
        })
        .collect();
    Ok(PairProblem {
        rect,
        faces,
        law,
        constraints: Constraints::transpose_columns(rows),
        interface,
        fw,
    })
}

/// Per-edge reuse across repeated queries: the symbolic factorization of the
/// local system and the last converged local field of each solve kind.
#[derive(Default)]
pub struct PairCache {
    symbolic: OnceLock<SymbolicLu<usize>>,
    warm: Mutex<[Option<Vec<f64>>; 3]>,
}

impl PairCache {
    pub fn new() -> Self {
        Self::default()
    }
}

struct PairFlux {
    q: f64,
    w: f64,
    ma: f64,
    mb: f64,
}

/// Local solve with boundary data `data`; the α and β means are imposed by
/// multipliers when `targets` is given and measured otherwise.
fn pair_solve(
    ctx: &TransContext<'_>,
    edge: &Edge,
    data: &PlanarData,
    targets: Option<[f64; 2]>,
    sats: Option<&[f64]>,
    cache: &PairCache,
    slot: usize,
) -> Result<PairFlux> {
    let p = build_problem(ctx, edge, data, sats)?;
    let n = p.rect.len();
    let op = FvOperator::new(n, &p.faces, p.law.as_ref());
    let rhs = vec![0.0; n];
    let none = Constraints::none();
    let (cons, tg): (&Constraints, &[f64]) = match &targets {
        Some(t) => (&p.constraints, t),
        None => (&none, &[]),
    };
    let warm = cache.warm.lock().unwrap_or_else(|e| e.into_inner())[slot].take();
    let u0 = warm.filter(|w| w.len() == n).unwrap_or_else(|| {
        let (hx, hy) = (ctx.space.fine.hx(), ctx.space.fine.hy());
        p.rect
            .iter()
            .map(|(x, y)| data.at((x as f64 + 0.5) * hx, (y as f64 + 0.5) * hy))
            .collect()
    });
    let l0 = vec![0.0; tg.len()];
    let sol = SaddleProblem::new(&op, &rhs, cons, tg)
        .with_symbolic(&cache.symbolic)
        .solve(Some((&u0, &l0)), &ctx.newton, FactorPolicy::None)?;
    let dist = ctx.space.fine.hx();
    let (mut q, mut w) = (0.0, 0.0);
    for &(a, b, trans) in &p.interface {
        let face = Face {
            a,
            b: Neighbor::Cell(b),
            trans,
            dist,
        };
        let f = p.law.flux(&face, sol.u[a], sol.u[b]).0;
        q += f;
        if let Some((fa, fb)) = p.fw {
            w += if f > 0.0 { fa * f } else { fb * f };
        }
    }
    let means = p.constraints.apply_b(&sol.u);
    cache.warm.lock().unwrap_or_else(|e| e.into_inner())[slot] = Some(sol.u);
    Ok(PairFlux {
        q,
        w,
        ma: means[0],
        mb: means[1],
    })
}

/// Admissible range of `delta / d` for the amplitude rescale; outside it the
/// first solve is kept.
const RESCALE_BAND: (f64, f64) = (0.25, 4.0);

/// Across coarse cells the pair means are imposed through the offset and
/// amplitude of the planar data: one solve measures the response, a second
/// solve uses the rescaled data.
fn cross_cell_flux(
    ctx: &TransContext<'_>,
    edge: &Edge,
    mid: f64,
    delta: f64,
    sats: Option<&[f64]>,
    cache: &PairCache,
) -> Result<PairFlux> {
    let first = pair_solve(ctx, edge, &PlanarData::planar(ctx, edge, mid, delta), None, sats, cache, 0)?;
    let d = first.ma - first.mb;
    if d == 0.0 || !d.is_finite() {
        return Err(NlmcError::Singular(format!(
            "pair ({}, {}) has no mean response to planar data",
            edge.alpha, edge.beta
        )));
    }
    if !(RESCALE_BAND.0..=RESCALE_BAND.1).contains(&(delta / d)) {
        return Ok(first);
    }
    let amp = delta * delta / d;
    let shift = mid - 0.5 * (first.ma + first.mb);
    pair_solve(ctx, edge, &PlanarData::planar(ctx, edge, mid + shift, amp), None, sats, cache, 1)
}

/// Flow-based transmissibility of `edge` at continuum means `means`
/// (and saturations `sats` for two-phase flow).
pub fn compute_transmissibility(
    ctx: &TransContext<'_>,
    edge: &Edge,
    means: &[f64],
    sats: Option<&[f64]>,
) -> Result<PairTarget> {
    compute_transmissibility_cached(ctx, edge, means, sats, &PairCache::new())
}

/// [`compute_transmissibility`] reusing factorization structure and warm
/// starts from `cache`, which must belong to `edge`.
pub fn compute_transmissibility_cached(
    ctx: &TransContext<'_>,
    edge: &Edge,
    means: &[f64],
    sats: Option<&[f64]>,
    cache: &PairCache,
) -> Result<PairTarget> {
    let (ua, ub) = (means[edge.alpha], means[edge.beta]);
    let delta = ua - ub;
    let scale = 1.0 + ua.abs().max(ub.abs());
    let mid = 0.5 * (ua + ub);
    let two = ctx.is_two_phase();
    let linearized = delta.abs() <= ctx.epsilon * scale;
    let h = 1e-4 * scale;
    let target = |q: f64, w: f64, d: f64| PairTarget {
        t: q / d,
        tw: two.then_some(w / d),
        linearized,
    };
    if !same_cell(ctx, edge) {
        let f = cross_cell_flux(ctx, edge, mid, if linearized { h } else { delta }, sats, cache)?;
        return Ok(target(f.q, f.w, f.ma - f.mb));
    }
    let solve = |a: f64, b: f64, slot| {
        pair_solve(ctx, edge, &PlanarData::new(ctx, edge, a, b), Some([a, b]), sats, cache, slot)
    };
    if !linearized {
        let f = solve(ua, ub, 0)?;
        return Ok(target(f.q, f.w, delta));
    }
    // derivative in the mean difference at fixed mid value
    let p = solve(mid + 0.5 * h, mid - 0.5 * h, 1)?;
    let m = solve(mid - 0.5 * h, mid + 0.5 * h, 2)?;
    Ok(target(p.q - m.q, p.w - m.w, 2.0 * h))
}
