//! Two-point flux faces, face flux laws and cell-centered operators.

use crate::linalg::TripletBuilder;
use crate::media::{ConstitutiveSet, MonotoneLaw};
use crate::mesh::{CellRect, FineGrid};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Neighbor {
    Cell(usize),
    /// Dirichlet value on a boundary face.
    Boundary(f64),
}

/// Face between local cell `a` and its neighbor; positive flux leaves `a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Face {
    pub a: usize,
    pub b: Neighbor,
    pub trans: f64,
    /// Center-to-center (or center-to-face) distance.
    pub dist: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SideCondition {
    NoFlux,
    Dirichlet(f64),
    /// One value per boundary face along the side, ordered by increasing coordinate.
    DirichletData(Vec<f64>),
}

impl SideCondition {
    fn value(&self, i: usize) -> Option<f64> {
        match self {
            SideCondition::NoFlux => None,
            SideCondition::Dirichlet(v) => Some(*v),
            SideCondition::DirichletData(d) => Some(d[i]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalBoundary {
    #[default]
    DirichletZero,
    NoFlux,
}

impl GlobalBoundary {
    pub fn side(&self) -> SideCondition {
        match self {
            GlobalBoundary::DirichletZero => SideCondition::Dirichlet(0.0),
            GlobalBoundary::NoFlux => SideCondition::NoFlux,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchBoundary {
    pub west: SideCondition,
    pub east: SideCondition,
    pub south: SideCondition,
    pub north: SideCondition,
}

impl PatchBoundary {
    pub fn uniform(side: SideCondition) -> Self {
        Self {
            west: side.clone(),
            east: side.clone(),
            south: side.clone(),
            north: side,
        }
    }

    /// Zero Dirichlet on sides interior to Ω, the global condition on sides on ∂Ω.
    pub fn local(rect: &CellRect, fine: &FineGrid, global: GlobalBoundary) -> Self {
        let pick = |on_boundary: bool| {
            if on_boundary {
                global.side()
            } else {
                SideCondition::Dirichlet(0.0)
            }
        };
        Self {
            west: pick(rect.x0 == 0),
            east: pick(rect.x1 == fine.nx),
            south: pick(rect.y0 == 0),
            north: pick(rect.y1 == fine.ny),
        }
    }

    pub fn is_pure_neumann(&self) -> bool {
        [&self.west, &self.east, &self.south, &self.north]
            .iter()
            .all(|s| matches!(s, SideCondition::NoFlux))
    }
}

#[inline]
pub fn harmonic(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// TPFA faces of the patch `rect` with harmonic face coefficients taken from
/// the global raster `perm`. Cell indices are patch-local.
pub fn build_faces(fine: &FineGrid, rect: &CellRect, perm: &[f64], bc: &PatchBoundary) -> Vec<Face> {
    let (hx, hy) = (fine.hx(), fine.hy());
    let k = |x: usize, y: usize| perm[fine.index(x, y)];
    let loc = |x: usize, y: usize| rect.local_index(x, y);
    let mut faces = Vec::with_capacity(2 * rect.len() + rect.width() + rect.height());
    for y in rect.y0..rect.y1 {
        for x in rect.x0..rect.x1 {
            if x + 1 < rect.x1 {
                faces.push(Face {
                    a: loc(x, y),
                    b: Neighbor::Cell(loc(x + 1, y)),
                    trans: harmonic(k(x, y), k(x + 1, y)) * hy / hx,
                    dist: hx,
                });
            }
            if y + 1 < rect.y1 {
                faces.push(Face {
                    a: loc(x, y),
                    b: Neighbor::Cell(loc(x, y + 1)),
                    trans: harmonic(k(x, y), k(x, y + 1)) * hx / hy,
                    dist: hy,
                });
            }
        }
    }
    let mut side = |cond: &SideCondition, cells: Vec<(usize, usize)>, along: f64, across: f64| {
        for (i, (x, y)) in cells.into_iter().enumerate() {
            if let Some(v) = cond.value(i) {
                faces.push(Face {
                    a: loc(x, y),
                    b: Neighbor::Boundary(v),
                    trans: 2.0 * k(x, y) * along / across,
                    dist: 0.5 * across,
                });
            }
        }
    };
    side(&bc.west, (rect.y0..rect.y1).map(|y| (rect.x0, y)).collect(), hy, hx);
    side(&bc.east, (rect.y0..rect.y1).map(|y| (rect.x1 - 1, y)).collect(), hy, hx);
    side(&bc.south, (rect.x0..rect.x1).map(|x| (x, rect.y0)).collect(), hx, hy);
    side(&bc.north, (rect.x0..rect.x1).map(|x| (x, rect.y1 - 1)).collect(), hx, hy);
    faces
}

/// Face flux `q(ua, ub)` from `a` to `b` with partial derivatives.
pub trait FaceLaw: Send + Sync {
    fn flux(&self, face: &Face, ua: f64, ub: f64) -> (f64, f64, f64);
    /// Secant coefficient `c` with `q = c (ua - ub)`.
    fn coefficient(&self, face: &Face, ua: f64, ub: f64) -> f64;
    fn is_linear(&self) -> bool;
}

impl FaceLaw for MonotoneLaw {
    #[inline]
    fn flux(&self, face: &Face, ua: f64, ub: f64) -> (f64, f64, f64) {
        let d = ua - ub;
        let t = (d / face.dist).abs();
        let q = face.trans * self.g(t) * d;
        let dq = face.trans * (self.g(t) + t * self.dg(t));
        (q, dq, -dq)
    }
    #[inline]
    fn coefficient(&self, face: &Face, ua: f64, ub: f64) -> f64 {
        face.trans * self.g(((ua - ub) / face.dist).abs())
    }
    fn is_linear(&self) -> bool {
        MonotoneLaw::is_linear(self)
    }
}

/// k_s k_r(u) with arithmetic face averaging of k_r.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnsaturatedLaw {
    pub constitutive: ConstitutiveSet,
}

impl FaceLaw for UnsaturatedLaw {
    #[inline]
    fn flux(&self, face: &Face, ua: f64, ub: f64) -> (f64, f64, f64) {
        let c = &self.constitutive;
        let kf = 0.5 * (c.kr(ua) + c.kr(ub));
        let d = ua - ub;
        let q = face.trans * kf * d;
        let da = face.trans * (kf + 0.5 * c.dkr(ua) * d);
        let db = face.trans * (-kf + 0.5 * c.dkr(ub) * d);
        (q, da, db)
    }
    #[inline]
    fn coefficient(&self, face: &Face, ua: f64, ub: f64) -> f64 {
        let c = &self.constitutive;
        face.trans * 0.5 * (c.kr(ua) + c.kr(ub))
    }
    fn is_linear(&self) -> bool {
        self.constitutive.kr_exponent == 0.0
    }
}

/// Linear flux with precomputed face coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LinearLaw;

impl FaceLaw for LinearLaw {
    #[inline]
    fn flux(&self, face: &Face, ua: f64, ub: f64) -> (f64, f64, f64) {
        (face.trans * (ua - ub), face.trans, -face.trans)
    }
    #[inline]
    fn coefficient(&self, face: &Face, _: f64, _: f64) -> f64 {
        face.trans
    }
    fn is_linear(&self) -> bool {
        true
    }
}

#[inline]
pub fn neighbor_value(b: Neighbor, u: &[f64]) -> f64 {
    match b {
        Neighbor::Cell(j) => u[j],
        Neighbor::Boundary(v) => v,
    }
}

/// Residual-form operator `u ↦ A(u)` whose first `dim()` unknowns are cells.
pub trait NonlinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, u: &[f64], out: &mut [f64]);
    /// Per-row sum of absolute values of the terms of `apply`, used as the
    /// scale for relative tolerances.
    fn magnitude(&self, u: &[f64], out: &mut [f64]);
    fn jacobian(&self, u: &[f64], t: &mut TripletBuilder);
    /// Picard matrix `S(u)`; `A(u) - S(u) u` is treated as lagged data.
    fn secant(&self, u: &[f64], t: &mut TripletBuilder);
    fn is_linear(&self) -> bool;
}

/// Σ_faces q + m ⊙ u over a set of cells.
pub struct FvOperator<'a> {
    pub n: usize,
    pub faces: &'a [Face],
    pub law: &'a dyn FaceLaw,
    pub mass: Option<&'a [f64]>,
}

impl<'a> FvOperator<'a> {
    pub fn new(n: usize, faces: &'a [Face], law: &'a dyn FaceLaw) -> Self {
        Self {
            n,
            faces,
            law,
            mass: None,
        }
    }

    pub fn with_mass(mut self, mass: &'a [f64]) -> Self {
        self.mass = Some(mass);
        self
    }

    /// Signed flux through each face.
    pub fn face_fluxes(&self, u: &[f64]) -> Vec<f64> {
        self.faces
            .iter()
            .map(|f| self.law.flux(f, u[f.a], neighbor_value(f.b, u)).0)
            .collect()
    }
}

impl NonlinearOperator for FvOperator<'_> {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, u: &[f64], out: &mut [f64]) {
        out[..self.n].iter_mut().for_each(|v| *v = 0.0);
        if let Some(m) = self.mass {
            for i in 0..self.n {
                out[i] = m[i] * u[i];
            }
        }
        for f in self.faces {
            let (q, _, _) = self.law.flux(f, u[f.a], neighbor_value(f.b, u));
            out[f.a] += q;
            if let Neighbor::Cell(j) = f.b {
                out[j] -= q;
            }
        }
    }

    fn magnitude(&self, u: &[f64], out: &mut [f64]) {
        out[..self.n].iter_mut().for_each(|v| *v = 0.0);
        if let Some(m) = self.mass {
            for i in 0..self.n {
                out[i] = (m[i] * u[i]).abs();
            }
        }
        for f in self.faces {
            let c = self.law.coefficient(f, u[f.a], neighbor_value(f.b, u));
            match f.b {
                Neighbor::Cell(j) => {
                    let s = c * (u[f.a].abs() + u[j].abs());
                    out[f.a] += s;
                    out[j] += s;
                }
                Neighbor::Boundary(v) => out[f.a] += c * (u[f.a].abs() + v.abs()),
            }
        }
    }

    fn jacobian(&self, u: &[f64], t: &mut TripletBuilder) {
        if let Some(m) = self.mass {
            for i in 0..self.n {
                t.push(i, i, m[i]);
            }
        }
        for f in self.faces {
            let (_, da, db) = self.law.flux(f, u[f.a], neighbor_value(f.b, u));
            t.push(f.a, f.a, da);
            if let Neighbor::Cell(j) = f.b {
                t.push(f.a, j, db);
                t.push(j, f.a, -da);
                t.push(j, j, -db);
            }
        }
    }

    fn secant(&self, u: &[f64], t: &mut TripletBuilder) {
        if let Some(m) = self.mass {
            for i in 0..self.n {
                t.push(i, i, m[i]);
            }
        }
        for f in self.faces {
            let c = self.law.coefficient(f, u[f.a], neighbor_value(f.b, u));
            t.push(f.a, f.a, c);
            if let Neighbor::Cell(j) = f.b {
                t.push(f.a, j, -c);
                t.push(j, f.a, -c);
                t.push(j, j, c);
            }
        }
    }

    fn is_linear(&self) -> bool {
        self.law.is_linear()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn harmonic_face_coefficient() {
        let fine = FineGrid::new(2, 1).unwrap();
        let faces = build_faces(
            &fine,
            &fine.rect(),
            &[1.0, 3.0],
            &PatchBoundary::uniform(SideCondition::NoFlux),
        );
        assert_eq!(faces.len(), 1);
        // square cells: geometry factor h_y / h_x = 2
        assert!((faces[0].trans - 1.5 * 2.0).abs() < 1e-14);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let fine = FineGrid::new(5, 4).unwrap();
        let perm: Vec<f64> = (0..fine.len()).map(|i| 1.0 + (i % 7) as f64).collect();
        let faces = build_faces(
            &fine,
            &fine.rect(),
            &perm,
            &PatchBoundary::local(&fine.rect(), &fine, GlobalBoundary::DirichletZero),
        );
        let laws: Vec<Box<dyn FaceLaw>> = vec![
            Box::new(MonotoneLaw::default()),
            Box::new(UnsaturatedLaw {
                constitutive: ConstitutiveSet {
                    kr_exponent: 0.3,
                    ..Default::default()
                },
            }),
        ];
        let u: Vec<f64> = (0..fine.len()).map(|i| ((i * 37) % 11) as f64 * 0.7 - 3.0).collect();
        for law in &laws {
            let op = FvOperator::new(fine.len(), &faces, law.as_ref());
            let mut t = TripletBuilder::new(fine.len());
            op.jacobian(&u, &mut t);
            let dir: Vec<f64> = (0..fine.len()).map(|i| ((i * 13) % 5) as f64 - 2.0).collect();
            let jv = t.apply(&dir);
            let eps = 1e-6;
            let mut up = vec![0.0; fine.len()];
            let mut dn = vec![0.0; fine.len()];
            let uplus: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + eps * b).collect();
            let uminus: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a - eps * b).collect();
            op.apply(&uplus, &mut up);
            op.apply(&uminus, &mut dn);
            for i in 0..fine.len() {
                let fd = (up[i] - dn[i]) / (2.0 * eps);
                assert!((fd - jv[i]).abs() <= 1e-6 * jv[i].abs().max(1.0), "{fd} vs {}", jv[i]);
            }
        }
    }
}
