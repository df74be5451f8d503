//! Nonlocal multi-continuum upscaling: downscaling maps, coarse solves and
//! downscaled reconstruction.

pub mod analysis;
mod basis;
mod coarse;
mod local;

pub use basis::{
    assemble_upscaled, build_basis_entry, build_basis_linear, solve_coarse_linear, BasisFunction,
    MultiscaleBasis, UpscaledSystem,
};
pub use coarse::{
    build_local_maps, solve_coarse_nonlinear, solve_coarse_superposition, solve_global_method,
    solve_with_maps, CoarseConfig, CoarseSolution,
};
pub use local::{global_downscale_nonlinear, LocalEvaluation, LocalMap};

use crate::continua::AuxiliarySpace;
use crate::error::{NlmcError, Result};
use crate::exec::Exec;
use crate::fine_solver::tpfa::neighbor_value;
use crate::fine_solver::{
    build_faces, Face, FaceLaw, GlobalBoundary, Neighbor, NewtonConfig, PatchBoundary,
};
use crate::mesh::{build_partition_of_unity, CoarseGrid, FineGrid, PartitionOfUnity};

/// Shared read-only state of an NLMC computation.
pub struct NlmcContext<'a> {
    pub coarse: CoarseGrid,
    pub fine: FineGrid,
    pub space: &'a AuxiliarySpace,
    /// κ̄ = k per fine cell.
    pub perm: &'a [f64],
    pub law: &'a dyn FaceLaw,
    pub boundary: GlobalBoundary,
    /// Per-cell coefficient of a zeroth-order term `m ⊙ u`, if any.
    pub mass: Option<&'a [f64]>,
    pub pou: PartitionOfUnity,
    pub newton: NewtonConfig,
    pub exec: Exec,
    /// Linear TPFA faces on Ω with the global boundary condition.
    pub energy_faces: Vec<Face>,
}

impl<'a> NlmcContext<'a> {
    pub fn new(
        space: &'a AuxiliarySpace,
        perm: &'a [f64],
        law: &'a dyn FaceLaw,
        boundary: GlobalBoundary,
    ) -> Result<Self> {
        let (coarse, fine) = (space.coarse, space.fine);
        if perm.len() != fine.len() {
            return Err(NlmcError::InvalidGrid("permeability raster size mismatch".into()));
        }
        let pou = build_partition_of_unity(&coarse, &fine)?;
        let energy_faces = build_faces(
            &fine,
            &fine.rect(),
            perm,
            &PatchBoundary::local(&fine.rect(), &fine, boundary),
        );
        Ok(Self {
            coarse,
            fine,
            space,
            perm,
            law,
            boundary,
            mass: None,
            pou,
            newton: NewtonConfig::default(),
            exec: Exec::default(),
            energy_faces,
        })
    }

    pub fn with_mass(mut self, mass: &'a [f64]) -> Self {
        self.mass = Some(mass);
        self
    }

    pub fn with_newton(mut self, cfg: NewtonConfig) -> Self {
        self.newton = cfg;
        self
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn energy_norm(&self, u: &[f64]) -> f64 {
        energy_norm(&self.energy_faces, u)
    }

    pub fn s_norm(&self, u: &[f64]) -> f64 {
        self.space.s_norm(u)
    }
}

/// ‖u‖_a from linear TPFA faces (built with κ̄ = k).
pub fn energy_norm(faces: &[Face], u: &[f64]) -> f64 {
    faces
        .iter()
        .map(|f| f.trans * (u[f.a] - neighbor_value(f.b, u)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// ‖u‖_a over interior faces only.
pub fn energy_norm_interior(faces: &[Face], u: &[f64]) -> f64 {
    faces
        .iter()
        .filter_map(|f| match f.b {
            Neighbor::Cell(j) => Some(f.trans * (u[f.a] - u[j]).powi(2)),
            Neighbor::Boundary(_) => None,
        })
        .sum::<f64>()
        .sqrt()
}

pub fn s_norm(space: &AuxiliarySpace, u: &[f64]) -> f64 {
    space.s_norm(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fine_solver::SideCondition;

    #[test]
    fn energy_norm_of_linear_function() {
        let fine = FineGrid::new(64, 64).unwrap();
        let faces = build_faces(
            &fine,
            &fine.rect(),
            &vec![1.0; fine.len()],
            &PatchBoundary::uniform(SideCondition::NoFlux),
        );
        let u = fine.sample(|x, _| x);
        let e = energy_norm_interior(&faces, &u);
        assert!((e * e - 1.0).abs() <= 0.02);
        assert_eq!(energy_norm(&faces, &vec![0.0; fine.len()]), 0.0);
    }
}
