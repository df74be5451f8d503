//! Fine-grid finite-volume reference solvers.

pub mod newton;
pub mod tpfa;
mod two_phase;

pub use newton::{Constraints, FactorPolicy, NewtonConfig, SaddleProblem, SaddleSolution};
pub use tpfa::{
    build_faces, harmonic, FaceLaw, Face, FvOperator, GlobalBoundary, LinearLaw, Neighbor,
    NonlinearOperator, PatchBoundary, SideCondition, UnsaturatedLaw,
};
pub use two_phase::{solve_two_phase, TwoPhaseConfig, TwoPhaseRun, WellSet};

use crate::error::{NlmcError, Result};
use crate::linalg::{SparseLu, TripletBuilder};
use crate::media::{CoefficientField, ConstitutiveSet, MonotoneLaw};
use crate::mesh::FineGrid;

/// Linear TPFA system on the whole fine grid.
pub struct DiscreteSystem {
    pub fine: FineGrid,
    pub faces: Vec<Face>,
    pub matrix: TripletBuilder,
    /// Integrated cell sources `f_i |cell|`.
    pub rhs: Vec<f64>,
    pub boundary: GlobalBoundary,
}

fn check_source(fine: &FineGrid, source: &[f64]) -> Result<()> {
    if source.len() != fine.len() {
        return Err(NlmcError::InvalidArgument(format!(
            "source has {} values, expected {}",
            source.len(),
            fine.len()
        )));
    }
    Ok(())
}

fn check_compatible(rhs: &[f64]) -> Result<()> {
    let net: f64 = rhs.iter().sum();
    let total: f64 = rhs.iter().map(|v| v.abs()).sum();
    if net.abs() > 1e-12 * total.max(f64::MIN_POSITIVE) {
        return Err(NlmcError::IncompatibleSource(net));
    }
    Ok(())
}

/// Mean-zero gauge constraint for pure-Neumann problems.
pub fn mean_zero_gauge(fine: &FineGrid) -> Constraints {
    let a = fine.cell_area();
    Constraints::transpose_columns(vec![(0..fine.len()).map(|i| (i, a)).collect()])
}

/// TPFA with harmonic face coefficients for `-∇·(k∇u) = f`.
pub fn assemble_linear(
    fine: &FineGrid,
    field: &CoefficientField,
    source: &[f64],
    boundary: GlobalBoundary,
) -> Result<DiscreteSystem> {
    check_source(fine, source)?;
    let bc = PatchBoundary::local(&fine.rect(), fine, boundary);
    let faces = build_faces(fine, &fine.rect(), &field.values, &bc);
    let rhs: Vec<f64> = source.iter().map(|f| f * fine.cell_area()).collect();
    if boundary == GlobalBoundary::NoFlux {
        check_compatible(&rhs)?;
    }
    let op = FvOperator::new(fine.len(), &faces, &LinearLaw);
    let mut matrix = TripletBuilder::with_capacity(fine.len(), 5 * fine.len());
    op.jacobian(&vec![0.0; fine.len()], &mut matrix);
    Ok(DiscreteSystem {
        fine: *fine,
        faces,
        matrix,
        rhs,
        boundary,
    })
}

impl DiscreteSystem {
    pub fn solve(&self) -> Result<Vec<f64>> {
        let n = self.fine.len();
        if self.boundary == GlobalBoundary::NoFlux {
            let mut t = self.matrix.clone();
            t.n = n + 1;
            let a = self.fine.cell_area();
            for i in 0..n {
                t.push(i, n, a);
                t.push(n, i, a);
            }
            let mut rhs = self.rhs.clone();
            rhs.push(0.0);
            let x = SparseLu::factor(&t)?.solve(&rhs)?;
            Ok(x[..n].to_vec())
        } else {
            SparseLu::factor(&self.matrix)?.solve(&self.rhs)
        }
    }

    pub fn operator(&self) -> FvOperator<'_> {
        FvOperator::new(self.fine.len(), &self.faces, &LinearLaw)
    }

    pub fn conservation_residual(&self, u: &[f64]) -> f64 {
        conservation_residual(&self.operator(), u, &self.rhs)
    }
}

/// ℓ1 norm over cells of the flux-balance defect `A(u) - rhs`.
pub fn conservation_residual(op: &dyn NonlinearOperator, u: &[f64], rhs: &[f64]) -> f64 {
    let mut r = vec![0.0; op.dim()];
    op.apply(u, &mut r);
    r.iter().zip(rhs).map(|(a, b)| (a - b).abs()).sum()
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub u: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub conservation: f64,
    pub used_picard: bool,
}

/// `-∇·(k g(|∇u|) ∇u) = f` by damped Newton.
pub fn solve_monotone(
    fine: &FineGrid,
    field: &CoefficientField,
    law: &MonotoneLaw,
    source: &[f64],
    boundary: GlobalBoundary,
    cfg: &NewtonConfig,
) -> Result<SolveReport> {
    check_source(fine, source)?;
    let bc = PatchBoundary::local(&fine.rect(), fine, boundary);
    let faces = build_faces(fine, &fine.rect(), &field.values, &bc);
    let rhs: Vec<f64> = source.iter().map(|f| f * fine.cell_area()).collect();
    let cons = if boundary == GlobalBoundary::NoFlux {
        check_compatible(&rhs)?;
        mean_zero_gauge(fine)
    } else {
        Constraints::none()
    };
    let targets = vec![0.0; cons.len()];
    let op = FvOperator::new(fine.len(), &faces, law);
    let sol = SaddleProblem::new(&op, &rhs, &cons, &targets).solve(None, cfg, FactorPolicy::None)?;
    let conservation = conservation_residual(&op, &sol.u, &rhs);
    Ok(SolveReport {
        iterations: sol.iterations,
        residual: sol.residual_u,
        conservation,
        used_picard: sol.used_picard,
        u: sol.u,
    })
}

/// Time-dependent source: one raster for all steps, or one per step.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSource {
    pub rasters: Vec<Vec<f64>>,
}

impl TimeSource {
    pub fn constant(raster: Vec<f64>) -> Self {
        Self {
            rasters: vec![raster],
        }
    }
    /// Source active during fine step `k` (1-based).
    pub fn at(&self, k: usize) -> &[f64] {
        if self.rasters.len() == 1 {
            &self.rasters[0]
        } else {
            &self.rasters[k - 1]
        }
    }
}

#[derive(Debug, Clone)]
pub struct TimeSeries {
    /// States at fine time nodes; entry 0 is the initial state.
    pub states: Vec<Vec<f64>>,
    pub dt: f64,
    pub conservation: Vec<f64>,
    pub source_l1: Vec<f64>,
    pub iterations: Vec<usize>,
}

/// Backward Euler for `c ∂_t u - ∇·(k_s k_r(u) ∇u) = f`.
#[allow(clippy::too_many_arguments)]
pub fn solve_unsaturated(
    fine: &FineGrid,
    field: &CoefficientField,
    fractures: &[bool],
    constitutive: &ConstitutiveSet,
    dt: f64,
    steps: usize,
    source: &TimeSource,
    boundary: GlobalBoundary,
    cfg: &NewtonConfig,
) -> Result<TimeSeries> {
    if steps == 0 || !(dt > 0.0) {
        return Err(NlmcError::InvalidArgument("need steps >= 1 and dt > 0".into()));
    }
    let n = fine.len();
    let area = fine.cell_area();
    let mass: Vec<f64> = fractures
        .iter()
        .map(|&fr| constitutive.storage(fr) * area / dt)
        .collect();
    let bc = PatchBoundary::local(&fine.rect(), fine, boundary);
    let faces = build_faces(fine, &fine.rect(), &field.values, &bc);
    let law = UnsaturatedLaw {
        constitutive: *constitutive,
    };
    let op = FvOperator::new(n, &faces, &law).with_mass(&mass);
    let needs_gauge = boundary == GlobalBoundary::NoFlux && mass.iter().all(|&m| m == 0.0);
    let cons = if needs_gauge {
        mean_zero_gauge(fine)
    } else {
        Constraints::none()
    };
    let targets = vec![0.0; cons.len()];
    let symbolic = std::sync::OnceLock::new();
    let mut out = TimeSeries {
        states: vec![vec![0.0; n]],
        dt,
        conservation: Vec::with_capacity(steps),
        source_l1: Vec::with_capacity(steps),
        iterations: Vec::with_capacity(steps),
    };
    for k in 1..=steps {
        let f = source.at(k);
        check_source(fine, f)?;
        let prev = out.states.last().unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| f[i] * area + mass[i] * prev[i]).collect();
        let lambda0 = vec![0.0; cons.len()];
        let sol = SaddleProblem::new(&op, &rhs, &cons, &targets)
            .with_symbolic(&symbolic)
            .solve(Some((prev, &lambda0)), cfg, FactorPolicy::None)
            .map_err(|e| e.at_step(k))?;
        out.conservation.push(conservation_residual(&op, &sol.u, &rhs));
        out.source_l1.push(f.iter().map(|v| v.abs() * area).sum());
        out.iterations.push(sol.iterations);
        out.states.push(sol.u);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_problems() {
        let f = FineGrid::new(8, 8).unwrap();
        let k = CoefficientField::constant(&f, 1.0).unwrap();
        let sys = assemble_linear(&f, &k, &vec![0.0; 64], GlobalBoundary::DirichletZero).unwrap();
        assert!(sys.solve().unwrap().iter().all(|&v| v == 0.0));
        let r = solve_monotone(
            &f,
            &k,
            &MonotoneLaw::default(),
            &vec![0.0; 64],
            GlobalBoundary::DirichletZero,
            &NewtonConfig::default(),
        )
        .unwrap();
        assert!(r.u.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn incompatible_neumann_source_rejected() {
        let f = FineGrid::new(4, 4).unwrap();
        let k = CoefficientField::constant(&f, 1.0).unwrap();
        let r = assemble_linear(&f, &k, &vec![1.0; 16], GlobalBoundary::NoFlux);
        assert!(matches!(r, Err(NlmcError::IncompatibleSource(_))));
    }

    #[test]
    fn neumann_gauge_mean_zero() {
        let f = FineGrid::new(6, 6).unwrap();
        let k = CoefficientField::from_fn(&f, |x, y| 1.0 + x + 2.0 * y).unwrap();
        let mut src = vec![0.0; 36];
        src[0] = 1.0;
        src[35] = -1.0;
        let sys = assemble_linear(&f, &k, &src, GlobalBoundary::NoFlux).unwrap();
        let u = sys.solve().unwrap();
        assert!(u.iter().sum::<f64>().abs() < 1e-12);
        assert!(sys.conservation_residual(&u) < 1e-12 * f.cell_area() * 2.0);
        let m = solve_monotone(
            &f,
            &k,
            &MonotoneLaw::Linear,
            &src,
            GlobalBoundary::NoFlux,
            &NewtonConfig::default(),
        )
        .unwrap();
        for (a, b) in u.iter().zip(&m.u) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
