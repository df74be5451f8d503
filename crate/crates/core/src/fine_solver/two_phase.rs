//! IMPES for incompressible two-phase flow with no-flux boundaries.

use super::tpfa::{build_faces, Neighbor, PatchBoundary, SideCondition};
use crate::error::{NlmcError, Result};
use crate::linalg::{SparseLu, TripletBuilder};
use crate::media::{CoefficientField, ConstitutiveSet};
use crate::mesh::FineGrid;
use faer::sparse::linalg::solvers::SymbolicLu;
use serde::{Deserialize, Serialize};

/// Injector and producer cells sharing a total rate `rate` equally.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WellSet {
    pub injector: Vec<usize>,
    pub producer: Vec<usize>,
    pub rate: f64,
}

impl WellSet {
    /// Volumetric source per cell (positive injection).
    pub fn rates(&self, n: usize) -> Vec<f64> {
        let mut q = vec![0.0; n];
        for &i in &self.injector {
            q[i] += self.rate / self.injector.len() as f64;
        }
        for &i in &self.producer {
            q[i] -= self.rate / self.producer.len() as f64;
        }
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoPhaseConfig {
    pub dt: f64,
    pub steps: usize,
    pub cfl_limit: f64,
    pub max_substeps: usize,
}

impl TwoPhaseConfig {
    pub fn new(dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            cfl_limit: 0.9,
            max_substeps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoPhaseRun {
    /// Pressure at every time node, computed from the saturation at that node.
    pub pressure: Vec<Vec<f64>>,
    pub saturation: Vec<Vec<f64>>,
    /// CFL number of the full step, per step.
    pub cfl: Vec<f64>,
    pub substeps: Vec<usize>,
    /// Largest relative water-mass defect over the substeps of each step.
    pub water_balance: Vec<f64>,
    /// Total magnitude removed by clamping saturations to [0, 1], per step.
    pub clamped: Vec<f64>,
    /// ℓ1 conservation defect of each pressure solve.
    pub conservation: Vec<f64>,
}

struct PressureSolver<'a> {
    fine: &'a FineGrid,
    faces: Vec<super::Face>,
    q: Vec<f64>,
    symbolic: std::sync::OnceLock<SymbolicLu<usize>>,
    cons: &'a ConstitutiveSet,
}

impl PressureSolver<'_> {
    fn face_trans(&self, s: &[f64]) -> Vec<f64> {
        self.faces
            .iter()
            .map(|f| match f.b {
                Neighbor::Cell(j) => {
                    f.trans
                        * 0.5
                        * (self.cons.total_mobility(s[f.a]) + self.cons.total_mobility(s[j]))
                }
                Neighbor::Boundary(_) => 0.0,
            })
            .collect()
    }

    /// Returns pressure, face fluxes and the conservation defect.
    fn solve(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let n = self.fine.len();
        let trans = self.face_trans(s);
        // compatible Neumann system: pin cell 0, then shift to zero mean
        let mut t = TripletBuilder::with_capacity(n, 4 * self.faces.len() + 1);
        let mut push = |i: usize, j: usize, v: f64| {
            if i != 0 {
                t.push(i, j, v);
            }
        };
        for (f, &c) in self.faces.iter().zip(&trans) {
            if let Neighbor::Cell(j) = f.b {
                push(f.a, f.a, c);
                push(f.a, j, -c);
                push(j, f.a, -c);
                push(j, j, c);
            }
        }
        t.push(0, 0, 1.0);
        let a = t.to_matrix()?;
        if self.symbolic.get().is_none() {
            let sym = SymbolicLu::try_new(a.symbolic())
                .map_err(|e| NlmcError::Singular(format!("symbolic LU: {e:?}")))?;
            let _ = self.symbolic.set(sym);
        }
        let lu = SparseLu::factor_matrix(&a, self.symbolic.get())?;
        let mut rhs = self.q.clone();
        rhs[0] = 0.0;
        let mut p = lu.solve(&rhs)?;
        let mean = p.iter().sum::<f64>() / n as f64;
        p.iter_mut().for_each(|v| *v -= mean);
        let flux: Vec<f64> = self
            .faces
            .iter()
            .zip(&trans)
            .map(|(f, &c)| match f.b {
                Neighbor::Cell(j) => c * (p[f.a] - p[j]),
                Neighbor::Boundary(_) => 0.0,
            })
            .collect();
        let mut div = vec![0.0; n];
        for (f, &q) in self.faces.iter().zip(&flux) {
            if let Neighbor::Cell(j) = f.b {
                div[f.a] += q;
                div[j] -= q;
            }
        }
        let defect = div.iter().zip(&self.q).map(|(d, q)| (d - q).abs()).sum();
        Ok((p, flux, defect))
    }
}

pub fn solve_two_phase(
    fine: &FineGrid,
    field: &CoefficientField,
    fractures: &[bool],
    cons: &ConstitutiveSet,
    wells: &WellSet,
    s0: &[f64],
    cfg: &TwoPhaseConfig,
) -> Result<TwoPhaseRun> {
    let n = fine.len();
    if cfg.steps == 0 || !(cfg.dt > 0.0) {
        return Err(NlmcError::InvalidArgument("need steps >= 1 and dt > 0".into()));
    }
    if s0.len() != n || fractures.len() != n {
        return Err(NlmcError::InvalidArgument("state size mismatch".into()));
    }
    if wells.injector.is_empty() || wells.producer.is_empty() {
        return Err(NlmcError::InvalidArgument("need at least one injector and producer".into()));
    }
    let q = wells.rates(n);
    let injection: Vec<f64> = q.iter().map(|v| v.max(0.0)).collect();
    let production: Vec<f64> = q.iter().map(|v| (-v).max(0.0)).collect();
    let solver = PressureSolver {
        fine,
        faces: build_faces(
            fine,
            &fine.rect(),
            &field.values,
            &PatchBoundary::uniform(SideCondition::NoFlux),
        ),
        q,
        symbolic: std::sync::OnceLock::new(),
        cons,
    };
    let area = fine.cell_area();
    let pore: Vec<f64> = fractures.iter().map(|&f| cons.porosity(f) * area).collect();
    let mut run = TwoPhaseRun {
        pressure: Vec::with_capacity(cfg.steps + 1),
        saturation: vec![s0.to_vec()],
        cfl: Vec::with_capacity(cfg.steps),
        substeps: Vec::with_capacity(cfg.steps),
        water_balance: Vec::with_capacity(cfg.steps),
        clamped: Vec::with_capacity(cfg.steps),
        conservation: Vec::with_capacity(cfg.steps + 1),
    };
    let (p, mut flux, defect) = solver.solve(s0)?;
    run.pressure.push(p);
    run.conservation.push(defect);
    let fmax = cons.max_fractional_flow_derivative();
    let mut warned = false;
    for step in 1..=cfg.steps {
        let mut s = run.saturation.last().unwrap().clone();
        let mut outflow = production.clone();
        for (f, &v) in solver.faces.iter().zip(&flux) {
            if let Neighbor::Cell(j) = f.b {
                if v > 0.0 {
                    outflow[f.a] += v;
                } else {
                    outflow[j] -= v;
                }
            }
        }
        let cfl = (0..n)
            .map(|i| cfg.dt * fmax * outflow[i] / pore[i])
            .fold(0.0f64, f64::max);
        let sub = if cfl > cfg.limit_or_default() {
            (cfl / cfg.limit_or_default()).ceil() as usize
        } else {
            1
        };
        if sub > cfg.max_substeps {
            return Err(NlmcError::InvalidArgument(format!(
                "CFL {cfl:.3e} needs {sub} substeps, above the limit {}",
                cfg.max_substeps
            ))
            .at_step(step));
        }
        if sub > 1 && !warned {
            log::warn!("CFL {cfl:.3e} exceeds {}; using {sub} substeps", cfg.cfl_limit);
            warned = true;
        }
        let h = cfg.dt / sub as f64;
        let mut balance: f64 = 0.0;
        let mut clamped = 0.0;
        let mut rate = vec![0.0; n];
        for _ in 0..sub {
            for i in 0..n {
                rate[i] = injection[i] - production[i] * cons.fractional_flow(s[i]);
            }
            let external: f64 = rate.iter().sum();
            let external_abs: f64 = rate.iter().map(|v| v.abs()).sum();
            for (f, &v) in solver.faces.iter().zip(&flux) {
                if let Neighbor::Cell(j) = f.b {
                    let up = if v > 0.0 { s[f.a] } else { s[j] };
                    let w = cons.fractional_flow(up) * v;
                    rate[f.a] -= w;
                    rate[j] += w;
                }
            }
            let mut stored = 0.0;
            for i in 0..n {
                let ds = h * rate[i] / pore[i];
                s[i] += ds;
                stored += pore[i] * ds;
            }
            let defect = (stored - h * external).abs() / (h * external_abs).max(f64::MIN_POSITIVE);
            balance = balance.max(defect);
            for v in s.iter_mut() {
                if *v < 0.0 {
                    clamped += -*v;
                    *v = 0.0;
                } else if *v > 1.0 {
                    clamped += *v - 1.0;
                    *v = 1.0;
                }
            }
        }
        if clamped > 1e-12 {
            log::warn!("step {step}: clamped saturation by {clamped:.3e}");
        }
        let (p, fl, defect) = solver.solve(&s).map_err(|e| e.at_step(step))?;
        flux = fl;
        run.pressure.push(p);
        run.conservation.push(defect);
        run.saturation.push(s);
        run.cfl.push(cfl);
        run.substeps.push(sub);
        run.water_balance.push(balance);
        run.clamped.push(clamped);
    }
    Ok(run)
}

impl TwoPhaseConfig {
    fn limit_or_default(&self) -> f64 {
        if self.cfl_limit > 0.0 {
            self.cfl_limit
        } else {
            0.9
        }
    }
}
