//! Learned nonlinear transmissibilities between adjacent continua.

pub mod coarse;
pub mod dataset;
pub mod regress;
pub mod transmissibility;

pub use coarse::{
    baseline_upscale, coarse_mean_error, solve_test1_coarse, solve_test2_coarse, CellGraph, CoarseRun, ExactProvider,
    NodeLayout, PicardConfig, SurrogateProvider, TransmissibilityProvider, TwoPhaseCoarseRun, UpscaledProvider,
};
pub use dataset::{edge_features, feature_names, generate_dataset, Dataset, Sample};
pub use regress::{fit_all, metrics, train, ClassReport, Metrics, ModelKind, Regressor, TrainReport};
pub use transmissibility::{
    compute_transmissibility, compute_transmissibility_cached, MobilityLaw, PairCache, PairTarget, Physics, TransContext,
};

use crate::continua::{AuxiliarySpace, ContinuumKind};
use crate::error::{NlmcError, Result};
use crate::fine_solver::harmonic;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    HorizontalMatrix,
    VerticalMatrix,
    MatrixFracture,
    FractureFracture,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [
        EdgeClass::HorizontalMatrix,
        EdgeClass::VerticalMatrix,
        EdgeClass::MatrixFracture,
        EdgeClass::FractureFracture,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            EdgeClass::HorizontalMatrix => "mm-h",
            EdgeClass::VerticalMatrix => "mm-v",
            EdgeClass::MatrixFracture => "mf",
            EdgeClass::FractureFracture => "ff",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| NlmcError::Parse(format!("unknown edge class '{s}'")))
    }

    pub fn index(&self) -> usize {
        *self as usize
    }
}

/// A pair of continua sharing at least one fine face.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub alpha: usize,
    pub beta: usize,
    pub class: EdgeClass,
    /// Shared fine faces as (cell in α, cell in β), global fine indices.
    pub faces: Vec<(usize, usize)>,
    /// Σ harmonic face transmissibilities of the shared faces.
    pub trans_sum: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuumGraph {
    pub edges: Vec<Edge>,
}

impl ContinuumGraph {
    pub fn class_counts(&self) -> [usize; 4] {
        let mut c = [0; 4];
        for e in &self.edges {
            c[e.class.index()] += 1;
        }
        c
    }
}

/// Adjacency of continua through fine faces, ordered by `(α, β)` with `α < β`.
pub fn build_graph(space: &AuxiliarySpace, perm: &[f64]) -> ContinuumGraph {
    let fine = space.fine;
    let mut map: BTreeMap<(usize, usize), Edge> = BTreeMap::new();
    let mut visit = |i: usize, j: usize, along_over_across: f64| {
        let (ci, cj) = (space.owner[i], space.owner[j]);
        if ci == cj {
            return;
        }
        let (a, b, fa, fb) = if ci < cj { (ci, cj, i, j) } else { (cj, ci, j, i) };
        let t = harmonic(perm[i], perm[j]) * along_over_across;
        let e = map.entry((a, b)).or_insert_with(|| {
            let (ka, kb) = (&space.continua[a], &space.continua[b]);
            let class = match (ka.kind, kb.kind) {
                (ContinuumKind::Matrix, ContinuumKind::Matrix) => {
                    let (ax, _) = space.coarse.coords(ka.coarse_cell);
                    let (bx, _) = space.coarse.coords(kb.coarse_cell);
                    if ax != bx {
                        EdgeClass::HorizontalMatrix
                    } else {
                        EdgeClass::VerticalMatrix
                    }
                }
                (ContinuumKind::Fracture, ContinuumKind::Fracture) => EdgeClass::FractureFracture,
                _ => EdgeClass::MatrixFracture,
            };
            Edge {
                alpha: a,
                beta: b,
                class,
                faces: Vec::new(),
                trans_sum: 0.0,
            }
        });
        e.faces.push((fa, fb));
        e.trans_sum += t;
    };
    for y in 0..fine.ny {
        for x in 0..fine.nx {
            let i = fine.index(x, y);
            if x + 1 < fine.nx {
                visit(i, fine.index(x + 1, y), fine.hy() / fine.hx());
            }
            if y + 1 < fine.ny {
                visit(i, fine.index(x, y + 1), fine.hx() / fine.hy());
            }
        }
    }
    ContinuumGraph {
        edges: map.into_values().collect(),
    }
}
