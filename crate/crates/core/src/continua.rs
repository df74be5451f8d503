//! Piecewise-constant continua, the κ̃-weighted inner product and the projection Π.

use crate::error::{NlmcError, Result};
use crate::media::WeightField;
use crate::mesh::{CellRect, CoarseGrid, FineGrid, SpaceTimePartition};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContinuumKind {
    Matrix,
    Fracture,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Continuum {
    pub coarse_cell: usize,
    /// Index `j` within the coarse cell; the matrix continuum (if any) comes first.
    pub local_index: usize,
    pub kind: ContinuumKind,
    /// Sorted fine-cell indices.
    pub cells: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacroState {
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct AuxiliarySpace {
    pub coarse: CoarseGrid,
    pub fine: FineGrid,
    pub continua: Vec<Continuum>,
    offsets: Vec<usize>,
    /// Continuum of every fine cell.
    pub owner: Vec<usize>,
    pub ktilde: Vec<f64>,
    /// s(μ_c, μ_c) per continuum.
    pub norms_sq: Vec<f64>,
}

fn fracture_components(fine: &FineGrid, block: &CellRect, fractures: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; block.len()];
    let mut comps = Vec::new();
    for (x, y) in block.iter() {
        let l = block.local_index(x, y);
        if seen[l] || !fractures[fine.index(x, y)] {
            continue;
        }
        let mut comp = Vec::new();
        let mut stack = vec![(x, y)];
        seen[l] = true;
        while let Some((cx, cy)) = stack.pop() {
            comp.push(fine.index(cx, cy));
            let mut nb = Vec::with_capacity(4);
            if cx > block.x0 {
                nb.push((cx - 1, cy));
            }
            if cx + 1 < block.x1 {
                nb.push((cx + 1, cy));
            }
            if cy > block.y0 {
                nb.push((cx, cy - 1));
            }
            if cy + 1 < block.y1 {
                nb.push((cx, cy + 1));
            }
            for (nx, ny) in nb {
                let ln = block.local_index(nx, ny);
                if !seen[ln] && fractures[fine.index(nx, ny)] {
                    seen[ln] = true;
                    stack.push((nx, ny));
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps
}

/// One matrix continuum per coarse cell (if nonempty) plus one per
/// 4-connected fracture component inside the cell.
pub fn build_continua(
    coarse: &CoarseGrid,
    fine: &FineGrid,
    fractures: &[bool],
    weights: &WeightField,
) -> Result<AuxiliarySpace> {
    if fractures.len() != fine.len() || weights.ktilde.len() != fine.len() {
        return Err(NlmcError::InvalidGrid("raster sizes do not match the fine grid".into()));
    }
    let mut continua = Vec::new();
    let mut offsets = vec![0];
    let mut owner = vec![usize::MAX; fine.len()];
    for k in 0..coarse.len() {
        let block = coarse.fine_block(k);
        let mut matrix: Vec<usize> = block
            .iter()
            .map(|(x, y)| fine.index(x, y))
            .filter(|&i| !fractures[i])
            .collect();
        matrix.sort_unstable();
        let mut local = 0;
        if !matrix.is_empty() {
            continua.push(Continuum {
                coarse_cell: k,
                local_index: local,
                kind: ContinuumKind::Matrix,
                cells: matrix,
            });
            local += 1;
        }
        for comp in fracture_components(fine, &block, fractures) {
            continua.push(Continuum {
                coarse_cell: k,
                local_index: local,
                kind: ContinuumKind::Fracture,
                cells: comp,
            });
            local += 1;
        }
        offsets.push(continua.len());
    }
    let area = fine.cell_area();
    let mut norms_sq = Vec::with_capacity(continua.len());
    for (c, cont) in continua.iter().enumerate() {
        let m: f64 = cont.cells.iter().map(|&i| weights.ktilde[i] * area).sum();
        if !(m > 0.0) {
            return Err(NlmcError::DegenerateContinuum { index: c });
        }
        norms_sq.push(m);
        for &i in &cont.cells {
            owner[i] = c;
        }
    }
    Ok(AuxiliarySpace {
        coarse: *coarse,
        fine: *fine,
        continua,
        offsets,
        owner,
        ktilde: weights.ktilde.clone(),
        norms_sq,
    })
}

impl AuxiliarySpace {
    pub fn len(&self) -> usize {
        self.continua.len()
    }
    pub fn is_empty(&self) -> bool {
        self.continua.is_empty()
    }

    /// Continuum ids of coarse cell `k`.
    pub fn of_cell(&self, k: usize) -> Range<usize> {
        self.offsets[k]..self.offsets[k + 1]
    }

    /// Continuum ids inside a rectangle of coarse cells, in id order.
    pub fn in_region(&self, rect: &CellRect) -> Vec<usize> {
        let mut ids = Vec::new();
        for (x, y) in rect.iter() {
            ids.extend(self.of_cell(self.coarse.index(x, y)));
        }
        ids.sort_unstable();
        ids
    }

    pub fn s_product(&self, u: &[f64], v: &[f64]) -> f64 {
        let a = self.fine.cell_area();
        self.ktilde
            .iter()
            .zip(u.iter().zip(v))
            .map(|(k, (x, y))| k * x * y)
            .sum::<f64>()
            * a
    }

    pub fn s_norm(&self, u: &[f64]) -> f64 {
        self.s_product(u, u).max(0.0).sqrt()
    }

    /// Ū_c = s(u, μ_c) for every continuum.
    pub fn extract_macro(&self, u: &[f64]) -> MacroState {
        let a = self.fine.cell_area();
        let values = self
            .continua
            .iter()
            .map(|c| c.cells.iter().map(|&i| self.ktilde[i] * u[i]).sum::<f64>() * a)
            .collect();
        MacroState { values }
    }

    /// Time-integrated moments per coarse interval by the trapezoid rule over
    /// fine nodes. `states[k]` is the state at fine node `k`.
    pub fn extract_macro_series(&self, states: &[Vec<f64>], partition: &SpaceTimePartition) -> Vec<MacroState> {
        let s = partition.substeps;
        let moments: Vec<Vec<f64>> = states.iter().map(|u| self.extract_macro(u).values).collect();
        (0..partition.intervals())
            .map(|n| {
                let dt = partition.fine_dt(n);
                let mut acc = vec![0.0; self.len()];
                for k in 0..=s {
                    let w = if k == 0 || k == s { 0.5 * dt } else { dt };
                    for (a, m) in acc.iter_mut().zip(&moments[n * s + k]) {
                        *a += w * m;
                    }
                }
                MacroState { values: acc }
            })
            .collect()
    }

    /// Π-coefficients s(u, μ_c) / s(μ_c, μ_c).
    pub fn project_coefficients(&self, u: &[f64]) -> Vec<f64> {
        self.extract_macro(u)
            .values
            .iter()
            .zip(&self.norms_sq)
            .map(|(m, n)| m / n)
            .collect()
    }

    /// Raster Σ_c a_c μ_c.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        self.owner.iter().map(|&c| coeffs[c]).collect()
    }

    pub fn project(&self, u: &[f64]) -> (MacroState, Vec<f64>) {
        let m = self.extract_macro(u);
        let coeffs: Vec<f64> = m.values.iter().zip(&self.norms_sq).map(|(a, n)| a / n).collect();
        let raster = self.expand(&coeffs);
        (m, raster)
    }

    pub fn indicator(&self, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.fine.len()];
        for &i in &self.continua[c].cells {
            v[i] = 1.0;
        }
        v
    }

    /// ∫ f μ_c for every continuum.
    pub fn source_moments(&self, f: &[f64]) -> Vec<f64> {
        let a = self.fine.cell_area();
        self.continua
            .iter()
            .map(|c| c.cells.iter().map(|&i| f[i]).sum::<f64>() * a)
            .collect()
    }

    /// Plain volume mean of `u` over every continuum.
    pub fn plain_means(&self, u: &[f64]) -> Vec<f64> {
        self.continua
            .iter()
            .map(|c| c.cells.iter().map(|&i| u[i]).sum::<f64>() / c.cells.len() as f64)
            .collect()
    }

    /// Continuum volume.
    pub fn volume(&self, c: usize) -> f64 {
        self.continua[c].cells.len() as f64 * self.fine.cell_area()
    }

    /// Plain mean per coarse cell from per-continuum plain means.
    pub fn cell_means_from_continua(&self, means: &[f64]) -> Vec<f64> {
        (0..self.coarse.len())
            .map(|k| {
                let r = self.of_cell(k);
                let total: f64 = r.clone().map(|c| self.continua[c].cells.len() as f64).sum();
                r.map(|c| means[c] * self.continua[c].cells.len() as f64).sum::<f64>() / total
            })
            .collect()
    }

    /// Continuum layout as CSV: `cell_i,cell_j,continuum_id,fine_cell_count`.
    pub fn layout_csv(&self) -> String {
        let mut s = String::from("cell_i,cell_j,continuum_id,fine_cell_count\n");
        for (id, c) in self.continua.iter().enumerate() {
            let (i, j) = self.coarse.coords(c.coarse_cell);
            let _ = writeln!(s, "{i},{j},{id},{}", c.cells.len());
        }
        s
    }

    /// κ̃-weighted moment rows of the listed continua, in patch-local indexing.
    pub fn constraint_rows(&self, rect: &CellRect, ids: &[usize]) -> Vec<Vec<(usize, f64)>> {
        let a = self.fine.cell_area();
        ids.iter()
            .map(|&c| {
                self.continua[c]
                    .cells
                    .iter()
                    .map(|&i| {
                        let (x, y) = self.fine.coords(i);
                        debug_assert!(rect.contains(x, y));
                        (rect.local_index(x, y), self.ktilde[i] * a)
                    })
                    .collect()
            })
            .collect()
    }
}

/// Plain coarse-cell means of a fine raster.
pub fn coarse_means(coarse: &CoarseGrid, fine: &FineGrid, u: &[f64]) -> Vec<f64> {
    let mut sums = vec![0.0; coarse.len()];
    for iy in 0..fine.ny {
        for ix in 0..fine.nx {
            sums[coarse.owner(ix, iy)] += u[fine.index(ix, iy)];
        }
    }
    let per = (coarse.ratio * coarse.ratio) as f64;
    sums.iter().map(|s| s / per).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::media::{compute_weights, CoefficientField};
    use crate::mesh::{build_grids, build_partition_of_unity};

    fn setup(nc: usize, r: usize, fr: &[usize]) -> AuxiliarySpace {
        let (c, f) = build_grids(nc, nc, r).unwrap();
        let pou = build_partition_of_unity(&c, &f).unwrap();
        let w = compute_weights(&CoefficientField::constant(&f, 1.0).unwrap(), &pou).unwrap();
        let mut ind = vec![false; f.len()];
        for &i in fr {
            ind[i] = true;
        }
        build_continua(&c, &f, &ind, &w).unwrap()
    }

    #[test]
    fn counts() {
        let s = setup(4, 4, &[]);
        assert_eq!(s.len(), 16);
        // horizontal fracture in fine row 5 crossing all 4 coarse columns
        let f = FineGrid::new(16, 16).unwrap();
        let row: Vec<usize> = (0..16).map(|x| f.index(x, 5)).collect();
        let s = setup(4, 4, &row);
        assert_eq!(s.len(), 16 + 4);
        // two disjoint pieces in coarse cell 0
        let s = setup(4, 4, &[f.index(0, 0), f.index(1, 0), f.index(0, 2), f.index(1, 2)]);
        assert_eq!(s.of_cell(0).len(), 3);
    }

    #[test]
    fn fully_fractured_cell_has_no_matrix() {
        let f = FineGrid::new(8, 8).unwrap();
        let all: Vec<usize> = (0..4).flat_map(|y| (0..4).map(move |x| (x, y))).map(|(x, y)| f.index(x, y)).collect();
        let s = setup(2, 4, &all);
        let r = s.of_cell(0);
        assert_eq!(r.len(), 1);
        assert_eq!(s.continua[r.start].kind, ContinuumKind::Fracture);
    }

    #[test]
    fn macro_of_indicator() {
        let s = setup(2, 4, &[0, 1]);
        for c in 0..s.len() {
            let m = s.extract_macro(&s.indicator(c)).values;
            for (d, v) in m.iter().enumerate() {
                if d == c {
                    assert!((v - s.norms_sq[c]).abs() < 1e-14 * v);
                } else {
                    assert_eq!(*v, 0.0);
                }
            }
        }
    }

    #[test]
    fn layout_csv_header() {
        let s = setup(2, 2, &[]);
        let csv = s.layout_csv();
        assert!(csv.starts_with("cell_i,cell_j,continuum_id,fine_cell_count\n"));
        assert_eq!(csv.lines().count(), 5);
    }
}
