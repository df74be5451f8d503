//! Structured 2D grids, oversampling regions, space-time partitions and
//! partitions of unity.

use crate::error::{NlmcError, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineGrid {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
}

impl FineGrid {
    pub fn new(nx: usize, ny: usize) -> Result<Self> {
        Self::with_extent(nx, ny, 1.0, 1.0)
    }

    pub fn with_extent(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(NlmcError::InvalidGrid("fine cell counts must be >= 1".into()));
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(NlmcError::InvalidGrid("domain extents must be positive".into()));
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }
    pub fn center(&self, ix: usize, iy: usize) -> (f64, f64) {
        ((ix as f64 + 0.5) * self.hx(), (iy as f64 + 0.5) * self.hy())
    }
    pub fn rect(&self) -> CellRect {
        CellRect::new(0, 0, self.nx, self.ny)
    }
    /// Raster of `f` evaluated at cell centers.
    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                let (x, y) = self.center(ix, iy);
                out.push(f(x, y));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoarseGrid {
    pub nx: usize,
    pub ny: usize,
    /// Fine cells per coarse cell along each axis.
    pub ratio: usize,
    pub lx: f64,
    pub ly: f64,
}

impl CoarseGrid {
    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }
    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }
    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    #[inline]
    pub fn index(&self, cx: usize, cy: usize) -> usize {
        cy * self.nx + cx
    }
    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.nx, idx / self.nx)
    }
    pub fn center(&self, cx: usize, cy: usize) -> (f64, f64) {
        ((cx as f64 + 0.5) * self.hx(), (cy as f64 + 0.5) * self.hy())
    }
    pub fn rect(&self) -> CellRect {
        CellRect::new(0, 0, self.nx, self.ny)
    }
    pub fn node_count(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }
    #[inline]
    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }
    pub fn node_coords(&self, node: usize) -> (usize, usize) {
        (node % (self.nx + 1), node / (self.nx + 1))
    }

    /// Coarse cell owning fine cell `(ix, iy)`.
    #[inline]
    pub fn owner(&self, ix: usize, iy: usize) -> usize {
        self.index(ix / self.ratio, iy / self.ratio)
    }

    /// Fine-cell rectangle covered by coarse cell `idx`.
    pub fn fine_block(&self, idx: usize) -> CellRect {
        let (cx, cy) = self.coords(idx);
        self.fine_rect(&CellRect::new(cx, cy, cx + 1, cy + 1))
    }

    /// Fine-cell rectangle covered by a rectangle of coarse cells.
    pub fn fine_rect(&self, r: &CellRect) -> CellRect {
        CellRect::new(
            r.x0 * self.ratio,
            r.y0 * self.ratio,
            r.x1 * self.ratio,
            r.y1 * self.ratio,
        )
    }

    pub fn oversample(&self, idx: usize, layers: usize) -> OversampleRegion {
        let (cx, cy) = self.coords(idx);
        let rect = CellRect::new(cx, cy, cx + 1, cy + 1).expand(layers, &self.rect());
        OversampleRegion {
            center: idx,
            layers,
            rect,
        }
    }

    /// Coarse cells sharing an edge with `idx`.
    pub fn neighbors(&self, idx: usize) -> Vec<usize> {
        let (cx, cy) = self.coords(idx);
        let mut out = Vec::with_capacity(4);
        if cx > 0 {
            out.push(self.index(cx - 1, cy));
        }
        if cx + 1 < self.nx {
            out.push(self.index(cx + 1, cy));
        }
        if cy > 0 {
            out.push(self.index(cx, cy - 1));
        }
        if cy + 1 < self.ny {
            out.push(self.index(cx, cy + 1));
        }
        out
    }
}

/// Builds nested grids on the unit square with `ratio` fine cells per coarse cell per axis.
pub fn build_grids(nx: usize, ny: usize, ratio: usize) -> Result<(CoarseGrid, FineGrid)> {
    if nx == 0 || ny == 0 || ratio == 0 {
        return Err(NlmcError::InvalidGrid(
            "coarse counts and refinement ratio must be >= 1".into(),
        ));
    }
    let fine = FineGrid::new(nx * ratio, ny * ratio)?;
    Ok((
        CoarseGrid {
            nx,
            ny,
            ratio,
            lx: fine.lx,
            ly: fine.ly,
        },
        fine,
    ))
}

/// Builds nested grids from explicit fine and coarse counts.
pub fn grids_from_counts(
    coarse_nx: usize,
    coarse_ny: usize,
    fine_nx: usize,
    fine_ny: usize,
) -> Result<(CoarseGrid, FineGrid)> {
    if coarse_nx == 0 || coarse_ny == 0 {
        return Err(NlmcError::InvalidGrid("coarse cell counts must be >= 1".into()));
    }
    if fine_nx % coarse_nx != 0 || fine_ny % coarse_ny != 0 {
        return Err(NlmcError::InvalidGrid(format!(
            "non-integer refinement ratio {fine_nx}/{coarse_nx} x {fine_ny}/{coarse_ny}"
        )));
    }
    let (rx, ry) = (fine_nx / coarse_nx, fine_ny / coarse_ny);
    if rx != ry {
        return Err(NlmcError::InvalidGrid(format!(
            "anisotropic refinement ratio {rx} x {ry}"
        )));
    }
    build_grids(coarse_nx, coarse_ny, rx)
}

/// Half-open rectangle of cells `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellRect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl CellRect {
    pub fn new(x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        Self { x0, y0, x1, y1 }
    }
    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }
    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }
    pub fn len(&self) -> usize {
        self.width() * self.height()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    #[inline]
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
    pub fn contains_rect(&self, o: &CellRect) -> bool {
        o.x0 >= self.x0 && o.x1 <= self.x1 && o.y0 >= self.y0 && o.y1 <= self.y1
    }
    /// Grows by `layers` cells on every side, clipped to `bounds`.
    pub fn expand(&self, layers: usize, bounds: &CellRect) -> CellRect {
        CellRect::new(
            self.x0.saturating_sub(layers).max(bounds.x0),
            self.y0.saturating_sub(layers).max(bounds.y0),
            (self.x1 + layers).min(bounds.x1),
            (self.y1 + layers).min(bounds.y1),
        )
    }
    pub fn union(&self, o: &CellRect) -> CellRect {
        CellRect::new(
            self.x0.min(o.x0),
            self.y0.min(o.y0),
            self.x1.max(o.x1),
            self.y1.max(o.y1),
        )
    }
    pub fn intersects(&self, o: &CellRect) -> bool {
        self.x0 < o.x1 && o.x0 < self.x1 && self.y0 < o.y1 && o.y0 < self.y1
    }
    #[inline]
    pub fn local_index(&self, x: usize, y: usize) -> usize {
        (y - self.y0) * self.width() + (x - self.x0)
    }
    #[inline]
    pub fn local_coords(&self, local: usize) -> (usize, usize) {
        (self.x0 + local % self.width(), self.y0 + local / self.width())
    }
    /// Cells in row-major order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.y0..self.y1).flat_map(move |y| (self.x0..self.x1).map(move |x| (x, y)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OversampleRegion {
    pub center: usize,
    pub layers: usize,
    /// Coarse-cell rectangle.
    pub rect: CellRect,
}

impl OversampleRegion {
    pub fn cells(&self, coarse: &CoarseGrid) -> Vec<usize> {
        self.rect.iter().map(|(x, y)| coarse.index(x, y)).collect()
    }
    pub fn contains(&self, coarse: &CoarseGrid, idx: usize) -> bool {
        let (x, y) = coarse.coords(idx);
        self.rect.contains(x, y)
    }
    pub fn fine_rect(&self, coarse: &CoarseGrid) -> CellRect {
        coarse.fine_rect(&self.rect)
    }
    pub fn is_whole_domain(&self, coarse: &CoarseGrid) -> bool {
        self.rect == coarse.rect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePartition {
    /// Coarse time nodes `t_0 = 0 < t_1 < ... < t_N`.
    pub nodes: Vec<f64>,
    /// Fine backward-Euler steps per coarse interval.
    pub substeps: usize,
    /// Number of coarse intervals of backward extension.
    pub extension: usize,
}

impl SpaceTimePartition {
    pub fn uniform(t_max: f64, intervals: usize, substeps: usize, extension: usize) -> Result<Self> {
        if !(t_max > 0.0 && t_max.is_finite()) || intervals == 0 || substeps == 0 {
            return Err(NlmcError::InvalidArgument(
                "space-time partition needs t_max > 0, intervals >= 1, substeps >= 1".into(),
            ));
        }
        let nodes = (0..=intervals)
            .map(|n| t_max * n as f64 / intervals as f64)
            .collect();
        Ok(Self {
            nodes,
            substeps,
            extension,
        })
    }

    pub fn intervals(&self) -> usize {
        self.nodes.len() - 1
    }
    pub fn t_max(&self) -> f64 {
        *self.nodes.last().unwrap()
    }
    pub fn dt(&self, n: usize) -> f64 {
        self.nodes[n + 1] - self.nodes[n]
    }
    pub fn fine_dt(&self, n: usize) -> f64 {
        self.dt(n) / self.substeps as f64
    }
    pub fn fine_steps(&self) -> usize {
        self.intervals() * self.substeps
    }
    /// First coarse interval of the local window of interval `n`.
    pub fn window_start(&self, n: usize) -> usize {
        n.saturating_sub(self.extension)
    }
    /// The backward-extension time `t_n^-`.
    pub fn t_minus(&self, n: usize) -> f64 {
        self.nodes[self.window_start(n)]
    }
    /// Coarse interval containing fine step `k` (1-based step ending at fine node `k`).
    pub fn interval_of_step(&self, k: usize) -> usize {
        (k - 1) / self.substeps
    }
}

/// Bilinear coarse hat functions sampled on the fine grid.
#[derive(Debug, Clone, Copy)]
pub struct PartitionOfUnity {
    pub coarse: CoarseGrid,
    pub fine: FineGrid,
}

pub fn build_partition_of_unity(coarse: &CoarseGrid, fine: &FineGrid) -> Result<PartitionOfUnity> {
    if coarse.nx * coarse.ratio != fine.nx || coarse.ny * coarse.ratio != fine.ny {
        return Err(NlmcError::InvalidGrid("coarse and fine grids are not nested".into()));
    }
    Ok(PartitionOfUnity {
        coarse: *coarse,
        fine: *fine,
    })
}

/// Cutoff function in the span of the coarse hats.
#[derive(Debug, Clone)]
pub struct Cutoff {
    pub nodal: Vec<f64>,
    pub cells: Vec<f64>,
}

impl PartitionOfUnity {
    #[inline]
    fn hat_1d(pos: f64, node: usize, r: f64) -> f64 {
        (1.0 - (pos / r - node as f64).abs()).max(0.0)
    }

    /// Hat of coarse node `node` at a point given in fine-cell units.
    pub fn hat_at(&self, node: usize, px: f64, py: f64) -> f64 {
        let (i, j) = self.coarse.node_coords(node);
        let r = self.coarse.ratio as f64;
        Self::hat_1d(px, i, r) * Self::hat_1d(py, j, r)
    }

    /// Hat of coarse node `node` at fine node `(a, b)`.
    pub fn hat_at_node(&self, node: usize, a: usize, b: usize) -> f64 {
        self.hat_at(node, a as f64, b as f64)
    }

    /// Nonzero hat weights at fine node `(a, b)`.
    pub fn node_weights(&self, a: usize, b: usize) -> Vec<(usize, f64)> {
        let r = self.coarse.ratio;
        let (i0, j0) = (a / r, b / r);
        let mut out = Vec::with_capacity(4);
        for j in j0..=(j0 + 1).min(self.coarse.ny) {
            for i in i0..=(i0 + 1).min(self.coarse.nx) {
                let node = self.coarse.node_index(i, j);
                let w = self.hat_at_node(node, a, b);
                if w > 0.0 {
                    out.push((node, w));
                }
            }
        }
        out
    }

    /// Corner nodes of coarse cell `k` in order (0,0), (1,0), (0,1), (1,1).
    pub fn corners(&self, k: usize) -> [usize; 4] {
        let (cx, cy) = self.coarse.coords(k);
        let c = &self.coarse;
        [
            c.node_index(cx, cy),
            c.node_index(cx + 1, cy),
            c.node_index(cx, cy + 1),
            c.node_index(cx + 1, cy + 1),
        ]
    }

    /// Hat value at the center of fine cell `(ix, iy)`.
    pub fn hat_cell(&self, node: usize, ix: usize, iy: usize) -> f64 {
        self.hat_at(node, ix as f64 + 0.5, iy as f64 + 0.5)
    }

    /// Σ_i |∇χ_i|² at the center of fine cell `(ix, iy)`, by centered
    /// differences of the nodal values at the cell corners.
    pub fn grad_sq_sum(&self, ix: usize, iy: usize) -> f64 {
        let k = self.coarse.owner(ix, iy);
        let (hx, hy) = (self.fine.hx(), self.fine.hy());
        let mut sum = 0.0;
        for node in self.corners(k) {
            let v00 = self.hat_at_node(node, ix, iy);
            let v10 = self.hat_at_node(node, ix + 1, iy);
            let v01 = self.hat_at_node(node, ix, iy + 1);
            let v11 = self.hat_at_node(node, ix + 1, iy + 1);
            let gx = (v10 + v11 - v00 - v01) / (2.0 * hx);
            let gy = (v01 + v11 - v00 - v10) / (2.0 * hy);
            sum += gx * gx + gy * gy;
        }
        sum
    }

    fn node_multiplicity(&self, node: usize) -> f64 {
        let (i, j) = self.coarse.node_coords(node);
        let mx = if i == 0 || i == self.coarse.nx { 1 } else { 2 };
        let my = if j == 0 || j == self.coarse.ny { 1 } else { 2 };
        (mx * my) as f64
    }

    /// χ_K at the center of fine cell `(ix, iy)`; Σ_K χ_K ≡ 1 and supp χ_K ⊆ K_{K,1}.
    pub fn chi_k_cell(&self, k: usize, ix: usize, iy: usize) -> f64 {
        let (px, py) = (ix as f64 + 0.5, iy as f64 + 0.5);
        let own = self.coarse.owner(ix, iy);
        let mut denom = 0.0;
        for node in self.corners(own) {
            denom += self.node_multiplicity(node) * self.hat_at(node, px, py);
        }
        let num: f64 = self.corners(k).iter().map(|&n| self.hat_at(n, px, py)).sum();
        num / denom
    }

    /// Sparse raster of χ_K as `(fine index, value)` over its support.
    pub fn chi_k(&self, k: usize) -> Vec<(usize, f64)> {
        let support = self.coarse.fine_rect(&self.coarse.oversample(k, 1).rect);
        support
            .iter()
            .filter_map(|(ix, iy)| {
                let v = self.chi_k_cell(k, ix, iy);
                (v > 0.0).then(|| (self.fine.index(ix, iy), v))
            })
            .collect()
    }

    /// Cutoff χ_{M,m} of coarse cell `k`: 1 on K_m⁺, 0 outside K_M⁺, bilinear in between.
    pub fn cutoff(&self, k: usize, big: usize, small: usize) -> Result<Cutoff> {
        if big <= small {
            return Err(NlmcError::InvalidArgument(format!(
                "cutoff needs M > m, got M={big}, m={small}"
            )));
        }
        let inner = self.coarse.oversample(k, small).rect;
        let span = (big - small) as f64;
        let c = &self.coarse;
        let mut nodal = vec![0.0; c.node_count()];
        for j in 0..=c.ny {
            for i in 0..=c.nx {
                let dx = if i < inner.x0 {
                    inner.x0 - i
                } else if i > inner.x1 {
                    i - inner.x1
                } else {
                    0
                };
                let dy = if j < inner.y0 {
                    inner.y0 - j
                } else if j > inner.y1 {
                    j - inner.y1
                } else {
                    0
                };
                let d = dx.max(dy) as f64;
                nodal[c.node_index(i, j)] = (1.0 - d / span).max(0.0);
            }
        }
        let mut cells = vec![0.0; self.fine.len()];
        for iy in 0..self.fine.ny {
            for ix in 0..self.fine.nx {
                let own = c.owner(ix, iy);
                let v: f64 = self
                    .corners(own)
                    .iter()
                    .map(|&n| nodal[n] * self.hat_cell(n, ix, iy))
                    .sum();
                cells[self.fine.index(ix, iy)] = v;
            }
        }
        Ok(Cutoff { nodal, cells })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_grid_sizes() {
        let (c, f) = build_grids(10, 10, 16).unwrap();
        assert_eq!((c.nx, c.ny, f.nx, f.ny), (10, 10, 160, 160));
        let (c, f) = build_grids(1, 1, 4).unwrap();
        assert_eq!((c.len(), f.len()), (1, 16));
        assert!(grids_from_counts(3, 3, 10, 10).is_err());
        assert!(build_grids(0, 1, 2).is_err());
    }

    #[test]
    fn ownership_by_enumeration() {
        let (c, f) = build_grids(2, 2, 4).unwrap();
        let mut counts = vec![0; c.len()];
        for iy in 0..f.ny {
            for ix in 0..f.nx {
                counts[c.owner(ix, iy)] += 1;
            }
        }
        assert_eq!(counts, vec![16; 4]);
        for k in 0..c.len() {
            let b = c.fine_block(k);
            assert!(b.iter().all(|(x, y)| c.owner(x, y) == k));
        }
    }

    #[test]
    fn oversampling_examples() {
        let (c, _) = build_grids(10, 10, 2).unwrap();
        assert_eq!(c.oversample(c.index(5, 5), 1).rect.len(), 9);
        assert_eq!(c.oversample(0, 1).rect, CellRect::new(0, 0, 2, 2));
        let r = c.oversample(c.index(4, 4), 4);
        assert_eq!(r.cells(&c).len(), 81);
        let brute = (0..c.len())
            .filter(|&j| {
                let (x, y) = c.coords(j);
                (x as i64 - 4).abs().max((y as i64 - 4).abs()) <= 4
            })
            .count();
        assert_eq!(brute, 81);
    }

    #[test]
    fn bilinear_weights_at_cell_center() {
        let (c, f) = build_grids(3, 3, 4).unwrap();
        let pou = build_partition_of_unity(&c, &f).unwrap();
        // fine node (6, 6) is the center of coarse cell (1, 1)
        let w = pou.node_weights(6, 6);
        assert_eq!(w.len(), 4);
        for (_, v) in &w {
            assert!((v - 0.25).abs() < 1e-15);
        }
        // quarter point (5, 7): local (1/4, 3/4)
        let w = pou.node_weights(5, 7);
        let get = |i, j| {
            let n = c.node_index(i, j);
            w.iter().find(|(m, _)| *m == n).map(|x| x.1).unwrap_or(0.0)
        };
        assert!((get(1, 1) - 0.75 * 0.25).abs() < 1e-15);
        assert!((get(2, 1) - 0.25 * 0.25).abs() < 1e-15);
        assert!((get(1, 2) - 0.75 * 0.75).abs() < 1e-15);
        assert!((get(2, 2) - 0.25 * 0.75).abs() < 1e-15);
    }

    #[test]
    fn cutoff_rejects_bad_layers() {
        let (c, f) = build_grids(3, 3, 2).unwrap();
        let pou = build_partition_of_unity(&c, &f).unwrap();
        assert!(pou.cutoff(4, 1, 1).is_err());
        let cut = pou.cutoff(4, 1, 0).unwrap();
        let inner = c.fine_block(4);
        for (x, y) in inner.iter() {
            assert_eq!(cut.cells[f.index(x, y)], 1.0);
        }
    }

    #[test]
    fn spacetime_partition() {
        let p = SpaceTimePartition::uniform(1.0, 4, 3, 1).unwrap();
        assert_eq!(p.intervals(), 4);
        assert_eq!(p.window_start(0), 0);
        assert_eq!(p.window_start(3), 2);
        assert!((p.fine_dt(0) - 1.0 / 12.0).abs() < 1e-15);
        assert_eq!(p.interval_of_step(3), 0);
        assert_eq!(p.interval_of_step(4), 1);
        assert!(SpaceTimePartition::uniform(0.0, 1, 1, 0).is_err());
    }
}
