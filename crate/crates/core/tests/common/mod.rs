#![allow(dead_code)]

use nlmc_core::continua::{build_continua, AuxiliarySpace};
use nlmc_core::media::{
    compute_weights, generate_field, rasterize_fractures, CoefficientField, FractureRaster, FractureSet, Segment,
};
use nlmc_core::mesh::{build_grids, build_partition_of_unity, CoarseGrid, FineGrid};

pub struct Setup {
    pub coarse: CoarseGrid,
    pub fine: FineGrid,
    pub field: CoefficientField,
    pub fractures: FractureRaster,
    pub space: AuxiliarySpace,
    pub source: Vec<f64>,
}

pub fn two_fractures() -> FractureSet {
    FractureSet {
        segments: vec![Segment::new(0.15, 0.3, 0.8, 0.45), Segment::new(0.55, 0.1, 0.4, 0.85)],
        permeability: 1e3,
    }
}

pub fn setup(cells: usize, ratio: usize, contrast: f64, fractures: Option<FractureSet>, seed: u64) -> Setup {
    let (coarse, fine) = build_grids(cells / ratio, cells / ratio, ratio).unwrap();
    let base = generate_field(&fine, seed, contrast, 0.05).unwrap();
    let (raster, field) = match fractures {
        Some(set) => rasterize_fractures(&set, &fine, &base).unwrap(),
        None => (FractureRaster::empty(&fine), base),
    };
    let pou = build_partition_of_unity(&coarse, &fine).unwrap();
    let weights = compute_weights(&field, &pou).unwrap();
    let space = build_continua(&coarse, &fine, &raster.indicator, &weights).unwrap();
    let source = fine.sample(|x, y| 1.0 + x * (1.0 - y));
    Setup {
        coarse,
        fine,
        field,
        fractures: raster,
        space,
        source,
    }
}

pub fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let n: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    d / n.max(1e-300)
}
