//! Empirical scans standing in for the analysis constants.

use super::{global_downscale_nonlinear, NlmcContext};
use crate::error::Result;
use crate::mesh::FineGrid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Sum of low sine modes with decaying random amplitudes; vanishes on ∂Ω.
pub fn random_smooth_raster(fine: &FineGrid, rng: &mut ChaCha8Rng, modes: usize) -> Vec<f64> {
    use std::f64::consts::PI;
    let mut coeffs = Vec::with_capacity(modes * modes);
    for a in 1..=modes {
        for b in 1..=modes {
            let c = (2.0 * rng.random::<f64>() - 1.0) / (a * a + b * b) as f64;
            coeffs.push((a as f64, b as f64, c));
        }
    }
    fine.sample(|x, y| {
        coeffs
            .iter()
            .map(|(a, b, c)| c * (a * PI * x).sin() * (b * PI * y).sin())
            .sum()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub samples: usize,
}

impl ScanSummary {
    pub fn from_values(v: &[f64]) -> Self {
        let (min, max) = v
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        Self {
            min,
            max,
            mean: v.iter().sum::<f64>() / v.len().max(1) as f64,
            samples: v.len(),
        }
    }
}

/// ‖(I − Π)v‖_s / ‖v‖_a.
pub fn projection_ratio(ctx: &NlmcContext<'_>, v: &[f64]) -> f64 {
    let (_, pv) = ctx.space.project(v);
    let d: Vec<f64> = v.iter().zip(&pv).map(|(a, b)| a - b).collect();
    ctx.space.s_norm(&d) / ctx.energy_norm(v)
}

pub fn projection_scan(ctx: &NlmcContext<'_>, samples: usize, seed: u64) -> ScanSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..samples)
        .map(|_| projection_ratio(ctx, &random_smooth_raster(&ctx.fine, &mut rng, 4)))
        .collect();
    ScanSummary::from_values(&v)
}

/// Empirical C_κ: ‖u‖_s / ‖u‖_a over random smooth rasters.
pub fn ckappa_scan(ctx: &NlmcContext<'_>, samples: usize, seed: u64) -> ScanSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v: Vec<f64> = (0..samples)
        .map(|_| {
            let u = random_smooth_raster(&ctx.fine, &mut rng, 4);
            ctx.space.s_norm(&u) / ctx.energy_norm(&u)
        })
        .collect();
    ScanSummary::from_values(&v)
}

/// s-norm of the V_aux element with macro values Ū.
pub fn macro_s_norm(ctx: &NlmcContext<'_>, macro_values: &[f64]) -> f64 {
    macro_values
        .iter()
        .zip(&ctx.space.norms_sq)
        .map(|(u, n)| u * u / n)
        .sum::<f64>()
        .sqrt()
}

/// ‖F₁(Ū)‖_a / ‖Ū‖_s for random Ū, using the global map.
pub fn stability_scan(ctx: &NlmcContext<'_>, samples: usize, seed: u64) -> Result<ScanSummary> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = Vec::with_capacity(samples);
    for _ in 0..samples {
        let u: Vec<f64> = ctx
            .space
            .norms_sq
            .iter()
            .map(|n| (2.0 * rng.random::<f64>() - 1.0) * n)
            .collect();
        let sol = global_downscale_nonlinear(ctx, &u)?;
        v.push(ctx.energy_norm(&sol.u) / macro_s_norm(ctx, &u));
    }
    Ok(ScanSummary::from_values(&v))
}

/// Least-squares fit `ln y = a + b x`; returns `(b, a, R²)`.
pub fn fit_log_linear(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let ss_tot: f64 = ly.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(&ly).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (b, a, r2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_linear_fit_recovers_geometric_sequence() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * 0.5f64.powf(*v)).collect();
        let (b, a, r2) = fit_log_linear(&x, &y);
        assert!((b - 0.5f64.ln()).abs() < 1e-12);
        assert!((a - 3.0f64.ln()).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }
}
