//! Coefficient fields, fractures, constitutive laws and the κ̃ weight.

pub mod io;

use crate::error::{NlmcError, Result};
use crate::mesh::{FineGrid, PartitionOfUnity};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Provenance {
    Generated {
        seed: u64,
        contrast: f64,
        correlation_length: f64,
    },
    File(PathBuf),
    Constant(f64),
    Custom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
    pub provenance: Provenance,
}

impl CoefficientField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if values.len() != nx * ny {
            return Err(NlmcError::InvalidArgument(format!(
                "field has {} values, expected {}",
                values.len(),
                nx * ny
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > 0.0))
        {
            return Err(NlmcError::InvalidArgument(format!(
                "coefficient at cell {i} is {v}; must be finite and positive"
            )));
        }
        Ok(Self {
            nx,
            ny,
            values,
            provenance,
        })
    }

    pub fn constant(fine: &FineGrid, value: f64) -> Result<Self> {
        Self::new(
            fine.nx,
            fine.ny,
            vec![value; fine.len()],
            Provenance::Constant(value),
        )
    }

    pub fn from_fn(fine: &FineGrid, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        Self::new(fine.nx, fine.ny, fine.sample(f), Provenance::Custom)
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(
            self.nx,
            self.ny,
            self.values.iter().map(|v| v * c).collect(),
            Provenance::Custom,
        )
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)))
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut w: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

fn smooth_axis(data: &[f64], nx: usize, ny: usize, kernel: &[f64], along_x: bool) -> Vec<f64> {
    let r = (kernel.len() / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for iy in 0..ny {
        for ix in 0..nx {
            let mut acc = 0.0;
            for (t, w) in kernel.iter().enumerate() {
                let d = t as isize - r;
                let (sx, sy) = if along_x {
                    (reflect(ix as isize + d, nx), iy)
                } else {
                    (ix, reflect(iy as isize + d, ny))
                };
                acc += w * data[sy * nx + sx];
            }
            out[iy * nx + ix] = acc;
        }
    }
    out
}

/// Log-uniform random field with Gaussian correlation, rescaled to
/// `min = 1`, `max = contrast`.
pub fn generate_field(
    fine: &FineGrid,
    seed: u64,
    contrast: f64,
    correlation_length: f64,
) -> Result<CoefficientField> {
    if !(contrast >= 1.0 && contrast.is_finite()) {
        return Err(NlmcError::InvalidArgument(format!(
            "contrast must be >= 1, got {contrast}"
        )));
    }
    if !(correlation_length >= 0.0) {
        return Err(NlmcError::InvalidArgument(
            "correlation length must be nonnegative".into(),
        ));
    }
    let provenance = Provenance::Generated {
        seed,
        contrast,
        correlation_length,
    };
    let (nx, ny) = (fine.nx, fine.ny);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
    let (sx, sy) = (correlation_length / fine.hx(), correlation_length / fine.hy());
    if sx > 1e-12 {
        z = smooth_axis(&z, nx, ny, &gaussian_kernel(sx), true);
    }
    if sy > 1e-12 {
        z = smooth_axis(&z, nx, ny, &gaussian_kernel(sy), false);
    }
    let (lo, hi) = z
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let values = if contrast == 1.0 || hi - lo <= 0.0 {
        vec![1.0; nx * ny]
    } else {
        z.iter().map(|v| contrast.powf((v - lo) / (hi - lo))).collect()
    };
    CoefficientField::new(nx, ny, values, provenance)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Segment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self { x0, y0, x1, y1 }
    }
    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractureSet {
    pub segments: Vec<Segment>,
    pub permeability: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FractureRaster {
    pub indicator: Vec<bool>,
    /// Marked fine cells per segment, in traversal order.
    pub segment_cells: Vec<Vec<usize>>,
}

impl FractureRaster {
    pub fn empty(fine: &FineGrid) -> Self {
        Self {
            indicator: vec![false; fine.len()],
            segment_cells: Vec::new(),
        }
    }
    pub fn count(&self) -> usize {
        self.indicator.iter().filter(|&&b| b).count()
    }
}

fn cell_of(p: f64, h: f64, n: usize) -> usize {
    ((p / h).floor().max(0.0) as usize).min(n - 1)
}

/// Fine cells crossed by a segment, as a 4-connected path.
pub fn traverse_segment(seg: &Segment, fine: &FineGrid) -> Vec<(usize, usize)> {
    let (hx, hy) = (fine.hx(), fine.hy());
    let (dx, dy) = (seg.x1 - seg.x0, seg.y1 - seg.y0);
    let mut ts = vec![0.0, 1.0];
    if dx != 0.0 {
        for i in 0..=fine.nx {
            let t = (i as f64 * hx - seg.x0) / dx;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    if dy != 0.0 {
        for j in 0..=fine.ny {
            let t = (j as f64 * hy - seg.y0) / dy;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    let mut path: Vec<(usize, usize)> = Vec::new();
    for w in ts.windows(2) {
        let t = 0.5 * (w[0] + w[1]);
        let c = (
            cell_of(seg.x0 + t * dx, hx, fine.nx),
            cell_of(seg.y0 + t * dy, hy, fine.ny),
        );
        if let Some(&last) = path.last() {
            if last == c {
                continue;
            }
            if last.0 != c.0 && last.1 != c.1 {
                path.push((c.0, last.1));
            }
        }
        path.push(c);
    }
    path
}

/// Marks the fine cells crossed by each segment and overrides their coefficient.
pub fn rasterize_fractures(
    set: &FractureSet,
    fine: &FineGrid,
    field: &CoefficientField,
) -> Result<(FractureRaster, CoefficientField)> {
    if !(set.permeability.is_finite() && set.permeability > 0.0) {
        return Err(NlmcError::InvalidArgument(
            "fracture permeability must be positive".into(),
        ));
    }
    let mut raster = FractureRaster::empty(fine);
    let mut values = field.values.clone();
    for (s, seg) in set.segments.iter().enumerate() {
        if seg.length() <= 0.0 {
            return Err(NlmcError::InvalidArgument(format!("segment {s} has zero length")));
        }
        let inside = |x: f64, lim: f64| (-1e-12..=lim + 1e-12).contains(&x);
        if !(inside(seg.x0, fine.lx)
            && inside(seg.x1, fine.lx)
            && inside(seg.y0, fine.ly)
            && inside(seg.y1, fine.ly))
        {
            return Err(NlmcError::InvalidArgument(format!("segment {s} leaves the domain")));
        }
        let cells: Vec<usize> = traverse_segment(seg, fine)
            .into_iter()
            .map(|(x, y)| fine.index(x, y))
            .collect();
        for &c in &cells {
            raster.indicator[c] = true;
            values[c] = set.permeability;
        }
        raster.segment_cells.push(cells);
    }
    let out = CoefficientField::new(field.nx, field.ny, values, field.provenance.clone())?;
    Ok((raster, out))
}

/// κ(x, v) = k(x) g(|v|) v.
#[derive(Debug, Clone, Copy)]
pub enum MonotoneLaw {
    Linear,
    Rational { alpha: f64 },
    Custom {
        g: fn(f64) -> f64,
        dg: fn(f64) -> f64,
    },
}

impl Default for MonotoneLaw {
    fn default() -> Self {
        MonotoneLaw::Rational { alpha: 0.5 }
    }
}

impl MonotoneLaw {
    #[inline]
    pub fn g(&self, t: f64) -> f64 {
        match self {
            MonotoneLaw::Linear => 1.0,
            MonotoneLaw::Rational { alpha } => 1.0 + alpha / (1.0 + t),
            MonotoneLaw::Custom { g, .. } => g(t),
        }
    }

    #[inline]
    pub fn dg(&self, t: f64) -> f64 {
        match self {
            MonotoneLaw::Linear => 0.0,
            MonotoneLaw::Rational { alpha } => -alpha / ((1.0 + t) * (1.0 + t)),
            MonotoneLaw::Custom { dg, .. } => dg(t),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, MonotoneLaw::Linear) || matches!(self, MonotoneLaw::Rational { alpha } if *alpha == 0.0)
    }

    /// Analytic (C₁, C₂) where known.
    pub fn analytic_constants(&self) -> Option<(f64, f64)> {
        match self {
            MonotoneLaw::Linear => Some((1.0, 1.0)),
            MonotoneLaw::Rational { alpha } if *alpha >= 0.0 => Some((1.0 + alpha, 1.0)),
            _ => None,
        }
    }

    pub fn evaluate(&self, k: f64, v: [f64; 2]) -> [f64; 2] {
        let t = v[0].hypot(v[1]);
        let c = k * self.g(t);
        [c * v[0], c * v[1]]
    }

    /// Scalar flux g(|t|) t of a one-dimensional gradient `t`.
    #[inline]
    pub fn scalar_flux(&self, t: f64) -> f64 {
        self.g(t.abs()) * t
    }

    #[inline]
    pub fn scalar_flux_derivative(&self, t: f64) -> f64 {
        let a = t.abs();
        self.g(a) + a * self.dg(a)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LawReport {
    /// Tightest observed Lipschitz constant.
    pub c1: f64,
    /// Tightest observed coercivity constant.
    pub c2: f64,
    pub samples: usize,
}

fn random_vector(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 2] {
    let r = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
    let th = rng.random::<f64>() * std::f64::consts::TAU;
    [r * th.cos(), r * th.sin()]
}

/// Samples random pairs and reports empirical Lipschitz and coercivity
/// constants relative to κ̄ = k. Rejects laws that fail monotonicity or coercivity.
pub fn check_law_assumptions(law: &MonotoneLaw, sample_count: usize, seed: u64) -> Result<LawReport> {
    if sample_count < 2 {
        return Err(NlmcError::InvalidArgument("sample_count must be >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c1: f64 = 0.0;
    let mut c2 = f64::INFINITY;
    for n in 0..sample_count {
        let k = (rng.random::<f64>() * 10f64.ln()).exp();
        let v = random_vector(&mut rng, 1e-3, 1e3);
        let z = if n % 2 == 0 {
            let vn = v[0].hypot(v[1]);
            let d = random_vector(&mut rng, 1e-6 * vn, vn);
            [v[0] + d[0], v[1] + d[1]]
        } else {
            random_vector(&mut rng, 1e-3, 1e3)
        };
        let kz = law.evaluate(k, z);
        let kv = law.evaluate(k, v);
        let (dx, dy) = (z[0] - v[0], z[1] - v[1]);
        let (fx, fy) = (kz[0] - kv[0], kz[1] - kv[1]);
        let dn2 = dx * dx + dy * dy;
        if dn2 > 0.0 {
            let mono = fx * dx + fy * dy;
            if mono < -1e-12 * k * dn2 {
                return Err(NlmcError::LawRejected {
                    reason: format!("monotonicity violated: (κ(z)-κ(v))·(z-v) = {mono:e}"),
                    z,
                    v,
                });
            }
            c1 = c1.max(fx.hypot(fy) / (k * dn2.sqrt()));
        }
        let vv = v[0] * v[0] + v[1] * v[1];
        let coer = (kv[0] * v[0] + kv[1] * v[1]) / (k * vv);
        if !(coer > 0.0) {
            return Err(NlmcError::LawRejected {
                reason: format!("coercivity violated: κ(v)·v / (k|v|²) = {coer:e}"),
                z,
                v,
            });
        }
        c2 = c2.min(coer);
    }
    Ok(LawReport {
        c1,
        c2,
        samples: sample_count,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstitutiveSet {
    /// Exponent `a` of k_r(u) = exp(-a|u|).
    pub kr_exponent: f64,
    pub c_matrix: f64,
    pub c_fracture: f64,
    pub porosity_matrix: f64,
    pub porosity_fracture: f64,
}

impl Default for ConstitutiveSet {
    fn default() -> Self {
        Self {
            kr_exponent: 0.1,
            c_matrix: 1.0,
            c_fracture: 0.0,
            porosity_matrix: 1.0,
            porosity_fracture: 1.0,
        }
    }
}

impl ConstitutiveSet {
    #[inline]
    pub fn kr(&self, u: f64) -> f64 {
        (-self.kr_exponent * u.abs()).exp()
    }
    #[inline]
    pub fn dkr(&self, u: f64) -> f64 {
        -self.kr_exponent * u.signum() * self.kr(u)
    }
    #[inline]
    pub fn lambda_w(&self, s: f64) -> f64 {
        s * s
    }
    #[inline]
    pub fn lambda_n(&self, s: f64) -> f64 {
        (1.0 - s) * (1.0 - s)
    }
    #[inline]
    pub fn total_mobility(&self, s: f64) -> f64 {
        self.lambda_w(s) + self.lambda_n(s)
    }
    #[inline]
    pub fn fractional_flow(&self, s: f64) -> f64 {
        self.lambda_w(s) / self.total_mobility(s)
    }
    /// d f_w / ds.
    pub fn fractional_flow_derivative(&self, s: f64) -> f64 {
        let lt = self.total_mobility(s);
        let dlw = 2.0 * s;
        let dln = -2.0 * (1.0 - s);
        (dlw * lt - self.lambda_w(s) * (dlw + dln)) / (lt * lt)
    }
    /// Upper bound of d f_w / ds on [0, 1].
    pub fn max_fractional_flow_derivative(&self) -> f64 {
        2.0
    }
    pub fn storage(&self, fracture: bool) -> f64 {
        if fracture {
            self.c_fracture
        } else {
            self.c_matrix
        }
    }
    pub fn porosity(&self, fracture: bool) -> f64 {
        if fracture {
            self.porosity_fracture
        } else {
            self.porosity_matrix
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightField {
    pub kbar: Vec<f64>,
    pub ktilde: Vec<f64>,
}

/// κ̄ = k and κ̃ = κ̄ Σ_i |∇χ_i|² per fine cell.
pub fn compute_weights(field: &CoefficientField, pou: &PartitionOfUnity) -> Result<WeightField> {
    let fine = &pou.fine;
    if field.nx != fine.nx || field.ny != fine.ny {
        return Err(NlmcError::InvalidGrid("field does not match the fine grid".into()));
    }
    let mut ktilde = vec![0.0; fine.len()];
    for iy in 0..fine.ny {
        for ix in 0..fine.nx {
            let i = fine.index(ix, iy);
            ktilde[i] = field.values[i] * pou.grad_sq_sum(ix, iy);
        }
    }
    Ok(WeightField {
        kbar: field.values.clone(),
        ktilde,
    })
}

impl WeightField {
    /// Range of κ̃ H² / κ̄ over the fine cells.
    pub fn bracket(&self, coarse_h: f64) -> (f64, f64) {
        self.kbar
            .iter()
            .zip(&self.ktilde)
            .map(|(kb, kt)| kt * coarse_h * coarse_h / kb)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_grids, build_partition_of_unity};

    #[test]
    fn generated_field_contrast_and_determinism() {
        let f = FineGrid::new(40, 40).unwrap();
        let a = generate_field(&f, 3, 1e4, 0.1).unwrap();
        let b = generate_field(&f, 3, 1e4, 0.1).unwrap();
        assert_eq!(a.values, b.values);
        let (lo, hi) = a.min_max();
        assert!(((hi / lo) - 1e4).abs() <= 1e-9 * 1e4);
        let c = generate_field(&f, 3, 1.0, 0.1).unwrap();
        assert!(c.values.iter().all(|&v| v == 1.0));
        assert_ne!(generate_field(&f, 4, 1e4, 0.1).unwrap().values, a.values);
    }

    #[test]
    fn horizontal_segment_marks_five_cells() {
        let f = FineGrid::new(10, 10).unwrap();
        let h = f.hx();
        let set = FractureSet {
            segments: vec![Segment::new(1.5 * h, 3.5 * h, 5.5 * h, 3.5 * h)],
            permeability: 1e6,
        };
        let base = CoefficientField::constant(&f, 1.0).unwrap();
        let (r, k) = rasterize_fractures(&set, &f, &base).unwrap();
        assert_eq!(r.count(), 5);
        for ix in 1..=5 {
            assert!(r.indicator[f.index(ix, 3)]);
            assert_eq!(k.values[f.index(ix, 3)], 1e6);
        }
        let (r2, k2) = rasterize_fractures(&set, &f, &k).unwrap();
        assert_eq!(r2, r);
        assert_eq!(k2, k);
    }

    #[test]
    fn empty_and_degenerate_fracture_sets() {
        let f = FineGrid::new(8, 8).unwrap();
        let base = generate_field(&f, 1, 10.0, 0.1).unwrap();
        let (r, k) = rasterize_fractures(
            &FractureSet {
                segments: vec![],
                permeability: 1e3,
            },
            &f,
            &base,
        )
        .unwrap();
        assert_eq!(r.count(), 0);
        assert_eq!(k, base);
        let bad = FractureSet {
            segments: vec![Segment::new(0.3, 0.3, 0.3, 0.3)],
            permeability: 1e3,
        };
        assert!(rasterize_fractures(&bad, &f, &base).is_err());
    }

    #[test]
    fn diagonal_paths_are_four_connected() {
        let f = FineGrid::new(20, 20).unwrap();
        let seg = Segment::new(0.0, 0.0, 1.0, 1.0);
        let p = traverse_segment(&seg, &f);
        for w in p.windows(2) {
            let d = (w[0].0 as i64 - w[1].0 as i64).abs() + (w[0].1 as i64 - w[1].1 as i64).abs();
            assert_eq!(d, 1);
        }
        assert_eq!(p.first(), Some(&(0, 0)));
        assert_eq!(p.last(), Some(&(19, 19)));
    }

    #[test]
    fn law_evaluation() {
        let law = MonotoneLaw::default();
        assert_eq!(law.evaluate(2.0, [0.0, 0.0]), [0.0, 0.0]);
        let v = law.evaluate(2.0, [1.0, 0.0]);
        assert!((v[0] - 2.5).abs() < 1e-15 && v[1] == 0.0);
        assert_eq!(MonotoneLaw::Linear.evaluate(3.0, [1.0, -2.0]), [3.0, -6.0]);
    }

    #[test]
    fn law_constants() {
        let lin = check_law_assumptions(&MonotoneLaw::Linear, 1000, 1).unwrap();
        assert!((lin.c1 - 1.0).abs() < 1e-9 && (lin.c2 - 1.0).abs() < 1e-9);
        let def = check_law_assumptions(&MonotoneLaw::default(), 10_000, 1).unwrap();
        assert!(def.c2 >= 1.0 && def.c1 <= 1.5 + 1e-12);
        let bad = MonotoneLaw::Custom {
            g: |t| 1.0 / ((1.0 + t) * (1.0 + t)),
            dg: |t| -2.0 / ((1.0 + t) * (1.0 + t) * (1.0 + t)),
        };
        match check_law_assumptions(&bad, 10_000, 1) {
            Err(NlmcError::LawRejected { z, v, .. }) => {
                let kz = bad.evaluate(1.0, z);
                let kv = bad.evaluate(1.0, v);
                let m = (kz[0] - kv[0]) * (z[0] - v[0]) + (kz[1] - kv[1]) * (z[1] - v[1]);
                assert!(m < 0.0);
            }
            other => panic!("expected rejection, got {other:?}"),
        }
    }

    #[test]
    fn constitutive_ranges() {
        let c = ConstitutiveSet::default();
        assert_eq!(c.kr(0.0), 1.0);
        for i in 0..=100 {
            let s = i as f64 / 100.0;
            assert!((0.0..=1.0).contains(&c.lambda_w(s)));
            assert!(c.total_mobility(s) > 0.0);
            assert!(c.fractional_flow_derivative(s) <= 2.0 + 1e-12);
        }
        assert!((c.fractional_flow_derivative(0.5) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn ktilde_closed_form_and_scaling() {
        let (c, f) = build_grids(4, 4, 8).unwrap();
        let pou = build_partition_of_unity(&c, &f).unwrap();
        let one = CoefficientField::constant(&f, 1.0).unwrap();
        let w = compute_weights(&one, &pou).unwrap();
        let h = c.hx();
        for iy in 0..f.ny {
            for ix in 0..f.nx {
                let xi = ((ix % 8) as f64 + 0.5) / 8.0;
                let eta = ((iy % 8) as f64 + 0.5) / 8.0;
                let exact = 2.0 / (h * h)
                    * ((1.0 - eta).powi(2) + eta * eta + (1.0 - xi).powi(2) + xi * xi);
                let got = w.ktilde[f.index(ix, iy)];
                assert!((got - exact).abs() < 1e-10 * exact);
            }
        }
        let w3 = compute_weights(&one.scaled(3.0).unwrap(), &pou).unwrap();
        for (a, b) in w.ktilde.iter().zip(&w3.ktilde) {
            assert!((3.0 * a - b).abs() < 1e-12 * b);
        }
        let (lo, hi) = w.bracket(h);
        assert!(lo >= 2.0 - 1e-9 && hi <= 4.0 + 1e-9);
    }
}
