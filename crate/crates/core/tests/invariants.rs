mod common;

use common::{rel_diff, setup};
use nlmc_core::continua::{build_continua, coarse_means};
use nlmc_core::media::io::{format_raster, parse_raster};
use nlmc_core::media::{compute_weights, generate_field, traverse_segment, MonotoneLaw, Segment};
use nlmc_core::mesh::{build_grids, build_partition_of_unity};
use nlmc_core::Exec;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hats_and_chi_partition_unity(nc in 1usize..5, r in 1usize..6, sx in 0.0f64..1.0, sy in 0.0f64..1.0) {
        let (coarse, fine) = build_grids(nc, nc, r).unwrap();
        let pou = build_partition_of_unity(&coarse, &fine).unwrap();
        let ix = ((sx * fine.nx as f64) as usize).min(fine.nx - 1);
        let iy = ((sy * fine.ny as f64) as usize).min(fine.ny - 1);
        let hats: f64 = (0..coarse.node_count()).map(|n| pou.hat_cell(n, ix, iy)).sum();
        prop_assert!((hats - 1.0).abs() < 1e-12);
        let chis: f64 = (0..coarse.len()).map(|k| pou.chi_k_cell(k, ix, iy)).sum();
        prop_assert!((chis - 1.0).abs() < 1e-12);
    }

    #[test]
    fn generated_field_spans_contrast(seed in 0u64..1000, log_c in 0.0f64..6.0, ell in 0.0f64..0.2) {
        let (_, fine) = build_grids(2, 2, 8).unwrap();
        let c = 10f64.powf(log_c);
        let f = generate_field(&fine, seed, c, ell).unwrap();
        let (lo, hi) = f.min_max();
        prop_assert!((lo - 1.0).abs() < 1e-12);
        prop_assert!((hi - c).abs() <= 1e-9 * c || c == 1.0);
        prop_assert_eq!(generate_field(&fine, seed, c, ell).unwrap().values, f.values);
    }

    #[test]
    fn raster_text_round_trip(nx in 1usize..8, ny in 1usize..8, seed in any::<u64>()) {
        let mut x = seed | 1;
        let values: Vec<f64> = (0..nx * ny)
            .map(|_| {
                x ^= x << 13;
                x ^= x >> 7;
                x ^= x << 17;
                (x as f64 / u64::MAX as f64 - 0.5) * 1e6
            })
            .collect();
        let (a, b, back) = parse_raster(&format_raster(nx, ny, &values)).unwrap();
        prop_assert_eq!((a, b), (nx, ny));
        prop_assert_eq!(back, values);
    }

    #[test]
    fn segment_paths_are_four_connected(p in prop::array::uniform4(0.0f64..1.0)) {
        let (_, fine) = build_grids(4, 4, 8).unwrap();
        let path = traverse_segment(&Segment::new(p[0], p[1], p[2], p[3]), &fine);
        prop_assert!(!path.is_empty());
        for w in path.windows(2) {
            let d = w[0].0.abs_diff(w[1].0) + w[0].1.abs_diff(w[1].1);
            prop_assert!(d <= 1, "{:?} -> {:?}", w[0], w[1]);
        }
    }

    #[test]
    fn default_law_is_strongly_monotone(a in prop::array::uniform2(-1e3f64..1e3), b in prop::array::uniform2(-1e3f64..1e3), k in 1e-2f64..1e4) {
        let law = MonotoneLaw::default();
        let (fa, fb) = (law.evaluate(k, a), law.evaluate(k, b));
        let d = [a[0] - b[0], a[1] - b[1]];
        let inner = (fa[0] - fb[0]) * d[0] + (fa[1] - fb[1]) * d[1];
        // lower constant C2 = 1
        prop_assert!(inner >= k * (d[0] * d[0] + d[1] * d[1]) * (1.0 - 1e-9));
    }

    #[test]
    fn projection_is_s_orthogonal(seed in 0u64..50, fx in -3.0f64..3.0, fy in -3.0f64..3.0) {
        let s = setup(16, 4, 1e2, Some(common::two_fractures()), seed);
        let u = s.fine.sample(|x, y| (fx * x).sin() + (fy * y).cos());
        let (_, pu) = s.space.project(&u);
        let (_, ppu) = s.space.project(&pu);
        prop_assert!(rel_diff(&ppu, &pu) < 1e-12);
        let r: Vec<f64> = u.iter().zip(&pu).map(|(a, b)| a - b).collect();
        let scale = s.space.s_norm(&u) * s.space.s_norm(&u);
        for c in 0..s.space.len() {
            let mu = s.space.indicator(c);
            prop_assert!(s.space.s_product(&r, &mu).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn exec_modes_agree(n in 0usize..200) {
        let f = |i: usize| ((i * 2654435761) % 1000) as f64 / 7.0;
        prop_assert_eq!(Exec::Sequential.map_range(n, f), Exec::Parallel.map_range(n, f));
    }
}

#[test]
fn continua_cover_every_cell_once() {
    let s = setup(32, 8, 1e2, Some(common::two_fractures()), 11);
    let mut seen = vec![0; s.fine.len()];
    for c in &s.space.continua {
        for &i in &c.cells {
            seen[i] += 1;
            assert_eq!(s.fine.coords(i).0 / 8 + 4 * (s.fine.coords(i).1 / 8), c.coarse_cell);
        }
    }
    assert!(seen.iter().all(|&n| n == 1));
    let total: f64 = (0..s.space.len()).map(|c| s.space.volume(c)).sum();
    assert!((total - 1.0).abs() < 1e-12);
}

#[test]
fn constant_states_have_constant_means() {
    let s = setup(24, 6, 1e3, Some(common::two_fractures()), 1);
    let u = vec![2.5; s.fine.len()];
    assert!(s.space.plain_means(&u).iter().all(|m| (m - 2.5).abs() < 1e-12));
    assert!(coarse_means(&s.coarse, &s.fine, &u).iter().all(|m| (m - 2.5).abs() < 1e-12));
    let (_, pu) = s.space.project(&u);
    assert!(rel_diff(&pu, &u) < 1e-14);
}

#[test]
fn weights_follow_coefficient_scaling() {
    let (coarse, fine) = build_grids(4, 4, 4).unwrap();
    let pou = build_partition_of_unity(&coarse, &fine).unwrap();
    let k = generate_field(&fine, 2, 1e2, 0.1).unwrap();
    let w1 = compute_weights(&k, &pou).unwrap();
    let w3 = compute_weights(&k.scaled(3.0).unwrap(), &pou).unwrap();
    let a = build_continua(&coarse, &fine, &vec![false; fine.len()], &w1).unwrap();
    let b = build_continua(&coarse, &fine, &vec![false; fine.len()], &w3).unwrap();
    for (x, y) in a.ktilde.iter().zip(&b.ktilde) {
        assert!((y - 3.0 * x).abs() <= 1e-12 * y.abs());
    }
}
