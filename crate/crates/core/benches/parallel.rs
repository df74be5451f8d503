//! Sequential vs rayon execution for the two embarrassingly parallel stages.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlmc_core::continua::{build_continua, AuxiliarySpace};
use nlmc_core::fine_solver::GlobalBoundary;
use nlmc_core::media::{compute_weights, generate_field, ConstitutiveSet};
use nlmc_core::mesh::{build_grids, build_partition_of_unity};
use nlmc_core::nlmc::{build_basis_linear, NlmcContext};
use nlmc_core::fine_solver::LinearLaw;
use nlmc_core::surrogate::{build_graph, generate_dataset, Physics, TransContext};
use nlmc_core::Exec;
use std::hint::black_box;

fn problem(cells: usize, ratio: usize) -> (AuxiliarySpace, Vec<f64>) {
    let (coarse, fine) = build_grids(cells / ratio, cells / ratio, ratio).unwrap();
    let field = generate_field(&fine, 11, 1e2, 0.05).unwrap();
    let pou = build_partition_of_unity(&coarse, &fine).unwrap();
    let w = compute_weights(&field, &pou).unwrap();
    let space = build_continua(&coarse, &fine, &vec![false; fine.len()], &w).unwrap();
    (space, field.values)
}

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn basis(c: &mut Criterion) {
    let (space, k) = problem(64, 8);
    let mut g = c.benchmark_group("basis_build_64x64_8x8_M2");
    g.sample_size(10);
    for (name, exec) in MODES {
        let ctx = NlmcContext::new(&space, &k, &LinearLaw, GlobalBoundary::DirichletZero)
            .unwrap()
            .with_exec(exec);
        g.bench_with_input(BenchmarkId::from_parameter(name), &ctx, |b, ctx| {
            b.iter(|| black_box(build_basis_linear(ctx, 2).unwrap()))
        });
    }
    g.finish();
}

fn dataset(c: &mut Criterion) {
    let (space, k) = problem(40, 8);
    let ctx = TransContext::new(&space, &k, Physics::Unsaturated(ConstitutiveSet::default()));
    let graph = build_graph(&space, &k);
    let states: Vec<Vec<f64>> = (0..4)
        .map(|s| space.fine.sample(|x, y| 0.1 * (s + 1) as f64 * (1.0 + x * (1.0 - y))))
        .collect();
    let mut g = c.benchmark_group("dataset_40x40_5x5_4_states");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| black_box(generate_dataset(&ctx, &graph, &states, None, 1, 1, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, basis, dataset);
criterion_main!(benches);
