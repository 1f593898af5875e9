//! Parallel vs sequential kernel comparison.
//!
//! Run with `cargo bench -p twogrid`. With the default `parallel`
//! feature the `par` variants go through rayon; the `seq` variants force
//! the single-threaded twins of the same chunked algorithms, so the two
//! are directly comparable (and produce bit-identical results).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use twogrid::compact_ops::{apply_lambda, assemble_step_matrix};
use twogrid::grid::{BoundaryKind, Grid2D, GridFunction};
use twogrid::interp::build_plan;
use twogrid::linsolve::LinearSolveConfig;
use twogrid::par;
use twogrid::problems::case_i;
use twogrid::schemes::{nonlinear_step, LevelState, NewtonConfig, StepContext};
use twogrid::TwoGridPair;

fn bench_reductions(c: &mut Criterion) {
    let n = 1 << 18;
    let a: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
    let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.11).cos()).collect();
    let mut group = c.benchmark_group("dot_262144");
    group.bench_function("par", |bench| bench.iter(|| par::dot(&a, &b)));
    group.bench_function("seq", |bench| bench.iter(|| par::dot_seq(&a, &b)));
    group.finish();
}

fn bench_stencils(c: &mut Criterion) {
    for n in [128usize, 384] {
        let g = Grid2D::new(n, n, 1.0, 1.0, BoundaryKind::Periodic).unwrap();
        let w = GridFunction::sample(g, |x, y| (6.0 * x).sin() * (4.0 * y).cos());
        let mut group = c.benchmark_group(format!("lambda_{n}x{n}"));
        group.bench_function("apply", |bench| bench.iter(|| apply_lambda(&w)));
        group.finish();
    }
}

fn bench_matvec(c: &mut Criterion) {
    let n = 256;
    let g = Grid2D::new(n, n, 1.0, 1.0, BoundaryKind::Periodic).unwrap();
    let m = assemble_step_matrix(&g, 10.0, 1.0, None).unwrap();
    let x: Vec<f64> = (0..m.n()).map(|i| (i as f64 * 0.01).sin()).collect();
    let mut y = vec![0.0; m.n()];
    let mut group = c.benchmark_group("matvec_256x256");
    group.bench_function("par", |bench| bench.iter(|| m.matvec(&x, &mut y)));
    group.bench_function("seq", |bench| bench.iter(|| m.matvec_seq(&x, &mut y)));
    group.finish();
}

fn bench_prolongate(c: &mut Criterion) {
    let pair = TwoGridPair::new(48, 48, 4, 4, (0.0, 0.0), (1.0, 1.0), BoundaryKind::Dirichlet).unwrap();
    let plan = build_plan(&pair).unwrap();
    let w = GridFunction::sample(*pair.coarse(), |x, y| (3.0 * x + y).sin());
    c.bench_function("prolongate_48_to_192", |bench| {
        bench.iter(|| plan.prolongate(&w).unwrap())
    });
}

fn bench_full_step(c: &mut Criterion) {
    let p = case_i();
    for n in [100usize, 150] {
        let g = p.grid(n).unwrap();
        let state = LevelState::new(p.sample_u0(g));
        let tau = std::f64::consts::PI / 80.0;
        let ctx = StepContext { n: 1, t: tau, b0: 1.0 / tau, b1: 0.0 };
        let newton = NewtonConfig::default();
        let lin = LinearSolveConfig::default();
        c.bench_with_input(BenchmarkId::new("nonlinear_step", n), &n, |bench, _| {
            bench.iter(|| nonlinear_step(&state, &p, &ctx, &newton, &lin).unwrap())
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_reductions, bench_stencils, bench_matvec, bench_prolongate, bench_full_step
}
criterion_main!(benches);
