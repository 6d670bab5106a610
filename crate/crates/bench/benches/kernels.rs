use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use rqe_bench::{markov_fixture, payoff_pair, profile, spread_vector};
use rqe_core::markov::{bellman_evaluate, bellman_optimality};
use rqe_core::simplex::project_in_place;
use rqe_core::{solve, SolveOptions};

fn projection(c: &mut Criterion) {
    let mut g = c.benchmark_group("project_simplex");
    for n in [4, 64, 1024] {
        let x = spread_vector(n);
        let floor = 0.1 / n as f64;
        let mut v = x.clone();
        let mut scratch = Vec::with_capacity(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| {
                v.copy_from_slice(&x);
                project_in_place(black_box(&mut v), floor, &mut scratch);
            })
        });
    }
    g.finish();
}

fn stage_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(20);
    let p = profile();
    let opts = SolveOptions { tol: 1e-8, ..Default::default() };
    for n in [2, 5, 10] {
        let r = payoff_pair(n, n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve(black_box(&r), &p, &opts).expect("solves"))
        });
    }
    g.finish();
}

fn bellman(c: &mut Criterion) {
    let mut g = c.benchmark_group("bellman");
    g.sample_size(10);
    let p = profile();
    let (mg, q, z) = markov_fixture(10, 3);
    g.bench_function("evaluate_10x3", |b| b.iter(|| bellman_evaluate(black_box(&q), &z, &mg, &p).expect("evaluates")));
    g.bench_function("optimality_10x3", |b| {
        b.iter(|| bellman_optimality(black_box(&q), &mg, &p, 1e-8).expect("sweeps"))
    });
    g.finish();
}

criterion_group!(kernels, projection, stage_solve, bellman);
criterion_main!(kernels);
