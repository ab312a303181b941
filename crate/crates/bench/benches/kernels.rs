use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use matchlab_core::torus::sample_uniform;
use matchlab_core::transport::{default_grid_k, semidiscrete_w2, solve_assignment};
use matchlab_core::{AnsatzField, GridField, HeatEvaluator, SolveMethod, TorusPoint};

fn heat(c: &mut Criterion) {
    let mut group = c.benchmark_group("heat");
    for t in [1e-3, 1e-2] {
        let eval = HeatEvaluator::new(t).unwrap();
        let y = TorusPoint::wrap(0.137, 0.291).unwrap();
        group.bench_with_input(BenchmarkId::new("q_grad", t), &y, |b, &y| b.iter(|| eval.q_grad(black_box(y))));
    }
    group.finish();
}

fn fields(c: &mut Criterion) {
    let mut group = c.benchmark_group("field");
    for n in [64, 256] {
        let sample = sample_uniform(n, 1, 0).unwrap();
        let t = 1.0 / n as f64;
        group.bench_with_input(BenchmarkId::new("grid_build", n), &sample, |b, s| {
            b.iter(|| GridField::build(s, t, 256, 1e-12).unwrap())
        });
        let field = AnsatzField::new(&sample, t).unwrap();
        let y = TorusPoint::wrap(0.4, 0.7).unwrap();
        group.bench_with_input(BenchmarkId::new("grad_direct", n), &y, |b, &y| {
            b.iter(|| field.grad_f_direct(black_box(y)))
        });
    }
    group.finish();
}

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("transport");
    group.sample_size(10);
    for n in [16, 64] {
        let sample = sample_uniform(n, 2, 0).unwrap();
        let k = default_grid_k(n);
        group.bench_with_input(BenchmarkId::new("certified_approximate", n), &sample, |b, s| {
            b.iter(|| semidiscrete_w2(s, k, SolveMethod::CertifiedApproximate).unwrap())
        });
    }
    let sample = sample_uniform(16, 3, 0).unwrap();
    group.bench_function("exact_n16", |b| {
        b.iter(|| semidiscrete_w2(&sample, default_grid_k(16), SolveMethod::Exact).unwrap())
    });
    let x = sample_uniform(128, 4, 0).unwrap();
    let y = sample_uniform(128, 5, 0).unwrap();
    let costs: Vec<Vec<f64>> = x
        .points()
        .iter()
        .map(|&a| y.points().iter().map(|&b| matchlab_core::torus::dist2(a, b)).collect())
        .collect();
    group.bench_function("assignment_n128", |b| b.iter(|| solve_assignment(&costs).unwrap()));
    group.finish();
}

criterion_group!(benches, heat, fields, transport);
criterion_main!(benches);
