use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DVector;

use stwind::estimate::free_layout;
use stwind::likelihood::{loglik_gradient, total_loglik};
use stwind::model::{assemble_joint, cov_marginal, Which};
use stwind::predict::{all_targets, krige, sample_scenarios};
use stwind_bench::fixture;

fn covariance(c: &mut Criterion) {
    let mut group = c.benchmark_group("covariance");
    for j0 in [2, 4, 8] {
        let f = fixture(j0, 2);
        group.bench_with_input(BenchmarkId::new("conditional", j0), &f, |b, f| {
            b.iter(|| cov_marginal(&f.theta, &f.geom, Which::Cond).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("joint", j0), &f, |b, f| b.iter(|| assemble_joint(&f.theta, &f.geom).unwrap()));
    }
    group.finish();
}

fn likelihood(c: &mut Criterion) {
    let f = fixture(4, 30);
    c.bench_function("loglik/j4_k30", |b| b.iter(|| total_loglik(&f.theta, &f.geom, &f.data).unwrap()));
    let layout = free_layout(&f.theta, &f.geom);
    let mut group = c.benchmark_group("gradient");
    group.sample_size(10);
    group.bench_function("j4_k30", |b| b.iter(|| loglik_gradient(&f.theta, &f.geom, &f.data, &layout).unwrap()));
    group.finish();
}

fn prediction(c: &mut Criterion) {
    let f = fixture(4, 1);
    let y = DVector::from_element(f.geom.nwp_dim(), 3.0);
    let targets = all_targets(&f.geom);
    c.bench_function("krige/j4", |b| b.iter(|| krige(&f.theta, &f.geom, &y, &targets, None).unwrap()));
    let dist = krige(&f.theta, &f.geom, &y, &targets, None).unwrap();
    c.bench_function("scenarios/j4_m50", |b| b.iter(|| sample_scenarios(&dist, 50, 7).unwrap()));
}

criterion_group!(benches, covariance, likelihood, prediction);
criterion_main!(benches);
