use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use occuhmm_core::hmm::{forward_loglik, propagate_state_probs, simulate_hmm, stationary_distribution, viterbi};
use occuhmm_core::sim::default_model;
use occuhmm_core::CovariateSeries;

fn covariate(len: usize, seed: u64) -> CovariateSeries {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = (0..len).map(|_| rng.random_range(-3.0..3.0)).collect();
    CovariateSeries::from_column(z).unwrap()
}

fn bench_forward(c: &mut Criterion) {
    let model = default_model();
    let mut group = c.benchmark_group("forward");
    for len in [1_000usize, 10_000] {
        let cov = covariate(len, 1);
        let (_, obs) = simulate_hmm(&model, &cov, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        group.bench_with_input(BenchmarkId::new("loglik", len), &len, |b, _| {
            b.iter(|| forward_loglik(black_box(&model), &obs, &cov).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("viterbi", len), &len, |b, _| {
            b.iter(|| viterbi(black_box(&model), &obs, &cov).unwrap())
        });
    }
    group.finish();
}

fn bench_propagate(c: &mut Criterion) {
    let model = default_model();
    let cov = covariate(100_000, 3);
    c.bench_function("propagate/100000", |b| {
        b.iter(|| propagate_state_probs(black_box(&model), &cov).unwrap())
    });
}

fn bench_stationary(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut group = c.benchmark_group("stationary");
    for n in [2usize, 3, 5, 8] {
        let mut g = DMatrix::from_fn(n, n, |_, _| rng.random_range(0.01..1.0));
        for mut row in g.row_iter_mut() {
            let s = row.sum();
            row /= s;
        }
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| stationary_distribution(black_box(g)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_propagate, bench_stationary);
criterion_main!(benches);
