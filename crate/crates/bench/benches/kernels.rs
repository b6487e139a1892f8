use std::hint::black_box;

use clt_lab::generators::{gen_iid, MomentProfile};
use clt_lab::linalg::{sample_gaussian, GaussianSpec, PsdMatrix};
use clt_lab::markov::{stationary_dist, sum_law, three_state_example, two_state_example};
use clt_lab::transport::{estimate_wp_rank_matched, lapjv, wp_pow_assignment, PointCloud};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn cloud(cov: PsdMatrix, m: usize, seed: u64) -> PointCloud {
    let d = cov.dim();
    PointCloud::new(sample_gaussian(&GaussianSpec::centered(cov), m, seed).unwrap(), d).unwrap()
}

fn assignment(c: &mut Criterion) {
    let mut g = c.benchmark_group("lapjv");
    g.sample_size(10);
    for m in [128usize, 512, 1024] {
        let x = cloud(PsdMatrix::diagonal(&[1.0, 4.0]).unwrap(), m, 1);
        let y = cloud(PsdMatrix::identity(2), m, 2);
        g.bench_with_input(BenchmarkId::new("w2_gaussian_d2", m), &m, |b, _| {
            b.iter(|| wp_pow_assignment(black_box(&x), black_box(&y), 2.0).unwrap())
        });
    }
    let n = 256;
    let cost: Vec<f64> = (0..n * n).map(|k| ((k * 7919) % 1000) as f64).collect();
    g.bench_function("integer_costs_256", |b| b.iter(|| lapjv::solve(black_box(&cost), n)));
    g.finish();
}

fn rank_matched(c: &mut Criterion) {
    let mut g = c.benchmark_group("rank_matched");
    g.sample_size(10);
    let target = GaussianSpec::standard(1);
    for total in [10_000usize, 100_000] {
        let data = gen_iid(total, 1, MomentProfile::CenteredExponential, 3).unwrap().data;
        let pts = PointCloud::new(data, 1).unwrap();
        g.bench_with_input(BenchmarkId::new("w1_d1", total), &total, |b, _| {
            b.iter(|| estimate_wp_rank_matched(black_box(&pts), &target, 1.0, 20, true, 4).unwrap())
        });
    }
    g.finish();
}

fn sum_laws(c: &mut Criterion) {
    let mut g = c.benchmark_group("sum_law");
    g.sample_size(10);
    // count vectors grow like n^(s-1)
    let cases =
        [("two_state", two_state_example(), [128usize, 512]), ("three_state", three_state_example(), [32, 128])];
    for (name, chain, sizes) in cases {
        let pi = stationary_dist(&chain).unwrap();
        for n in sizes {
            g.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| b.iter(|| sum_law(&chain, n, &pi).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, assignment, rank_matched, sum_laws);
criterion_main!(benches);
