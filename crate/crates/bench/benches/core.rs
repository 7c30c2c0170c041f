use std::hint::black_box;

use casebook_bench::{entity, points, repository, world};
use casebook_core::gnn::encode_pair;
use casebook_core::paths::extract_paths;
use casebook_core::repository::k_medoids;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_encode(c: &mut Criterion) {
    let mut group = c.benchmark_group("encode_pair");
    for nodes in [200, 2000] {
        let w = world(1, nodes, nodes * 4, 8, 3);
        let (u, v) = (entity(0), entity(nodes / 2));
        group.bench_with_input(BenchmarkId::from_parameter(nodes), &nodes, |b, _| {
            b.iter(|| {
                encode_pair(&w.params, &w.graph, u, v, &w.features[0], &w.features[nodes / 2]).unwrap()
            })
        });
    }
    group.finish();
}

fn bench_paths(c: &mut Criterion) {
    let w = world(2, 500, 2500, 8, 3);
    let (u, v) = (entity(0), entity(250));
    c.bench_function("extract_paths/500", |b| {
        b.iter(|| {
            extract_paths(&w.params, &w.graph, u, v, &w.features[0], &w.features[250], 3, 5).unwrap()
        })
    });
}

fn bench_retrieve(c: &mut Criterion) {
    let mut group = c.benchmark_group("retrieve");
    for n in [1_000, 10_000] {
        let (repo, query) = repository(3, n, 20, 64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| black_box(repo.retrieve(&query).unwrap().len()))
        });
    }
    group.finish();
}

fn bench_kmedoids(c: &mut Criterion) {
    let pts = points(4, 500, 64);
    let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
    let mut group = c.benchmark_group("k_medoids");
    group.sample_size(10);
    group.bench_function("500x25", |b| b.iter(|| k_medoids(&refs, 25).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_encode, bench_paths, bench_retrieve, bench_kmedoids);
criterion_main!(benches);
