use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdbc::levelset::{cluster_upper_level, LevelSetParams};
use mdbc::tomato::{density_weights, knn_graph, tomato_cluster};
use mdbc_bench::circles;

// Stand-in density: negative squared distance to the nearest ring.
fn ring_logdens(p: &mdbc::PointSet) -> Vec<f64> {
    p.rows()
        .map(|r| {
            let rad = (r[0] * r[0] + r[1] * r[1]).sqrt();
            let d = (rad - 1.2).abs().min((rad - 0.3).abs());
            -d * d * 20.0
        })
        .collect()
}

fn clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("clustering");
    for n in [1000usize, 5000] {
        let points = circles(n, 3);
        let logdens = ring_logdens(&points);
        let params = LevelSetParams::default().calibrate(&points, &logdens).unwrap().value;
        group.bench_with_input(BenchmarkId::new("levelset", n), &n, |b, _| {
            b.iter(|| cluster_upper_level(&points, &logdens, &params).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("knn_graph_k20", n), &n, |b, _| {
            b.iter(|| knn_graph(&points, 20).unwrap())
        });
        let graph = knn_graph(&points, 20).unwrap();
        let w = density_weights(&logdens).unwrap();
        group.bench_with_input(BenchmarkId::new("tomato", n), &n, |b, _| {
            b.iter(|| tomato_cluster(&graph, &w, 0.5).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, clustering);
criterion_main!(benches);
