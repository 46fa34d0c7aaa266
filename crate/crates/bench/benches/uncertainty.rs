use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdbc::assignment::min_cost_assignment;
use mdbc::uncertainty::{certainty_scores, clustering_distance, coclustering_matrix, ClusterFamily};
use mdbc_bench::labelings;

fn uncertainty(c: &mut Criterion) {
    let mut group = c.benchmark_group("uncertainty");
    group.sample_size(10);
    let ls = labelings(2000, 200, 2);
    group.bench_function("cocluster_n2000_t200", |b| b.iter(|| coclustering_matrix(&ls).unwrap()));
    let m = coclustering_matrix(&ls).unwrap();
    group.bench_function("certainty_n2000", |b| b.iter(|| certainty_scores(&m)));

    for k in [4usize, 16, 64] {
        let cost: Vec<f64> = (0..k * k).map(|i| ((i * 7919) % 1009) as f64).collect();
        group.bench_with_input(BenchmarkId::new("assignment", k), &k, |b, &k| {
            b.iter(|| min_cost_assignment(&cost, k).unwrap())
        });
    }
    let ls = labelings(5000, 2, 8);
    let (a, b2) = (ClusterFamily::from_labeling(&ls[0]), ClusterFamily::from_labeling(&ls[1]));
    group.bench_function("distance_n5000_k8", |b| b.iter(|| clustering_distance(&a, &b2, true).unwrap()));
    group.finish();
}

criterion_group!(benches, uncertainty);
criterion_main!(benches);
