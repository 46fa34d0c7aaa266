use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mdbc::pipeline::{Family, ModelConfig};
use mdbc::resample::{resample_chain, ResampleConfig};
use mdbc::{FitOptions, ParamVector};
use mdbc_bench::{circles, gmm_pair};

fn chains(c: &mut Criterion) {
    let mut group = c.benchmark_group("resample_chain");
    let (model, theta) = gmm_pair();
    let cfg = ResampleConfig {
        n: 1000,
        horizon: 1000,
        chains: 1,
        ..ResampleConfig::default()
    };
    group.bench_function("gmm_k2_p1_n1000", |b| {
        b.iter(|| resample_chain(&model, &theta, &cfg, 0).unwrap())
    });

    let points = circles(2000, 1);
    for family in [Family::Gmm, Family::CouplingFlow] {
        let mc = ModelConfig {
            family,
            ..ModelConfig::default()
        };
        let model = mc.handle(2);
        let theta: ParamVector = match family {
            Family::Gmm => {
                let mut opts = FitOptions::default();
                opts.gmm.max_iter = 50;
                model.fit_mle(&points, &opts).unwrap().value.theta
            }
            Family::CouplingFlow => match &model {
                mdbc::ModelHandle::CouplingFlow(s) => s.init_theta(1),
                _ => unreachable!(),
            },
        };
        let cfg = ResampleConfig {
            n: 2000,
            horizon: 200,
            chains: 1,
            ..ResampleConfig::default()
        };
        group.bench_with_input(BenchmarkId::new("circles_200_steps", format!("{family:?}")), &cfg, |b, cfg| {
            b.iter(|| resample_chain(&model, &theta, cfg, 0).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, chains);
criterion_main!(benches);
