//! Parallel versus sequential campaign throughput. Build with
//! `--no-default-features` to time the fallback without rayon at all.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ranktopo::experiment::{Campaign, ExperimentConfig};
use ranktopo::models::ModelSpec;

fn campaign() -> Campaign {
    Campaign::new(ExperimentConfig {
        topologies: vec!["complete".into(), "star".into(), "path".into()],
        d: vec![10, 20],
        n: vec![2000],
        model: ModelSpec { family: "thurstone".into(), sigma: 1.0, bound: 1.0, m: None },
        trials: 8,
        seed: 1,
        ..ExperimentConfig::default()
    })
    .expect("valid config")
}

fn bench(c: &mut Criterion) {
    let campaign = campaign();
    let mut group = c.benchmark_group("campaign");
    group.sample_size(10);
    for (label, threads) in [("sequential", Some(1)), ("parallel", None)] {
        group.bench_with_input(BenchmarkId::from_parameter(label), &threads, |b, &threads| {
            b.iter(|| black_box(campaign.run(threads).expect("campaign runs")))
        });
    }
    group.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
