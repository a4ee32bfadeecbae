use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use critsds_bench::{critical_affine, reflected_normal};
use critsds_core::engine::{envelope_replicas, run_chain};
use critsds_core::group::GroupElement;
use critsds_core::measure::{Layout, LogBinnedMeasure};
use critsds_core::renewal::{ladder_decompose, StepLaw};
use critsds_core::rng::stream;
use critsds_core::Dist;

const STEPS: u64 = 100_000;

fn chains(c: &mut Criterion) {
    let mut g = c.benchmark_group("chain");
    g.throughput(Throughput::Elements(STEPS));
    for (name, spec) in [("affine", critical_affine()), ("reflected", reflected_normal())] {
        g.bench_function(name, |b| {
            b.iter(|| {
                let mut m = LogBinnedMeasure::new(Layout::default()).unwrap();
                run_chain(&spec, 1, 0, 1.0, STEPS, 1, |_, x| m.push(x)).unwrap();
                black_box(m.recorded())
            })
        });
    }
    g.bench_function("sandwich_affine", |b| {
        let spec = critical_affine();
        b.iter(|| envelope_replicas(&spec, 2, 1, STEPS, 1.0).unwrap())
    });
    g.finish();
}

fn measure_push(c: &mut Criterion) {
    let mut rng = stream(3, 0);
    let xs: Vec<f64> = (0..STEPS).map(|_| Dist::LogNormal { mu: 0.0, sigma: 5.0 }.sample(&mut rng)).collect();
    let mut g = c.benchmark_group("measure");
    g.throughput(Throughput::Elements(STEPS));
    g.bench_function("push_log_binned", |b| {
        b.iter_batched(
            || LogBinnedMeasure::new(Layout::default()).unwrap(),
            |mut m| {
                xs.iter().for_each(|&x| m.push(x));
                m
            },
            BatchSize::SmallInput,
        )
    });
    g.finish();
}

fn group_and_ladders(c: &mut Criterion) {
    let g1 = GroupElement::new(0.3, 1.7).unwrap();
    let g2 = GroupElement::new(-2.0, 0.4).unwrap();
    c.bench_function("group_compose_invert", |b| b.iter(|| black_box(g1).compose(&black_box(g2)).invert()));

    let law = StepLaw::new(Dist::normal(0.0, 1.0)).unwrap();
    let mut rng = stream(4, 0);
    let inc: Vec<f64> = (0..STEPS).map(|_| law.sample(&mut rng)).collect();
    let mut g = c.benchmark_group("renewal");
    g.throughput(Throughput::Elements(STEPS));
    g.bench_function("ladder_decompose", |b| b.iter(|| ladder_decompose(black_box(&inc))));
    g.finish();
}

criterion_group!(benches, chains, measure_push, group_and_ladders);
criterion_main!(benches);
