use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rrsitr::data::PairBatch;
use rrsitr::evaluation::{dataset_similarity, retrieval_report};
use rrsitr::objective::ObjectiveConfig;
use rrsitr::similarity::{global_similarity, local_similarity};
use rrsitr::trainer::{gradients_with, BatchInputs};
use rrsitr::{Hyper, LocalAggregation, ObjectiveOptions, Variant};
use rrsitr_bench::{blocks, dataset, heads};

fn similarity(c: &mut Criterion) {
    let mut group = c.benchmark_group("similarity");
    for n in [100, 500] {
        let b = blocks(&dataset(n));
        group.bench_with_input(BenchmarkId::new("global", n), &b, |bench, b| {
            bench.iter(|| global_similarity(b.image_global.view(), b.text_global.view()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("local", n), &b, |bench, b| {
            bench.iter(|| {
                local_similarity(b.image_local.view(), b.text_local.view(), LocalAggregation::default()).unwrap()
            })
        });
    }
    group.finish();
}

fn gradient_step(c: &mut Criterion) {
    let ds = dataset(100);
    let batch = PairBatch::new(&ds, (0..100).collect()).unwrap();
    let x = BatchInputs::from_batch(&batch);
    let h = heads();
    let mut group = c.benchmark_group("gradient_step");
    for variant in [Variant::Full, Variant::NoneOfThree] {
        let cfg = ObjectiveConfig::new(&Hyper::default(), variant, ObjectiveOptions::default());
        group.bench_function(variant.name(), |bench| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            bench.iter(|| gradients_with(&h, &x, &cfg, &mut rng).unwrap())
        });
    }
    group.finish();
}

fn recall(c: &mut Criterion) {
    let mut group = c.benchmark_group("recall");
    for n in [500, 1000] {
        let s = dataset_similarity(&heads(), &dataset(n), 0.9, LocalAggregation::default()).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |bench, s| {
            bench.iter(|| retrieval_report(s.view()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, similarity, gradient_step, recall);
criterion_main!(benches);
