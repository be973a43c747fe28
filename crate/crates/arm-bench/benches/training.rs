//! End-to-end benchmarks: one meta-training step (6 groups of 50) and
//! one 50-example test-time adaptation, per method, at the reduced
//! 32-filter width used by the desk-scale experiments.

use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use arm_core::arm::train::{train_arm, TrainConfig};
use arm_core::arm::{predict_adapted, AdaptSettings, Method, ModelBundle};
use arm_core::data::{Domain, DomainDataset};
use arm_core::rng;
use arm_core::tensor::Tensor;

/// Noise images shaped like the rotated-digit domains: 14 domains of
/// 400 examples each, 1×28×28, 10 classes.
fn noise_dataset() -> DomainDataset {
    let mut r = rng::stream(7, "bench");
    let domains = (0..14)
        .map(|d| {
            let n = 400;
            let x: Vec<f32> = (0..n * 28 * 28).map(|_| r.gen_range(0.0..1.0)).collect();
            let y = (0..n).map(|_| r.gen_range(0..10u32)).collect();
            Domain {
                name: format!("d{d:02}"),
                x: Tensor::from_vec(&[n, 1, 28, 28], x).unwrap(),
                y,
            }
        })
        .collect();
    DomainDataset {
        domains,
        num_classes: 10,
    }
}

fn bench_train_step(c: &mut Criterion) {
    let data = noise_dataset();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for method in [Method::Erm, Method::ArmCml, Method::ArmBn, Method::ArmLl] {
        group.bench_with_input(
            BenchmarkId::from_parameter(method.name()),
            &method,
            |bench, &method| {
                let cfg = TrainConfig {
                    epochs: 1,
                    steps_per_epoch: Some(1),
                    ..TrainConfig::default()
                };
                bench.iter_batched(
                    || ModelBundle::for_images_at_width(method, 32, 0).unwrap(),
                    |mut bundle| {
                        train_arm(&cfg, &mut bundle, &data, None, None).unwrap();
                        black_box(bundle.params.total_scalars())
                    },
                    criterion::BatchSize::LargeInput,
                )
            },
        );
    }
    group.finish();
}

fn bench_adaptation(c: &mut Criterion) {
    let mut r = rng::stream(9, "bench");
    let x = Tensor::from_vec(
        &[50, 1, 28, 28],
        (0..50 * 28 * 28).map(|_| r.gen_range(0.0..1.0)).collect::<Vec<f32>>(),
    )
    .unwrap();
    let mut group = c.benchmark_group("adapt_batch_50");
    group.sample_size(10);
    for method in [Method::Erm, Method::ArmCml, Method::ArmBn, Method::ArmLl] {
        let bundle = ModelBundle::for_images_at_width(method, 32, 0).unwrap();
        group.bench_with_input(
            BenchmarkId::from_parameter(method.name()),
            &bundle,
            |bench, bundle| {
                bench.iter(|| {
                    let p = predict_adapted(bundle, AdaptSettings::default(), black_box(&x))
                        .unwrap();
                    black_box(p.argmax)
                })
            },
        );
    }
    group.finish();
}

criterion_group! {
    name = training;
    config = Criterion::default();
    targets = bench_train_step, bench_adaptation
}
criterion_main!(training);
