use acdl::data::LabeledSet;
use acdl::gan::{Gan, LatentSpec};
use acdl::metrics::roc_auc;
use acdl::models::{build, build_dcgan};
use acdl::optim::{AdamConfig, GanLoss};
use acdl::train::{TrainConfig, Trainer};
use acdl::{Architecture, ImageSpec, Tensor};
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image_set(rng: &mut ChaCha8Rng, n: usize, side: usize) -> LabeledSet {
    let numel = n * side * side * 3;
    LabeledSet {
        inputs: Tensor::new(vec![n, side, side, 3], (0..numel).map(|_| rng.random_range(0.0f32..1.0)).collect()).unwrap(),
        labels: (0..n).map(|i| (i % 2) as u8).collect(),
        paths: Vec::new(),
    }
}

fn classifier_epoch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let train = image_set(&mut rng, 16, 64);
    let val = image_set(&mut rng, 8, 64);
    let mut group = c.benchmark_group("classifier epoch, 16 images at 64x64");
    group.sample_size(10);
    for arch in [
        Architecture::Cnn { input: ImageSpec::square(64) },
        Architecture::Ftcnn { input: ImageSpec::square(64) },
    ] {
        let mut model = build(&arch, 2).unwrap();
        let mut trainer = Trainer::new(TrainConfig { epochs: usize::MAX, batch_size: 16, ..Default::default() }).unwrap();
        group.bench_function(arch.tag(), |bench| {
            bench.iter(|| trainer.run_epoch(&mut model, &train, &val, &mut |_| {}).unwrap())
        });
    }
    group.finish();
}

fn gan_step(c: &mut Criterion) {
    let (g, d) = build_dcgan(16, ImageSpec::square(16), 3).unwrap();
    let mut gan = Gan::new(g, d, AdamConfig::gan(), LatentSpec { dim: 16, ..Default::default() }).unwrap();
    let real = Tensor::full(vec![16, 16, 16, 3], 0.5f32).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut group = c.benchmark_group("gan");
    group.sample_size(20);
    group.bench_function("train step, batch 16 at 16x16", |bench| {
        bench.iter(|| gan.train_step(&real, GanLoss::Bce, &mut rng).unwrap())
    });
    group.finish();
}

fn auc(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let labels: Vec<u8> = (0..10_000).map(|_| rng.random_range(0..2)).collect();
    let scores: Vec<f64> = (0..10_000).map(|_| (rng.random_range(0..1000) as f64) / 1000.0).collect();
    c.bench_function("roc_auc 10k", |bench| bench.iter(|| roc_auc(&labels, &scores).unwrap()));
}

criterion_group!(benches, classifier_epoch, gan_step, auc);
criterion_main!(benches);
