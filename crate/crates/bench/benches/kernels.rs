use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssimadv::attacks::{ssim_lagrangian_step, LagrangianState, MarginLossParams};
use ssimadv::metrics::{constraint_gradients, ssim};
use ssimadv::model::{input_gradient, Architecture};
use ssimadv::{ConstraintThresholds, Image, Network, ScoreModel, Shape, SsimAttackConfig, SsimParams};

fn digit_pair(rng: &mut ChaCha8Rng) -> (Image, Image) {
    let shape = Shape::new(1, 28, 28);
    let mut img = || Image::new(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
    (img(), img())
}

fn metrics(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (x, y) = digit_pair(&mut rng);
    let p = SsimParams::default();
    let t = ConstraintThresholds::default();
    c.bench_function("ssim 28x28", |b| b.iter(|| ssim(black_box(&x), black_box(&y), &p).unwrap()));
    c.bench_function("constraint gradients 28x28", |b| {
        b.iter(|| constraint_gradients(black_box(&y), black_box(&x), &p, &t).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Network::with_architecture(Architecture::Desk, Shape::new(1, 28, 28), 10, &mut rng).unwrap();
    let (x, _) = digit_pair(&mut rng);
    c.bench_function("desk forward", |b| b.iter(|| net.scores(black_box(x.as_slice())).unwrap()));
    c.bench_function("desk input gradient", |b| {
        b.iter(|| input_gradient(&net, black_box(x.as_slice()), &|s: &[f64]| (s[0], vec![1.0; s.len()])).unwrap())
    });

    let label = net.predict(x.as_slice()).unwrap();
    let cfg = SsimAttackConfig::default();
    let loss = MarginLossParams::cw(1.0, 0.0).unwrap();
    c.bench_function("lagrangian step", |b| {
        b.iter_batched(
            || LagrangianState::new(vec![0.0; x.len()]),
            |state| ssim_lagrangian_step(state, &x, &net, label, &loss, &cfg).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, metrics, network);
criterion_main!(benches);
