use criterion::{criterion_group, criterion_main, Criterion};
use dppass::losses::{prediction_consistency_loss, tfct_loss};
use dppass::model::{Architecture, ModelParams, Padding};
use dppass::resample::{assemble_t2e, sample_erp};
use dppass::synthdata::DatasetSpec;
use dppass::trainer::{train_step, LayoutConfig, LossMask, TrainConfig, TrainState};
use dppass::Tensor;
use std::hint::black_box;

fn image(shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |i| ((i * 7919) % 1000) as f64 / 1000.0)
}

fn projection(c: &mut Criterion) {
    let layout = LayoutConfig::default();
    c.bench_function("build_grid 128x256", |b| b.iter(|| layout.grid(128, 256).unwrap()));
    let grid = layout.grid(128, 256).unwrap();
    let erp = image(&[128, 256, 3]);
    c.bench_function("sample_erp 18x64x64", |b| b.iter(|| sample_erp(black_box(&erp), &grid).unwrap()));
    let patches = sample_erp(&erp, &grid).unwrap();
    c.bench_function("assemble_t2e 18x64x64", |b| b.iter(|| assemble_t2e(black_box(&patches), &grid).unwrap()));
}

fn model(c: &mut Criterion) {
    let params = ModelParams::init(&Architecture::default(), 0).unwrap();
    let erp = image(&[128, 256, 3]);
    c.bench_function("forward erp 128x256", |b| b.iter(|| params.forward(black_box(&erp), Padding::WrapWidth).unwrap()));
    let (out, cache) = params.forward(&erp, Padding::WrapWidth).unwrap();
    let g = Tensor::full(out.logits.shape(), 1e-3);
    c.bench_function("backward erp 128x256", |b| b.iter(|| params.backward(&cache, Some(&g), None, false).unwrap()));
    let crops = image(&[18, 64, 64, 3]);
    c.bench_function("forward tangent 18x64x64", |b| b.iter(|| params.forward(black_box(&crops), Padding::Zero).unwrap()));
}

fn losses(c: &mut Criterion) {
    let p = image(&[18, 64, 64, 5]);
    let q = Tensor::from_fn(&[18, 64, 64, 5], |i| ((i * 31) % 17) as f64 / 17.0);
    c.bench_function("prediction_consistency 18x64x64x5", |b| {
        b.iter(|| prediction_consistency_loss(black_box(&p), &q, 1e-8).unwrap())
    });
    let a = Tensor::from_fn(&[18, 32], |i| (i as f64).sin());
    let z = Tensor::from_fn(&[18, 32], |i| (i as f64).cos());
    c.bench_function("tfct 18x32", |b| b.iter(|| tfct_loss(black_box(&a), &z, 0.07).unwrap()));
}

fn step(c: &mut Criterion) {
    let data = DatasetSpec { source_count: 2, target_count: 2, eval_count: 1, ..Default::default() }.generate().unwrap();
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    for mask in [LossMask::NONE, LossMask::ALL] {
        let cfg = TrainConfig { mask, ..Default::default() };
        let mut state = TrainState::new(&cfg).unwrap();
        group.bench_function(mask.to_string(), |b| {
            b.iter(|| train_step(&mut state, &[&data.source[0]], &[&data.target[0].image], &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, projection, model, losses, step);
criterion_main!(benches);
