use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pdzseg_core::synthetic::{generate_scenes, SceneKind};
use pdzseg_core::train::Trainer;
use pdzseg_core::pipeline::prepare_pair;
use pdzseg_core::{ExperimentConfig, PromptKind, Segmenter};
use std::hint::black_box;

fn desk_model(c: &mut Criterion) {
    let cfg = ExperimentConfig::desk();
    let size = cfg.encoder.image_size;
    let model = Segmenter::new(cfg.model_config(), 0).unwrap();
    let scenes = generate_scenes(SceneKind::TwoBlob, 8, size, size, 1);
    let images: Vec<_> = scenes.iter().map(|(i, _)| i.clone()).collect();
    let batch = model.images_to_tensor(&images).unwrap();

    let mut group = c.benchmark_group("desk");
    group.sample_size(10);
    group.bench_function("forward_b8", |b| b.iter(|| model.forward(black_box(&batch)).unwrap()));

    let prepared: Vec<_> = scenes
        .iter()
        .map(|(img, mask)| prepare_pair(img, mask, PromptKind::LongScribble, size, None).unwrap())
        .collect();
    let refs: Vec<_> = prepared.iter().collect();
    group.bench_function("train_step_b8", |b| {
        b.iter_batched(
            || Trainer::new(Segmenter::new(cfg.model_config(), 0).unwrap(), cfg.train.clone(), 10).unwrap(),
            |mut trainer| trainer.train_step(&refs).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, desk_model);
criterion_main!(benches);
