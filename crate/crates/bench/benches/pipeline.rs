//! Hot-path benchmarks: perceptual hashing, feature extraction, head
//! forward/backward, Grad-CAM and one causal curve.

use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use partscope_core::datakit::phash;
use partscope_core::evalkit::deletion_curve;
use partscope_core::explain::{explain_image, ExplainConfig, MeronymModel};
use partscope_core::netcore::{
    softmax_xent, FeatureExtractor, Head, Mode, PooledProjectionBackend, SplitClassifier,
    Tensor, TrainConfig,
};
use partscope_core::saliency::gradcam;
use partscope_core::synthetic::{self, SyntheticSpec};

fn spec() -> SyntheticSpec {
    SyntheticSpec {
        train_per_class: 8,
        test_per_class: 1,
        ..SyntheticSpec::default()
    }
}

fn trained_models() -> (SplitClassifier, MeronymModel) {
    use partscope_core::datakit::SplitRatios;
    use partscope_core::netcore::train_head;
    let spec = spec();
    let backend = || Box::new(PooledProjectionBackend::new(16, 14, 77));
    let extractor = FeatureExtractor::new(backend());
    let cfg = TrainConfig {
        epochs: 10,
        batch: 8,
        lr: 0.01,
        seed: 3,
        augment: false,
        ..TrainConfig::default()
    };
    let holo_ds = synthetic::holonym_dataset(&spec)
        .unwrap()
        .split(SplitRatios::default(), 1)
        .unwrap();
    let holo_template = Head::compact(
        [16, 14, 14],
        32,
        0.1,
        vec!["ruby".into(), "teal".into(), "background".into()],
    )
    .unwrap();
    let holo = train_head(&extractor, &holo_template, &holo_ds, &cfg).unwrap();
    let holonym = SplitClassifier::new(FeatureExtractor::new(backend()), holo.head);

    let mero_ds = synthetic::meronym_dataset(&spec, "ruby")
        .unwrap()
        .split(SplitRatios::default(), 2)
        .unwrap();
    let mero_template = Head::compact(
        [16, 14, 14],
        32,
        0.1,
        synthetic::part_names().iter().map(|p| p.to_string()).collect(),
    )
    .unwrap();
    let mero = train_head(&extractor, &mero_template, &mero_ds, &cfg).unwrap();
    let part_f1 = mero
        .head
        .classes()
        .iter()
        .map(|p| (p.clone(), 0.95))
        .collect();
    (
        holonym,
        MeronymModel {
            head: mero.head,
            part_f1,
        },
    )
}

fn bench_pipeline(c: &mut Criterion) {
    let spec = spec();
    let scene = synthetic::scene(&spec, "ruby", "bench", 0);
    let extractor = FeatureExtractor::new(Box::new(PooledProjectionBackend::new(16, 14, 77)));

    c.bench_function("phash_224", |b| {
        b.iter(|| phash(black_box(&scene.image)))
    });

    c.bench_function("features_224_pooled_projection", |b| {
        b.iter(|| extractor.features_for_image(black_box(&scene.image)).unwrap())
    });

    let features = extractor.features_for_image(&scene.image).unwrap();
    let mut head = Head::compact([16, 14, 14], 32, 0.1, vec!["a".into(), "b".into()]).unwrap();
    head.init_params(1);
    c.bench_function("head_forward_backward", |b| {
        b.iter(|| {
            let (logits, cache) = head.forward(black_box(&features), Mode::Eval).unwrap();
            let (_, d) = softmax_xent(logits.data(), 0);
            head.backward(&cache, &Tensor::new(vec![logits.len()], d).unwrap())
                .unwrap()
        })
    });

    let (holonym, meronym) = trained_models();
    c.bench_function("gradcam_224", |b| {
        b.iter(|| gradcam(&holonym.extractor, &meronym.head, black_box(&scene.image), 0).unwrap())
    });

    let cfg = ExplainConfig::default();
    c.bench_function("explain_image", |b| {
        b.iter(|| explain_image(black_box(&scene.image), "bench", &holonym, &meronym, &cfg).unwrap())
    });

    let explanation = explain_image(&scene.image, "bench", &holonym, &meronym, &cfg).unwrap();
    let mut group = c.benchmark_group("curves");
    group.sample_size(10);
    group.bench_function("deletion_curve_50_steps", |b| {
        b.iter(|| {
            deletion_curve(
                &holonym,
                black_box(&scene.image),
                &explanation.global,
                explanation.class_index,
                50,
            )
            .unwrap()
        })
    });
    group.finish();
}

criterion_group!(benches, bench_pipeline);
criterion_main!(benches);
