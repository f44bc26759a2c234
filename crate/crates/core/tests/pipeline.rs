//! End-to-end training behavior on the synthetic blob task.

use sdkd_core::data::{gen_blobs, BlobsConfig};
use sdkd_core::soft_labels::{relabel_dataset, RankMaps};
use sdkd_core::train::{
    evaluate_top1, train_student, train_teacher, ModelSpec, TrainConfig, TrainMethod,
};

#[test]
fn full_scale_blobs_teacher_clears_the_bar() {
    // 100 classes, 100 samples per class, dim 32: the reference task is
    // learnable by a linear teacher.
    let cfg = BlobsConfig {
        n_classes: 100,
        samples_per_class: 100,
        dim: 32,
        center_scale: 3.0,
        noise_sigma: 1.0,
        seed: 7,
    };
    let (train, test) = gen_blobs(&cfg).unwrap();
    let tcfg = TrainConfig {
        temperature: 1.0,
        epochs: 30,
        seed: 0,
        ..TrainConfig::default()
    };
    let teacher = train_teacher(&train, &ModelSpec::linear(), &tcfg).unwrap();
    let top1 = evaluate_top1(&teacher, &test).unwrap();
    assert!(top1 >= 0.7, "teacher test top-1 {top1}");
}

#[test]
fn distillation_loss_drops_over_training_for_every_seed() {
    let blobs = BlobsConfig {
        n_classes: 10,
        samples_per_class: 30,
        dim: 6,
        center_scale: 2.0,
        noise_sigma: 0.8,
        seed: 11,
    };
    let (train, test) = gen_blobs(&blobs).unwrap();
    let tcfg = TrainConfig {
        temperature: 1.0,
        epochs: 15,
        seed: 1,
        ..TrainConfig::default()
    };
    let teacher = train_teacher(&train, &ModelSpec::linear(), &tcfg).unwrap();
    let store = relabel_dataset(&teacher, &train, 4.0).unwrap();
    let maps = RankMaps::from_store(&store);
    for seed in 0..5u64 {
        let cfg = TrainConfig {
            method: TrainMethod::Distillation,
            epochs: 30,
            seed,
            ..TrainConfig::default()
        };
        let out = train_student(
            &train,
            &store,
            &maps,
            &teacher,
            &ModelSpec::mlp(8),
            &cfg,
            Some(&test),
        )
        .unwrap();
        let first = out.history.first().unwrap().train_loss;
        let last = out.history.last().unwrap().train_loss;
        assert!(
            last < first,
            "seed {seed}: loss went {first} -> {last} over 30 epochs"
        );
    }
}
