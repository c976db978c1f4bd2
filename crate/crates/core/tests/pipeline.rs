use opvib::dataio::{
    generate_synthetic, generate_synthetic_in_memory, load_dataset, load_manifest, segment_dataset, SyntheticSpec,
};
use opvib::models::save_checkpoint;
use opvib::models::{load_classifier, load_transformer, CheckpointMetadata, Model};
use opvib::signal::Label;
use opvib::training::{
    prepare_segments, split_dataset, train_fault_detector, train_transformer, SplitConfig, TrainConfig,
};

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_healthy: 6,
        num_faulty: 6,
        segment_samples: 512,
        seed: 9,
        ..SyntheticSpec::default()
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        segment_length: 512,
        classifier_epochs: 2,
        max_iterations: 4,
        validation_interval: 2,
        batch_size: 4,
        reproducible: true,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn files_on_disk_match_in_memory_generation() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let (manifest, path) = generate_synthetic(&spec, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 12);
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded.entries.len(), 12);
    let pairs = load_dataset::<f32>(&loaded).unwrap();
    let (segments, rate) = segment_dataset(&pairs, spec.segment_seconds()).unwrap();
    assert_eq!(rate, 4096.0);
    let memory = generate_synthetic_in_memory::<f32>(&spec).unwrap();
    assert_eq!(segments, memory);
    let faulty = segments.iter().filter(|s| s.label == Label::Faulty).count();
    assert_eq!(faulty, 6);
}

#[test]
fn trained_models_survive_a_checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec();
    let records = prepare_segments(&generate_synthetic_in_memory::<f32>(&spec).unwrap()).unwrap();
    let split = split_dataset(
        &records,
        "1010",
        &SplitConfig {
            train_seconds: 6.0 * spec.segment_seconds(),
            val_seconds: 2.0 * spec.segment_seconds(),
            segment_seconds: spec.segment_seconds(),
        },
    )
    .unwrap();
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().join("ckpt")),
        ..small_config()
    };
    let det = train_fault_detector(&split.train, &split.val, &cfg).unwrap();
    let tr = train_transformer(&split.train, &split.val, &cfg, &det.model).unwrap();
    assert!(tr.best_validation.total <= tr.validations[0].1.total);
    assert_eq!(tr.history.len(), 4);
    assert!(dir.path().join("ckpt/detector_best.opvb").is_file());
    assert!(dir.path().join("ckpt/transformer_best.opvb").is_file());

    let path = dir.path().join("t.opvb");
    let meta = CheckpointMetadata {
        seed: 3,
        iteration: tr.best_iteration as u64,
        validation_loss: Some(tr.best_validation.total),
    };
    save_checkpoint(&tr.model, &path, 4096.0, meta).unwrap();
    let (back, desc) = load_transformer::<f32>(&path).unwrap();
    assert_eq!(desc.parameter_count, tr.model.parameter_count());
    let x = &split.test[0].sound;
    assert_eq!(back.synthesize(x).unwrap(), tr.model.synthesize(x).unwrap());

    let (det_back, _) = load_classifier::<f32>(dir.path().join("ckpt/detector_best.opvb")).unwrap();
    assert_eq!(det_back.parameters(), det.model.parameters());
}

#[test]
fn reproducible_training_is_bit_identical() {
    let spec = small_spec();
    let records = prepare_segments(&generate_synthetic_in_memory::<f32>(&spec).unwrap()).unwrap();
    let cfg = small_config();
    let run = || {
        let det = train_fault_detector(&records, &[], &cfg).unwrap();
        let tr = train_transformer(&records, &[], &cfg, &det.model).unwrap();
        (det.model, tr.model, tr.history)
    };
    assert_eq!(run(), run());
}
