use std::fs;

use candle_core::DType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smcl::checkpoint::{load, read_meta, save};
use smcl::dataset::ImageSet;
use smcl::eval::evaluate;
use smcl::optim::MomentumSgd;
use smcl::trainer::{RunFiles, Trainer};
use smcl::Error;
use smcl_core::{AugmentPolicy, BackboneId, TrainConfig};
use tempfile::TempDir;

fn values(t: &candle_core::Tensor) -> Vec<u64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn round_trip_is_bit_exact() {
    let tmp = TempDir::new().unwrap();
    let data = ImageSet::synthetic(3, &[12, 6, 3], 12, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 7,
        mask_start_epoch: 0,
        mask_probability: 1.0,
        drw_start_epoch: 0,
        backbone: BackboneId::SmallCnn,
        augmentation: AugmentPolicy::CropFlip,
        proj_dim: 8,
        checkpoint_every: 0,
        eval_every: 0,
        ..TrainConfig::default()
    };
    let files = RunFiles::in_dir(tmp.path());
    let mut trainer = Trainer::new(cfg, data.clone(), None, DType::F32, Some(files.clone())).unwrap();
    trainer.run().unwrap();

    let loaded = load(&files.checkpoint).unwrap();
    assert_eq!(loaded.meta.epoch, 1);
    assert_eq!(read_meta(&files.checkpoint).unwrap(), loaded.meta);
    let live = trainer.model().named_vars();
    let restored = loaded.model.named_vars();
    assert_eq!(live.len(), restored.len());
    for ((a_name, a), (b_name, b)) in live.iter().zip(&restored) {
        assert_eq!(a_name, b_name);
        assert_eq!(values(a.as_tensor()), values(b.as_tensor()), "{a_name}");
    }
    assert!(!loaded.momentum.is_empty());

    // Saving the restored state reproduces the file byte for byte.
    let mut optimizer = MomentumSgd::new(0.9, 2e-4);
    optimizer.set_buffers(loaded.momentum.clone());
    let copy = tmp.path().join("copy.smcl");
    save(&copy, &loaded.model, Some(&optimizer), &loaded.meta).unwrap();
    assert_eq!(fs::read(&copy).unwrap(), fs::read(&files.checkpoint).unwrap());

    // Evaluation of a restored checkpoint is deterministic.
    let hist = data.histogram().unwrap();
    let a = evaluate(&loaded.model, &data, &loaded.meta.normalization, &hist).unwrap();
    let b = evaluate(trainer.model(), &data, trainer.normalization(), &hist).unwrap();
    assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
}

#[test]
fn corrupt_files_are_format_errors() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("bad.smcl");
    fs::write(&path, b"NOTACKPT0000000000000000").unwrap();
    assert!(matches!(load(&path), Err(Error::Format { .. })));
    assert!(matches!(load(&tmp.path().join("missing.smcl")), Err(Error::Io { .. })));
}
