//! A plain two-view cross-entropy loop with its own optimizer, for checking
//! that the trainer reduces to it with masking and contrast switched off.

use std::collections::HashMap;

use candle_core::{DType, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use smcl::augment::Augmenter;
use smcl::dataset::ImageSet;
use smcl::model::{Model, ModelSpec};
use smcl::trainer::Trainer;
use smcl::views::{fill_values, ViewBuilder};
use smcl_core::rng::{stream, AUGMENT, DATA};
use smcl_core::{effective_numbers, AugmentPolicy, BackboneId, ClassIndex, TrainConfig};

pub const STEPS: usize = 50;

pub fn config() -> TrainConfig {
    TrainConfig {
        epochs: 9,
        batch_size: 8,
        lr_initial: 0.05,
        lr_milestones: vec![4, 7],
        lr_gamma: 0.1,
        momentum: 0.9,
        weight_decay: 5e-4,
        drw_start_epoch: 9,
        mask_start_epoch: 0,
        mask_probability: 0.0,
        mu: 0.0,
        lambda: 1.0,
        backbone: BackboneId::SmallCnn,
        augmentation: AugmentPolicy::CropFlip,
        proj_dim: 8,
        checkpoint_every: 0,
        eval_every: 0,
        seed: 11,
        ..TrainConfig::default()
    }
}

/// Step-decay rate written out directly.
fn reference_lr(cfg: &TrainConfig, epoch: usize) -> f64 {
    let mut lr = cfg.lr_initial;
    for &m in &cfg.lr_milestones {
        if epoch >= m {
            lr *= cfg.lr_gamma;
        }
    }
    lr
}

pub fn reference_losses(cfg: &TrainConfig, data: &ImageSet) -> Vec<f64> {
    let spec = ModelSpec {
        arch: cfg.backbone,
        in_channels: data.channels(),
        num_classes: data.num_classes(),
        proj_dim: cfg.proj_dim,
    };
    let model = Model::new(spec, DType::F64, cfg.seed).unwrap();
    let vars = model.trainable_vars();
    let norm = data.normalization();
    let class_index = ClassIndex::from_labels(data.labels(), data.num_classes()).unwrap();
    let target_dist = effective_numbers(&data.histogram().unwrap()).unwrap();
    let augmenter = Augmenter::new(cfg.augmentation, norm.mean.clone());
    let builder = ViewBuilder {
        data,
        class_index: &class_index,
        target_dist: &target_dist,
        augmenter: &augmenter,
        mask_mode: cfg.mask_mode,
        mask_params: cfg.mask_params(),
        fill: fill_values(cfg.fill_policy, &norm),
    };
    let mut velocity: HashMap<String, Tensor> = HashMap::new();
    let mut losses = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut stream(cfg.seed, DATA, epoch as u64));
        let mut augment_rng = stream(cfg.seed, AUGMENT, epoch as u64);
        let lr = reference_lr(cfg, epoch);
        for chunk in order.chunks(cfg.batch_size) {
            let mut pixels = Vec::new();
            let mut labels = Vec::new();
            for &i in chunk {
                let set = builder.source_views(i, &mut augment_rng);
                for view in &set.views {
                    pixels.extend(norm.apply(view));
                    labels.push(data.label(i));
                }
            }
            let x = model.input(&pixels, labels.len(), data.height(), data.width()).unwrap();
            let logits = model.forward(&x, true).unwrap().logits;
            let targets = Tensor::new(labels.as_slice(), logits.device()).unwrap();
            let loss = candle_nn::loss::cross_entropy(&logits, &targets).unwrap();
            losses.push(loss.to_scalar::<f64>().unwrap());
            let grads = loss.backward().unwrap();
            for (name, var) in &vars {
                let Some(g) = grads.get(var.as_tensor()) else { continue };
                let w = var.as_tensor().detach();
                let g = (g + (&w * cfg.weight_decay).unwrap()).unwrap();
                let v = match velocity.get(name) {
                    Some(prev) => ((prev * cfg.momentum).unwrap() + &g).unwrap(),
                    None => g,
                };
                var.set(&(&w - (&v * lr).unwrap()).unwrap()).unwrap();
                velocity.insert(name.clone(), v);
            }
        }
    }
    losses
}

/// Per-step `(trainer, reference)` losses on a small imbalanced synthetic set.
pub fn reduction_pairs() -> Vec<(f64, f64)> {
    let cfg = config();
    let data = ImageSet::synthetic(3, &[30, 12, 6], 12, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let expected = reference_losses(&cfg, &data);
    let mut trainer = Trainer::new(cfg, data, None, DType::F64, None).unwrap();
    let summary = trainer.run().unwrap();
    assert!(summary.steps.iter().all(|s| !s.masked && s.mean_area == 0.0));
    summary.steps.iter().map(|s| s.total).zip(expected).collect()
}
