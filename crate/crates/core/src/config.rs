//! Training configuration and named presets.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::ObjectiveWeights;
use crate::mask::{MaskMode, MaskParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrScheduleKind {
    #[default]
    Step,
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneId {
    /// CIFAR ResNet-32: three stages of five basic blocks, 16/32/64 channels.
    #[default]
    Resnet32,
    /// Four conv-bn-relu blocks, 16/32/64/128 channels. For fast runs.
    SmallCnn,
}

impl BackboneId {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Resnet32 => "resnet32",
            Self::SmallCnn => "small-cnn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentPolicy {
    /// Identity; every view equals the source image.
    None,
    /// Padded random crop and horizontal flip.
    CropFlip,
    /// Crop and flip, color jitter and random grayscale, then CutOut.
    #[default]
    Cifar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FillPolicy {
    /// Per-channel dataset mean (zero after normalization).
    #[default]
    Mean,
    /// Raw zero, i.e. black.
    Zero,
}

/// Flat training configuration. Field names double as config-file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Source samples per step.
    pub batch_size: usize,
    pub lr_initial: f64,
    pub lr_schedule: LrScheduleKind,
    pub lr_milestones: Vec<usize>,
    pub lr_gamma: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub drw_start_epoch: usize,
    pub drw_beta: f64,
    pub mask_start_epoch: usize,
    pub mask_probability: f64,
    pub alpha: f64,
    pub mask_area_cap: f64,
    pub mask_mode: MaskMode,
    pub fill_policy: FillPolicy,
    pub tau: f64,
    pub lambda: f64,
    pub mu: f64,
    /// Weight whole view groups by `(1 - A)` / `A`; when false only the masked
    /// view is mixed and clean views train at full weight toward their own label.
    pub strict_mixing: bool,
    pub seed: u64,
    pub backbone: BackboneId,
    pub augmentation: AugmentPolicy,
    pub proj_dim: usize,
    /// Save a checkpoint every this many epochs; 0 saves only at the end.
    pub checkpoint_every: usize,
    /// Evaluate every this many epochs when an eval set is given; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::cifar_smcl_drw()
    }
}

pub const PRESETS: &[&str] = &[
    "cifar100lt-smcl-drw",
    "cifar100lt-smcl",
    "cifar100lt-drw",
    "cifar100lt-erm",
    "cifar100lt-scl",
    "cifar100lt-scl-drw",
    "cifar10lt-smcl-drw",
    "cifar10lt-smcl",
    "cifar10lt-drw",
    "cifar10lt-erm",
    "desk-cifar10lt-erm",
    "desk-cifar10lt-drw-ce",
    "desk-cifar10lt-drw-smcl",
];

impl TrainConfig {
    /// The CIFAR-LT recipe with deferred re-weighting.
    fn cifar_smcl_drw() -> Self {
        Self {
            epochs: 200,
            batch_size: 256,
            lr_initial: 0.1,
            lr_schedule: LrScheduleKind::Step,
            lr_milestones: vec![160, 180],
            lr_gamma: 0.1,
            momentum: 0.9,
            weight_decay: 2e-4,
            drw_start_epoch: 160,
            drw_beta: 0.9999,
            mask_start_epoch: 160,
            mask_probability: 0.2,
            alpha: 1.0,
            mask_area_cap: 0.9,
            mask_mode: MaskMode::Saliency,
            fill_policy: FillPolicy::Mean,
            tau: 0.1,
            lambda: 1.0,
            mu: 0.3,
            strict_mixing: true,
            seed: 0,
            backbone: BackboneId::Resnet32,
            augmentation: AugmentPolicy::Cifar,
            proj_dim: 128,
            checkpoint_every: 10,
            eval_every: 10,
        }
    }

    fn without_drw(mut self) -> Self {
        self.drw_start_epoch = self.epochs;
        self
    }

    fn without_masking(mut self) -> Self {
        self.mask_probability = 0.0;
        self.mask_start_epoch = self.epochs;
        self
    }

    fn without_contrast(mut self) -> Self {
        self.mu = 0.0;
        self
    }

    /// Resolves a named preset; see [`PRESETS`].
    pub fn preset(name: &str) -> Option<Self> {
        let base = Self::cifar_smcl_drw();
        let cfg = match name {
            "cifar100lt-smcl-drw" | "cifar10lt-smcl-drw" => base,
            "cifar100lt-smcl" | "cifar10lt-smcl" => base.without_drw(),
            "cifar100lt-drw" | "cifar10lt-drw" => base.without_masking().without_contrast(),
            "cifar100lt-erm" | "cifar10lt-erm" => {
                base.without_masking().without_contrast().without_drw()
            }
            "cifar100lt-scl" => base.without_masking().without_drw(),
            "cifar100lt-scl-drw" => base.without_masking(),
            desk if desk.starts_with("desk-cifar10lt-") => {
                let desk_base = Self {
                    epochs: 60,
                    lr_milestones: vec![48, 54],
                    drw_start_epoch: 48,
                    mask_start_epoch: 48,
                    backbone: BackboneId::SmallCnn,
                    checkpoint_every: 0,
                    eval_every: 0,
                    ..base
                };
                match desk {
                    "desk-cifar10lt-erm" => {
                        desk_base.without_masking().without_contrast().without_drw()
                    }
                    "desk-cifar10lt-drw-ce" => desk_base.without_contrast(),
                    "desk-cifar10lt-drw-smcl" => desk_base,
                    _ => return None,
                }
            }
            _ => return None,
        };
        Some(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.lr_initial.is_finite() && self.lr_initial > 0.0) {
            return fail(format!("lr_initial must be positive, got {}", self.lr_initial));
        }
        if !(self.lr_gamma > 0.0 && self.lr_gamma <= 1.0) {
            return fail(format!("lr_gamma must lie in (0, 1], got {}", self.lr_gamma));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0) {
            return fail(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.mask_start_epoch > self.epochs {
            return fail(format!(
                "mask_start_epoch {} exceeds epochs {}",
                self.mask_start_epoch, self.epochs
            ));
        }
        if self.drw_start_epoch > self.epochs {
            return fail(format!(
                "drw_start_epoch {} exceeds epochs {}",
                self.drw_start_epoch, self.epochs
            ));
        }
        if !(0.0..=1.0).contains(&self.mask_probability) {
            return fail(format!(
                "mask_probability must lie in [0, 1], got {}",
                self.mask_probability
            ));
        }
        if !(0.0..1.0).contains(&self.drw_beta) {
            return fail(format!("drw_beta must lie in [0, 1), got {}", self.drw_beta));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        for (name, v) in [("lambda", self.lambda), ("mu", self.mu)] {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.proj_dim == 0 {
            return fail("proj_dim must be >= 1".into());
        }
        self.mask_params()
            .validate()
            .map_err(|e| Error::InvalidConfig(format!("{e}")))?;
        Ok(())
    }

    pub fn mask_params(&self) -> MaskParams {
        MaskParams {
            alpha: self.alpha,
            area_cap: self.mask_area_cap,
        }
    }

    pub fn objective(&self) -> ObjectiveWeights {
        ObjectiveWeights {
            lambda: self.lambda,
            mu: self.mu,
            tau: self.tau,
        }
    }

    /// True when the five-view masked objective is used during `epoch`.
    ///
    /// With `mask_probability == 0` masking can never happen, so training stays
    /// on the two-view source-only objective for the whole run.
    pub fn five_view_epoch(&self, epoch: usize) -> bool {
        self.mask_probability > 0.0 && epoch >= self.mask_start_epoch
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cifar_recipe_constants() {
        let cfg = TrainConfig::preset("cifar100lt-smcl-drw").unwrap();
        assert_eq!(cfg.epochs, 200);
        assert_eq!(cfg.batch_size, 256);
        assert_eq!(cfg.lr_initial, 0.1);
        assert_eq!(cfg.lr_milestones, vec![160, 180]);
        assert_eq!(cfg.lr_gamma, 0.1);
        assert_eq!(cfg.momentum, 0.9);
        assert_eq!(cfg.weight_decay, 2e-4);
        assert_eq!(cfg.mask_probability, 0.2);
        assert_eq!(cfg.mask_start_epoch, 160);
        assert_eq!(cfg.drw_start_epoch, 160);
        assert_eq!((cfg.lambda, cfg.mu), (1.0, 0.3));
        assert_eq!(cfg.backbone, BackboneId::Resnet32);
        cfg.validate().unwrap();
    }

    #[test]
    fn erm_preset_is_a_reduction() {
        let cfg = TrainConfig::preset("cifar100lt-erm").unwrap();
        assert_eq!(cfg.mask_probability, 0.0);
        assert_eq!(cfg.mu, 0.0);
        assert_eq!(cfg.drw_start_epoch, cfg.epochs);
        assert!(!(0..cfg.epochs).any(|e| cfg.five_view_epoch(e)));
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            TrainConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(TrainConfig::preset("nope").is_none());
    }

    #[test]
    fn desk_schedule_is_scaled() {
        let cfg = TrainConfig::preset("desk-cifar10lt-drw-smcl").unwrap();
        assert_eq!(cfg.epochs, 60);
        assert_eq!(cfg.lr_milestones, vec![48, 54]);
        assert_eq!((cfg.drw_start_epoch, cfg.mask_start_epoch), (48, 48));
        let ce = TrainConfig::preset("desk-cifar10lt-drw-ce").unwrap();
        assert_eq!(ce.mu, 0.0);
        assert_eq!(ce.mask_probability, 0.2);
    }

    #[test]
    fn invariants_are_checked() {
        let mut cfg = TrainConfig::default();
        cfg.mask_start_epoch = 500;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.mask_probability = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.mu = -0.1;
        assert!(cfg.validate().is_err());
    }
}
