//! Epoch-indexed schedules. Epochs are zero-based throughout.

use rand::Rng;

use crate::config::{LrScheduleKind, TrainConfig};

/// Learning rate in effect during `epoch`.
///
/// Step decay multiplies by `lr_gamma` once for every milestone `<= epoch`;
/// cosine anneals from `lr_initial` towards zero over `epochs`.
pub fn learning_rate(cfg: &TrainConfig, epoch: usize) -> f64 {
    match cfg.lr_schedule {
        LrScheduleKind::Step => {
            let passed = cfg.lr_milestones.iter().filter(|&&m| m <= epoch).count();
            cfg.lr_initial * libm::pow(cfg.lr_gamma, passed as f64)
        }
        LrScheduleKind::Cosine => {
            let progress = epoch as f64 / cfg.epochs.max(1) as f64;
            cfg.lr_initial * 0.5 * (1.0 + libm::cos(core::f64::consts::PI * progress))
        }
    }
}

/// Whether masking is applied for one training step.
///
/// Always false before `mask_start_epoch`; afterwards one Bernoulli draw with
/// probability `mask_probability` per step.
pub fn masking_gate<R: Rng + ?Sized>(epoch: usize, cfg: &TrainConfig, rng: &mut R) -> bool {
    if epoch < cfg.mask_start_epoch {
        return false;
    }
    let p = cfg.mask_probability;
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        rng.random::<f64>() < p
    }
}

pub fn drw_active(epoch: usize, cfg: &TrainConfig) -> bool {
    epoch >= cfg.drw_start_epoch
}
