//! Allocation-only building blocks for saliency masked contrastive learning
//! on long-tailed image data.
//!
//! Everything here is pure: given its inputs (and an rng where noted) each
//! function is deterministic. Image IO, the network, and the training loop
//! live in the `smcl` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod error;
pub mod eval;
pub mod histogram;
pub mod longtail;
pub mod loss;
pub mod mask;
pub mod rng;
pub mod sampling;
pub mod schedule;

pub use config::{AugmentPolicy, BackboneId, FillPolicy, LrScheduleKind, TrainConfig};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport, GroupAccuracy, ShotGroup, ShotThresholds};
pub use histogram::ClassHistogram;
pub use longtail::{build_longtail, LongTailSpec, LongTailSubset, Profile};
pub use loss::{combined, drw_weights, DrwWeights, LossBreakdown, ObjectiveWeights};
pub use mask::{apply_mask, make_mask, MaskBox, MaskMode, MaskParams, MaskSpec};
pub use sampling::{effective_numbers, sample_target, ClassIndex, MinorWeightedDistribution, TargetDraw};
