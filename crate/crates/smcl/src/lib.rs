//! Saliency-masked contrastive training for long-tailed image classification.

pub mod augment;
pub mod checkpoint;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod losses;
pub mod model;
pub mod optim;
pub mod record;
pub mod report;
pub mod saliency;
pub mod trainer;
pub mod views;

pub use error::{Error, Result};
