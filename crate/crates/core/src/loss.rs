//! Objective bookkeeping and deferred class re-weighting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Error, Result};
use crate::histogram::ClassHistogram;

/// Weights of the combined objective `lambda * mce + mu * msc` and the
/// contrastive temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveWeights {
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            mu: 0.3,
            tau: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mce: f64,
    pub msc: f64,
    pub total: f64,
    pub lambda: f64,
    pub mu: f64,
    pub tau: f64,
}

/// Combines the mixed cross-entropy and mixed contrastive terms.
///
/// A non-finite component is reported as [`Error::NonFinite`], which the
/// trainer treats as an abort signal.
pub fn combined(mce: f64, msc: f64, weights: &ObjectiveWeights) -> Result<LossBreakdown> {
    let ObjectiveWeights { lambda, mu, tau } = *weights;
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(invalid_param("lambda", format!("must be finite and >= 0, got {lambda}")));
    }
    if !mu.is_finite() || mu < 0.0 {
        return Err(invalid_param("mu", format!("must be finite and >= 0, got {mu}")));
    }
    if !mce.is_finite() {
        return Err(Error::NonFinite("mce"));
    }
    if !msc.is_finite() {
        return Err(Error::NonFinite("msc"));
    }
    if mce < 0.0 {
        return Err(invalid_param("mce", format!("cross-entropy must be >= 0, got {mce}")));
    }
    let total = lambda * mce + mu * msc;
    if !total.is_finite() {
        return Err(Error::NonFinite("total"));
    }
    Ok(LossBreakdown {
        mce,
        msc,
        total,
        lambda,
        mu,
        tau,
    })
}

/// Per-class cross-entropy weights for deferred re-weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrwWeights {
    weights: Vec<f64>,
    active: bool,
}

impl DrwWeights {
    /// All-ones weights used before the deferred phase.
    pub fn inactive(num_classes: usize) -> Self {
        Self {
            weights: vec![1.0; num_classes],
            active: false,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, class: usize) -> f64 {
        self.weights[class]
    }

    pub fn is_active(&self) -> bool {
        self.active
    }

    pub fn num_classes(&self) -> usize {
        self.weights.len()
    }
}

/// Class-balanced weights `w_k ∝ (1 - beta_w) / (1 - beta_w^n_k)`, rescaled
/// to mean one.
pub fn drw_weights(hist: &ClassHistogram, beta_w: f64) -> Result<DrwWeights> {
    if !(0.0..1.0).contains(&beta_w) {
        return Err(invalid_param("beta_w", format!("must lie in [0, 1), got {beta_w}")));
    }
    let log_beta = libm::log(beta_w);
    let raw: Vec<f64> = hist
        .counts()
        .iter()
        .map(|&n| libm::expm1(log_beta) / libm::expm1(n as f64 * log_beta))
        .collect();
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    Ok(DrwWeights {
        weights: raw.iter().map(|w| w / mean).collect(),
        active: true,
    })
}
