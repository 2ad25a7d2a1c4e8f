//! Minor-weighted target sampling.
//!
//! Classes are weighted by the inverse of their effective number
//! `E_k = (1 - beta^n_k) / (1 - beta)` with `beta = (N - 1) / N`, so tail
//! classes are drawn far more often than their share of the data.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{invalid_param, Error, Result};
use crate::histogram::ClassHistogram;

#[derive(Debug, Clone, PartialEq)]
pub struct MinorWeightedDistribution {
    beta: Option<f64>,
    effective: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

/// Builds the minor-weighted class distribution of a training histogram.
///
/// `beta` is computed once from the histogram total.
pub fn effective_numbers(hist: &ClassHistogram) -> Result<MinorWeightedDistribution> {
    let total = hist.total();
    if total == 0 {
        return Err(Error::DegenerateDataset("histogram has no samples".into()));
    }
    let n_total = total as f64;
    let beta = (n_total - 1.0) / n_total;
    // 1 - beta^n computed as -expm1(n * ln(1 - 1/N)) to keep precision for large N.
    let log_beta = libm::log1p(-1.0 / n_total);
    let effective: Vec<f64> = hist
        .counts()
        .iter()
        .map(|&n| {
            if n == 1 {
                1.0
            } else {
                -libm::expm1(n as f64 * log_beta) * n_total
            }
        })
        .collect();
    let inverse: Vec<f64> = effective.iter().map(|e| 1.0 / e).collect();
    let norm: f64 = inverse.iter().sum();
    let probs: Vec<f64> = inverse.iter().map(|w| w / norm).collect();
    Ok(MinorWeightedDistribution {
        beta: Some(beta),
        cumulative: cumulative(&probs),
        effective,
        probs,
    })
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

impl MinorWeightedDistribution {
    /// A class distribution given directly by (unnormalized) probabilities.
    ///
    /// Zero entries are allowed; such classes are never drawn.
    pub fn from_probabilities(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(invalid_param("probs", "entries must be finite and non-negative"));
        }
        let norm: f64 = weights.iter().sum();
        if norm <= 0.0 {
            return Err(invalid_param("probs", "at least one entry must be positive"));
        }
        let probs: Vec<f64> = weights.iter().map(|w| w / norm).collect();
        Ok(Self {
            beta: None,
            effective: Vec::new(),
            cumulative: cumulative(&probs),
            probs,
        })
    }

    /// `(N - 1) / N`, absent for distributions built from raw probabilities.
    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    /// Effective number per class; empty for raw-probability distributions.
    pub fn effective(&self) -> &[f64] {
        &self.effective
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Draws a class index with probability `p_k`.
    pub fn sample_class<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
        let k = self.cumulative.partition_point(|&c| c <= u);
        if k < self.probs.len() {
            return k;
        }
        // Rounding pushed `u` past the end: fall back to the last class that can be drawn.
        self.probs
            .iter()
            .rposition(|&p| p > 0.0)
            .expect("at least one positive probability")
    }
}

/// Sample indices grouped by class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassIndex {
    per_class: Vec<Vec<usize>>,
}

impl ClassIndex {
    pub fn from_labels(labels: &[u32], num_classes: usize) -> Result<Self> {
        let mut per_class: Vec<Vec<usize>> = (0..num_classes).map(|_| Vec::new()).collect();
        for (i, &label) in labels.iter().enumerate() {
            per_class
                .get_mut(label as usize)
                .ok_or_else(|| {
                    Error::InvalidHistogram(format!("label {label} outside 0..{num_classes}"))
                })?
                .push(i);
        }
        Ok(Self { per_class })
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.per_class[class]
    }

    pub fn num_classes(&self) -> usize {
        self.per_class.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetDraw {
    /// Index into the dataset the class index was built from.
    pub index: usize,
    pub class: usize,
}

/// Draws a target sample: class from `dist`, instance uniformly within the class.
pub fn sample_target<R: Rng + ?Sized>(
    dist: &MinorWeightedDistribution,
    index: &ClassIndex,
    rng: &mut R,
) -> Result<TargetDraw> {
    if dist.num_classes() != index.num_classes() {
        return Err(invalid_param(
            "dist",
            format!(
                "distribution covers {} classes, index covers {}",
                dist.num_classes(),
                index.num_classes()
            ),
        ));
    }
    let class = dist.sample_class(rng);
    let members = index.members(class);
    if members.is_empty() {
        return Err(Error::EmptyClass { class });
    }
    let index = members[rng.random_range(0..members.len())];
    Ok(TargetDraw { index, class })
}
