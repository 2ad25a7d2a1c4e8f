//! Long-tailed subsets of balanced labeled datasets.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::histogram::ClassHistogram;

/// Shape of the class-size profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// `n_k = n_max * rho^(-k / (K - 1))`.
    #[default]
    Exponential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongTailSpec {
    pub num_classes: usize,
    /// Target ratio between the largest and the smallest class.
    pub rho: f64,
    /// Size of class 0, the largest class.
    pub n_max: usize,
    #[serde(default)]
    pub profile: Profile,
}

impl LongTailSpec {
    pub fn new(num_classes: usize, rho: f64, n_max: usize) -> Result<Self> {
        let spec = Self {
            num_classes,
            rho,
            n_max,
            profile: Profile::Exponential,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidSpec("at least one class is required".into()));
        }
        if !self.rho.is_finite() || self.rho < 1.0 {
            return Err(Error::InvalidSpec(format!(
                "imbalance ratio must be finite and >= 1, got {}",
                self.rho
            )));
        }
        if (self.n_max as f64) < self.rho {
            return Err(Error::InvalidSpec(format!(
                "n_max = {} is smaller than rho = {}; the tail class would be empty",
                self.n_max, self.rho
            )));
        }
        Ok(())
    }

    /// Requested count per class, rounded half-up and floored at one.
    pub fn class_counts(&self) -> Vec<usize> {
        let k_total = self.num_classes;
        (0..k_total)
            .map(|k| {
                let exponent = if k_total > 1 {
                    -(k as f64) / ((k_total - 1) as f64)
                } else {
                    0.0
                };
                let nominal = match self.profile {
                    Profile::Exponential => self.n_max as f64 * libm::pow(self.rho, exponent),
                };
                (libm::floor(nominal + 0.5) as usize).max(1)
            })
            .collect()
    }
}

/// Indices (ascending) into the base dataset plus the realized histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct LongTailSubset {
    pub indices: Vec<usize>,
    pub histogram: ClassHistogram,
}

/// Selects a long-tailed subset of a labeled dataset.
///
/// Class `k` keeps `spec.class_counts()[k]` of its samples, drawn uniformly
/// without replacement.
pub fn build_longtail<R: Rng + ?Sized>(
    labels: &[u32],
    spec: &LongTailSpec,
    rng: &mut R,
) -> Result<LongTailSubset> {
    spec.validate()?;
    let mut per_class: Vec<Vec<usize>> = (0..spec.num_classes).map(|_| Vec::new()).collect();
    for (i, &label) in labels.iter().enumerate() {
        let bucket = per_class.get_mut(label as usize).ok_or_else(|| {
            Error::InvalidSpec(format!(
                "label {label} at index {i} outside 0..{}",
                spec.num_classes
            ))
        })?;
        bucket.push(i);
    }

    let counts = spec.class_counts();
    let mut indices = Vec::with_capacity(counts.iter().sum());
    for (class, (members, &want)) in per_class.iter().zip(&counts).enumerate() {
        if members.len() < want {
            return Err(Error::ClassTooSmall {
                class,
                available: members.len(),
                requested: want,
            });
        }
        let chosen = rand::seq::index::sample(rng, members.len(), want);
        indices.extend(chosen.iter().map(|j| members[j]));
    }
    indices.sort_unstable();
    let histogram = ClassHistogram::new(counts)?;
    Ok(LongTailSubset { indices, histogram })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn balanced_labels(k: usize, per_class: usize) -> Vec<u32> {
        (0..k * per_class).map(|i| (i % k) as u32).collect()
    }

    #[test]
    fn two_class_profile() {
        let spec = LongTailSpec::new(2, 10.0, 100).unwrap();
        assert_eq!(spec.class_counts(), vec![100, 10]);
    }

    #[test]
    fn cifar100_profile() {
        let spec = LongTailSpec::new(100, 100.0, 500).unwrap();
        let counts = spec.class_counts();
        assert_eq!(counts[0], 500);
        assert_eq!(counts[99], 5);
        assert_eq!(counts[0] / counts[99], 100);
        // Independently evaluated with 50-digit arithmetic.
        assert_eq!(counts.iter().sum::<usize>(), 10899);
        assert_eq!(&counts[..6], &[500, 477, 456, 435, 415, 396]);
        assert!(counts.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn balanced_identity() {
        let spec = LongTailSpec::new(7, 1.0, 40).unwrap();
        assert!(spec.class_counts().iter().all(|&n| n == 40));
    }

    #[test]
    fn invalid_specs() {
        assert!(matches!(LongTailSpec::new(10, 0.5, 100), Err(Error::InvalidSpec(_))));
        assert!(matches!(LongTailSpec::new(10, 200.0, 100), Err(Error::InvalidSpec(_))));
        assert!(matches!(LongTailSpec::new(0, 2.0, 100), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn small_class_is_named() {
        let labels: Vec<u32> = balanced_labels(3, 10)
            .into_iter()
            .enumerate()
            .filter(|(i, l)| *l != 1 || *i < 12)
            .map(|(_, l)| l)
            .collect();
        let spec = LongTailSpec::new(3, 1.0, 10).unwrap();
        let err = build_longtail(&labels, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert_eq!(
            err,
            Error::ClassTooSmall {
                class: 1,
                available: 4,
                requested: 10
            }
        );
    }

    #[test]
    fn subset_matches_histogram_and_is_deterministic() {
        let labels = balanced_labels(10, 50);
        let spec = LongTailSpec::new(10, 10.0, 50).unwrap();
        let a = build_longtail(&labels, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = build_longtail(&labels, &spec, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let c = build_longtail(&labels, &spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.indices, c.indices);
        let realized =
            ClassHistogram::from_labels(a.indices.iter().map(|&i| labels[i] as usize), 10).unwrap();
        assert_eq!(realized, a.histogram);
        assert!(a.indices.windows(2).all(|w| w[0] < w[1]));
    }
}
