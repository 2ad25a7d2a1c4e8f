use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class sample counts of a labeled dataset.
///
/// Every class holds at least one sample, so the imbalance ratio is always
/// finite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct ClassHistogram {
    counts: Vec<usize>,
}

impl ClassHistogram {
    pub fn new(counts: Vec<usize>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidHistogram("no classes".into()));
        }
        if let Some(k) = counts.iter().position(|&n| n == 0) {
            return Err(Error::InvalidHistogram(format!("class {k} has no samples")));
        }
        Ok(Self { counts })
    }

    /// Counts labels in `0..num_classes`.
    pub fn from_labels<I>(labels: I, num_classes: usize) -> Result<Self>
    where
        I: IntoIterator<Item = usize>,
    {
        let mut counts = vec![0usize; num_classes];
        for label in labels {
            let slot = counts.get_mut(label).ok_or_else(|| {
                Error::InvalidHistogram(format!("label {label} outside 0..{num_classes}"))
            })?;
            *slot += 1;
        }
        Self::new(counts)
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn count(&self, class: usize) -> usize {
        self.counts[class]
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Largest over smallest class count.
    pub fn imbalance_ratio(&self) -> f64 {
        let max = self.counts.iter().copied().max().unwrap_or(1);
        let min = self.counts.iter().copied().min().unwrap_or(1);
        max as f64 / min as f64
    }
}

impl TryFrom<Vec<usize>> for ClassHistogram {
    type Error = Error;

    fn try_from(counts: Vec<usize>) -> Result<Self> {
        Self::new(counts)
    }
}

impl From<ClassHistogram> for Vec<usize> {
    fn from(hist: ClassHistogram) -> Self {
        hist.counts
    }
}
