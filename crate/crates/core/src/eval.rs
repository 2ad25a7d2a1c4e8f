//! Overall and shot-grouped accuracy.
//!
//! Classes are grouped by their TRAINING count: many (`n > 100`), medium
//! (`20 <= n <= 100`) and few (`n < 20`). A group's accuracy is the unweighted
//! mean of its members' per-class accuracies.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};
use crate::histogram::ClassHistogram;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    num_classes: usize,
    /// Row-major, rows are true classes.
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            num_classes,
            counts: vec![0; num_classes * num_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self> {
        let k = rows.len();
        if rows.iter().any(|r| r.len() != k) {
            return Err(invalid_param("confusion", "matrix must be square"));
        }
        Ok(Self {
            num_classes: k,
            counts: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.num_classes + predicted] += 1;
    }

    /// Adds another shard's counts.
    pub fn merge(&mut self, other: &Self) {
        assert_eq!(self.num_classes, other.num_classes);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.num_classes + predicted]
    }

    pub fn row(&self, truth: usize) -> &[u64] {
        &self.counts[truth * self.num_classes..(truth + 1) * self.num_classes]
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        (0..self.num_classes).map(|k| self.row(k).to_vec()).collect()
    }

    pub fn trace(&self) -> u64 {
        (0..self.num_classes).map(|k| self.get(k, k)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotThresholds {
    /// Classes with strictly more training samples are "many".
    pub many_above: usize,
    /// Classes with strictly fewer training samples are "few".
    pub few_below: usize,
}

impl Default for ShotThresholds {
    fn default() -> Self {
        Self {
            many_above: 100,
            few_below: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShotGroup {
    Many,
    Medium,
    Few,
}

impl ShotThresholds {
    pub fn group(&self, train_count: usize) -> ShotGroup {
        if train_count > self.many_above {
            ShotGroup::Many
        } else if train_count < self.few_below {
            ShotGroup::Few
        } else {
            ShotGroup::Medium
        }
    }
}

/// Group accuracies in percent; `None` marks a group with no member classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupAccuracy {
    pub many: Option<f64>,
    pub med: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub overall_acc: f64,
    pub group_acc: GroupAccuracy,
    pub per_class_acc: Vec<f64>,
    pub group_of_class: Vec<ShotGroup>,
    pub confusion: Vec<Vec<u64>>,
    pub group_def: ShotThresholds,
}

impl EvalReport {
    /// Builds the report from a confusion matrix and the training histogram.
    ///
    /// Every class must have at least one test sample.
    pub fn from_confusion(
        confusion: &ConfusionMatrix,
        train_hist: &ClassHistogram,
        thresholds: ShotThresholds,
    ) -> Result<Self> {
        let k = confusion.num_classes();
        if train_hist.num_classes() != k {
            return Err(invalid_param(
                "train_hist",
                format!("{} classes, confusion has {k}", train_hist.num_classes()),
            ));
        }
        let mut per_class_acc = Vec::with_capacity(k);
        for class in 0..k {
            let support: u64 = confusion.row(class).iter().sum();
            if support == 0 {
                return Err(invalid_param(
                    "test_set",
                    format!("class {class} has no test samples"),
                ));
            }
            per_class_acc.push(100.0 * confusion.get(class, class) as f64 / support as f64);
        }
        let group_of_class: Vec<ShotGroup> =
            train_hist.counts().iter().map(|&n| thresholds.group(n)).collect();
        let mean_of = |g: ShotGroup| {
            let members: Vec<f64> = per_class_acc
                .iter()
                .zip(&group_of_class)
                .filter(|(_, &m)| m == g)
                .map(|(&a, _)| a)
                .collect();
            (!members.is_empty()).then(|| members.iter().sum::<f64>() / members.len() as f64)
        };
        Ok(Self {
            overall_acc: 100.0 * confusion.trace() as f64 / confusion.total() as f64,
            group_acc: GroupAccuracy {
                many: mean_of(ShotGroup::Many),
                med: mean_of(ShotGroup::Medium),
                few: mean_of(ShotGroup::Few),
            },
            per_class_acc,
            group_of_class,
            confusion: confusion.rows(),
            group_def: thresholds,
        })
    }
}
