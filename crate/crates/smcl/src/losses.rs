//! Mixed cross-entropy and (mixed) supervised contrastive losses on candle
//! tensors.
//!
//! Both losses reduce to a host-built coefficient matrix contracted with a
//! log-probability matrix, so the autograd graph stays a handful of ops.

use candle_core::{DType, Device, Tensor};
use smcl_core::{combined, DrwWeights, LossBreakdown, ObjectiveWeights};

use crate::error::{contract, Error, Result};
use crate::views::{Batch, MASKED_VIEW, MIXED_VIEWS, SOURCE_VIEWS};

/// Largest admissible masked-area fraction.
pub const AREA_MAX: f64 = 0.9;
const UNIT_NORM_TOLERANCE: f64 = 1e-4;
const SELF_SCORE: f64 = -1e9;

/// Per-source labels and areas for one step, with the view layout.
#[derive(Debug, Clone, PartialEq)]
pub struct StepLabels {
    pub views_per_source: usize,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
    pub area: Vec<f64>,
}

impl StepLabels {
    /// Two-view labels: no targets, zero area.
    pub fn two_view(source: Vec<u32>) -> Self {
        let n = source.len();
        Self {
            views_per_source: SOURCE_VIEWS,
            target: source.clone(),
            source,
            area: vec![0.0; n],
        }
    }

    pub fn num_sources(&self) -> usize {
        self.source.len()
    }

    pub fn num_rows(&self) -> usize {
        self.source.len() * self.views_per_source
    }

    fn validate(&self) -> Result<()> {
        let b = self.source.len();
        if self.target.len() != b || self.area.len() != b {
            return Err(contract("source, target and area lists differ in length"));
        }
        if self.views_per_source != SOURCE_VIEWS && self.views_per_source != MIXED_VIEWS {
            return Err(contract(format!(
                "unsupported views per source: {}",
                self.views_per_source
            )));
        }
        if let Some(a) = self.area.iter().find(|a| !(0.0..=AREA_MAX + 1e-12).contains(*a)) {
            return Err(contract(format!("area {a} outside [0, {AREA_MAX}]")));
        }
        Ok(())
    }

    /// Label of every pool row; the masked view takes the target label when
    /// `masked_as_target` is set.
    fn pool_labels(&self, masked_as_target: bool) -> Vec<u32> {
        let v = self.views_per_source;
        let mut labels = Vec::with_capacity(self.num_rows());
        for s in 0..self.num_sources() {
            for view in 0..v {
                let label = match view {
                    0 | 1 => self.source[s],
                    MASKED_VIEW if !masked_as_target => self.source[s],
                    _ => self.target[s],
                };
                labels.push(label);
            }
        }
        labels
    }
}

impl From<&Batch> for StepLabels {
    fn from(batch: &Batch) -> Self {
        Self {
            views_per_source: batch.views_per_source,
            source: batch.source_labels.clone(),
            target: batch.target_labels.clone(),
            area: batch.areas.clone(),
        }
    }
}

fn dense(values: Vec<f64>, rows: usize, cols: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, (rows, cols), device)?.to_dtype(dtype)?)
}

/// Per-row, per-class cross-entropy coefficients; the loss is
/// `-sum(coef * log_softmax(logits))`.
pub fn cross_entropy_coefficients(
    labels: &StepLabels,
    num_classes: usize,
    drw: &DrwWeights,
    strict: bool,
) -> Result<Vec<f64>> {
    labels.validate()?;
    let v = labels.views_per_source;
    let b = labels.num_sources();
    if b == 0 {
        return Err(Error::DegenerateBatch("no sources".into()));
    }
    let mut coef = vec![0.0; labels.num_rows() * num_classes];
    let mut add = |row: usize, class: u32, weight: f64| -> Result<()> {
        let class = class as usize;
        if class >= num_classes {
            return Err(contract(format!("label {class} out of range for {num_classes} classes")));
        }
        coef[row * num_classes + class] += weight * drw.weight(class) / b as f64;
        Ok(())
    };
    for s in 0..b {
        let (y, t, a) = (labels.source[s], labels.target[s], labels.area[s]);
        let row = |view: usize| s * v + view;
        if v == SOURCE_VIEWS {
            add(row(0), y, 0.5)?;
            add(row(1), y, 0.5)?;
        } else if strict {
            for view in [0, 1, MASKED_VIEW] {
                add(row(view), y, (1.0 - a) / 3.0)?;
            }
            for view in [2, 3, MASKED_VIEW] {
                add(row(view), t, a / 3.0)?;
            }
        } else {
            add(row(0), y, 0.2)?;
            add(row(1), y, 0.2)?;
            add(row(2), t, 0.2)?;
            add(row(3), t, 0.2)?;
            add(row(MASKED_VIEW), y, (1.0 - a) / 5.0)?;
            add(row(MASKED_VIEW), t, a / 5.0)?;
        }
    }
    Ok(coef)
}

/// Area-mixed cross-entropy over source-major logits `(B * V, K)`.
///
/// Five-view rows `[x1, x2, t1, t2, xm]`: with `strict` the source term
/// covers `x1, x2, xm` at weight `1 - A` and the target term covers
/// `t1, t2, xm` at weight `A`, each a mean over its three rows. Without
/// `strict` every view counts once toward its own label and only `xm` is
/// split between the labels by area. Two-view rows train toward the source
/// label. Each term is scaled by the DRW weight of its label; the result is
/// the plain mean over sources.
pub fn mixed_cross_entropy(
    logits: &Tensor,
    labels: &StepLabels,
    drw: &DrwWeights,
    strict: bool,
) -> Result<Tensor> {
    let (rows, k) = logits.dims2()?;
    if rows != labels.num_rows() {
        return Err(contract(format!(
            "{rows} logit rows for {} expected",
            labels.num_rows()
        )));
    }
    if drw.num_classes() != k {
        return Err(contract("DRW weights and logits disagree on class count"));
    }
    let coef = cross_entropy_coefficients(labels, k, drw, strict)?;
    let coef = dense(coef, rows, k, logits.dtype(), logits.device())?;
    let log_probs = candle_nn::ops::log_softmax(logits, 1)?;
    Ok((log_probs * coef)?.sum_all()?.neg()?)
}

#[derive(Debug, Clone)]
pub struct SupConOutput {
    pub loss: Tensor,
    /// Anchors skipped because no other pool member shares their label.
    pub anchors_without_positives: usize,
}

fn check_unit_norm(features: &Tensor) -> Result<()> {
    let host = features.to_dtype(DType::F64)?.to_vec2::<f64>()?;
    for (i, row) in host.iter().enumerate() {
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(contract(format!("feature row {i} has norm {norm}")));
        }
    }
    Ok(())
}

/// `log p(k | z)` over the pool excluding `z` itself, for every pair.
fn pairwise_log_prob(features: &Tensor, tau: f64) -> Result<Tensor> {
    let n = features.dim(0)?;
    let scores = (features.matmul(&features.t()?)? / tau)?;
    let self_mask = (Tensor::eye(n, features.dtype(), features.device())? * SELF_SCORE)?;
    let scores = (scores + self_mask)?;
    let shifted = scores.broadcast_sub(&scores.max_keepdim(1)?.detach())?;
    let log_norm = shifted.exp()?.sum_keepdim(1)?.log()?;
    Ok(shifted.broadcast_sub(&log_norm)?)
}

/// One anchor group: `anchors` all share `scale`, and the group's loss is the
/// mean over its anchors that have positives.
struct AnchorGroup<'a> {
    anchors: &'a [usize],
    pool_labels: &'a [u32],
    scale: f64,
}

/// Adds the group's coefficients to `coef`; returns anchors without positives.
fn fill_group(coef: &mut [f64], n: usize, group: &AnchorGroup<'_>) -> usize {
    let mut skipped = 0;
    let positives: Vec<Vec<usize>> = group
        .anchors
        .iter()
        .map(|&z| {
            (0..n)
                .filter(|&p| p != z && group.pool_labels[p] == group.pool_labels[z])
                .collect()
        })
        .collect();
    let valid = positives.iter().filter(|p| !p.is_empty()).count();
    for (&z, pos) in group.anchors.iter().zip(&positives) {
        if pos.is_empty() {
            skipped += 1;
            continue;
        }
        let w = group.scale / (valid as f64 * pos.len() as f64);
        for &p in pos {
            coef[z * n + p] += w;
        }
    }
    skipped
}

fn contract_pool(features: &Tensor, pool: usize) -> Result<()> {
    if pool < 2 {
        return Err(Error::DegenerateBatch(format!(
            "contrast pool has {pool} member(s), need at least 2"
        )));
    }
    if features.dim(0)? != pool {
        return Err(contract(format!(
            "{} feature rows for a pool of {pool}",
            features.dim(0)?
        )));
    }
    check_unit_norm(features)
}

/// Supervised contrastive loss over the pool `features` (unit rows), averaged
/// over the anchors in `anchors` that have at least one positive.
pub fn supcon(features: &Tensor, labels: &[u32], anchors: &[usize], tau: f64) -> Result<SupConOutput> {
    let n = labels.len();
    contract_pool(features, n)?;
    if let Some(&z) = anchors.iter().find(|&&z| z >= n) {
        return Err(contract(format!("anchor {z} outside a pool of {n}")));
    }
    let mut coef = vec![0.0; n * n];
    let group = AnchorGroup {
        anchors,
        pool_labels: labels,
        scale: 1.0,
    };
    let skipped = fill_group(&mut coef, n, &group);
    let log_prob = pairwise_log_prob(features, tau)?;
    let coef = dense(coef, n, n, features.dtype(), features.device())?;
    Ok(SupConOutput {
        loss: (log_prob * coef)?.sum_all()?.neg()?,
        anchors_without_positives: skipped,
    })
}

/// Area-mixed supervised contrastive loss over source-major features.
///
/// For five-view rows the pool is every feature of the batch. Per source,
/// the source term anchors on `x1, x2, xm` with `xm` labeled as the source,
/// the target term anchors on `t1, t2, xm` with `xm` labeled as the target,
/// and they are mixed by `1 - A` and `A`. Two-view rows reduce to plain
/// supervised contrast over all `2B` views with source labels.
pub fn mixed_supcon(features: &Tensor, labels: &StepLabels, tau: f64) -> Result<SupConOutput> {
    labels.validate()?;
    let n = labels.num_rows();
    contract_pool(features, n)?;
    let b = labels.num_sources();
    let v = labels.views_per_source;
    let mut coef = vec![0.0; n * n];
    let mut skipped = 0;
    if v == SOURCE_VIEWS {
        let pool = labels.pool_labels(false);
        let anchors: Vec<usize> = (0..n).collect();
        skipped += fill_group(
            &mut coef,
            n,
            &AnchorGroup {
                anchors: &anchors,
                pool_labels: &pool,
                scale: 1.0,
            },
        );
    } else {
        let source_pool = labels.pool_labels(false);
        let target_pool = labels.pool_labels(true);
        for s in 0..b {
            let a = labels.area[s];
            let base = s * v;
            let source_anchors = [base, base + 1, base + MASKED_VIEW];
            let target_anchors = [base + 2, base + 3, base + MASKED_VIEW];
            for (anchors, pool, weight) in [
                (&source_anchors, &source_pool, 1.0 - a),
                (&target_anchors, &target_pool, a),
            ] {
                let group = AnchorGroup {
                    anchors,
                    pool_labels: pool,
                    scale: weight / b as f64,
                };
                if weight > 0.0 {
                    skipped += fill_group(&mut coef, n, &group);
                }
            }
        }
    }
    let log_prob = pairwise_log_prob(features, tau)?;
    let coef = dense(coef, n, n, features.dtype(), features.device())?;
    Ok(SupConOutput {
        loss: (log_prob * coef)?.sum_all()?.neg()?,
        anchors_without_positives: skipped,
    })
}

/// The differentiable total plus its scalar breakdown.
#[derive(Debug, Clone)]
pub struct Objective {
    pub total: Tensor,
    pub breakdown: LossBreakdown,
    pub anchors_without_positives: usize,
}

/// `lambda * mixed CE + mu * mixed SupCon`. DRW weights touch the CE term only.
pub fn objective(
    logits: &Tensor,
    features: &Tensor,
    labels: &StepLabels,
    drw: &DrwWeights,
    weights: &ObjectiveWeights,
    strict: bool,
) -> Result<Objective> {
    let mce = mixed_cross_entropy(logits, labels, drw, strict)?;
    let msc = mixed_supcon(features, labels, weights.tau)?;
    let mce_value = mce.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    let msc_value = msc.loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    // Rounding can leave an exactly-zero CE a hair below zero.
    let mce_value = if (-1e-9..0.0).contains(&mce_value) { 0.0 } else { mce_value };
    let breakdown = combined(mce_value, msc_value, weights)?;
    let mut total = (mce * weights.lambda)?;
    if weights.mu > 0.0 {
        total = (total + (msc.loss * weights.mu)?)?;
    }
    Ok(Objective {
        total,
        breakdown,
        anchors_without_positives: msc.anchors_without_positives,
    })
}
