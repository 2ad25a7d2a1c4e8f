//! Scalar reference implementations shared by the integration tests.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor};
use rand::{Rng, SeedableRng};

pub mod criteria;
pub mod gradcheck;
pub mod reference;

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - lse).collect()
}

/// `w[label] * -log softmax(row)[label]`.
pub fn ce(row: &[f64], label: u32, w: &[f64]) -> f64 {
    -log_softmax(row)[label as usize] * w[label as usize]
}

/// Area-mixed cross-entropy written term by term over five-view rows
/// `[o1, o2, t1, t2, om]` per source.
pub fn mixed_ce_oracle(logits: &[Vec<f64>], y: &[u32], t: &[u32], a: &[f64], w: &[f64], strict: bool) -> f64 {
    let b = y.len();
    let mut total = 0.0;
    for s in 0..b {
        let o = |v: usize| &logits[s * 5 + v][..];
        let term = if strict {
            let source = (ce(o(0), y[s], w) + ce(o(1), y[s], w) + ce(o(4), y[s], w)) / 3.0;
            let target = (ce(o(2), t[s], w) + ce(o(3), t[s], w) + ce(o(4), t[s], w)) / 3.0;
            (1.0 - a[s]) * source + a[s] * target
        } else {
            (ce(o(0), y[s], w)
                + ce(o(1), y[s], w)
                + ce(o(2), t[s], w)
                + ce(o(3), t[s], w)
                + (1.0 - a[s]) * ce(o(4), y[s], w)
                + a[s] * ce(o(4), t[s], w))
                / 5.0
        };
        total += term;
    }
    total / b as f64
}

/// Two-view cross-entropy toward the source label.
pub fn two_view_ce_oracle(logits: &[Vec<f64>], y: &[u32], w: &[f64]) -> f64 {
    let b = y.len();
    (0..b)
        .map(|s| (ce(&logits[2 * s], y[s], w) + ce(&logits[2 * s + 1], y[s], w)) / 2.0)
        .sum::<f64>()
        / b as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-anchor supervised contrastive loss with a double loop; `None` when the
/// anchor has no positive.
pub fn anchor_loss(features: &[Vec<f64>], labels: &[u32], z: usize, tau: f64) -> Option<f64> {
    let n = features.len();
    let positives: Vec<usize> = (0..n).filter(|&p| p != z && labels[p] == labels[z]).collect();
    if positives.is_empty() {
        return None;
    }
    let denom: f64 = (0..n)
        .filter(|&k| k != z)
        .map(|k| (dot(&features[z], &features[k]) / tau).exp())
        .sum();
    let mut acc = 0.0;
    for &p in &positives {
        acc += ((dot(&features[z], &features[p]) / tau).exp() / denom).ln();
    }
    Some(-acc / positives.len() as f64)
}

/// Mean anchor loss over `anchors` that have positives.
pub fn supcon_oracle(features: &[Vec<f64>], labels: &[u32], anchors: &[usize], tau: f64) -> (f64, usize) {
    let mut total = 0.0;
    let mut valid = 0;
    let mut skipped = 0;
    for &z in anchors {
        match anchor_loss(features, labels, z, tau) {
            Some(l) => {
                total += l;
                valid += 1;
            }
            None => skipped += 1,
        }
    }
    (if valid == 0 { 0.0 } else { total / valid as f64 }, skipped)
}

/// Area-mixed supervised contrast over a five-view pool.
pub fn mixed_supcon_oracle(features: &[Vec<f64>], y: &[u32], t: &[u32], a: &[f64], tau: f64) -> f64 {
    let b = y.len();
    let mut source_labels = Vec::new();
    let mut target_labels = Vec::new();
    for s in 0..b {
        source_labels.extend([y[s], y[s], t[s], t[s], y[s]]);
        target_labels.extend([y[s], y[s], t[s], t[s], t[s]]);
    }
    let mut total = 0.0;
    for s in 0..b {
        let (source, _) = supcon_oracle(features, &source_labels, &[5 * s, 5 * s + 1, 5 * s + 4], tau);
        let (target, _) = supcon_oracle(features, &target_labels, &[5 * s + 2, 5 * s + 3, 5 * s + 4], tau);
        total += (1.0 - a[s]) * source + a[s] * target;
    }
    total / b as f64
}

pub fn random_rows<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..cols).map(|_| rng.random_range(-scale..scale)).collect())
        .collect()
}

pub fn random_unit_rows<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Vec<Vec<f64>> {
    random_rows(rows, cols, 1.0, rng)
        .into_iter()
        .map(|r| {
            let n = dot(&r, &r).sqrt();
            r.into_iter().map(|v| v / n).collect()
        })
        .collect()
}

pub fn tensor(rows: &[Vec<f64>]) -> Tensor {
    let cols = rows[0].len();
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Tensor::from_vec(flat, (rows.len(), cols), &Device::Cpu).unwrap()
}

pub fn scalar(t: &Tensor) -> f64 {
    t.to_dtype(DType::F64).unwrap().to_scalar::<f64>().unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-12)
}

/// Largest relative error of the vectorized losses against the scalar
/// oracles over `batches` random batches of up to 16 sources and 5 classes.
pub fn loss_oracle_error(batches: usize, seed: u64) -> f64 {
    use smcl::losses::{mixed_cross_entropy, mixed_supcon, objective, StepLabels};
    use smcl_core::{drw_weights, ClassHistogram, DrwWeights, ObjectiveWeights};

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let err = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
    for i in 0..batches {
        let k = rng.random_range(2..=5usize);
        let b = rng.random_range(1..=16usize);
        let strict = i % 3 != 2;
        let five = i % 5 != 0;
        let y: Vec<u32> = (0..b).map(|_| rng.random_range(0..k as u32)).collect();
        let t: Vec<u32> = (0..b).map(|_| rng.random_range(0..k as u32)).collect();
        let a: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..=0.9)).collect();
        let drw = if i % 2 == 0 {
            let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..600)).collect();
            drw_weights(&ClassHistogram::new(counts).unwrap(), 0.9999).unwrap()
        } else {
            DrwWeights::inactive(k)
        };
        let w = drw.weights().to_vec();
        let tau = rng.random_range(0.05..0.5);
        let weights = ObjectiveWeights { lambda: rng.random_range(0.5..1.5), mu: rng.random_range(0.0..1.0), tau };
        let (labels, ce_expected, sc_expected, rows) = if five {
            let labels = StepLabels { views_per_source: 5, source: y.clone(), target: t.clone(), area: a.clone() };
            let logits = random_rows(5 * b, k, 4.0, &mut rng);
            let features = random_unit_rows(5 * b, 8, &mut rng);
            let ce = mixed_ce_oracle(&logits, &y, &t, &a, &w, strict);
            let sc = mixed_supcon_oracle(&features, &y, &t, &a, tau);
            (labels, ce, sc, (logits, features))
        } else {
            let logits = random_rows(2 * b, k, 4.0, &mut rng);
            let features = random_unit_rows(2 * b, 8, &mut rng);
            let pool: Vec<u32> = y.iter().flat_map(|&l| [l, l]).collect();
            let anchors: Vec<usize> = (0..2 * b).collect();
            let ce = two_view_ce_oracle(&logits, &y, &w);
            let (sc, _) = supcon_oracle(&features, &pool, &anchors, tau);
            (StepLabels::two_view(y.clone()), ce, sc, (logits, features))
        };
        let (logits, features) = (tensor(&rows.0), tensor(&rows.1));
        let ce = scalar(&mixed_cross_entropy(&logits, &labels, &drw, strict).unwrap());
        let sc = scalar(&mixed_supcon(&features, &labels, tau).unwrap().loss);
        let total = scalar(&objective(&logits, &features, &labels, &drw, &weights, strict).unwrap().total);
        let total_expected = weights.lambda * ce_expected + weights.mu * sc_expected;
        worst = worst.max(err(ce, ce_expected)).max(err(sc, sc_expected)).max(err(total, total_expected));
    }
    worst
}
