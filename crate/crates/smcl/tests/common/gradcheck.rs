//! Finite-difference checks of the combined objective on a toy network.

use candle_core::{Tensor, Var};
use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smcl::losses::{objective, StepLabels};
use smcl::model::normalize_rows;
use smcl_core::{drw_weights, ClassHistogram, DrwWeights, ObjectiveWeights};

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

struct Case {
    labels: StepLabels,
    drw: DrwWeights,
    weights: ObjectiveWeights,
    strict: bool,
    input: Vec<Vec<f64>>,
    w1: Vec<Vec<f64>>,
    w2: Vec<Vec<f64>>,
    w3: Vec<Vec<f64>>,
}

fn case(index: usize, rng: &mut ChaCha8Rng) -> Case {
    let areas = [0.0, 0.37, 0.9];
    let k = rng.random_range(2..=5);
    let b = rng.random_range(2..=4);
    let five = index % 4 != 3;
    let labels = if five {
        StepLabels {
            views_per_source: 5,
            source: (0..b).map(|_| rng.random_range(0..k as u32)).collect(),
            target: (0..b).map(|_| rng.random_range(0..k as u32)).collect(),
            area: (0..b).map(|s| if s == 0 { areas[index % 3] } else { rng.random_range(0.0..0.9) }).collect(),
        }
    } else {
        StepLabels::two_view((0..b).map(|_| rng.random_range(0..k as u32)).collect())
    };
    let drw = if index % 2 == 0 {
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..500)).collect();
        drw_weights(&ClassHistogram::new(counts).unwrap(), 0.999).unwrap()
    } else {
        DrwWeights::inactive(k)
    };
    let rows = labels.num_rows();
    Case {
        drw,
        weights: ObjectiveWeights {
            lambda: rng.random_range(0.5..1.5),
            mu: rng.random_range(0.0..1.0),
            tau: rng.random_range(0.1..0.5),
        },
        strict: index % 5 != 4,
        input: random_rows(rows, 6, 1.0, rng),
        w1: random_rows(6, 8, 0.6, rng),
        w2: random_rows(8, k, 0.6, rng),
        w3: random_rows(8, 4, 0.6, rng),
        labels,
    }
}

fn loss_from_heads(c: &Case, logits: &Tensor, raw_features: &Tensor) -> Tensor {
    let features = normalize_rows(raw_features).unwrap();
    objective(logits, &features, &c.labels, &c.drw, &c.weights, c.strict).unwrap().total
}

/// `(logits, raw projection)` of a tanh network.
fn heads(c: &Case, w1: &Tensor) -> (Tensor, Tensor) {
    let h = tensor(&c.input).matmul(w1).unwrap().tanh().unwrap();
    (h.matmul(&tensor(&c.w2)).unwrap(), h.matmul(&tensor(&c.w3)).unwrap())
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.flatten_all().unwrap().to_vec1::<f64>().unwrap()
}

fn unflat(values: &[f64], like: &Tensor) -> Tensor {
    Tensor::from_vec(values.to_vec(), like.dims(), like.device()).unwrap()
}

/// Central differences of `f` around `x`.
fn numeric_grad(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Vec<f64> {
    let base = flat(x);
    (0..base.len())
        .map(|i| {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus[i] += STEP;
            minus[i] -= STEP;
            (f(&unflat(&plus, x)) - f(&unflat(&minus, x))) / (2.0 * STEP)
        })
        .collect()
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = numeric.iter().map(|n| n * n).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

/// Largest relative gradient error per case, over the logits, the raw
/// features (when the contrastive term is on) and the first-layer weights.
pub fn gradient_errors(cases: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = Vec::with_capacity(cases);
    for index in 0..cases {
        let c = case(index, &mut rng);
        let w1 = tensor(&c.w1);
        let (logits, raw) = heads(&c, &w1);

        let logits_var = Var::from_tensor(&logits.detach()).unwrap();
        let raw_var = Var::from_tensor(&raw.detach()).unwrap();
        let grads = loss_from_heads(&c, logits_var.as_tensor(), raw_var.as_tensor()).backward().unwrap();
        let g_logits = flat(grads.get(logits_var.as_tensor()).unwrap());
        let n_logits = numeric_grad(&logits, |l| scalar(&loss_from_heads(&c, l, &raw)));
        let mut e = relative_error(&g_logits, &n_logits);

        if c.weights.mu > 0.0 {
            let g_raw = flat(grads.get(raw_var.as_tensor()).unwrap());
            let n_raw = numeric_grad(&raw, |r| scalar(&loss_from_heads(&c, &logits, r)));
            e = e.max(relative_error(&g_raw, &n_raw));
        }

        // Through the first layer of the network.
        let w1_var = Var::from_tensor(&w1).unwrap();
        let (l, r) = heads(&c, w1_var.as_tensor());
        let grads = loss_from_heads(&c, &l, &r).backward().unwrap();
        let g_w1 = flat(grads.get(w1_var.as_tensor()).unwrap());
        let n_w1 = numeric_grad(&w1, |w| {
            let (l, r) = heads(&c, w);
            scalar(&loss_from_heads(&c, &l, &r))
        });
        worst.push(e.max(relative_error(&g_w1, &n_w1)));
    }
    worst
}
