//! Statistical and protocol checks shared by the test suites and the
//! acceptance runner. Each returns `Err(description)` on failure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;
use smcl_core::{
    apply_mask, effective_numbers, make_mask, ClassHistogram, ConfusionMatrix, EvalReport,
    LongTailSpec, MaskMode, MaskParams, ShotGroup, ShotThresholds,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub type Check = Result<String, String>;

/// Target-class frequencies for `n = [1, 100]` and chi-square fits on random histograms.
pub fn sampler_statistics() -> Check {
    // Effective numbers written with plain powers: beta = (N - 1) / N.
    let n_total = 101.0f64;
    let beta = (n_total - 1.0) / n_total;
    let effective = [1.0, (1.0 - beta.powi(100)) / (1.0 - beta)];
    let inv = [1.0 / effective[0], 1.0 / effective[1]];
    let oracle = [inv[0] / (inv[0] + inv[1]), inv[1] / (inv[0] + inv[1])];
    if (oracle[0] - 0.984534288983).abs() > 1e-9 {
        return Err(format!("oracle p0 {} disagrees with 0.984534288983", oracle[0]));
    }
    let dist = effective_numbers(&ClassHistogram::new(vec![1, 100]).unwrap()).unwrap();
    for (p, o) in dist.probs().iter().zip(oracle) {
        if (p - o).abs() > 1e-12 {
            return Err(format!("probabilities {:?} vs oracle {oracle:?}", dist.probs()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let draws = 100_000;
    let hits = (0..draws).filter(|_| dist.sample_class(&mut rng) == 0).count();
    let freq = hits as f64 / draws as f64;
    if (freq - oracle[0]).abs() > 0.005 {
        return Err(format!("empirical class-0 frequency {freq} vs {}", oracle[0]));
    }

    let mut worst_p = 1.0f64;
    for h in 0..10 {
        let k = rng.random_range(2..=12);
        let counts: Vec<usize> = (0..k).map(|_| rng.random_range(1..2000)).collect();
        let dist = effective_numbers(&ClassHistogram::new(counts).unwrap()).unwrap();
        let n = 20_000;
        let mut observed = vec![0usize; k];
        for _ in 0..n {
            observed[dist.sample_class(&mut rng)] += 1;
        }
        let stat: f64 = observed
            .iter()
            .zip(dist.probs())
            .map(|(&o, &p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum();
        let p_value = 1.0 - ChiSquared::new((k - 1) as f64).unwrap().cdf(stat);
        if p_value < 0.01 {
            return Err(format!("histogram {h}: chi-square p = {p_value:.4}"));
        }
        worst_p = worst_p.min(p_value);
    }
    Ok(format!("class-0 frequency {freq:.4} vs {:.4}; smallest chi-square p {worst_p:.3}", oracle[0]))
}

/// Asymptotic Kolmogorov tail probability with the Stephens small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut p = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        p += if j % 2 == 1 { 2.0 * term } else { -2.0 * term };
        if term < 1e-12 {
            return p.clamp(0.0, 1.0);
        }
    }
    // The series only fails to converge for tiny statistics.
    1.0
}

/// Changed-pixel counts against the recorded area, and uniformity of Beta(1, 1) area draws.
pub fn mask_exactness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let modes = [MaskMode::Saliency, MaskMode::Center, MaskMode::Random];
    for i in 0..10_000 {
        let h = rng.random_range(1..=48);
        let w = rng.random_range(1..=48);
        let peak = Some((rng.random_range(0..h), rng.random_range(0..w)));
        let params = MaskParams { alpha: rng.random_range(0.2..3.0), area_cap: 0.9 };
        let spec = make_mask(h, w, peak, modes[i % 3], &params, &mut rng).unwrap();
        let original: Vec<f32> = (0..3 * h * w).map(|p| (p % 5) as f32 * 0.1).collect();
        let mut image = original.clone();
        apply_mask(&mut image, &spec, &[7.0, 8.0, 9.0]);
        let changed = (0..h * w)
            .filter(|&p| (0..3).any(|c| image[c * h * w + p] != original[c * h * w + p]))
            .count();
        let expected = spec.area_fraction * (h * w) as f64;
        if (expected - changed as f64).abs() > 1e-9 {
            return Err(format!("mask {i} ({h}x{w}): {changed} pixels changed, A*H*W = {expected}"));
        }
    }

    let beta = MaskParams { alpha: 1.0, area_cap: 0.9 }.area_distribution().unwrap();
    let n = 10_000;
    let mut draws: Vec<f64> = (0..n).map(|_| beta.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    let d = draws
        .iter()
        .enumerate()
        .map(|(i, &x)| ((i + 1) as f64 / n as f64 - x).max(x - i as f64 / n as f64))
        .fold(0.0, f64::max);
    let p = ks_p_value(d, n);
    if p < 0.01 {
        return Err(format!("Beta(1,1) draws: KS D = {d:.4}, p = {p:.4}"));
    }
    Ok(format!("10000 masks exact; Beta(1,1) KS D = {d:.4}, p = {p:.3}"))
}

/// The CIFAR-100-LT profile at rho = 100, n_max = 500, on a stand-in label list.
pub fn dataset_profile() -> Check {
    let spec = LongTailSpec::new(100, 100.0, 500).unwrap();
    let counts = spec.class_counts();
    if counts[0] != 500 || counts[99] != 5 {
        return Err(format!("n_0 = {}, n_99 = {}", counts[0], counts[99]));
    }
    if !counts.windows(2).all(|w| w[0] >= w[1]) {
        return Err("counts increase somewhere".into());
    }
    // Full CIFAR-100 train split shape: 500 images per class.
    let labels: Vec<u32> = (0..100u32).flat_map(|k| std::iter::repeat_n(k, 500)).collect();
    let subset = smcl_core::build_longtail(&labels, &spec, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let realized = subset.histogram.counts().to_vec();
    if realized != counts {
        return Err("subset histogram differs from the profile".into());
    }
    let rho = subset.histogram.imbalance_ratio();
    if (rho - 100.0).abs() > 1e-12 {
        return Err(format!("realized rho {rho}"));
    }
    Ok(format!("n_0 = 500, n_99 = 5, {} images, rho = {rho}", subset.indices.len()))
}

/// Grouped accuracies of a hand-built five-class confusion matrix.
pub fn evaluation_protocol() -> Check {
    // Training counts put two classes in each of many / medium and one in few.
    let hist = ClassHistogram::new(vec![500, 101, 100, 20, 19]).unwrap();
    let diagonal = [9u64, 7, 5, 3, 1];
    let mut rows = vec![vec![0u64; 5]; 5];
    for (k, &d) in diagonal.iter().enumerate() {
        rows[k][k] = d;
        rows[k][(k + 1) % 5] = 10 - d;
    }
    let matrix = ConfusionMatrix::from_rows(&rows).unwrap();
    let report = EvalReport::from_confusion(&matrix, &hist, ShotThresholds::default()).unwrap();
    let expected_groups = [ShotGroup::Many, ShotGroup::Many, ShotGroup::Medium, ShotGroup::Medium, ShotGroup::Few];
    if report.group_of_class != expected_groups {
        return Err(format!("groups {:?}", report.group_of_class));
    }
    let partition: usize = [ShotGroup::Many, ShotGroup::Medium, ShotGroup::Few]
        .iter()
        .map(|g| report.group_of_class.iter().filter(|&c| c == g).count())
        .sum();
    if partition != 5 {
        return Err("groups do not partition the classes".into());
    }
    let expect = |got: Option<f64>, want: f64, name: &str| match got {
        Some(v) if v == want => Ok(()),
        other => Err(format!("{name}: {other:?}, expected {want}")),
    };
    if report.per_class_acc != [90.0, 70.0, 50.0, 30.0, 10.0] {
        return Err(format!("per-class {:?}", report.per_class_acc));
    }
    expect(Some(report.overall_acc), 50.0, "overall")?;
    expect(report.group_acc.many, 80.0, "many")?;
    expect(report.group_acc.med, 40.0, "medium")?;
    expect(report.group_acc.few, 10.0, "few")?;
    Ok("overall 50, many 80, medium 40, few 10".into())
}
