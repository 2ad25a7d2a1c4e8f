//! Test-set evaluation, report tables, and gradient-weighted class activation maps.

use std::path::Path;

use candle_core::{DType, Var};
use image::imageops::{resize, FilterType};
use image::{ImageBuffer, Luma, Rgb, RgbImage};
use smcl_core::{ClassHistogram, ConfusionMatrix, EvalReport, ShotThresholds};

use crate::dataset::{Image, ImageSet, Normalization};
use crate::error::{contract, Result};
use crate::model::Model;

pub const EVAL_BATCH: usize = 256;

/// Confusion matrix of evaluation-mode predictions over `set`.
pub fn confusion(model: &Model, set: &ImageSet, norm: &Normalization, batch: usize) -> Result<ConfusionMatrix> {
    let k = model.spec().num_classes;
    if set.num_classes() != k {
        return Err(contract(format!(
            "test set has {} classes, model has {k}",
            set.num_classes()
        )));
    }
    let mut matrix = ConfusionMatrix::new(k);
    let indices: Vec<usize> = (0..set.len()).collect();
    for chunk in indices.chunks(batch.max(1)) {
        let mut pixels = Vec::with_capacity(chunk.len() * set.channels() * set.height() * set.width());
        for &i in chunk {
            pixels.extend(norm.apply(&set.image(i)));
        }
        let x = model.input(&pixels, chunk.len(), set.height(), set.width())?;
        for (&i, (pred, _)) in chunk.iter().zip(model.predict(&x)?) {
            matrix.record(set.label(i) as usize, pred);
        }
    }
    Ok(matrix)
}

/// Overall and shot-grouped accuracy; groups come from the training histogram.
pub fn evaluate(
    model: &Model,
    set: &ImageSet,
    norm: &Normalization,
    train_hist: &ClassHistogram,
) -> Result<EvalReport> {
    let matrix = confusion(model, set, norm, EVAL_BATCH)?;
    Ok(EvalReport::from_confusion(&matrix, train_hist, ShotThresholds::default())?)
}

pub(crate) fn cell(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into())
}

/// Fixed-width `Method | All | Many | Med | Few` table; absent groups print `-`.
pub fn format_table(rows: &[(String, &EvalReport)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("Method".len());
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
        "Method", "All", "Many", "Med", "Few"
    );
    for (name, report) in rows {
        let g = report.group_acc;
        out.push_str(&format!(
            "{:<width$}  {:>7}  {:>7}  {:>7}  {:>7}\n",
            name,
            cell(Some(report.overall_acc)),
            cell(g.many),
            cell(g.med),
            cell(g.few)
        ));
    }
    out
}

/// A heat map in `[0, 1]`, row-major at image resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// Gradient-weighted activation map of `class` over the last convolutional block.
///
/// Channel weights are the spatially averaged gradients of the class logit;
/// the weighted sum is rectified, min-max scaled and bilinearly upsampled.
/// A map with no spread (for example all-zero activations) comes back as
/// zeros without scaling.
pub fn cam(model: &Model, image: &Image, norm: &Normalization, class: usize) -> Result<HeatMap> {
    let k = model.spec().num_classes;
    if class >= k {
        return Err(contract(format!("class {class} out of range for {k} classes")));
    }
    let x = model.input(&norm.apply(image), 1, image.height, image.width)?;
    let activations = Var::from_tensor(&model.feature_map(&x, false)?.detach())?;
    let logits = model.heads(&model.pool(activations.as_tensor())?)?.logits;
    let score = logits.narrow(1, class, 1)?.sum_all()?;
    let grads = score.backward()?;
    let (_, channels, h, w) = activations.dims4()?;
    let act = activations.as_tensor().to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    let grad = match grads.get(activations.as_tensor()) {
        Some(g) => g.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?,
        None => vec![0.0; act.len()],
    };
    let plane = h * w;
    let mut map = vec![0.0f64; plane];
    for c in 0..channels {
        let alpha = grad[c * plane..(c + 1) * plane].iter().sum::<f64>() / plane as f64;
        for (m, a) in map.iter_mut().zip(&act[c * plane..(c + 1) * plane]) {
            *m += alpha * a;
        }
    }
    map.iter_mut().for_each(|v| *v = v.max(0.0));
    let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 1e-12) {
        return Ok(HeatMap {
            height: image.height,
            width: image.width,
            values: vec![0.0; image.height * image.width],
        });
    }
    let small: ImageBuffer<Luma<f32>, Vec<f32>> = ImageBuffer::from_vec(
        w as u32,
        h as u32,
        map.iter().map(|v| ((v - lo) / (hi - lo)) as f32).collect(),
    )
    .ok_or_else(|| contract("activation map buffer size"))?;
    let big = resize(&small, image.width as u32, image.height as u32, FilterType::Triangle);
    Ok(HeatMap {
        height: image.height,
        width: image.width,
        values: big.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
    })
}

/// Half-and-half blend of the image with a blue-to-red rendering of `heat`.
pub fn save_overlay(image: &Image, heat: &HeatMap, path: &Path) -> Result<()> {
    let base = image.to_rgb8();
    let overlay = RgbImage::from_fn(base.width(), base.height(), |x, y| {
        let h = heat.values[y as usize * heat.width + x as usize];
        let p = base.get_pixel(x, y).0;
        let color = [h * 255.0, 0.0, (1.0 - h) * 255.0];
        Rgb([0, 1, 2].map(|c| (0.5 * p[c] as f32 + 0.5 * color[c]).round() as u8))
    });
    overlay.save(path)?;
    Ok(())
}
