//! Per-view augmentation policies.

use rand::Rng;
use smcl_core::AugmentPolicy;

use crate::dataset::Image;

const CROP_PADDING: usize = 4;
const JITTER_PROBABILITY: f64 = 0.8;
const GRAYSCALE_PROBABILITY: f64 = 0.2;
const JITTER_STRENGTH: f32 = 0.4;
const HUE_STRENGTH: f32 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Augmenter {
    pub policy: AugmentPolicy,
    /// Per-channel value written into CutOut holes (dataset mean).
    pub fill: Vec<f32>,
}

impl Augmenter {
    pub fn new(policy: AugmentPolicy, fill: Vec<f32>) -> Self {
        Self { policy, fill }
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &Image, rng: &mut R) -> Image {
        match self.policy {
            AugmentPolicy::None => image.clone(),
            AugmentPolicy::CropFlip => crop_flip(image, rng),
            AugmentPolicy::Cifar => {
                let mut out = crop_flip(image, rng);
                if out.channels == 3 {
                    if rng.random_bool(JITTER_PROBABILITY) {
                        color_jitter(&mut out, rng);
                    }
                    if rng.random_bool(GRAYSCALE_PROBABILITY) {
                        to_grayscale(&mut out);
                    }
                }
                cutout(&mut out, (image.height / 4).max(1), &self.fill, rng);
                out
            }
        }
    }
}

/// Zero-padded random crop back to the original size, then a coin-flip mirror.
pub fn crop_flip<R: Rng + ?Sized>(image: &Image, rng: &mut R) -> Image {
    let dr = rng.random_range(0..=2 * CROP_PADDING) as i64 - CROP_PADDING as i64;
    let dc = rng.random_range(0..=2 * CROP_PADDING) as i64 - CROP_PADDING as i64;
    let flip = rng.random_bool(0.5);
    let mut out = Image::filled(image.channels, image.height, image.width, 0.0);
    for c in 0..image.channels {
        for r in 0..image.height {
            let sr = r as i64 + dr;
            if sr < 0 || sr >= image.height as i64 {
                continue;
            }
            for col in 0..image.width {
                let dst = if flip { image.width - 1 - col } else { col };
                let sc = col as i64 + dc;
                if sc < 0 || sc >= image.width as i64 {
                    continue;
                }
                *out.at_mut(c, r, dst) = image.at(c, sr as usize, sc as usize);
            }
        }
    }
    out
}

fn luma(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, contrast, saturation and hue jitter on an RGB image.
fn color_jitter<R: Rng + ?Sized>(image: &mut Image, rng: &mut R) {
    let brightness = rng.random_range(1.0 - JITTER_STRENGTH..=1.0 + JITTER_STRENGTH);
    let contrast = rng.random_range(1.0 - JITTER_STRENGTH..=1.0 + JITTER_STRENGTH);
    let saturation = rng.random_range(1.0 - JITTER_STRENGTH..=1.0 + JITTER_STRENGTH);
    let hue = rng.random_range(-HUE_STRENGTH..=HUE_STRENGTH);
    let plane = image.plane();
    let (rs, rest) = image.data.split_at_mut(plane);
    let (gs, bs) = rest.split_at_mut(plane);
    let mean_luma = (0..plane).map(|p| luma(rs[p], gs[p], bs[p])).sum::<f32>() / plane as f32;
    for p in 0..plane {
        let mut px = [rs[p], gs[p], bs[p]];
        for v in px.iter_mut() {
            *v = (*v * brightness).clamp(0.0, 1.0);
        }
        for v in px.iter_mut() {
            *v = ((*v - mean_luma) * contrast + mean_luma).clamp(0.0, 1.0);
        }
        let gray = luma(px[0], px[1], px[2]);
        for v in px.iter_mut() {
            *v = ((*v - gray) * saturation + gray).clamp(0.0, 1.0);
        }
        let (h, s, v) = rgb_to_hsv(px);
        let [r, g, b] = hsv_to_rgb((h + hue).rem_euclid(1.0), s, v);
        rs[p] = r;
        gs[p] = g;
        bs[p] = b;
    }
}

fn to_grayscale(image: &mut Image) {
    let plane = image.plane();
    for p in 0..plane {
        let g = luma(image.data[p], image.data[plane + p], image.data[2 * plane + p]);
        for c in 0..3 {
            image.data[c * plane + p] = g;
        }
    }
}

/// Fills one square hole of side `size`, centered on a uniform pixel and clipped.
pub fn cutout<R: Rng + ?Sized>(image: &mut Image, size: usize, fill: &[f32], rng: &mut R) {
    let cr = rng.random_range(0..image.height);
    let cc = rng.random_range(0..image.width);
    let r0 = cr.saturating_sub(size / 2);
    let c0 = cc.saturating_sub(size / 2);
    let r1 = (cr + size - size / 2).min(image.height);
    let c1 = (cc + size - size / 2).min(image.width);
    for c in 0..image.channels {
        let value = fill.get(c).copied().unwrap_or(0.0);
        for r in r0..r1 {
            for col in c0..c1 {
                *image.at_mut(c, r, col) = value;
            }
        }
    }
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let f = |n: f32| {
        let k = (n + h * 6.0) % 6.0;
        v - v * s * k.min(4.0 - k).clamp(0.0, 1.0)
    };
    [f(5.0), f(3.0), f(1.0)]
}
