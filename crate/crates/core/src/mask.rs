//! Rectangular occlusion masks with exact area bookkeeping.
//!
//! A mask covers a box whose sides scale with `sqrt(a)`, `a ~ Beta(alpha, alpha)`,
//! so the nominal area fraction equals the draw. The box is clipped to the
//! image and the reported area fraction always comes from the clipped box.

use alloc::format;

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{invalid_param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskMode {
    /// Centered on the saliency peak.
    #[default]
    Saliency,
    /// Centered on the image center.
    Center,
    /// Centered on a uniformly drawn pixel.
    Random,
}

/// Half-open pixel box: rows `row_lo..row_hi`, columns `col_lo..col_hi`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MaskBox {
    pub row_lo: usize,
    pub col_lo: usize,
    pub row_hi: usize,
    pub col_hi: usize,
}

impl MaskBox {
    pub fn height(&self) -> usize {
        self.row_hi - self.row_lo
    }

    pub fn width(&self) -> usize {
        self.col_hi - self.col_lo
    }

    pub fn area(&self) -> usize {
        self.height() * self.width()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row_lo..self.row_hi).contains(&row) && (self.col_lo..self.col_hi).contains(&col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub height: usize,
    pub width: usize,
    /// `(row, col)` the box was centered on.
    pub center: (usize, usize),
    pub bbox: MaskBox,
    /// Clipped box area over image area.
    pub area_fraction: f64,
}

impl MaskSpec {
    /// An empty mask; `apply_mask` leaves the image untouched.
    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            center: (height / 2, width / 2),
            bbox: MaskBox::default(),
            area_fraction: 0.0,
        }
    }

    /// Box with nominal side lengths centered at `center`, clipped to the image.
    pub fn from_sides(
        height: usize,
        width: usize,
        center: (usize, usize),
        box_height: usize,
        box_width: usize,
    ) -> Self {
        let (row_lo, row_hi) = clip_span(center.0, box_height, height);
        let (col_lo, col_hi) = clip_span(center.1, box_width, width);
        let bbox = MaskBox {
            row_lo,
            col_lo,
            row_hi,
            col_hi,
        };
        Self {
            height,
            width,
            center,
            bbox,
            area_fraction: bbox.area() as f64 / (height * width) as f64,
        }
    }

    /// Box for a given Beta draw `a`: sides `round(H * sqrt(a))` by `round(W * sqrt(a))`.
    pub fn from_draw(height: usize, width: usize, center: (usize, usize), draw: f64) -> Self {
        let scale = libm::sqrt(draw.clamp(0.0, 1.0));
        let box_height = libm::round(height as f64 * scale) as usize;
        let box_width = libm::round(width as f64 * scale) as usize;
        Self::from_sides(height, width, center, box_height, box_width)
    }

    pub fn masked_pixels(&self) -> usize {
        self.bbox.area()
    }

    /// Shrinks the box around its center until `area_fraction <= cap`.
    pub fn clamp_area(self, cap: f64) -> Self {
        let limit = libm::floor(cap * (self.height * self.width) as f64 + 1e-9) as usize;
        if self.masked_pixels() <= limit {
            return self;
        }
        let mut box_height = self.bbox.height();
        let mut box_width = self.bbox.width();
        let scale = libm::sqrt(limit as f64 / self.masked_pixels() as f64);
        box_height = (libm::floor(box_height as f64 * scale) as usize).min(box_height);
        box_width = (libm::floor(box_width as f64 * scale) as usize).min(box_width);
        loop {
            let spec = Self::from_sides(self.height, self.width, self.center, box_height, box_width);
            if spec.masked_pixels() <= limit {
                return spec;
            }
            if box_height >= box_width {
                box_height -= 1;
            } else {
                box_width -= 1;
            }
        }
    }
}

/// `[center - len/2, center - len/2 + len)` intersected with `[0, extent)`.
fn clip_span(center: usize, len: usize, extent: usize) -> (usize, usize) {
    let lo = center as i64 - (len / 2) as i64;
    let hi = lo + len as i64;
    let lo = lo.clamp(0, extent as i64) as usize;
    let hi = hi.clamp(0, extent as i64) as usize;
    (lo, hi.max(lo))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskParams {
    /// Beta(alpha, alpha) parameter for the area draw.
    pub alpha: f64,
    /// Largest admissible area fraction. Draws at or above it are redrawn once, then clamped.
    pub area_cap: f64,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            area_cap: 0.9,
        }
    }
}

impl MaskParams {
    /// The Beta(alpha, alpha) law of the nominal area draw.
    pub fn area_distribution(&self) -> Result<Beta<f64>> {
        Beta::new(self.alpha, self.alpha).map_err(|e| invalid_param("alpha", format!("{e}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(invalid_param("alpha", format!("must be positive, got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.area_cap) {
            return Err(invalid_param(
                "area_cap",
                format!("must lie in [0, 1], got {}", self.area_cap),
            ));
        }
        Ok(())
    }
}

/// Draws a mask for an `height x width` image.
///
/// `peak` is the saliency argmax; in saliency mode a missing peak (degenerate
/// saliency map) falls back to center masking. Random mode draws the area
/// first, then the center row and column.
pub fn make_mask<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    peak: Option<(usize, usize)>,
    mode: MaskMode,
    params: &MaskParams,
    rng: &mut R,
) -> Result<MaskSpec> {
    params.validate()?;
    if height == 0 || width == 0 {
        return Err(invalid_param("shape", "image must have positive extent"));
    }
    let beta = params.area_distribution()?;
    let draw = beta.sample(rng);
    let image_center = (height / 2, width / 2);
    let center = match (mode, peak) {
        (MaskMode::Saliency, Some(p)) => p,
        (MaskMode::Saliency, None) | (MaskMode::Center, _) => image_center,
        (MaskMode::Random, _) => (rng.random_range(0..height), rng.random_range(0..width)),
    };
    let mut spec = MaskSpec::from_draw(height, width, center, draw);
    if spec.area_fraction >= params.area_cap {
        spec = MaskSpec::from_draw(height, width, center, beta.sample(rng));
        if spec.area_fraction >= params.area_cap {
            spec = spec.clamp_area(params.area_cap);
        }
    }
    Ok(spec)
}

/// Replaces every pixel inside the mask box by the per-channel `fill` value.
///
/// `image` is planar CHW with `fill.len()` channels.
pub fn apply_mask(image: &mut [f32], spec: &MaskSpec, fill: &[f32]) {
    let plane = spec.height * spec.width;
    debug_assert_eq!(image.len(), plane * fill.len());
    let b = spec.bbox;
    for (c, &value) in fill.iter().enumerate() {
        let channel = &mut image[c * plane..(c + 1) * plane];
        for row in b.row_lo..b.row_hi {
            channel[row * spec.width + b.col_lo..row * spec.width + b.col_hi].fill(value);
        }
    }
}
