//! Per-source view assembly for one training step.
//!
//! Every source contributes either two views `[x1, x2]` (source-only phase)
//! or five views `[x1, x2, t1, t2, xm]`, where `t*` are views of a target
//! drawn from the minor-weighted distribution and `xm` is a masked third
//! view of the source. Rows are laid out source-major: row `s * V + v`.

use rand::Rng;
use smcl_core::{
    apply_mask, make_mask, sample_target, ClassIndex, FillPolicy, MaskMode, MaskParams, MaskSpec,
    MinorWeightedDistribution,
};

use crate::augment::Augmenter;
use crate::dataset::{Image, ImageSet, Normalization};
use crate::error::{contract, Result};
use crate::saliency::saliency_peak;

pub const SOURCE_VIEWS: usize = 2;
pub const MIXED_VIEWS: usize = 5;
/// Index of the masked view within a five-view group.
pub const MASKED_VIEW: usize = 4;

/// The views of one source sample.
#[derive(Debug, Clone)]
pub struct ViewSet {
    /// Un-normalized views, values in `[0, 1]`.
    pub views: Vec<Image>,
    pub source_label: u32,
    /// Label of the drawn target; equals `source_label` for two-view sets.
    pub target_label: u32,
    /// Masked-area fraction of the last view; 0 when no mask was applied.
    pub area: f64,
    pub mask: Option<MaskSpec>,
}

impl ViewSet {
    pub fn is_mixed(&self) -> bool {
        self.views.len() == MIXED_VIEWS
    }
}

/// A batch ready for the network: normalized pixels plus per-source labels.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `(sources * views_per_source, C, H, W)` row-major.
    pub pixels: Vec<f32>,
    pub views_per_source: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub source_labels: Vec<u32>,
    pub target_labels: Vec<u32>,
    pub areas: Vec<f64>,
}

impl Batch {
    pub fn num_sources(&self) -> usize {
        self.source_labels.len()
    }

    pub fn num_rows(&self) -> usize {
        self.num_sources() * self.views_per_source
    }

    pub fn is_mixed(&self) -> bool {
        self.views_per_source == MIXED_VIEWS
    }

    pub fn mean_area(&self) -> f64 {
        if self.areas.is_empty() {
            0.0
        } else {
            self.areas.iter().sum::<f64>() / self.areas.len() as f64
        }
    }

    /// Stacks view sets after normalizing every view.
    pub fn from_view_sets(sets: &[ViewSet], norm: &Normalization) -> Result<Self> {
        let first = sets
            .first()
            .and_then(|s| s.views.first())
            .ok_or_else(|| contract("batch must contain at least one view"))?;
        let (channels, height, width) = (first.channels, first.height, first.width);
        let views_per_source = sets[0].views.len();
        let mut pixels = Vec::with_capacity(sets.len() * views_per_source * channels * height * width);
        for set in sets {
            if set.views.len() != views_per_source {
                return Err(contract("view sets in a batch must have the same view count"));
            }
            for view in &set.views {
                if (view.channels, view.height, view.width) != (channels, height, width) {
                    return Err(contract(format!(
                        "view shape {}x{}x{} differs from {channels}x{height}x{width}",
                        view.channels, view.height, view.width
                    )));
                }
                pixels.extend(norm.apply(view));
            }
        }
        Ok(Self {
            pixels,
            views_per_source,
            channels,
            height,
            width,
            source_labels: sets.iter().map(|s| s.source_label).collect(),
            target_labels: sets.iter().map(|s| s.target_label).collect(),
            areas: sets.iter().map(|s| s.area).collect(),
        })
    }
}

/// Random streams consumed while assembling a batch.
pub struct ViewRngs<'a, R: Rng + ?Sized> {
    pub augment: &'a mut R,
    pub target: &'a mut R,
    pub masking: &'a mut R,
}

/// Everything needed to turn source indices into view sets.
pub struct ViewBuilder<'a> {
    pub data: &'a ImageSet,
    pub class_index: &'a ClassIndex,
    pub target_dist: &'a MinorWeightedDistribution,
    pub augmenter: &'a Augmenter,
    pub mask_mode: MaskMode,
    pub mask_params: MaskParams,
    /// Per-channel value written into the masked box, in pixel space.
    pub fill: Vec<f32>,
}

/// Mask fill in pixel space for a fill policy.
pub fn fill_values(policy: FillPolicy, norm: &Normalization) -> Vec<f32> {
    match policy {
        FillPolicy::Mean => norm.mean.clone(),
        FillPolicy::Zero => vec![0.0; norm.mean.len()],
    }
}

impl ViewBuilder<'_> {
    /// Two augmented views of the source only.
    pub fn source_views<R: Rng + ?Sized>(&self, index: usize, rng: &mut R) -> ViewSet {
        let image = self.data.image(index);
        let label = self.data.label(index);
        ViewSet {
            views: vec![self.augmenter.apply(&image, rng), self.augmenter.apply(&image, rng)],
            source_label: label,
            target_label: label,
            area: 0.0,
            mask: None,
        }
    }

    /// Five views. With `masked == false` the third source view is left
    /// intact and the area is 0.
    pub fn mixed_views<R: Rng + ?Sized>(
        &self,
        index: usize,
        masked: bool,
        rngs: &mut ViewRngs<'_, R>,
    ) -> Result<ViewSet> {
        let image = self.data.image(index);
        let label = self.data.label(index);
        let x1 = self.augmenter.apply(&image, rngs.augment);
        let x2 = self.augmenter.apply(&image, rngs.augment);
        let draw = sample_target(self.target_dist, self.class_index, rngs.target)?;
        let target = self.data.image(draw.index);
        let t1 = self.augmenter.apply(&target, rngs.augment);
        let t2 = self.augmenter.apply(&target, rngs.augment);
        let mut xm = self.augmenter.apply(&image, rngs.augment);
        let mut mask = None;
        let mut area = 0.0;
        if masked {
            let peak = match self.mask_mode {
                MaskMode::Saliency => saliency_peak(&xm).center(),
                _ => None,
            };
            let spec = make_mask(
                xm.height,
                xm.width,
                peak,
                self.mask_mode,
                &self.mask_params,
                rngs.masking,
            )?;
            apply_mask(&mut xm.data, &spec, &self.fill);
            area = spec.area_fraction;
            mask = Some(spec);
        }
        Ok(ViewSet {
            views: vec![x1, x2, t1, t2, xm],
            source_label: label,
            target_label: self.data.label(draw.index),
            area,
            mask,
        })
    }

    /// View sets for a whole step.
    pub fn assemble<R: Rng + ?Sized>(
        &self,
        sources: &[usize],
        five_views: bool,
        masked: bool,
        rngs: &mut ViewRngs<'_, R>,
    ) -> Result<Vec<ViewSet>> {
        sources
            .iter()
            .map(|&i| {
                if five_views {
                    self.mixed_views(i, masked, rngs)
                } else {
                    Ok(self.source_views(i, rngs.augment))
                }
            })
            .collect()
    }
}
