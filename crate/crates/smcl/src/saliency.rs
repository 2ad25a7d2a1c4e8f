//! Training-free spectral-residual saliency.
//!
//! The log-amplitude spectrum of the grayscale image minus its local (3x3)
//! average is recombined with the original phase, transformed back, squared
//! and Gaussian-smoothed.

use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dataset::Image;
use crate::error::Result;

/// Non-negative saliency scores, row-major `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

/// Argmax of a saliency map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaliencyPeak {
    pub row: usize,
    pub col: usize,
    /// The map carried no information (constant input); callers fall back
    /// to center masking.
    pub degenerate: bool,
}

impl SaliencyPeak {
    /// `Some((row, col))` unless degenerate.
    pub fn center(&self) -> Option<(usize, usize)> {
        (!self.degenerate).then_some((self.row, self.col))
    }
}

impl SaliencyMap {
    /// Largest value; ties go to the smallest row, then the smallest column.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.width, best % self.width)
    }

    /// Writes the map as an 8-bit grayscale PNG, min-max scaled.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let img = image::GrayImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let v = self.values[y as usize * self.width + x as usize];
            image::Luma([(((v - lo) / span) * 255.0).round() as u8])
        });
        img.save(path)?;
        Ok(())
    }
}

fn fft2(data: &mut [Complex<f64>], height: usize, width: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(width), planner.plan_fft_inverse(height))
    } else {
        (planner.plan_fft_forward(width), planner.plan_fft_forward(height))
    };
    for row in data.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let mut column = vec![Complex::new(0.0, 0.0); height];
    for c in 0..width {
        for r in 0..height {
            column[r] = data[r * width + c];
        }
        col_fft.process(&mut column);
        for r in 0..height {
            data[r * width + c] = column[r];
        }
    }
    if inverse {
        let scale = 1.0 / (height * width) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|k| k / sum).collect()
}

/// Separable zero-padded convolution.
fn smooth(values: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    let pass = |src: &[f64], along_rows: bool| {
        let mut out = vec![0.0; src.len()];
        for r in 0..height {
            for c in 0..width {
                let mut acc = 0.0;
                for (t, k) in kernel.iter().enumerate() {
                    let d = t as i64 - radius;
                    let (rr, cc) = if along_rows {
                        (r as i64, c as i64 + d)
                    } else {
                        (r as i64 + d, c as i64)
                    };
                    if rr >= 0 && rr < height as i64 && cc >= 0 && cc < width as i64 {
                        acc += k * src[rr as usize * width + cc as usize];
                    }
                }
                out[r * width + c] = acc;
            }
        }
        out
    };
    let horizontal = pass(values, true);
    pass(&horizontal, false)
}

/// Spectral-residual saliency of `image`.
pub fn spectral_residual(image: &Image) -> SaliencyMap {
    let (height, width) = (image.height, image.width);
    let gray = image.grayscale();
    let lo = gray.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = gray.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if !(hi > lo) {
        return SaliencyMap {
            height,
            width,
            values: vec![0.0; height * width],
        };
    }

    let mut spectrum: Vec<Complex<f64>> =
        gray.iter().map(|&v| Complex::new(v as f64, 0.0)).collect();
    fft2(&mut spectrum, height, width, false);

    let log_amp: Vec<f64> = spectrum.iter().map(|z| z.norm().max(1e-12).ln()).collect();
    let mut residual = vec![0.0; height * width];
    for r in 0..height {
        for c in 0..width {
            let mut acc = 0.0;
            for dr in [height - 1, 0, 1] {
                for dc in [width - 1, 0, 1] {
                    acc += log_amp[((r + dr) % height) * width + (c + dc) % width];
                }
            }
            residual[r * width + c] = log_amp[r * width + c] - acc / 9.0;
        }
    }

    let mut recombined: Vec<Complex<f64>> = spectrum
        .iter()
        .zip(&residual)
        .map(|(z, &res)| Complex::from_polar(res.exp(), z.arg()))
        .collect();
    fft2(&mut recombined, height, width, true);
    let energy: Vec<f64> = recombined.iter().map(|z| z.norm_sqr()).collect();

    let sigma = (height.max(width) as f64 / 16.0).max(1.0);
    SaliencyMap {
        height,
        width,
        values: smooth(&energy, height, width, sigma),
    }
}

/// Most salient pixel of `image`.
///
/// A constant image yields `(0, 0)` flagged degenerate.
pub fn saliency_peak(image: &Image) -> SaliencyPeak {
    let map = spectral_residual(image);
    let (row, col) = map.argmax();
    let max = map.values[row * map.width + col];
    let min = map.values.iter().copied().fold(f64::INFINITY, f64::min);
    SaliencyPeak {
        row,
        col,
        degenerate: !(max > min) || !max.is_finite(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_bright_pixel() {
        let mut img = Image::filled(3, 16, 20, 0.0);
        for c in 0..3 {
            *img.at_mut(c, 5, 7) = 1.0;
        }
        let peak = saliency_peak(&img);
        assert_eq!((peak.row, peak.col), (5, 7));
        assert!(!peak.degenerate);
    }

    #[test]
    fn constant_image_is_degenerate() {
        let img = Image::filled(3, 12, 12, 0.4);
        let peak = saliency_peak(&img);
        assert_eq!((peak.row, peak.col), (0, 0));
        assert!(peak.degenerate);
        assert_eq!(peak.center(), None);
        assert!(spectral_residual(&img).values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn argmax_tie_rule() {
        let map = SaliencyMap {
            height: 2,
            width: 3,
            values: vec![0.0, 1.0, 0.0, 1.0, 0.0, 1.0],
        };
        assert_eq!(map.argmax(), (0, 1));
    }

    #[test]
    fn map_is_non_negative_and_shaped() {
        let img = Image::new(1, 5, 7, (0..35).map(|i| (i * 37 % 11) as f32 / 10.0).collect()).unwrap();
        let map = spectral_residual(&img);
        assert_eq!((map.height, map.width, map.values.len()), (5, 7, 35));
        assert!(map.values.iter().all(|&v| v >= 0.0));
    }
}
