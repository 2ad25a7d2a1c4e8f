//! Labeled image sets: in-memory storage, CIFAR and directory ingestion, and
//! the on-disk format written by `smcl build-data`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use sha2::{Digest, Sha256};
use smcl_core::{build_longtail, ClassHistogram, LongTailSpec};

use crate::error::{contract, Error, IoContext, Result};

/// A single image, planar CHW, values in `[0, 1]` before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(contract(format!(
                "image buffer has {} values, expected {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn at(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[c * self.plane() + row * self.width + col]
    }

    pub fn at_mut(&mut self, c: usize, row: usize, col: usize) -> &mut f32 {
        let plane = self.plane();
        &mut self.data[c * plane + row * self.width + col]
    }

    /// Luma for RGB, channel mean otherwise.
    pub fn grayscale(&self) -> Vec<f32> {
        let plane = self.plane();
        if self.channels == 3 {
            (0..plane)
                .map(|p| {
                    0.299 * self.data[p] + 0.587 * self.data[plane + p] + 0.114 * self.data[2 * plane + p]
                })
                .collect()
        } else {
            (0..plane)
                .map(|p| {
                    (0..self.channels).map(|c| self.data[c * plane + p]).sum::<f32>()
                        / self.channels as f32
                })
                .collect()
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        image::RgbImage::from_fn(self.width as u32, self.height as u32, |x, y| {
            let px = |c: usize| {
                let c = c.min(self.channels - 1);
                (self.at(c, y as usize, x as usize).clamp(0.0, 1.0) * 255.0).round() as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }
}

/// Per-channel mean and standard deviation used to normalize network inputs.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    pub fn identity(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn apply(&self, image: &Image) -> Vec<f32> {
        let plane = image.plane();
        image
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let c = i / plane;
                (v - self.mean[c]) / self.std[c]
            })
            .collect()
    }
}

const MAGIC: &[u8; 8] = b"SMCLDATA";
const VERSION: u32 = 1;

/// A labeled image collection stored as 8-bit planar CHW pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSet {
    channels: usize,
    height: usize,
    width: usize,
    num_classes: usize,
    pixels: Vec<u8>,
    labels: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl ImageSet {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        num_classes: usize,
        pixels: Vec<u8>,
        labels: Vec<u32>,
    ) -> Result<Self> {
        let per_image = channels * height * width;
        if per_image == 0 {
            return Err(contract("images must have positive extent"));
        }
        if pixels.len() != per_image * labels.len() {
            return Err(contract(format!(
                "{} pixel bytes for {} images of {per_image} values",
                pixels.len(),
                labels.len()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(contract(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            num_classes,
            pixels,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> u32 {
        self.labels[i]
    }

    fn per_image(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn raw(&self, i: usize) -> &[u8] {
        let n = self.per_image();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn image(&self, i: usize) -> Image {
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.raw(i).iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut pixels = Vec::with_capacity(indices.len() * self.per_image());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            pixels.extend_from_slice(self.raw(i));
            labels.push(self.labels[i]);
        }
        Self {
            pixels,
            labels,
            ..*self
        }
    }

    pub fn histogram(&self) -> Result<ClassHistogram> {
        Ok(ClassHistogram::from_labels(
            self.labels.iter().map(|&l| l as usize),
            self.num_classes,
        )?)
    }

    /// Long-tailed subset of this (balanced) set.
    pub fn longtail<R: Rng + ?Sized>(
        &self,
        spec: &LongTailSpec,
        rng: &mut R,
    ) -> Result<(Self, ClassHistogram)> {
        if spec.num_classes != self.num_classes {
            return Err(contract(format!(
                "spec has {} classes, dataset has {}",
                spec.num_classes, self.num_classes
            )));
        }
        let subset = build_longtail(&self.labels, spec, rng)?;
        Ok((self.subset(&subset.indices), subset.histogram))
    }

    /// Per-channel mean and standard deviation over all pixels, in `[0, 1]` units.
    pub fn normalization(&self) -> Normalization {
        let plane = self.height * self.width;
        let mut sum = vec![0f64; self.channels];
        let mut sq = vec![0f64; self.channels];
        for i in 0..self.len() {
            for (c, chunk) in self.raw(i).chunks_exact(plane).enumerate() {
                for &v in chunk {
                    let v = v as f64 / 255.0;
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let count = (self.len() * plane).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / count).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| ((s / count - m * m).max(0.0).sqrt()).max(1e-3) as f32)
            .collect();
        Normalization {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        }
    }

    /// SHA-256 over shape, labels and pixels.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for v in [self.channels, self.height, self.width, self.num_classes, self.len()] {
            hasher.update((v as u64).to_le_bytes());
        }
        for l in &self.labels {
            hasher.update(l.to_le_bytes());
        }
        hasher.update(&self.pixels);
        hex(&hasher.finalize())
    }

    /// `{class_index: count}` for audit reports.
    pub fn histogram_report(hist: &ClassHistogram) -> BTreeMap<String, usize> {
        hist.counts()
            .iter()
            .enumerate()
            .map(|(k, &n)| (k.to_string(), n))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::with_capacity(48 + self.labels.len() * 4 + self.pixels.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for v in [self.channels, self.height, self.width, self.num_classes] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out.extend_from_slice(&self.pixels);
        let mut file = fs::File::create(path).at(path)?;
        file.write_all(&out).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path).at(path)?.read_to_end(&mut bytes).at(path)?;
        let bad = |reason: &str| Error::Format {
            what: "dataset file",
            reason: format!("{}: {reason}", path.display()),
        };
        if bytes.len() < 36 || &bytes[..8] != MAGIC {
            return Err(bad("missing header"));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        if u32_at(8) != VERSION {
            return Err(bad("unsupported version"));
        }
        let (channels, height, width, num_classes) = (
            u32_at(12) as usize,
            u32_at(16) as usize,
            u32_at(20) as usize,
            u32_at(24) as usize,
        );
        let n = u64::from_le_bytes(bytes[28..36].try_into().unwrap()) as usize;
        let labels_end = 36 + 4 * n;
        if bytes.len() != labels_end + n * channels * height * width {
            return Err(bad("truncated payload"));
        }
        let labels = (0..n).map(|i| u32_at(36 + 4 * i)).collect();
        let pixels = bytes[labels_end..].to_vec();
        Self::new(channels, height, width, num_classes, pixels, labels)
    }

    /// Reads the CIFAR binary layout (`cifar-10-batches-bin` or `cifar-100-binary`).
    pub fn load_cifar(dir: &Path, variant: CifarVariant, split: Split) -> Result<Self> {
        let (files, label_bytes, num_classes): (Vec<&str>, usize, usize) = match (variant, split) {
            (CifarVariant::Cifar10, Split::Train) => (
                vec![
                    "data_batch_1.bin",
                    "data_batch_2.bin",
                    "data_batch_3.bin",
                    "data_batch_4.bin",
                    "data_batch_5.bin",
                ],
                1,
                10,
            ),
            (CifarVariant::Cifar10, Split::Test) => (vec!["test_batch.bin"], 1, 10),
            (CifarVariant::Cifar100, Split::Train) => (vec!["train.bin"], 2, 100),
            (CifarVariant::Cifar100, Split::Test) => (vec!["test.bin"], 2, 100),
        };
        let record = label_bytes + 3072;
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for name in files {
            let path = dir.join(name);
            let bytes = fs::read(&path).at(&path)?;
            if bytes.len() % record != 0 {
                return Err(Error::Format {
                    what: "CIFAR batch",
                    reason: format!("{} is not a whole number of records", path.display()),
                });
            }
            for rec in bytes.chunks_exact(record) {
                // CIFAR-100 records carry (coarse, fine); the fine label is last.
                labels.push(rec[label_bytes - 1] as u32);
                pixels.extend_from_slice(&rec[label_bytes..]);
            }
        }
        Self::new(3, 32, 32, num_classes, pixels, labels)
    }

    /// Reads a directory with one sub-directory per class (sorted by name).
    ///
    /// All images must share one size; they are stored as RGB.
    pub fn load_class_dirs(root: &Path) -> Result<(Self, Vec<String>)> {
        let mut classes: Vec<_> = fs::read_dir(root)
            .at(root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_dir())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .collect();
        classes.sort();
        if classes.is_empty() {
            return Err(Error::Format {
                what: "class directory tree",
                reason: format!("{} has no class sub-directories", root.display()),
            });
        }
        let mut shape: Option<(u32, u32)> = None;
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (k, class) in classes.iter().enumerate() {
            let dir = root.join(class);
            let mut files: Vec<_> = fs::read_dir(&dir)
                .at(&dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            files.sort();
            for file in files {
                let img = image::open(&file)?.to_rgb8();
                let dims = img.dimensions();
                match shape {
                    None => shape = Some(dims),
                    Some(s) if s != dims => {
                        return Err(Error::Format {
                            what: "class directory tree",
                            reason: format!(
                                "{} is {}x{}, expected {}x{}",
                                file.display(),
                                dims.0,
                                dims.1,
                                s.0,
                                s.1
                            ),
                        })
                    }
                    _ => {}
                }
                for c in 0..3 {
                    pixels.extend(img.pixels().map(|p| p.0[c]));
                }
                labels.push(k as u32);
            }
        }
        let (w, h) = shape.unwrap_or((1, 1));
        let set = Self::new(3, h as usize, w as usize, classes.len(), pixels, labels)?;
        Ok((set, classes))
    }

    /// Procedural dataset: a class-colored square on a noisy background.
    ///
    /// The square's hue encodes the class; position and background vary per
    /// sample. Used for smoke runs and tests.
    pub fn synthetic<R: Rng + ?Sized>(
        num_classes: usize,
        per_class: &[usize],
        size: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if per_class.len() != num_classes {
            return Err(contract("per_class must list one count per class"));
        }
        let plane = size * size;
        let side = (size / 3).max(1);
        let mut pixels = Vec::new();
        let mut labels = Vec::new();
        for (k, &count) in per_class.iter().enumerate() {
            let color = hue_to_rgb(k as f32 / num_classes as f32);
            for _ in 0..count {
                let mut img = vec![0u8; 3 * plane];
                let base: f32 = rng.random_range(0.15..0.45);
                for v in img.iter_mut() {
                    *v = ((base + rng.random_range(-0.08..0.08)) * 255.0) as u8;
                }
                let r0 = rng.random_range(0..=size - side);
                let c0 = rng.random_range(0..=size - side);
                for (c, &value) in color.iter().enumerate() {
                    for row in r0..r0 + side {
                        for col in c0..c0 + side {
                            let jitter: f32 = rng.random_range(-0.05..0.05);
                            img[c * plane + row * size + col] =
                                ((value + jitter).clamp(0.0, 1.0) * 255.0) as u8;
                        }
                    }
                }
                pixels.extend_from_slice(&img);
                labels.push(k as u32);
            }
        }
        Self::new(3, size, size, num_classes, pixels, labels)
    }
}

fn hue_to_rgb(h: f32) -> [f32; 3] {
    let f = |n: f32| {
        let k = (n + h * 6.0) % 6.0;
        1.0 - (k.min(4.0 - k).clamp(0.0, 1.0))
    };
    [f(5.0), f(3.0), f(1.0)]
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
