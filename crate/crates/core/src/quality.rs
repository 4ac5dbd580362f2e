//! Per-image quality features and pooled per-dataset statistics.

use crate::real::Real;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from image plumbing and quality statistics.
#[derive(Debug, Error)]
pub enum QualityError {
    #[error("image buffer holds {got} bytes, {width}x{height} RGB needs {expected}")]
    BufferMismatch {
        width: u32,
        height: u32,
        expected: usize,
        got: usize,
    },
    #[error("image dimensions {width}x{height} are empty")]
    EmptyImage { width: u32, height: u32 },
    #[error("image {width}x{height} is smaller than the 3x3 Laplacian window")]
    TooSmall { width: u32, height: u32 },
    #[error("crop [{x0}, {x1}) x [{y0}, {y1}) is empty or outside {width}x{height}")]
    BadCrop {
        x0: u32,
        y0: u32,
        x1: u32,
        y1: u32,
        width: u32,
        height: u32,
    },
    #[error("statistics need at least one record")]
    NoRecords,
    #[error("dataset group `{dataset}` has no records")]
    EmptyGroup { dataset: String },
}

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RgbImage {
    /// Wraps a row-major RGB buffer, checking dimensions and length.
    pub fn new(width: u32, height: u32, data: Vec<u8>) -> Result<Self, QualityError> {
        if width == 0 || height == 0 {
            return Err(QualityError::EmptyImage { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if data.len() != expected {
            return Err(QualityError::BufferMismatch {
                width,
                height,
                expected,
                got: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds an image by evaluating `f(x, y) -> (r, g, b)` per pixel.
    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> (u8, u8, u8)) -> Self {
        assert!(width > 0 && height > 0, "from_fn needs non-empty dimensions");
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                let (r, g, b) = f(x, y);
                data.extend_from_slice(&[r, g, b]);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// Constant-colour image.
    pub fn solid(width: u32, height: u32, rgb: (u8, u8, u8)) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    /// Raw row-major RGB bytes.
    pub fn data(&self) -> &[u8] {
        &self.data
    }

    /// The pixel at `(x, y)` as `[r, g, b]`.
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Copies the half-open box `[x0, x1) x [y0, y1)` into a new image.
    pub fn crop(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> Result<RgbImage, QualityError> {
        if x0 >= x1 || y0 >= y1 || x1 > self.width || y1 > self.height {
            return Err(QualityError::BadCrop {
                x0,
                y0,
                x1,
                y1,
                width: self.width,
                height: self.height,
            });
        }
        let out = RgbImage::from_fn(x1 - x0, y1 - y0, |x, y| {
            let [r, g, b] = self.pixel(x0 + x, y0 + y);
            (r, g, b)
        });
        Ok(out)
    }
}

/// Number of pixels in the image.
pub fn resolution(image: &RgbImage) -> u64 {
    u64::from(image.width) * u64::from(image.height)
}

/// Brightness formula used by [`luminosity_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BrightnessFormula {
    /// `sqrt(0.299 R^2 + 0.587 G^2 + 0.114 B^2) / 255` per pixel.
    #[default]
    PerceivedSqrt,
    /// Plain BT.601 luma `(0.299 R + 0.587 G + 0.114 B) / 255` per pixel.
    Luma601,
}

/// Mean perceived brightness in `[0, 1]` using the default formula.
pub fn luminosity<F: Real>(image: &RgbImage) -> F {
    luminosity_with(image, BrightnessFormula::PerceivedSqrt)
}

/// Mean per-pixel brightness in `[0, 1]` under the chosen formula.
pub fn luminosity_with<F: Real>(image: &RgbImage, formula: BrightnessFormula) -> F {
    let (wr, wg, wb) = (F::cast(0.299), F::cast(0.587), F::cast(0.114));
    let mut sum = F::zero();
    for chunk in image.data.chunks_exact(3) {
        let r = F::cast(f64::from(chunk[0]));
        let g = F::cast(f64::from(chunk[1]));
        let b = F::cast(f64::from(chunk[2]));
        sum += match formula {
            BrightnessFormula::PerceivedSqrt => (wr * r * r + wg * g * g + wb * b * b).sqrt(),
            BrightnessFormula::Luma601 => wr * r + wg * g + wb * b,
        };
    }
    let count = F::cast(resolution(image) as f64);
    let value = sum / (count * F::cast(255.0));
    value.min(F::one()).max(F::zero())
}

/// BT.601 grayscale plane: `0.299 R + 0.587 G + 0.114 B` per pixel.
fn grayscale<F: Real>(image: &RgbImage) -> Vec<F> {
    let (wr, wg, wb) = (F::cast(0.299), F::cast(0.587), F::cast(0.114));
    image
        .data
        .chunks_exact(3)
        .map(|chunk| {
            wr * F::cast(f64::from(chunk[0]))
                + wg * F::cast(f64::from(chunk[1]))
                + wb * F::cast(f64::from(chunk[2]))
        })
        .collect()
}

/// Sharpness proxy: population variance of the valid-mode 3x3 Laplacian
/// (kernel `[[0,1,0],[1,-4,1],[0,1,0]]`) over the BT.601 grayscale plane.
///
/// Needs at least a 3x3 image; a constant image scores exactly zero.
pub fn blurriness<F: Real>(image: &RgbImage) -> Result<F, QualityError> {
    if image.width < 3 || image.height < 3 {
        return Err(QualityError::TooSmall {
            width: image.width,
            height: image.height,
        });
    }
    let gray = grayscale::<F>(image);
    let w = image.width as usize;
    let h = image.height as usize;
    let four = F::cast(4.0);
    let mut responses = Vec::with_capacity((w - 2) * (h - 2));
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let north = gray[(y - 1) * w + x];
            let south = gray[(y + 1) * w + x];
            let west = gray[y * w + x - 1];
            let east = gray[y * w + x + 1];
            let center = gray[y * w + x];
            responses.push(north + south + west + east - four * center);
        }
    }
    let count = F::cast(responses.len() as f64);
    let mean = responses.iter().copied().sum::<F>() / count;
    let variance = responses
        .iter()
        .map(|&r| (r - mean) * (r - mean))
        .sum::<F>()
        / count;
    Ok(variance)
}

/// Quality features of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityRecord {
    pub image_id: String,
    pub resolution: u64,
    pub luminosity: f64,
    pub blurriness: f64,
}

/// Computes all three features for one image.
pub fn quality_record(image_id: impl Into<String>, image: &RgbImage) -> Result<QualityRecord, QualityError> {
    Ok(QualityRecord {
        image_id: image_id.into(),
        resolution: resolution(image),
        luminosity: luminosity(image),
        blurriness: blurriness(image)?,
    })
}

/// The records of one dataset, named by the dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityGroup {
    pub dataset: String,
    pub records: Vec<QualityRecord>,
}

/// Mean and population standard deviation of normalized feature values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub mean: f64,
    pub std: f64,
}

/// Pooled minimum and maximum used for min-max normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

/// Normalized feature statistics for one dataset group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub dataset: String,
    pub resolution: FeatureStats,
    pub luminosity: FeatureStats,
    pub blurriness: FeatureStats,
}

/// Cross-dataset quality statistics: per-group stats plus the pooled ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetQualityStats {
    pub groups: Vec<GroupStats>,
    pub resolution_range: FeatureRange,
    pub luminosity_range: FeatureRange,
    pub blurriness_range: FeatureRange,
}

fn pooled_range(groups: &[QualityGroup], value: impl Fn(&QualityRecord) -> f64) -> FeatureRange {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for group in groups {
        for record in &group.records {
            let v = value(record);
            min = min.min(v);
            max = max.max(v);
        }
    }
    FeatureRange { min, max }
}

fn normalized_stats(
    records: &[QualityRecord],
    range: FeatureRange,
    value: impl Fn(&QualityRecord) -> f64,
) -> FeatureStats {
    let span = range.max - range.min;
    let normalized: Vec<f64> = records
        .iter()
        .map(|r| {
            if span == 0.0 {
                0.0
            } else {
                (value(r) - range.min) / span
            }
        })
        .collect();
    let count = normalized.len() as f64;
    let mean = normalized.iter().sum::<f64>() / count;
    let variance = normalized.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / count;
    FeatureStats {
        mean,
        std: variance.sqrt(),
    }
}

/// Min-max-normalizes each feature over the pooled records of every group,
/// then reports each group's mean and population standard deviation.
///
/// A pooled span of zero (all values equal) normalizes to all zeros.
pub fn dataset_stats(groups: &[QualityGroup]) -> Result<DatasetQualityStats, QualityError> {
    if groups.iter().map(|g| g.records.len()).sum::<usize>() == 0 {
        return Err(QualityError::NoRecords);
    }
    if let Some(empty) = groups.iter().find(|g| g.records.is_empty()) {
        return Err(QualityError::EmptyGroup {
            dataset: empty.dataset.clone(),
        });
    }
    let resolution_range = pooled_range(groups, |r| r.resolution as f64);
    let luminosity_range = pooled_range(groups, |r| r.luminosity);
    let blurriness_range = pooled_range(groups, |r| r.blurriness);
    let group_stats = groups
        .iter()
        .map(|group| GroupStats {
            dataset: group.dataset.clone(),
            resolution: normalized_stats(&group.records, resolution_range, |r| r.resolution as f64),
            luminosity: normalized_stats(&group.records, luminosity_range, |r| r.luminosity),
            blurriness: normalized_stats(&group.records, blurriness_range, |r| r.blurriness),
        })
        .collect();
    Ok(DatasetQualityStats {
        groups: group_stats,
        resolution_range,
        luminosity_range,
        blurriness_range,
    })
}
