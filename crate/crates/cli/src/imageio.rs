//! Bridges between image files on disk and the in-memory RGB type.

use std::path::Path;

use anyhow::Context;
use wildface_core::quality::RgbImage;

/// Decodes a PNG or JPEG file into packed RGB.
pub fn load_rgb(path: &Path) -> anyhow::Result<RgbImage> {
    let decoded = image::open(path).with_context(|| format!("decoding {}", path.display()))?;
    let rgb = decoded.to_rgb8();
    RgbImage::new(rgb.width(), rgb.height(), rgb.into_raw())
        .with_context(|| format!("converting {}", path.display()))
}

/// Encodes packed RGB as a PNG file.
pub fn save_png(path: &Path, image: &RgbImage) -> anyhow::Result<()> {
    image::save_buffer(
        path,
        image.data(),
        image.width(),
        image.height(),
        image::ExtendedColorType::Rgb8,
    )
    .with_context(|| format!("writing {}", path.display()))
}

/// True when the file name ends in a supported raster extension.
pub fn is_image_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    lower.ends_with(".png") || lower.ends_with(".jpg") || lower.ends_with(".jpeg")
}
