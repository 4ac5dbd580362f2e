//! `wildface heads` — head crops plus the metadata table for a pose file.
//!
//! Per-image problems (missing or unreadable image, no detectable ears)
//! warn and continue; only systemic failures abort the run.

use std::path::Path;

use anyhow::Context;
use rayon::prelude::*;
use wildface_core::builder::{HeadAnnotation, MetadataRecord};
use wildface_core::geometry::{
    classify_orientation, head_roi, BodyHeightSource, OrientationLabel,
};
use wildface_core::pose::{first_pose_per_image, parse_pose_file, PoseSkeleton};
use wildface_core::quality::RgbImage;

use super::{geometry_config, read_text};
use crate::imageio::{load_rgb, save_png};
use crate::CmdResult;

struct Prepared {
    record: MetadataRecord,
    crop: Option<RgbImage>,
    warning: Option<String>,
}

pub fn run(
    poses: &Path,
    images: &Path,
    out: &Path,
    conf_threshold: f64,
    body_height: BodyHeightSource,
) -> CmdResult {
    let config = geometry_config(conf_threshold, body_height)?;
    let text = read_text(poses)?;
    let skeletons = parse_pose_file::<f64>(&text)
        .with_context(|| format!("parsing {}", poses.display()))?;
    let (mut skeletons, duplicates_dropped) = first_pose_per_image(skeletons);
    skeletons.sort_by(|a, b| a.image_id.cmp(&b.image_id));

    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;

    // Per-image work fans out; results come back in image-id order, so the
    // outputs do not depend on the worker count.
    let prepared: Vec<Prepared> = skeletons
        .par_iter()
        .map(|skeleton| prepare(skeleton, images, &config))
        .collect();

    let (mut frontal, mut crops, mut no_box) = (0u64, 0u64, 0u64);
    let mut warnings = 0u64;
    for item in &prepared {
        if let Some(warning) = &item.warning {
            warnings += 1;
            eprintln!("warning: {warning}");
        }
        if item.record.orientation == Some(OrientationLabel::Frontal) {
            frontal += 1;
            if item.record.head().is_none() {
                no_box += 1;
            }
        }
        if let Some(crop) = &item.crop {
            let name = format!("{}_head.png", item.record.image_id);
            if let Err(err) = save_png(&out.join(&name), crop) {
                warnings += 1;
                eprintln!("warning: {err:#}");
            } else {
                crops += 1;
            }
        }
    }

    let records: Vec<MetadataRecord> = prepared.into_iter().map(|p| p.record).collect();
    let metadata_path = out.join("metadata.csv");
    std::fs::write(&metadata_path, wildface_core::builder::write_metadata(&records))
        .with_context(|| format!("writing {}", metadata_path.display()))?;

    println!(
        "images={} frontal={frontal} crops={crops} no_box={no_box} warnings={warnings} \
         duplicates_dropped={duplicates_dropped}",
        records.len()
    );
    Ok(())
}

fn prepare(
    skeleton: &PoseSkeleton<f64>,
    images: &Path,
    config: &wildface_core::geometry::GeometryConfig<f64>,
) -> Prepared {
    let id = &skeleton.image_id;
    let record = match classify_orientation(skeleton, config) {
        Ok(label) => MetadataRecord::oriented(id, label),
        Err(_) => MetadataRecord::without_pose(id),
    };
    if record.orientation != Some(OrientationLabel::Frontal) {
        return Prepared { record, crop: None, warning: None };
    }

    let path = images.join(id);
    let image = match load_rgb(&path) {
        Ok(image) => image,
        Err(err) => {
            return Prepared { record, crop: None, warning: Some(format!("{id}: {err:#}")) };
        }
    };
    let roi = match head_roi(skeleton, image.width(), image.height(), config) {
        Ok(roi) => roi,
        // No usable ears or an off-image box: keep the frontal record boxless.
        Err(_) => return Prepared { record, crop: None, warning: None },
    };
    let mut record = record;
    let annotated = HeadAnnotation::from_roi(&roi).and_then(|head| record.attach_head(head));
    if let Err(err) = annotated {
        return Prepared { record, crop: None, warning: Some(format!("{id}: {err}")) };
    }
    match image.crop(roi.x0, roi.y0, roi.x1, roi.y1) {
        Ok(crop) => Prepared { record, crop: Some(crop), warning: None },
        Err(err) => Prepared { record, crop: None, warning: Some(format!("{id}: {err}")) },
    }
}
