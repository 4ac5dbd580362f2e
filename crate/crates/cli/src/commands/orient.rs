//! `wildface orient` — one orientation label per posed image.

use std::path::Path;

use anyhow::Context;
use wildface_core::geometry::{classify_orientation, BodyHeightSource, OrientationLabel};
use wildface_core::pose::{first_pose_per_image, parse_pose_file};

use super::{geometry_config, read_text};
use crate::CmdResult;

pub fn run(poses: &Path, out: &Path, conf_threshold: f64) -> CmdResult {
    let config = geometry_config(conf_threshold, BodyHeightSource::ImageHeight)?;
    let text = read_text(poses)?;
    let skeletons = parse_pose_file::<f64>(&text)
        .with_context(|| format!("parsing {}", poses.display()))?;
    let (skeletons, duplicates_dropped) = first_pose_per_image(skeletons);

    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(["image_id", "orientation"]).context("encoding rows")?;
    let (mut frontal, mut sideways, mut backside, mut unlabeled) = (0u64, 0u64, 0u64, 0u64);
    for skeleton in &skeletons {
        let label = classify_orientation(skeleton, &config).ok();
        match label {
            Some(OrientationLabel::Frontal) => frontal += 1,
            Some(OrientationLabel::Sideways) => sideways += 1,
            Some(OrientationLabel::Backside) => backside += 1,
            None => unlabeled += 1,
        }
        let cell = label.map(|l| l.to_string()).unwrap_or_default();
        writer
            .write_record([skeleton.image_id.as_str(), cell.as_str()])
            .context("encoding rows")?;
    }
    let bytes = writer.into_inner().context("encoding rows")?;
    std::fs::write(out, bytes).with_context(|| format!("writing {}", out.display()))?;

    println!(
        "images={} frontal={frontal} sideways={sideways} backside={backside} \
         unlabeled={unlabeled} duplicates_dropped={duplicates_dropped}",
        skeletons.len()
    );
    Ok(())
}
