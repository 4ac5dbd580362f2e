//! `wildface quality` — per-directory image feature statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use rayon::prelude::*;
use wildface_core::quality::{dataset_stats, quality_record, QualityGroup, QualityRecord};

use super::write_output;
use crate::imageio::{is_image_name, load_rgb};
use crate::{CmdResult, Failure, ReportFormat};

pub fn run(dirs: &[PathBuf], out: Option<&Path>, format: ReportFormat) -> CmdResult {
    let mut groups = Vec::with_capacity(dirs.len());
    for dir in dirs {
        groups.push(collect_group(dir)?);
    }
    let stats = dataset_stats(&groups).context("computing statistics")?;

    let content = match format {
        ReportFormat::Json => {
            let mut text =
                serde_json::to_string_pretty(&stats).context("encoding the report")?;
            text.push('\n');
            text
        }
        ReportFormat::Csv => {
            let mut text = String::from(
                "dataset,resolution_mean,resolution_std,luminosity_mean,luminosity_std,\
                 blurriness_mean,blurriness_std\n",
            );
            for group in &stats.groups {
                writeln!(
                    text,
                    "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    group.dataset,
                    group.resolution.mean,
                    group.resolution.std,
                    group.luminosity.mean,
                    group.luminosity.std,
                    group.blurriness.mean,
                    group.blurriness.std,
                )
                .expect("writing to a string");
            }
            text
        }
    };
    write_output(out, &content)
}

/// Reads every image in one directory into a named record group. File names
/// sort the group, so the records never depend on directory-listing order.
fn collect_group(dir: &Path) -> Result<QualityGroup, Failure> {
    let dataset = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .with_context(|| format!("--images path {} has no directory name", dir.display()))?;
    let mut names = Vec::new();
    let listing =
        std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    for entry in listing {
        let entry = entry.with_context(|| format!("reading {}", dir.display()))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if is_image_name(&name) {
            names.push(name);
        }
    }
    names.sort();

    let loaded: Vec<Result<QualityRecord, String>> = names
        .par_iter()
        .map(|name| {
            load_rgb(&dir.join(name))
                .map_err(|err| format!("{name}: {err:#}"))
                .and_then(|image| {
                    quality_record(name.clone(), &image).map_err(|err| format!("{name}: {err}"))
                })
        })
        .collect();

    let mut records = Vec::with_capacity(loaded.len());
    for result in loaded {
        match result {
            Ok(record) => records.push(record),
            Err(warning) => eprintln!("warning: {warning}"),
        }
    }
    Ok(QualityGroup { dataset, records })
}
