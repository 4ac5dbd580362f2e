//! One module per subcommand, plus the small shared plumbing.

pub mod famcheck;
pub mod heads;
pub mod ma;
pub mod orient;
pub mod quality;
pub mod ratios;

use std::fs;
use std::path::Path;

use anyhow::Context;
use wildface_core::geometry::{BodyHeightSource, GeometryConfig};

use crate::Failure;

pub(crate) fn read_text(path: &Path) -> Result<String, Failure> {
    Ok(fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
}

pub(crate) fn geometry_config(
    confidence_threshold: f64,
    body_height: BodyHeightSource,
) -> Result<GeometryConfig<f64>, Failure> {
    if !(0.0..=1.0).contains(&confidence_threshold) {
        return Err(Failure::Usage(anyhow::anyhow!(
            "--conf-threshold must lie in [0, 1], got {confidence_threshold}"
        )));
    }
    Ok(GeometryConfig { confidence_threshold, body_height })
}

/// Writes a report to the given file, or to stdout when no file is named.
pub(crate) fn write_output(out: Option<&Path>, content: &str) -> Result<(), Failure> {
    match out {
        Some(path) => {
            fs::write(path, content).with_context(|| format!("writing {}", path.display()))?;
        }
        None => print!("{content}"),
    }
    Ok(())
}
