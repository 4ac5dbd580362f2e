//! `wildface ma` — mean accuracy of a predictions file, plus the error
//! reduction against a baseline when one is given.

use std::path::Path;

use anyhow::Context;
use wildface_core::metrics::{confusion, error_reduction, mean_accuracy, read_predictions_csv};

use super::read_text;
use crate::{CmdResult, ReportFormat};

pub fn run(predictions: &Path, baseline: Option<f64>, format: ReportFormat) -> CmdResult {
    let rows = read_predictions_csv(&read_text(predictions)?)
        .with_context(|| format!("parsing {}", predictions.display()))?;
    let predicted: Vec<u8> = rows.iter().map(|r| r.prediction).collect();
    let labels: Vec<u8> = rows.iter().map(|r| r.label).collect();
    let table = confusion(&predicted, &labels).context("tabulating predictions")?;
    let ma = mean_accuracy(&table).context("computing mean accuracy")?;
    let reduction = baseline
        .map(|base| error_reduction(base, ma * 100.0))
        .transpose()
        .context("computing the error reduction")?;

    match format {
        ReportFormat::Json => {
            let mut report = serde_json::json!({ "mean_accuracy": ma });
            if let Some(reduction) = reduction {
                report["baseline_percent"] = serde_json::json!(baseline);
                report["error_reduction_percent"] = serde_json::json!(reduction);
            }
            println!("{report:#}");
        }
        ReportFormat::Csv => {
            println!("metric,value");
            println!("mean_accuracy,{ma:.4}");
            if let Some(reduction) = reduction {
                println!("error_reduction_percent,{reduction:.2}");
            }
        }
    }
    Ok(())
}
