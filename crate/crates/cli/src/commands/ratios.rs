//! `wildface ratios` — the split-size and frontal-share row for a dataset.

use std::path::Path;

use anyhow::Context;
use wildface_core::builder::{
    ratio_report, read_manifest_csv, DatasetRatios, RatioReport, Split, SplitManifest,
};

use super::{read_text, write_output};
use crate::{CmdResult, Failure, ReportFormat};

pub fn run(
    dataset: &str,
    [train, test, frontal_train, frontal_test]: [&Path; 4],
    out: Option<&Path>,
    format: ReportFormat,
) -> CmdResult {
    let load = |path: &Path, split: Split| -> Result<SplitManifest, Failure> {
        let entries = read_manifest_csv(&read_text(path)?)
            .with_context(|| format!("parsing {}", path.display()))?;
        Ok(SplitManifest::new(dataset, split, entries)
            .with_context(|| format!("validating {}", path.display()))?)
    };
    let train = load(train, Split::Train)?;
    let test = load(test, Split::Test)?;
    let frontal_train = load(frontal_train, Split::Train)?;
    let frontal_test = load(frontal_test, Split::Test)?;

    let row = ratio_report((&train, &test), (&frontal_train, &frontal_test))
        .context("computing ratios")?;

    let content = match format {
        ReportFormat::Json => {
            let report = RatioReport { datasets: vec![row] };
            let mut text =
                serde_json::to_string_pretty(&report).context("encoding the report")?;
            text.push('\n');
            text
        }
        ReportFormat::Csv => csv_row(&row),
    };
    write_output(out, &content)
}

fn csv_row(row: &DatasetRatios) -> String {
    format!(
        "dataset,train_images,test_images,frontal_train_images,frontal_test_images,\
         test_over_all,frontal_test_over_all,frontal_over_train,frontal_over_test\n\
         {},{},{},{},{},{},{},{},{}\n",
        row.dataset,
        row.train_images,
        row.test_images,
        row.frontal_train_images,
        row.frontal_test_images,
        row.test_over_all,
        row.frontal_test_over_all,
        row.frontal_over_train,
        row.frontal_over_test,
    )
}
