//! Binary-gender classification metrics and prediction-file parsing.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors from metric computation and prediction-file parsing.
#[derive(Debug, Error)]
pub enum MetricError {
    #[error("got {predictions} predictions but {labels} labels")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("{what} value {value} is not a binary 0/1 label")]
    NotBinary { what: &'static str, value: u8 },
    #[error("need at least one labelled instance")]
    Empty,
    #[error("mean accuracy undefined: no {class} instances")]
    UndefinedClass { class: &'static str },
    #[error("baseline accuracy {baseline} leaves no error to reduce")]
    BaselineWithoutError { baseline: f64 },
    #[error("accuracy percentage {value} outside {what}")]
    PercentOutOfRange { value: f64, what: &'static str },
    #[error("predictions CSV line {line}: {detail}")]
    Csv { line: u64, detail: String },
}

/// Positive-class (label 1) and negative-class (label 0) hit counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenderConfusion {
    /// Correctly predicted positives.
    pub true_positives: u64,
    /// Instances labelled positive.
    pub positives: u64,
    /// Correctly predicted negatives.
    pub true_negatives: u64,
    /// Instances labelled negative.
    pub negatives: u64,
}

fn check_binary(what: &'static str, values: &[u8]) -> Result<(), MetricError> {
    match values.iter().find(|v| **v > 1) {
        Some(&value) => Err(MetricError::NotBinary { what, value }),
        None => Ok(()),
    }
}

/// Counts the confusion table from parallel prediction and label slices.
pub fn confusion(predictions: &[u8], labels: &[u8]) -> Result<GenderConfusion, MetricError> {
    if predictions.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            labels: labels.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    check_binary("prediction", predictions)?;
    check_binary("label", labels)?;
    let mut table = GenderConfusion {
        true_positives: 0,
        positives: 0,
        true_negatives: 0,
        negatives: 0,
    };
    for (&pred, &label) in predictions.iter().zip(labels) {
        if label == 1 {
            table.positives += 1;
            if pred == 1 {
                table.true_positives += 1;
            }
        } else {
            table.negatives += 1;
            if pred == 0 {
                table.true_negatives += 1;
            }
        }
    }
    Ok(table)
}

/// Mean accuracy: the true-positive and true-negative rates averaged,
/// `(tp/p + tn/n) / 2`. Both classes must be present.
pub fn mean_accuracy(table: &GenderConfusion) -> Result<f64, MetricError> {
    if table.positives == 0 {
        return Err(MetricError::UndefinedClass { class: "positive" });
    }
    if table.negatives == 0 {
        return Err(MetricError::UndefinedClass { class: "negative" });
    }
    let tpr = table.true_positives as f64 / table.positives as f64;
    let tnr = table.true_negatives as f64 / table.negatives as f64;
    Ok((tpr + tnr) / 2.0)
}

/// Relative error reduction, in percent, between two accuracy percentages:
/// `100 * (new - baseline) / (100 - baseline)`.
///
/// Negative when the new accuracy is worse. A baseline of 100 has no error
/// left to reduce and is rejected.
pub fn error_reduction(baseline_percent: f64, new_percent: f64) -> Result<f64, MetricError> {
    if !(0.0..=100.0).contains(&baseline_percent) || !baseline_percent.is_finite() {
        return Err(MetricError::PercentOutOfRange {
            value: baseline_percent,
            what: "[0, 100] for the baseline",
        });
    }
    if !(0.0..=100.0).contains(&new_percent) || !new_percent.is_finite() {
        return Err(MetricError::PercentOutOfRange {
            value: new_percent,
            what: "[0, 100] for the new accuracy",
        });
    }
    if baseline_percent == 100.0 {
        return Err(MetricError::BaselineWithoutError {
            baseline: baseline_percent,
        });
    }
    Ok(100.0 * (new_percent - baseline_percent) / (100.0 - baseline_percent))
}

/// One row of a predictions CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub image_id: String,
    pub prediction: u8,
    pub label: u8,
}

/// Parses a predictions CSV with the header `image_id,prediction,label`.
pub fn read_predictions_csv(text: &str) -> Result<Vec<PredictionRow>, MetricError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let expected = ["image_id", "prediction", "label"];
    let headers = reader
        .headers()
        .map_err(|e| MetricError::Csv { line: 1, detail: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(MetricError::Csv {
            line: 1,
            detail: format!("header must be `image_id,prediction,label`, got `{}`", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| MetricError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(MetricError::Csv {
                line,
                detail: format!("expected 3 columns, got {}", record.len()),
            });
        }
        let parse_bit = |field: &str, what: &str| -> Result<u8, MetricError> {
            match field {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(MetricError::Csv {
                    line,
                    detail: format!("{what} `{other}` is not 0 or 1"),
                }),
            }
        };
        rows.push(PredictionRow {
            image_id: record[0].to_string(),
            prediction: parse_bit(&record[1], "prediction")?,
            label: parse_bit(&record[2], "label")?,
        });
    }
    Ok(rows)
}
