//! Dataset assembly: split manifests, frontal subsets, head-crop extraction,
//! split-ratio tables, and the released metadata format.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{classify_orientation, GeometryConfig, HeadRoi, OrientationLabel};
use crate::pose::PoseSkeleton;
use crate::quality::{QualityError, RgbImage};
use crate::real::Real;

/// Errors from manifest handling, subset assembly, and ratio computation.
#[derive(Debug, Error)]
pub enum BuilderError {
    #[error("duplicate image_id `{image_id}` in {where_}")]
    DuplicateImage { image_id: String, where_: &'static str },
    #[error("image_id `{image_id}` has more than one pose record")]
    AmbiguousPose { image_id: String },
    #[error("no image found for metadata record `{image_id}`")]
    MissingImage { image_id: String },
    #[error("head box for `{image_id}` does not fit its image: {detail}")]
    BadBox { image_id: String, detail: String },
    #[error("record `{image_id}` is invalid: {detail}")]
    InvalidRecord { image_id: String, detail: String },
    #[error("ratio undefined: {what} is empty")]
    UndefinedRatio { what: &'static str },
    #[error("ratio {numerator}/{denominator} exceeds 1")]
    ImproperRatio { numerator: u64, denominator: u64 },
    #[error("expected the {expected} split, got {got}")]
    SplitMismatch { expected: Split, got: Split },
    #[error("manifests name different datasets: `{expected}` vs `{got}`")]
    DatasetMismatch { expected: String, got: String },
    #[error("{split} split has {frontal} frontal images but only {original} originals")]
    FrontalExceedsOriginal { split: Split, frontal: u64, original: u64 },
    #[error("CSV line {line}: {detail}")]
    Csv { line: u64, detail: String },
}

/// Binary gender label: 0 codes male, 1 codes female.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    /// The label bit written to manifests and prediction files.
    pub fn bit(self) -> u8 {
        match self {
            Gender::Male => 0,
            Gender::Female => 1,
        }
    }

    /// Parses the manifest label bit.
    pub fn from_bit(bit: u8) -> Option<Self> {
        match bit {
            0 => Some(Gender::Male),
            1 => Some(Gender::Female),
            _ => None,
        }
    }
}

/// Which half of a train/test protocol a manifest covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

/// One manifest line: an image and its gender label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image_id: String,
    pub gender: Gender,
}

/// The images of one dataset split with their gender labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitManifest {
    pub dataset: String,
    pub split: Split,
    entries: Vec<ManifestEntry>,
}

impl SplitManifest {
    /// Builds a manifest, rejecting duplicate image ids.
    pub fn new(
        dataset: impl Into<String>,
        split: Split,
        entries: Vec<ManifestEntry>,
    ) -> Result<Self, BuilderError> {
        let mut seen = HashSet::new();
        for entry in &entries {
            if !seen.insert(entry.image_id.as_str()) {
                return Err(BuilderError::DuplicateImage {
                    image_id: entry.image_id.clone(),
                    where_: "manifest",
                });
            }
        }
        Ok(SplitManifest { dataset: dataset.into(), split, entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Parses a two-column manifest CSV with the header `image_id,gender`.
pub fn read_manifest_csv(text: &str) -> Result<Vec<ManifestEntry>, BuilderError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| BuilderError::Csv { line: 1, detail: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["image_id", "gender"] {
        return Err(BuilderError::Csv {
            line: 1,
            detail: format!(
                "header must be `image_id,gender`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut entries = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| BuilderError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 2 {
            return Err(BuilderError::Csv {
                line,
                detail: format!("expected 2 columns, got {}", record.len()),
            });
        }
        let gender = match &record[1] {
            "0" => Gender::Male,
            "1" => Gender::Female,
            other => {
                return Err(BuilderError::Csv {
                    line,
                    detail: format!("gender `{other}` is not 0 or 1"),
                })
            }
        };
        entries.push(ManifestEntry { image_id: record[0].to_string(), gender });
    }
    Ok(entries)
}

/// Serializes manifest entries back to the two-column CSV format.
pub fn write_manifest_csv(entries: &[ManifestEntry]) -> String {
    let mut out = String::from("image_id,gender\n");
    for entry in entries {
        out.push_str(&escape_csv_field(&entry.image_id));
        out.push(',');
        out.push_str(if entry.gender.bit() == 0 { "0" } else { "1" });
        out.push('\n');
    }
    out
}

/// Head box and center attached to a frontal metadata record.
///
/// Bounds are half-open pixel ranges; centers are stored in hundredths of a
/// pixel so the CSV round-trip is lossless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadAnnotation {
    pub cx: f64,
    pub cy: f64,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl HeadAnnotation {
    /// Validates the box and quantizes the center to hundredths of a pixel.
    pub fn new(
        cx: f64,
        cy: f64,
        (x0, y0, x1, y1): (u32, u32, u32, u32),
    ) -> Result<Self, BuilderError> {
        if !cx.is_finite() || !cy.is_finite() {
            return Err(BuilderError::InvalidRecord {
                image_id: String::new(),
                detail: format!("head center ({cx}, {cy}) is not finite"),
            });
        }
        if x0 >= x1 || y0 >= y1 {
            return Err(BuilderError::InvalidRecord {
                image_id: String::new(),
                detail: format!("head box [{x0},{x1})x[{y0},{y1}) is empty"),
            });
        }
        Ok(HeadAnnotation {
            cx: quantize_centi(cx),
            cy: quantize_centi(cy),
            x0,
            y0,
            x1,
            y1,
        })
    }

    /// Converts a computed head box into its metadata form.
    pub fn from_roi<F: Real>(roi: &HeadRoi<F>) -> Result<Self, BuilderError> {
        HeadAnnotation::new(
            roi.center_x.as_f64(),
            roi.center_y.as_f64(),
            (roi.x0, roi.y0, roi.x1, roi.y1),
        )
    }
}

fn quantize_centi(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Released per-image metadata: orientation plus head box for frontal images.
///
/// `orientation` is absent when no pose was available or classification
/// failed; `head` is present only on frontal records whose head box was
/// detectable.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataRecord {
    pub image_id: String,
    pub orientation: Option<OrientationLabel>,
    head: Option<HeadAnnotation>,
}

impl MetadataRecord {
    /// A record for an image without a usable pose.
    pub fn without_pose(image_id: impl Into<String>) -> Self {
        MetadataRecord { image_id: image_id.into(), orientation: None, head: None }
    }

    /// A record carrying an orientation but no head box.
    pub fn oriented(image_id: impl Into<String>, orientation: OrientationLabel) -> Self {
        MetadataRecord {
            image_id: image_id.into(),
            orientation: Some(orientation),
            head: None,
        }
    }

    pub fn head(&self) -> Option<&HeadAnnotation> {
        self.head.as_ref()
    }

    /// Attaches a head box; only frontal records may carry one.
    pub fn attach_head(&mut self, head: HeadAnnotation) -> Result<(), BuilderError> {
        if self.orientation != Some(OrientationLabel::Frontal) {
            return Err(BuilderError::InvalidRecord {
                image_id: self.image_id.clone(),
                detail: "only frontal records may carry a head box".into(),
            });
        }
        self.head = Some(head);
        Ok(())
    }
}

/// The frontal-only manifest plus per-image metadata for every input image.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontalSubset {
    pub manifest: SplitManifest,
    pub metadata: Vec<MetadataRecord>,
}

/// Filters a manifest down to the images whose pose classifies as frontal.
///
/// Every manifest image gets a metadata record, in manifest order. Images
/// with no pose, or whose pose lacks the keypoints orientation needs, keep an
/// absent orientation and drop out of the subset. Pose records for images
/// outside the manifest are ignored.
pub fn build_frontal_subset<F: Real>(
    manifest: &SplitManifest,
    poses: &[PoseSkeleton<F>],
    config: &GeometryConfig<F>,
) -> Result<FrontalSubset, BuilderError> {
    let mut by_id: HashMap<&str, &PoseSkeleton<F>> = HashMap::with_capacity(poses.len());
    for pose in poses {
        if by_id.insert(pose.image_id.as_str(), pose).is_some() {
            return Err(BuilderError::AmbiguousPose { image_id: pose.image_id.clone() });
        }
    }

    let mut frontal = Vec::new();
    let mut metadata = Vec::with_capacity(manifest.len());
    for entry in manifest.entries() {
        let orientation = by_id
            .get(entry.image_id.as_str())
            .and_then(|pose| classify_orientation(pose, config).ok());
        match orientation {
            Some(OrientationLabel::Frontal) => {
                frontal.push(entry.clone());
                metadata.push(MetadataRecord::oriented(&entry.image_id, OrientationLabel::Frontal));
            }
            Some(label) => metadata.push(MetadataRecord::oriented(&entry.image_id, label)),
            None => metadata.push(MetadataRecord::without_pose(&entry.image_id)),
        }
    }

    let manifest = SplitManifest::new(manifest.dataset.clone(), manifest.split, frontal)?;
    Ok(FrontalSubset { manifest, metadata })
}

/// Source of images addressed by id.
pub trait ImageSource {
    /// Loads the image for `image_id`; `Ok(None)` when the asset is missing.
    fn load(&mut self, image_id: &str) -> Result<Option<RgbImage>, BuilderError>;
}

impl ImageSource for HashMap<String, RgbImage> {
    fn load(&mut self, image_id: &str) -> Result<Option<RgbImage>, BuilderError> {
        Ok(self.get(image_id).cloned())
    }
}

/// One extracted head crop.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadCrop {
    pub image_id: String,
    pub image: RgbImage,
}

/// Crops extracted from the records with head boxes, plus the ids skipped
/// because they carry none.
#[derive(Debug, Clone, PartialEq)]
pub struct CropBatch {
    pub crops: Vec<HeadCrop>,
    pub skipped: Vec<String>,
}

/// Cuts the head box out of each annotated record's image.
///
/// Records without a head box are skipped and reported; a record whose image
/// is missing from the source is an error, as is a box that does not fit.
pub fn extract_head_crops(
    source: &mut impl ImageSource,
    records: &[MetadataRecord],
) -> Result<CropBatch, BuilderError> {
    let mut crops = Vec::new();
    let mut skipped = Vec::new();
    for record in records {
        let Some(head) = record.head() else {
            skipped.push(record.image_id.clone());
            continue;
        };
        let image = source
            .load(&record.image_id)?
            .ok_or_else(|| BuilderError::MissingImage { image_id: record.image_id.clone() })?;
        let crop = image.crop(head.x0, head.y0, head.x1, head.y1).map_err(|err| match err {
            QualityError::BadCrop { .. } => BuilderError::BadBox {
                image_id: record.image_id.clone(),
                detail: err.to_string(),
            },
            other => BuilderError::BadBox {
                image_id: record.image_id.clone(),
                detail: other.to_string(),
            },
        })?;
        crops.push(HeadCrop { image_id: record.image_id.clone(), image: crop });
    }
    Ok(CropBatch { crops, skipped })
}

/// A ratio held as exact thousandths, rounded half-even from the fraction.
///
/// Displays with exactly three decimals (`2918/7236` prints as `0.403`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct MilliRatio {
    thousandths: u16,
}

impl MilliRatio {
    /// Rounds `numerator / denominator` to thousandths, ties to even.
    pub fn new(numerator: u64, denominator: u64) -> Result<Self, BuilderError> {
        if denominator == 0 {
            return Err(BuilderError::UndefinedRatio { what: "denominator" });
        }
        if numerator > denominator {
            return Err(BuilderError::ImproperRatio { numerator, denominator });
        }
        let scaled = u128::from(numerator) * 1000;
        let denominator = u128::from(denominator);
        let mut quotient = scaled / denominator;
        let remainder = scaled % denominator;
        let twice = remainder * 2;
        if twice > denominator || (twice == denominator && quotient % 2 == 1) {
            quotient += 1;
        }
        Ok(MilliRatio { thousandths: quotient as u16 })
    }

    /// The rounded value in thousandths (`0.403` -> 403).
    pub fn thousandths(self) -> u16 {
        self.thousandths
    }

    /// The rounded value as a float.
    pub fn value(self) -> f64 {
        f64::from(self.thousandths) / 1000.0
    }
}

impl fmt::Display for MilliRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:03}", self.thousandths / 1000, self.thousandths % 1000)
    }
}

impl From<MilliRatio> for String {
    fn from(ratio: MilliRatio) -> String {
        ratio.to_string()
    }
}

impl TryFrom<String> for MilliRatio {
    type Error = String;

    fn try_from(text: String) -> Result<Self, Self::Error> {
        let (whole, frac) = text
            .split_once('.')
            .ok_or_else(|| format!("`{text}` is not a 3-decimal ratio"))?;
        if frac.len() != 3 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("`{text}` must have exactly 3 decimals"));
        }
        let whole: u16 = whole.parse().map_err(|_| format!("`{text}` has a bad whole part"))?;
        if whole > 1 {
            return Err(format!("`{text}` exceeds 1"));
        }
        let frac: u16 = frac.parse().expect("three ASCII digits parse");
        let thousandths = whole * 1000 + frac;
        if thousandths > 1000 {
            return Err(format!("`{text}` exceeds 1"));
        }
        Ok(MilliRatio { thousandths })
    }
}

/// The split-size and frontal-share figures for one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRatios {
    pub dataset: String,
    pub train_images: u64,
    pub test_images: u64,
    pub frontal_train_images: u64,
    pub frontal_test_images: u64,
    /// test / (train + test) over the original manifests.
    pub test_over_all: MilliRatio,
    /// frontal test / (frontal train + frontal test).
    pub frontal_test_over_all: MilliRatio,
    /// frontal train / original train.
    pub frontal_over_train: MilliRatio,
    /// frontal test / original test.
    pub frontal_over_test: MilliRatio,
}

/// Ratio rows for the datasets of a benchmark run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioReport {
    pub datasets: Vec<DatasetRatios>,
}

/// Computes one dataset's ratio row from its four split sizes.
pub fn ratio_report_from_counts(
    dataset: impl Into<String>,
    train_images: u64,
    test_images: u64,
    frontal_train_images: u64,
    frontal_test_images: u64,
) -> Result<DatasetRatios, BuilderError> {
    if frontal_train_images > train_images {
        return Err(BuilderError::FrontalExceedsOriginal {
            split: Split::Train,
            frontal: frontal_train_images,
            original: train_images,
        });
    }
    if frontal_test_images > test_images {
        return Err(BuilderError::FrontalExceedsOriginal {
            split: Split::Test,
            frontal: frontal_test_images,
            original: test_images,
        });
    }
    if train_images == 0 {
        return Err(BuilderError::UndefinedRatio { what: "train split" });
    }
    if test_images == 0 {
        return Err(BuilderError::UndefinedRatio { what: "test split" });
    }
    let frontal_total = frontal_train_images + frontal_test_images;
    if frontal_total == 0 {
        return Err(BuilderError::UndefinedRatio { what: "frontal subset" });
    }
    Ok(DatasetRatios {
        dataset: dataset.into(),
        train_images,
        test_images,
        frontal_train_images,
        frontal_test_images,
        test_over_all: MilliRatio::new(test_images, train_images + test_images)?,
        frontal_test_over_all: MilliRatio::new(frontal_test_images, frontal_total)?,
        frontal_over_train: MilliRatio::new(frontal_train_images, train_images)?,
        frontal_over_test: MilliRatio::new(frontal_test_images, test_images)?,
    })
}

/// Computes one dataset's ratio row from its original and frontal manifests.
pub fn ratio_report(
    original: (&SplitManifest, &SplitManifest),
    frontal: (&SplitManifest, &SplitManifest),
) -> Result<DatasetRatios, BuilderError> {
    for (manifest, expected) in [
        (original.0, Split::Train),
        (original.1, Split::Test),
        (frontal.0, Split::Train),
        (frontal.1, Split::Test),
    ] {
        if manifest.split != expected {
            return Err(BuilderError::SplitMismatch { expected, got: manifest.split });
        }
    }
    let dataset = &original.0.dataset;
    for manifest in [original.1, frontal.0, frontal.1] {
        if &manifest.dataset != dataset {
            return Err(BuilderError::DatasetMismatch {
                expected: dataset.clone(),
                got: manifest.dataset.clone(),
            });
        }
    }
    ratio_report_from_counts(
        dataset.clone(),
        original.0.len() as u64,
        original.1.len() as u64,
        frontal.0.len() as u64,
        frontal.1.len() as u64,
    )
}

const METADATA_HEADER: &str = "image_id,orientation,cx,cy,x0,y0,x1,y1";

fn escape_csv_field(field: &str) -> String {
    if field.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

/// Serializes metadata records in input order.
///
/// Centers print with two decimals, box bounds as integers; a record without
/// a head box leaves those six cells empty, and a record without a usable
/// pose leaves the orientation cell empty too. `read_metadata` inverts this
/// exactly, and identical input always produces identical bytes.
pub fn write_metadata(records: &[MetadataRecord]) -> String {
    let mut out = String::from(METADATA_HEADER);
    out.push('\n');
    for record in records {
        out.push_str(&escape_csv_field(&record.image_id));
        out.push(',');
        if let Some(orientation) = record.orientation {
            out.push_str(&orientation.to_string());
        }
        match record.head() {
            Some(head) => {
                out.push_str(&format!(
                    ",{:.2},{:.2},{},{},{},{}",
                    head.cx, head.cy, head.x0, head.y0, head.x1, head.y1
                ));
            }
            None => out.push_str(",,,,,,"),
        }
        out.push('\n');
    }
    out
}

/// Parses a metadata CSV produced by [`write_metadata`].
pub fn read_metadata(text: &str) -> Result<Vec<MetadataRecord>, BuilderError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| BuilderError::Csv { line: 1, detail: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>().join(",") != METADATA_HEADER {
        return Err(BuilderError::Csv {
            line: 1,
            detail: format!("header must be `{METADATA_HEADER}`"),
        });
    }
    let mut records = Vec::new();
    for result in reader.records() {
        let record = result.map_err(|e| BuilderError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            detail: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 8 {
            return Err(BuilderError::Csv {
                line,
                detail: format!("expected 8 columns, got {}", record.len()),
            });
        }
        let image_id = record[0].to_string();
        let orientation = match &record[1] {
            "" => None,
            text => Some(OrientationLabel::from_str(text).map_err(|detail| {
                BuilderError::Csv { line, detail }
            })?),
        };
        let head_cells = [&record[2], &record[3], &record[4], &record[5], &record[6], &record[7]];
        let populated = head_cells.iter().filter(|c| !c.is_empty()).count();
        let head = match populated {
            0 => None,
            6 => {
                let cx: f64 = parse_cell(line, "cx", head_cells[0])?;
                let cy: f64 = parse_cell(line, "cy", head_cells[1])?;
                let x0: u32 = parse_cell(line, "x0", head_cells[2])?;
                let y0: u32 = parse_cell(line, "y0", head_cells[3])?;
                let x1: u32 = parse_cell(line, "x1", head_cells[4])?;
                let y1: u32 = parse_cell(line, "y1", head_cells[5])?;
                Some(HeadAnnotation::new(cx, cy, (x0, y0, x1, y1)).map_err(|e| {
                    BuilderError::Csv { line, detail: e.to_string() }
                })?)
            }
            n => {
                return Err(BuilderError::Csv {
                    line,
                    detail: format!("head box needs 6 cells or none, got {n}"),
                })
            }
        };
        if head.is_some() && orientation != Some(OrientationLabel::Frontal) {
            return Err(BuilderError::Csv {
                line,
                detail: "only frontal records may carry a head box".into(),
            });
        }
        records.push(MetadataRecord { image_id, orientation, head });
    }
    Ok(records)
}

fn parse_cell<T: FromStr>(line: u64, name: &str, cell: &str) -> Result<T, BuilderError> {
    cell.parse().map_err(|_| BuilderError::Csv {
        line,
        detail: format!("cannot parse {name} from `{cell}`"),
    })
}
