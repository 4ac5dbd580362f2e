//! Orientation and head-box rules computed from COCO-17 skeletons.

use crate::pose::{Joint, PoseSkeleton};
use crate::real::Real;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Coarse body orientation relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OrientationLabel {
    Frontal,
    Sideways,
    Backside,
}

impl fmt::Display for OrientationLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            OrientationLabel::Frontal => "frontal",
            OrientationLabel::Sideways => "sideways",
            OrientationLabel::Backside => "backside",
        };
        f.write_str(name)
    }
}

impl FromStr for OrientationLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "frontal" => Ok(OrientationLabel::Frontal),
            "sideways" => Ok(OrientationLabel::Sideways),
            "backside" => Ok(OrientationLabel::Backside),
            other => Err(format!("unknown orientation `{other}`")),
        }
    }
}

/// Source of the body height that the head-box side is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BodyHeightSource {
    /// Use the full image height (pedestrian crops are body-tight).
    #[default]
    ImageHeight,
    /// Use the vertical extent of the confident keypoints.
    KeypointExtent,
}

/// Tunables shared by the geometric rules.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryConfig<F> {
    /// Minimum keypoint score for a joint to count as detected.
    pub confidence_threshold: F,
    /// Where the body height for the head-box rule comes from.
    pub body_height: BodyHeightSource,
}

impl<F: Real> Default for GeometryConfig<F> {
    fn default() -> Self {
        Self {
            confidence_threshold: F::cast(0.05),
            body_height: BodyHeightSource::ImageHeight,
        }
    }
}

/// Errors from the geometric rules.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("image `{image_id}`: joint {joint} below the confidence threshold")]
    UndetectablePose {
        image_id: String,
        joint: &'static str,
    },
    #[error("image `{image_id}`: ear {joint} below the confidence threshold")]
    HeadUndetectable {
        image_id: String,
        joint: &'static str,
    },
    #[error("image `{image_id}`: no keypoint reaches the confidence threshold")]
    NoConfidentKeypoints { image_id: String },
    #[error("image dimensions {width}x{height} are empty")]
    EmptyImage { width: u32, height: u32 },
    #[error("image `{image_id}`: degenerate head box ({detail})")]
    DegenerateRoi { image_id: String, detail: String },
}

/// Axis-aligned square head box, pre-clip side plus clipped pixel bounds.
///
/// Bounds are half-open: the box covers pixel columns `x0..x1` and rows
/// `y0..y1` of the image it was computed against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadRoi<F> {
    pub center_x: F,
    pub center_y: F,
    /// Rounded side length before clipping.
    pub side: u32,
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl<F: Real> HeadRoi<F> {
    /// The square bounds before clipping, possibly extending past the image.
    pub fn unclipped(&self) -> (i64, i64, i64, i64) {
        let side = i64::from(self.side);
        let x0 = floor_i64(self.center_x - half(self.side));
        let y0 = floor_i64(self.center_y - half(self.side));
        (x0, y0, x0 + side, y0 + side)
    }
}

fn half<F: Real>(side: u32) -> F {
    F::cast(f64::from(side) / 2.0)
}

fn floor_i64<F: Real>(v: F) -> i64 {
    v.floor().to_i64().expect("coordinate within i64 range")
}

/// Rounds half-up to an integer (`2.5 -> 3`); inputs are non-negative here.
fn round_half_up<F: Real>(v: F) -> i64 {
    floor_i64(v + F::cast(0.5))
}

fn euclid<F: Real>(ax: F, ay: F, bx: F, by: F) -> F {
    let dx = ax - bx;
    let dy = ay - by;
    (dx * dx + dy * dy).sqrt()
}

fn confident_or<F: Real>(
    skeleton: &PoseSkeleton<F>,
    joint: Joint,
    threshold: F,
    make: impl Fn(&'static str) -> GeometryError,
) -> Result<crate::pose::Keypoint<F>, GeometryError> {
    let keypoint = skeleton.keypoint(joint);
    if keypoint.is_confident(threshold) {
        Ok(keypoint)
    } else {
        Err(make(joint_name(joint)))
    }
}

fn joint_name(joint: Joint) -> &'static str {
    match joint {
        Joint::Nose => "nose",
        Joint::LeftEye => "left_eye",
        Joint::RightEye => "right_eye",
        Joint::LeftEar => "left_ear",
        Joint::RightEar => "right_ear",
        Joint::LeftShoulder => "left_shoulder",
        Joint::RightShoulder => "right_shoulder",
        Joint::LeftElbow => "left_elbow",
        Joint::RightElbow => "right_elbow",
        Joint::LeftWrist => "left_wrist",
        Joint::RightWrist => "right_wrist",
        Joint::LeftHip => "left_hip",
        Joint::RightHip => "right_hip",
        Joint::LeftKnee => "left_knee",
        Joint::RightKnee => "right_knee",
        Joint::LeftAnkle => "left_ankle",
        Joint::RightAnkle => "right_ankle",
    }
}

/// Classifies body orientation from shoulder and hip keypoints.
///
/// The rule, in order:
/// 1. `Sideways` when shoulder length / upper-body height < 0.5 (strict);
/// 2. otherwise `Frontal` when the left shoulder sits at a larger x than the
///    right shoulder (the image's rightmost shoulder is the anatomical left);
/// 3. otherwise `Backside` (ties included).
///
/// Shoulder length is the Euclidean shoulder distance; upper-body height is
/// the Euclidean distance between the shoulder midpoint and the hip midpoint.
/// Total over every skeleton that passes the confidence precondition.
pub fn classify_orientation<F: Real>(
    skeleton: &PoseSkeleton<F>,
    config: &GeometryConfig<F>,
) -> Result<OrientationLabel, GeometryError> {
    let undetectable = |joint| GeometryError::UndetectablePose {
        image_id: skeleton.image_id.clone(),
        joint,
    };
    let threshold = config.confidence_threshold;
    let ls = confident_or(skeleton, Joint::LeftShoulder, threshold, undetectable)?;
    let rs = confident_or(skeleton, Joint::RightShoulder, threshold, undetectable)?;
    let lh = confident_or(skeleton, Joint::LeftHip, threshold, undetectable)?;
    let rh = confident_or(skeleton, Joint::RightHip, threshold, undetectable)?;

    let two = F::cast(2.0);
    let shoulder_len = euclid(ls.x, ls.y, rs.x, rs.y);
    let shoulders_mid = ((ls.x + rs.x) / two, (ls.y + rs.y) / two);
    let hips_mid = ((lh.x + rh.x) / two, (lh.y + rh.y) / two);
    let upper_body_height = euclid(shoulders_mid.0, shoulders_mid.1, hips_mid.0, hips_mid.1);

    let ratio = shoulder_len / upper_body_height;
    if ratio < F::cast(0.5) {
        Ok(OrientationLabel::Sideways)
    } else if ls.x > rs.x {
        Ok(OrientationLabel::Frontal)
    } else {
        Ok(OrientationLabel::Backside)
    }
}

/// Head center: the midpoint of the two ear keypoints.
pub fn head_center<F: Real>(
    skeleton: &PoseSkeleton<F>,
    config: &GeometryConfig<F>,
) -> Result<(F, F), GeometryError> {
    let missing = |joint| GeometryError::HeadUndetectable {
        image_id: skeleton.image_id.clone(),
        joint,
    };
    let threshold = config.confidence_threshold;
    let left = confident_or(skeleton, Joint::LeftEar, threshold, missing)?;
    let right = confident_or(skeleton, Joint::RightEar, threshold, missing)?;
    let two = F::cast(2.0);
    Ok(((left.x + right.x) / two, (left.y + right.y) / two))
}

fn body_height<F: Real>(
    skeleton: &PoseSkeleton<F>,
    image_h: u32,
    config: &GeometryConfig<F>,
) -> Result<F, GeometryError> {
    match config.body_height {
        BodyHeightSource::ImageHeight => Ok(F::cast(f64::from(image_h))),
        BodyHeightSource::KeypointExtent => {
            let mut min_y = F::infinity();
            let mut max_y = F::neg_infinity();
            for keypoint in skeleton.keypoints() {
                if keypoint.is_confident(config.confidence_threshold) {
                    min_y = min_y.min(keypoint.y);
                    max_y = max_y.max(keypoint.y);
                }
            }
            if min_y > max_y {
                return Err(GeometryError::NoConfidentKeypoints {
                    image_id: skeleton.image_id.clone(),
                });
            }
            Ok(max_y - min_y)
        }
    }
}

/// Square head box: side is 2/9 of the body height (rounded half-up), centred
/// on the ear midpoint with a floored origin, then clipped to the image.
pub fn head_roi<F: Real>(
    skeleton: &PoseSkeleton<F>,
    image_w: u32,
    image_h: u32,
    config: &GeometryConfig<F>,
) -> Result<HeadRoi<F>, GeometryError> {
    if image_w == 0 || image_h == 0 {
        return Err(GeometryError::EmptyImage {
            width: image_w,
            height: image_h,
        });
    }
    let (center_x, center_y) = head_center(skeleton, config)?;
    let height = body_height(skeleton, image_h, config)?;
    let side = round_half_up(F::cast(2.0) * height / F::cast(9.0));
    if side <= 0 {
        return Err(GeometryError::DegenerateRoi {
            image_id: skeleton.image_id.clone(),
            detail: "side rounds to zero".into(),
        });
    }
    let side_u32 = u32::try_from(side).map_err(|_| GeometryError::DegenerateRoi {
        image_id: skeleton.image_id.clone(),
        detail: format!("side {side} exceeds pixel range"),
    })?;

    let x0_raw = floor_i64(center_x - half::<F>(side_u32));
    let y0_raw = floor_i64(center_y - half::<F>(side_u32));
    let x0 = x0_raw.clamp(0, i64::from(image_w));
    let y0 = y0_raw.clamp(0, i64::from(image_h));
    let x1 = (x0_raw + side).clamp(0, i64::from(image_w));
    let y1 = (y0_raw + side).clamp(0, i64::from(image_h));
    if x0 >= x1 || y0 >= y1 {
        return Err(GeometryError::DegenerateRoi {
            image_id: skeleton.image_id.clone(),
            detail: format!("box clips to empty within {image_w}x{image_h}"),
        });
    }
    Ok(HeadRoi {
        center_x,
        center_y,
        side: side_u32,
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    })
}
