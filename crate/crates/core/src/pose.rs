//! COCO-17 pose records and JSON parsing.

use crate::real::Real;
use serde::Deserialize;
use thiserror::Error;

/// Number of joints in the COCO-17 keypoint layout.
pub const JOINT_COUNT: usize = 17;

/// Joint names in the COCO-17 keypoint layout, in index order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(usize)]
pub enum Joint {
    Nose = 0,
    LeftEye = 1,
    RightEye = 2,
    LeftEar = 3,
    RightEar = 4,
    LeftShoulder = 5,
    RightShoulder = 6,
    LeftElbow = 7,
    RightElbow = 8,
    LeftWrist = 9,
    RightWrist = 10,
    LeftHip = 11,
    RightHip = 12,
    LeftKnee = 13,
    RightKnee = 14,
    LeftAnkle = 15,
    RightAnkle = 16,
}

/// Errors from reading pose estimator output.
#[derive(Debug, Error)]
pub enum PoseError {
    #[error("malformed pose JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("record {record} (image `{image_id}`): {detail}")]
    Schema {
        record: usize,
        image_id: String,
        detail: String,
    },
}

/// One detected joint: image coordinates plus a detection score in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Keypoint<F> {
    pub x: F,
    pub y: F,
    pub score: F,
}

impl<F: Real> Keypoint<F> {
    /// True when the detection score reaches the confidence threshold.
    pub fn is_confident(&self, threshold: F) -> bool {
        self.score >= threshold
    }
}

/// A full 17-joint skeleton detected on one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSkeleton<F> {
    pub image_id: String,
    keypoints: [Keypoint<F>; JOINT_COUNT],
}

impl<F: Real> PoseSkeleton<F> {
    /// Builds a skeleton from a full joint array.
    pub fn new(image_id: impl Into<String>, keypoints: [Keypoint<F>; JOINT_COUNT]) -> Self {
        Self {
            image_id: image_id.into(),
            keypoints,
        }
    }

    /// Skeleton with every joint at the origin and score zero (nothing detected).
    pub fn empty(image_id: impl Into<String>) -> Self {
        Self::new(image_id, [Keypoint::default(); JOINT_COUNT])
    }

    /// Returns the keypoint for a joint.
    pub fn keypoint(&self, joint: Joint) -> Keypoint<F> {
        self.keypoints[joint as usize]
    }

    /// Replaces the keypoint for a joint.
    pub fn set_keypoint(&mut self, joint: Joint, keypoint: Keypoint<F>) {
        self.keypoints[joint as usize] = keypoint;
    }

    /// All 17 keypoints in COCO index order.
    pub fn keypoints(&self) -> &[Keypoint<F>; JOINT_COUNT] {
        &self.keypoints
    }
}

#[derive(Deserialize)]
struct RawPoseRecord {
    image_id: String,
    keypoints: Vec<f64>,
}

/// Parses pose estimator output: a JSON array of records shaped
/// `{"image_id": string, "keypoints": [x0, y0, s0, ..., x16, y16, s16]}`.
///
/// Records keep file order; one image may appear more than once (one record
/// per detected person). Coordinates must be finite and scores must lie in
/// `[0, 1]`.
pub fn parse_pose_file<F: Real>(text: &str) -> Result<Vec<PoseSkeleton<F>>, PoseError> {
    let raw: Vec<RawPoseRecord> = serde_json::from_str(text)?;
    let mut skeletons = Vec::with_capacity(raw.len());
    for (record, entry) in raw.into_iter().enumerate() {
        let schema_err = |detail: String| PoseError::Schema {
            record,
            image_id: entry.image_id.clone(),
            detail,
        };
        if entry.keypoints.len() != JOINT_COUNT * 3 {
            return Err(schema_err(format!(
                "keypoints has {} numbers, expected {} (17 joints x 3)",
                entry.keypoints.len(),
                JOINT_COUNT * 3
            )));
        }
        let mut keypoints = [Keypoint::default(); JOINT_COUNT];
        for (joint, triple) in entry.keypoints.chunks_exact(3).enumerate() {
            let (x, y, score) = (triple[0], triple[1], triple[2]);
            if !x.is_finite() || !y.is_finite() {
                return Err(schema_err(format!(
                    "joint {joint} has a non-finite coordinate ({x}, {y})"
                )));
            }
            if !score.is_finite() || !(0.0..=1.0).contains(&score) {
                return Err(schema_err(format!(
                    "joint {joint} score {score} outside [0, 1]"
                )));
            }
            keypoints[joint] = Keypoint {
                x: F::cast(x),
                y: F::cast(y),
                score: F::cast(score),
            };
        }
        skeletons.push(PoseSkeleton::new(entry.image_id, keypoints));
    }
    Ok(skeletons)
}

/// Keeps the first record per image (multi-person images carry one record per
/// detection; the first one wins). Returns the survivors in first-seen order
/// plus the number of dropped duplicates.
pub fn first_pose_per_image<F: Real>(
    skeletons: Vec<PoseSkeleton<F>>,
) -> (Vec<PoseSkeleton<F>>, usize) {
    let mut seen = std::collections::HashSet::new();
    let mut kept = Vec::with_capacity(skeletons.len());
    let mut dropped = 0;
    for skeleton in skeletons {
        if seen.insert(skeleton.image_id.clone()) {
            kept.push(skeleton);
        } else {
            dropped += 1;
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triples(joints: &[(usize, f64, f64, f64)]) -> Vec<f64> {
        let mut flat = vec![0.0; JOINT_COUNT * 3];
        for &(joint, x, y, s) in joints {
            flat[joint * 3] = x;
            flat[joint * 3 + 1] = y;
            flat[joint * 3 + 2] = s;
        }
        flat
    }

    fn record_json(image_id: &str, keypoints: &[f64]) -> String {
        serde_json::json!([{ "image_id": image_id, "keypoints": keypoints }]).to_string()
    }

    #[test]
    fn empty_array_parses_to_empty_list() {
        let skeletons = parse_pose_file::<f64>("[]").unwrap();
        assert!(skeletons.is_empty());
    }

    #[test]
    fn single_record_maps_triples_onto_joints() {
        let flat = triples(&[(5, 70.0, 50.0, 0.9), (6, 30.0, 50.0, 0.8)]);
        let text = record_json("a.png", &flat);
        let skeletons = parse_pose_file::<f64>(&text).unwrap();
        assert_eq!(skeletons.len(), 1);
        let skeleton = &skeletons[0];
        assert_eq!(skeleton.image_id, "a.png");
        let left = skeleton.keypoint(Joint::LeftShoulder);
        assert_eq!((left.x, left.y, left.score), (70.0, 50.0, 0.9));
        let right = skeleton.keypoint(Joint::RightShoulder);
        assert_eq!((right.x, right.y, right.score), (30.0, 50.0, 0.8));
        assert_eq!(skeleton.keypoint(Joint::Nose).score, 0.0);
    }

    #[test]
    fn wrong_keypoint_count_names_the_record() {
        let text = record_json("short.png", &vec![0.0; 48]);
        let err = parse_pose_file::<f64>(&text).unwrap_err();
        match err {
            PoseError::Schema { record, image_id, detail } => {
                assert_eq!(record, 0);
                assert_eq!(image_id, "short.png");
                assert!(detail.contains("48"), "detail: {detail}");
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(
            parse_pose_file::<f64>("not json").unwrap_err(),
            PoseError::Json(_)
        ));
    }

    #[test]
    fn out_of_range_score_is_rejected() {
        let flat = triples(&[(0, 1.0, 1.0, 1.5)]);
        let text = record_json("bad.png", &flat);
        assert!(matches!(
            parse_pose_file::<f64>(&text).unwrap_err(),
            PoseError::Schema { .. }
        ));
    }

    #[test]
    fn non_finite_coordinate_is_rejected() {
        // JSON has no literal for infinity; an overflowing number is the
        // closest text encoding and must fail at the JSON layer.
        let mut cells: Vec<String> = triples(&[]).iter().map(f64::to_string).collect();
        cells[0] = "1e999".to_string();
        let text = format!(r#"[{{"image_id":"inf.png","keypoints":[{}]}}]"#, cells.join(","));
        assert!(matches!(
            parse_pose_file::<f64>(&text).unwrap_err(),
            PoseError::Json(_)
        ));
    }

    #[test]
    fn first_record_per_image_wins() {
        let mut a = PoseSkeleton::<f64>::empty("x.png");
        a.set_keypoint(Joint::Nose, Keypoint { x: 1.0, y: 1.0, score: 1.0 });
        let b = PoseSkeleton::<f64>::empty("x.png");
        let c = PoseSkeleton::<f64>::empty("y.png");
        let (kept, dropped) = first_pose_per_image(vec![a.clone(), b, c.clone()]);
        assert_eq!(dropped, 1);
        assert_eq!(kept, vec![a, c]);
    }
}
