//! End-to-end tests of the `wildface` binary: every subcommand, the output
//! file formats, and the 0/1/2 exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

use serde_json::json;
use tempfile::TempDir;

/// COCO joint indices used by the geometric rules.
const LEFT_EAR: usize = 3;
const RIGHT_EAR: usize = 4;
const LEFT_SHOULDER: usize = 5;
const RIGHT_SHOULDER: usize = 6;
const LEFT_HIP: usize = 11;
const RIGHT_HIP: usize = 12;

/// The binary under test, isolated from ambient worker configuration.
fn wildface() -> Command {
    let mut command = Command::new(env!("CARGO_BIN_EXE_wildface"));
    command.env_remove("WILDFACE_WORKERS");
    command
}

fn stdout_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn exit_code(output: &Output) -> i32 {
    output.status.code().expect("command was not killed by a signal")
}

/// A 51-number keypoint row with the given joints placed; every joint is
/// confidently scored so tests opt out per joint by placing score 0.
fn keypoint_row(joints: &[(usize, f64, f64)]) -> Vec<f64> {
    let mut flat = vec![0.0; 51];
    for slot in 0..17 {
        flat[3 * slot + 2] = 0.9;
    }
    for &(joint, x, y) in joints {
        flat[3 * joint] = x;
        flat[3 * joint + 1] = y;
    }
    flat
}

fn pose_record(image_id: &str, joints: &[(usize, f64, f64)]) -> serde_json::Value {
    json!({ "image_id": image_id, "keypoints": keypoint_row(joints) })
}

/// Shoulders 40 px apart over a 60 px torso (ratio 0.667), left shoulder on
/// the image right: frontal. Ears put the head center at (96, 40).
fn frontal_joints() -> Vec<(usize, f64, f64)> {
    vec![
        (LEFT_EAR, 100.0, 40.0),
        (RIGHT_EAR, 92.0, 40.0),
        (LEFT_SHOULDER, 70.0, 50.0),
        (RIGHT_SHOULDER, 30.0, 50.0),
        (LEFT_HIP, 60.0, 110.0),
        (RIGHT_HIP, 40.0, 110.0),
    ]
}

/// The frontal pose with shoulder x coordinates swapped.
fn backside_joints() -> Vec<(usize, f64, f64)> {
    vec![
        (LEFT_EAR, 100.0, 40.0),
        (RIGHT_EAR, 92.0, 40.0),
        (LEFT_SHOULDER, 30.0, 50.0),
        (RIGHT_SHOULDER, 70.0, 50.0),
        (LEFT_HIP, 60.0, 110.0),
        (RIGHT_HIP, 40.0, 110.0),
    ]
}

/// Shoulders 24 px apart over the same torso: ratio 0.4, sideways.
fn sideways_joints() -> Vec<(usize, f64, f64)> {
    vec![
        (LEFT_SHOULDER, 62.0, 50.0),
        (RIGHT_SHOULDER, 38.0, 50.0),
        (LEFT_HIP, 60.0, 110.0),
        (RIGHT_HIP, 40.0, 110.0),
    ]
}

fn write_poses(dir: &Path, records: &[serde_json::Value]) -> std::path::PathBuf {
    let path = dir.join("poses.json");
    std::fs::write(&path, serde_json::to_string(&records).unwrap()).unwrap();
    path
}

fn write_png(path: &Path, width: u32, height: u32, pixel: impl Fn(u32, u32) -> [u8; 3]) {
    let image = image::RgbImage::from_fn(width, height, |x, y| image::Rgb(pixel(x, y)));
    image.save(path).unwrap();
}

fn write_manifest(path: &Path, rows: &[(&str, u8)]) {
    let mut text = String::from("image_id,gender\n");
    for (image_id, gender) in rows {
        text.push_str(&format!("{image_id},{gender}\n"));
    }
    std::fs::write(path, text).unwrap();
}

#[test]
fn orient_labels_every_image_and_reports_counts() {
    let dir = TempDir::new().unwrap();
    let poses = write_poses(
        dir.path(),
        &[
            pose_record("a.png", &frontal_joints()),
            pose_record("b.png", &sideways_joints()),
            pose_record("c.png", &backside_joints()),
            // A second person on a.png: the first record wins.
            pose_record("a.png", &backside_joints()),
        ],
    );
    let out = dir.path().join("orientations.csv");

    let output = wildface().args(["orient", "--poses"]).arg(&poses).arg("--out").arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let csv = std::fs::read_to_string(&out).unwrap();
    assert_eq!(csv, "image_id,orientation\na.png,frontal\nb.png,sideways\nc.png,backside\n");
    let summary = stdout_of(&output);
    assert!(
        summary.contains(
            "images=3 frontal=1 sideways=1 backside=1 unlabeled=0 duplicates_dropped=1"
        ),
        "unexpected summary: {summary}"
    );
}

#[test]
fn orient_counts_undetectable_poses_as_unlabeled() {
    let dir = TempDir::new().unwrap();
    // Shoulder score zero: orientation cannot be decided.
    let mut joints = keypoint_row(&frontal_joints());
    joints[3 * LEFT_SHOULDER + 2] = 0.0;
    let poses = write_poses(dir.path(), &[json!({ "image_id": "d.png", "keypoints": joints })]);
    let out = dir.path().join("orientations.csv");

    let output = wildface().args(["orient", "--poses"]).arg(&poses).arg("--out").arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "image_id,orientation\nd.png,\n");
    assert!(stdout_of(&output).contains("unlabeled=1"));
}

#[test]
fn orient_empty_pose_array_writes_header_only() {
    let dir = TempDir::new().unwrap();
    let poses = write_poses(dir.path(), &[]);
    let out = dir.path().join("orientations.csv");

    let output = wildface().args(["orient", "--poses"]).arg(&poses).arg("--out").arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "image_id,orientation\n");
}

#[test]
fn orient_rejects_missing_input() {
    let dir = TempDir::new().unwrap();
    let output = wildface()
        .args(["orient", "--poses"])
        .arg(dir.path().join("absent.json"))
        .arg("--out")
        .arg(dir.path().join("out.csv"))
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).starts_with("error:"));
}

#[test]
fn orient_rejects_malformed_json() {
    let dir = TempDir::new().unwrap();
    let poses = dir.path().join("poses.json");
    std::fs::write(&poses, "{not json").unwrap();

    let output = wildface()
        .args(["orient", "--poses"])
        .arg(&poses)
        .arg("--out")
        .arg(dir.path().join("out.csv"))
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 2);
}

#[test]
fn heads_crops_frontal_images_and_writes_metadata() {
    let dir = TempDir::new().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    // Coordinate-coded pixels make the crop origin checkable.
    write_png(&images.join("a.png"), 192, 256, |x, y| [x as u8, y as u8, (x + y) as u8]);
    let poses = write_poses(
        dir.path(),
        &[
            pose_record("a.png", &frontal_joints()),
            pose_record("b.png", &backside_joints()),
        ],
    );
    let out = dir.path().join("out");

    let output = wildface()
        .args(["heads", "--poses"])
        .arg(&poses)
        .arg("--images")
        .arg(&images)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert_eq!(
        std::fs::read_to_string(out.join("metadata.csv")).unwrap(),
        "image_id,orientation,cx,cy,x0,y0,x1,y1\n\
         a.png,frontal,96.00,40.00,67,11,124,68\n\
         b.png,backside,,,,,,\n"
    );

    let crop = image::open(out.join("a.png_head.png")).unwrap().to_rgb8();
    assert_eq!(crop.dimensions(), (57, 57));
    // Crop origin (67, 11) carries the source image's coordinate encoding.
    assert_eq!(crop.get_pixel(0, 0), &image::Rgb([67, 11, 78]));
    assert!(!out.join("b.png_head.png").exists());
    assert!(stdout_of(&output)
        .contains("images=2 frontal=1 crops=1 no_box=0 warnings=0 duplicates_dropped=0"));
}

#[test]
fn heads_warns_and_continues_on_unreadable_image() {
    let dir = TempDir::new().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    std::fs::write(images.join("a.png"), b"not a png").unwrap();
    let poses = write_poses(dir.path(), &[pose_record("a.png", &frontal_joints())]);
    let out = dir.path().join("out");

    let output = wildface()
        .args(["heads", "--poses"])
        .arg(&poses)
        .arg("--images")
        .arg(&images)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0, "per-image problems must not abort the run");
    assert!(stderr_of(&output).contains("warning:"));
    assert_eq!(
        std::fs::read_to_string(out.join("metadata.csv")).unwrap(),
        "image_id,orientation,cx,cy,x0,y0,x1,y1\na.png,frontal,,,,,,\n"
    );
    assert!(stdout_of(&output).contains("crops=0 no_box=1 warnings=1"));
}

#[test]
fn heads_frontal_pose_without_ears_keeps_a_boxless_record() {
    let dir = TempDir::new().unwrap();
    let images = dir.path().join("images");
    std::fs::create_dir(&images).unwrap();
    write_png(&images.join("a.png"), 192, 256, |_, _| [10, 20, 30]);
    let mut joints = keypoint_row(&frontal_joints());
    joints[3 * LEFT_EAR + 2] = 0.0;
    let poses = write_poses(dir.path(), &[json!({ "image_id": "a.png", "keypoints": joints })]);
    let out = dir.path().join("out");

    let output = wildface()
        .args(["heads", "--poses"])
        .arg(&poses)
        .arg("--images")
        .arg(&images)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0);
    assert_eq!(
        std::fs::read_to_string(out.join("metadata.csv")).unwrap(),
        "image_id,orientation,cx,cy,x0,y0,x1,y1\na.png,frontal,,,,,,\n"
    );
    assert!(stdout_of(&output).contains("crops=0 no_box=1 warnings=0"));
}

#[test]
fn quality_reports_grouped_statistics() {
    let dir = TempDir::new().unwrap();
    let bright = dir.path().join("bright");
    let dark = dir.path().join("dark");
    std::fs::create_dir(&bright).unwrap();
    std::fs::create_dir(&dark).unwrap();
    write_png(&bright.join("white.png"), 4, 4, |_, _| [255, 255, 255]);
    write_png(&dark.join("black.png"), 4, 4, |_, _| [0, 0, 0]);
    let out = dir.path().join("stats.csv");

    let output = wildface()
        .args(["quality", "--images"])
        .arg(&bright)
        .arg("--images")
        .arg(&dark)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    // Resolution and blurriness pool to a single value (normalized 0);
    // luminosity spans [0, 1] with white at the top.
    assert_eq!(
        std::fs::read_to_string(&out).unwrap(),
        "dataset,resolution_mean,resolution_std,luminosity_mean,luminosity_std,\
         blurriness_mean,blurriness_std\n\
         bright,0.000000,0.000000,1.000000,0.000000,0.000000,0.000000\n\
         dark,0.000000,0.000000,0.000000,0.000000,0.000000,0.000000\n"
    );
}

#[test]
fn quality_json_format_includes_pooled_ranges() {
    let dir = TempDir::new().unwrap();
    let group = dir.path().join("solo");
    std::fs::create_dir(&group).unwrap();
    write_png(&group.join("gray.png"), 3, 3, |_, _| [128, 128, 128]);

    let output = wildface()
        .args(["quality", "--format", "json", "--images"])
        .arg(&group)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(report["groups"][0]["dataset"], "solo");
    assert_eq!(report["resolution_range"]["min"], 9.0);
    assert_eq!(report["resolution_range"]["max"], 9.0);
    assert_eq!(report["groups"][0]["luminosity"]["mean"], 0.0);
}

#[test]
fn quality_missing_directory_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let output = wildface()
        .args(["quality", "--images"])
        .arg(dir.path().join("absent"))
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 2);
}

#[test]
fn ratios_identity_fixture_reports_unit_frontal_ratios() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    write_manifest(&train, &[("t1", 0), ("t2", 1), ("t3", 0), ("t4", 1)]);
    write_manifest(&test, &[("e1", 1), ("e2", 0)]);

    let output = wildface()
        .args(["ratios", "--dataset", "demo", "--train"])
        .arg(&train)
        .arg("--test")
        .arg(&test)
        .arg("--frontal-train")
        .arg(&train)
        .arg("--frontal-test")
        .arg(&test)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert_eq!(
        stdout_of(&output),
        "dataset,train_images,test_images,frontal_train_images,frontal_test_images,\
         test_over_all,frontal_test_over_all,frontal_over_train,frontal_over_test\n\
         demo,4,2,4,2,0.333,0.333,1.000,1.000\n"
    );
}

#[test]
fn ratios_json_format_round_trips_the_row() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.csv");
    let test = dir.path().join("test.csv");
    write_manifest(&train, &[("t1", 0), ("t2", 1)]);
    write_manifest(&test, &[("e1", 1)]);

    let output = wildface()
        .args(["ratios", "--format", "json", "--dataset", "demo", "--train"])
        .arg(&train)
        .arg("--test")
        .arg(&test)
        .arg("--frontal-train")
        .arg(&train)
        .arg("--frontal-test")
        .arg(&test)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    let row = &report["datasets"][0];
    assert_eq!(row["dataset"], "demo");
    assert_eq!(row["train_images"], 2);
    assert_eq!(row["test_over_all"], "0.333");
    assert_eq!(row["frontal_over_train"], "1.000");
}

#[test]
fn ratios_zero_test_split_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let train = dir.path().join("train.csv");
    let empty = dir.path().join("empty.csv");
    write_manifest(&train, &[("t1", 0), ("t2", 1)]);
    write_manifest(&empty, &[]);

    let output = wildface()
        .args(["ratios", "--dataset", "demo", "--train"])
        .arg(&train)
        .arg("--test")
        .arg(&empty)
        .arg("--frontal-train")
        .arg(&train)
        .arg("--frontal-test")
        .arg(&empty)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 2);
    assert!(stderr_of(&output).contains("ratio"));
}

#[test]
fn ma_reports_mean_accuracy_and_error_reduction() {
    let dir = TempDir::new().unwrap();
    let predictions = dir.path().join("predictions.csv");
    std::fs::write(
        &predictions,
        "image_id,prediction,label\np1,1,1\np2,0,0\np3,1,1\np4,0,0\n",
    )
    .unwrap();

    let output = wildface()
        .args(["ma", "--baseline", "92.62", "--predictions"])
        .arg(&predictions)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    assert_eq!(
        stdout_of(&output),
        "metric,value\nmean_accuracy,1.0000\nerror_reduction_percent,100.00\n"
    );
}

#[test]
fn ma_json_format_reports_the_same_figures() {
    let dir = TempDir::new().unwrap();
    let predictions = dir.path().join("predictions.csv");
    std::fs::write(&predictions, "image_id,prediction,label\np1,1,1\np2,1,0\n").unwrap();

    let output = wildface()
        .args(["ma", "--format", "json", "--predictions"])
        .arg(&predictions)
        .output()
        .unwrap();

    assert_eq!(exit_code(&output), 0);
    let report: serde_json::Value = serde_json::from_str(&stdout_of(&output)).unwrap();
    assert_eq!(report["mean_accuracy"], 0.5);
}

#[test]
fn ma_rejects_malformed_rows() {
    let dir = TempDir::new().unwrap();
    let predictions = dir.path().join("predictions.csv");
    std::fs::write(&predictions, "image_id,prediction,label\np1,1\n").unwrap();

    let output =
        wildface().args(["ma", "--predictions"]).arg(&predictions).output().unwrap();

    assert_eq!(exit_code(&output), 2);
}

#[test]
fn famcheck_reports_pass_and_exits_zero() {
    let dir = TempDir::new().unwrap();
    let report_path = dir.path().join("report.json");

    let output =
        wildface().args(["famcheck", "--out"]).arg(&report_path).output().unwrap();

    assert_eq!(exit_code(&output), 0, "stderr: {}", stderr_of(&output));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    assert_eq!(report["grad"]["pass"], true);
    assert!(report["grad"]["max_rel_error"].as_f64().unwrap() < 1e-5);
    assert_eq!(report["invariants"]["cases"], 25);
    assert_eq!(report["invariants"]["shape_preserved"], true);
}

#[test]
fn famcheck_detects_injected_corruption() {
    let output = wildface().args(["famcheck", "--corrupt"]).output().unwrap();

    assert_eq!(exit_code(&output), 1);
    assert!(stderr_of(&output).contains("verification failed"));
}

#[test]
fn famcheck_rejects_invalid_dimensions() {
    let no_divisor =
        wildface().args(["famcheck", "--dims", "8x4x3", "--reduction", "5"]).output().unwrap();
    assert_eq!(exit_code(&no_divisor), 2);

    let zero_channel = wildface().args(["famcheck", "--dims", "0x4x3"]).output().unwrap();
    assert_eq!(exit_code(&zero_channel), 2);

    let not_a_triple = wildface().args(["famcheck", "--dims", "8x4"]).output().unwrap();
    assert_eq!(exit_code(&not_a_triple), 2);
}

#[test]
fn worker_env_must_be_a_positive_integer() {
    let dir = TempDir::new().unwrap();
    let poses = write_poses(dir.path(), &[]);
    let out = dir.path().join("out.csv");

    for bad in ["frog", "0", "-2"] {
        let output = wildface()
            .env("WILDFACE_WORKERS", bad)
            .args(["orient", "--poses"])
            .arg(&poses)
            .arg("--out")
            .arg(&out)
            .output()
            .unwrap();
        assert_eq!(exit_code(&output), 2, "WILDFACE_WORKERS={bad} must be rejected");
        assert!(stderr_of(&output).contains("WILDFACE_WORKERS"));
    }
}

#[test]
fn unknown_subcommand_is_a_usage_error() {
    let output = wildface().arg("frobnicate").output().unwrap();
    assert_eq!(exit_code(&output), 2);
}
