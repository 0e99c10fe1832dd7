//! Command-level behavior: exit codes, diagnostics that name the offending
//! file, and the contract that `pipeline` equals its stages run by hand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use reticula::{
    read_annotations, read_report, save_stack, write_annotations, AnnotationSet, Volume,
};

fn reticula_cmd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reticula"))
        .args(args)
        .output()
        .expect("spawning the reticula binary")
}

fn ok(args: &[&str]) {
    let out = reticula_cmd(args);
    assert!(
        out.status.success(),
        "`reticula {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Runs a command expected to fail and returns its stderr.
fn fails(args: &[&str]) -> String {
    let out = reticula_cmd(args);
    assert!(
        !out.status.success(),
        "`reticula {}` unexpectedly succeeded",
        args.join(" ")
    );
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_small_phantom_spec(dir: &Path) -> PathBuf {
    let path = dir.join("spec.json");
    std::fs::write(
        &path,
        r#"{
  "width": 32, "height": 32, "depth": 6,
  "n_reticula": 4,
  "reticulum_radius_range": [1, 2],
  "reticulum_length_range": [2, 4],
  "reticulum_intensity": 40,
  "n_distractors": 1,
  "background_intensity": 200,
  "noise_sigma": 4.0,
  "drift_per_slice": 1,
  "rng_seed": 1234
}"#,
    )
    .unwrap();
    path
}

#[test]
fn missing_manifest_fails_and_names_the_path() {
    let dir = tempfile::TempDir::new().unwrap();
    let stderr = fails(&[
        "filter",
        "/no/such/stack.json",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(stderr.contains("/no/such/stack.json"), "stderr: {stderr}");
}

#[test]
fn constant_volume_filters_to_constant_volume() {
    let dir = tempfile::TempDir::new().unwrap();
    let volume = Volume::filled(16, 16, 4, 137).unwrap();
    save_stack(&volume, &dir.path().join("in")).unwrap();
    ok(&[
        "filter",
        dir.path().join("in/stack.json").to_str().unwrap(),
        dir.path().join("out").to_str().unwrap(),
        "--sharpen",
    ]);
    for stack in ["bilateral", "sharpened"] {
        let path = dir.path().join("out").join(stack).join("stack.json");
        let filtered = reticula::load_stack(&path).unwrap();
        // Both filters are weighted averages / zero-sum responses on a
        // constant image, so the value must pass through untouched.
        assert!(
            filtered.voxels().iter().all(|&v| v == 137),
            "{stack} output is not constant"
        );
    }
}

#[test]
fn all_bright_stacks_detect_nothing() {
    let dir = tempfile::TempDir::new().unwrap();
    let volume = Volume::filled(16, 16, 4, 220).unwrap();
    save_stack(&volume, &dir.path().join("b")).unwrap();
    save_stack(&volume, &dir.path().join("s")).unwrap();
    let annotations = dir.path().join("annotations.json");
    ok(&[
        "detect",
        dir.path().join("b/stack.json").to_str().unwrap(),
        dir.path().join("s/stack.json").to_str().unwrap(),
        annotations.to_str().unwrap(),
    ]);
    let (set, tracks) = read_annotations(&annotations).unwrap();
    assert_eq!(set.iter().count(), 0);
    assert!(tracks.is_empty());
}

#[test]
fn mismatched_stack_dimensions_fail_detect() {
    let dir = tempfile::TempDir::new().unwrap();
    save_stack(
        &Volume::filled(16, 16, 4, 220).unwrap(),
        &dir.path().join("b"),
    )
    .unwrap();
    save_stack(
        &Volume::filled(16, 16, 3, 220).unwrap(),
        &dir.path().join("s"),
    )
    .unwrap();
    let stderr = fails(&[
        "detect",
        dir.path().join("b/stack.json").to_str().unwrap(),
        dir.path().join("s/stack.json").to_str().unwrap(),
        dir.path().join("annotations.json").to_str().unwrap(),
    ]);
    assert!(stderr.contains("mismatch"), "stderr: {stderr}");
}

#[test]
fn identical_annotations_score_perfectly() {
    let dir = tempfile::TempDir::new().unwrap();
    let spec = write_small_phantom_spec(dir.path());
    let phantom_dir = dir.path().join("phantom");
    ok(&[
        "phantom",
        spec.to_str().unwrap(),
        phantom_dir.to_str().unwrap(),
    ]);
    let truth = phantom_dir.join("truth.json");
    let report_path = dir.path().join("report.json");
    ok(&[
        "eval",
        report_path.to_str().unwrap(),
        "--pred",
        truth.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);
    let report = read_report(&report_path).unwrap();
    assert_eq!(report.precision, Some(1.0));
    assert_eq!(report.recall, Some(1.0));
    assert_eq!(report.fp, 0);
    assert_eq!(report.fn_, 0);
}

#[test]
fn empty_predictions_yield_null_precision() {
    let dir = tempfile::TempDir::new().unwrap();
    let spec = write_small_phantom_spec(dir.path());
    let phantom_dir = dir.path().join("phantom");
    ok(&[
        "phantom",
        spec.to_str().unwrap(),
        phantom_dir.to_str().unwrap(),
    ]);
    let empty = dir.path().join("empty.json");
    write_annotations(&empty, &AnnotationSet::new(32, 32, 6), &[]).unwrap();
    let report_path = dir.path().join("report.json");
    ok(&[
        "eval",
        report_path.to_str().unwrap(),
        "--pred",
        empty.to_str().unwrap(),
        "--truth",
        phantom_dir.join("truth.json").to_str().unwrap(),
    ]);
    // An empty prediction set has no denominator for precision; the report
    // records null rather than an arbitrary number.
    let text = std::fs::read_to_string(&report_path).unwrap();
    assert!(text.contains("\"precision\": null"), "report: {text}");
    let report = read_report(&report_path).unwrap();
    assert_eq!(report.precision, None);
    assert_eq!(report.recall, Some(0.0));
    assert_eq!(report.tp, 0);
}

#[test]
fn eval_rejects_incoherent_argument_combinations() {
    let dir = tempfile::TempDir::new().unwrap();
    let report = dir.path().join("report.json");
    // --pred without --truth
    fails(&["eval", report.to_str().unwrap(), "--pred", "p.json"]);
    // --counts together with --pred
    fails(&[
        "eval",
        report.to_str().unwrap(),
        "--pred",
        "p.json",
        "--truth",
        "t.json",
        "--counts",
        "1",
        "2",
        "3",
    ]);
    // neither mode
    let stderr = fails(&["eval", report.to_str().unwrap()]);
    assert!(stderr.contains("--counts"), "stderr: {stderr}");
    assert!(!report.exists(), "no report should be written on failure");
}

#[test]
fn malformed_config_fails_and_names_the_key() {
    let dir = tempfile::TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(&config, r#"{"grow_bilateral": {"dark_treshold": 90}}"#).unwrap();
    let stderr = fails(&[
        "filter",
        "whatever.json",
        dir.path().join("out").to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
    ]);
    assert!(stderr.contains("dark_treshold"), "stderr: {stderr}");
    assert!(stderr.contains("config.json"), "stderr: {stderr}");
}

#[test]
fn malformed_phantom_spec_fails_and_names_the_file() {
    let dir = tempfile::TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"width": 32}"#).unwrap();
    let stderr = fails(&[
        "phantom",
        spec.to_str().unwrap(),
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert!(stderr.contains("spec.json"), "stderr: {stderr}");
}

#[test]
fn pipeline_without_truth_writes_no_report() {
    let dir = tempfile::TempDir::new().unwrap();
    let spec = write_small_phantom_spec(dir.path());
    let phantom_dir = dir.path().join("phantom");
    ok(&[
        "phantom",
        spec.to_str().unwrap(),
        phantom_dir.to_str().unwrap(),
    ]);
    let out = dir.path().join("out");
    ok(&[
        "pipeline",
        phantom_dir.join("stack.json").to_str().unwrap(),
        out.to_str().unwrap(),
    ]);
    assert!(out.join("annotations.json").exists());
    assert!(!out.join("report.json").exists());
}

#[test]
fn pipeline_equals_stage_by_stage_composition() {
    let dir = tempfile::TempDir::new().unwrap();
    let spec = write_small_phantom_spec(dir.path());
    let phantom_dir = dir.path().join("phantom");
    ok(&[
        "phantom",
        spec.to_str().unwrap(),
        phantom_dir.to_str().unwrap(),
    ]);
    let manifest = phantom_dir.join("stack.json");
    let truth = phantom_dir.join("truth.json");

    let one_shot = dir.path().join("one_shot");
    ok(&[
        "pipeline",
        manifest.to_str().unwrap(),
        one_shot.to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);

    let staged = dir.path().join("staged");
    ok(&[
        "filter",
        manifest.to_str().unwrap(),
        staged.to_str().unwrap(),
        "--sharpen",
    ]);
    ok(&[
        "detect",
        staged.join("bilateral/stack.json").to_str().unwrap(),
        staged.join("sharpened/stack.json").to_str().unwrap(),
        staged.join("annotations_detect.json").to_str().unwrap(),
    ]);
    ok(&[
        "track",
        staged.join("bilateral/stack.json").to_str().unwrap(),
        staged.join("annotations_detect.json").to_str().unwrap(),
        staged.join("annotations.json").to_str().unwrap(),
    ]);
    ok(&[
        "eval",
        staged.join("report.json").to_str().unwrap(),
        "--pred",
        staged.join("annotations.json").to_str().unwrap(),
        "--truth",
        truth.to_str().unwrap(),
    ]);

    assert_eq!(
        dir_bytes(&one_shot),
        dir_bytes(&staged),
        "pipeline artifacts differ from staged artifacts"
    );
}

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path
                    .strip_prefix(root)
                    .unwrap()
                    .to_str()
                    .unwrap()
                    .to_string();
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
