use std::path::Path;
use std::process::{Command, Output};

use rope_core::dataset::{read_predictions, write_predictions, Manifest};

fn rope(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rope"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = rope(args, cwd);
    assert!(
        out.status.success(),
        "rope {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn json(text: &str) -> serde_json::Value {
    serde_json::from_str(text.trim()).unwrap()
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_eq!(rope(&["--help"], dir).status.code(), Some(0));
    assert_eq!(rope(&["bogus"], dir).status.code(), Some(1));
    assert_eq!(
        rope(&["fps", "--cloud", "cube", "--k", "many"], dir).status.code(),
        Some(1)
    );

    let empty = rope(&["synth", "--scenes", "0", "--out", "ds"], dir);
    assert_eq!(empty.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&empty.stderr).contains("empty dataset"));

    let missing = rope(&["run", "--manifest", "nope.json", "--out", "p.json"], dir);
    assert_eq!(missing.status.code(), Some(2));

    ok(&["synth", "--scenes", "1", "--out", "ds"], dir);
    let bad_conf = rope(
        &[
            "run",
            "--manifest",
            "ds/manifest.json",
            "--ransac-conf",
            "1.5",
            "--out",
            "p.json",
        ],
        dir,
    );
    assert_eq!(bad_conf.status.code(), Some(1));
    let unknown = rope(&["synth", "--scenes", "1", "--object", "teapot", "--out", "ds2"], dir);
    assert_eq!(unknown.status.code(), Some(2));
}

#[test]
fn clean_pipeline_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let synth = json(&ok(
        &[
            "synth", "--scenes", "4", "--object", "blob", "--object", "cube", "--out", "ds",
        ],
        dir,
    ));
    assert_eq!(synth["scenes"], 4);

    let run = json(&ok(&["run", "--manifest", "ds/manifest.json", "--out", "p.json"], dir));
    assert_eq!(run["valid"], 4);
    let eval = json(&ok(
        &[
            "eval",
            "--predictions",
            "p.json",
            "--manifest",
            "ds/manifest.json",
            "--out",
            "e",
        ],
        dir,
    ));
    assert_eq!(eval["pass_rate"], 100.0);

    let csv = std::fs::read_to_string(dir.join("e/report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv.starts_with("image_id,object_id,distance_mm,correct,fallback_used,inliers,mean_r,mean_c\n"));
    let bubble = std::fs::read_to_string(dir.join("e/bubble.csv")).unwrap();
    assert_eq!(bubble.lines().count(), 3);

    // Verification keeps every landmark on clean data, so both runs agree.
    ok(
        &[
            "run",
            "--manifest",
            "ds/manifest.json",
            "--no-filter",
            "--out",
            "q.json",
        ],
        dir,
    );
    let filtered = read_predictions(&dir.join("p.json")).unwrap();
    let unfiltered = read_predictions(&dir.join("q.json")).unwrap();
    for (a, b) in filtered.iter().zip(&unfiltered) {
        let (a, b) = (a.pose.unwrap(), b.pose.unwrap());
        assert!(a.rotation_error(&b) < 1e-9);
        assert!(a.translation_error(&b) < 1e-9);
    }
}

#[test]
fn ground_truth_scores_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--scenes", "3", "--out", "ds"], dir);
    ok(&["run", "--manifest", "ds/manifest.json", "--out", "p.json"], dir);
    let manifest = Manifest::load(&dir.join("ds/manifest.json")).unwrap();
    let mut preds = read_predictions(&dir.join("p.json")).unwrap();
    for (p, s) in preds.iter_mut().zip(&manifest.scenes) {
        p.pose = Some(s.gt_pose);
    }
    write_predictions(&dir.join("gt.json"), &preds).unwrap();
    let eval = json(&ok(
        &[
            "eval",
            "--predictions",
            "gt.json",
            "--manifest",
            "ds/manifest.json",
            "--out",
            "e",
        ],
        dir,
    ));
    assert_eq!(eval["pass_rate"], 100.0);
    assert_eq!(eval["auc"], 100.0);
}

#[test]
fn missing_predictions_count_as_failures() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    ok(&["synth", "--scenes", "2", "--out", "ds"], dir);
    ok(&["run", "--manifest", "ds/manifest.json", "--out", "p.json"], dir);
    let mut preds = read_predictions(&dir.join("p.json")).unwrap();
    preds.truncate(1);
    write_predictions(&dir.join("half.json"), &preds).unwrap();
    let eval = json(&ok(
        &[
            "eval",
            "--predictions",
            "half.json",
            "--manifest",
            "ds/manifest.json",
            "--out",
            "e",
        ],
        dir,
    ));
    assert_eq!(eval["pass_rate"], 50.0);
    let csv = std::fs::read_to_string(dir.join("e/report.csv")).unwrap();
    assert!(csv.lines().any(|l| l.starts_with("000001,blob,inf,false")));
}
