mod common;

use std::path::{Path, PathBuf};

use synthdet_core::eval::render_table;
use synthdet_core::orchestrator::{run_experiment, ExperimentSpec};
use synthdet_core::{Error, Metric};

fn write_runs(dir: &Path, prefix: &str, rows: &[[f64; 3]]) -> Vec<PathBuf> {
    rows.iter()
        .enumerate()
        .map(|(i, [a50, range, a75])| {
            let p = dir.join(format!("{prefix}-{i}.json"));
            let body = serde_json::json!({ "AP@0.50": a50, "AP@0.5:0.05:0.95": range, "AP@0.75": a75 });
            std::fs::write(&p, body.to_string()).unwrap();
            p
        })
        .collect()
}

const BASELINE: [[f64; 3]; 5] = [
    [0.70, 0.36, 0.34],
    [0.69, 0.35, 0.31],
    [0.71, 0.37, 0.36],
    [0.70, 0.37, 0.33],
    [0.70, 0.35, 0.36],
];
const GENERATED: [[f64; 3]; 5] = [
    [0.61, 0.30, 0.25],
    [0.60, 0.29, 0.24],
    [0.62, 0.31, 0.27],
    [0.63, 0.30, 0.23],
    [0.59, 0.30, 0.26],
];

#[test]
fn table_layout_from_five_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new(
        write_runs(dir.path(), "gen", &GENERATED),
        write_runs(dir.path(), "base", &BASELINE),
    );
    let report = run_experiment(&spec).unwrap();
    let row = report.row(Metric::Ap50).unwrap();
    assert!((row.mean - 0.61).abs() < 1e-12);
    assert_eq!(row.per_run.len(), 5);
    let sd = (GENERATED.iter().map(|r| (r[0] - 0.61).powi(2)).sum::<f64>() / 4.0).sqrt();
    assert!((row.sd.unwrap() - sd).abs() < 1e-12);
    assert!((report.baseline.as_ref().unwrap().row(Metric::Ap50).unwrap().mean - 0.70).abs() < 1e-12);

    let table = render_table(&report);
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Dataset"));
    assert!(lines[2].starts_with("Baseline"));
    assert!(lines[3].starts_with("Generated"));
    let diff: Vec<&str> = lines[4].split(" | ").map(str::trim).collect();
    assert_eq!(diff, ["Difference", "0.09", "0.06", "0.09"]);
}

#[test]
fn identical_sides_give_zero_difference() {
    let dir = tempfile::tempdir().unwrap();
    let files = write_runs(dir.path(), "x", &BASELINE);
    let report = run_experiment(&ExperimentSpec::new(files.clone(), files)).unwrap();
    assert!(report.metrics.iter().all(|r| r.difference == Some(0.0)));
}

#[test]
fn single_repeat_omits_sd() {
    let dir = tempfile::tempdir().unwrap();
    let spec = ExperimentSpec::new(
        write_runs(dir.path(), "g", &GENERATED[..1]),
        write_runs(dir.path(), "b", &BASELINE[..1]),
    );
    let report = run_experiment(&spec).unwrap();
    assert!(report.metrics.iter().all(|r| r.sd.is_none()));
}

#[test]
fn file_count_must_match_repeats() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::new(
        write_runs(dir.path(), "g", &GENERATED),
        write_runs(dir.path(), "b", &BASELINE[..4]),
    );
    spec.repeats = 5;
    match run_experiment(&spec) {
        Err(Error::Validation(errs)) => assert_eq!(errs[0].field, "baseline"),
        other => panic!("unexpected {other:?}"),
    }
}

fn flat(image: &str, dets: &[([f64; 4], f64)]) -> serde_json::Value {
    serde_json::json!({
        "image_id": image,
        "detections": dets.iter().map(|(b, c)| serde_json::json!({"class": "apple", "confidence": c, "box": b})).collect::<Vec<_>>(),
    })
}

#[test]
fn detection_files_scored_against_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.jsonl");
    let lines = [
        flat("a", &[([0.0, 0.0, 10.0, 10.0], 1.0), ([20.0, 0.0, 30.0, 10.0], 1.0)]),
        flat("b", &[([0.0, 0.0, 8.0, 8.0], 1.0)]),
    ];
    std::fs::write(&gt, lines.iter().map(|l| l.to_string() + "\n").collect::<String>()).unwrap();

    // coco_results with integer-free string ids: image ids must match the truth
    let perfect = dir.path().join("perfect.json");
    std::fs::write(
        &perfect,
        serde_json::json!([
            {"image_id": "a", "category_id": 1, "bbox": [0, 0, 10, 10], "score": 0.9},
            {"image_id": "a", "category_id": 1, "bbox": [20, 0, 10, 10], "score": 0.8},
            {"image_id": "b", "category_id": 1, "bbox": [0, 0, 8, 8], "score": 0.7}
        ])
        .to_string(),
    )
    .unwrap();
    let half = dir.path().join("half.json");
    std::fs::write(
        &half,
        serde_json::Value::Array(vec![flat("a", &[([0.0, 0.0, 10.0, 10.0], 0.9), ([50.0, 50.0, 60.0, 60.0], 0.95)])]).to_string(),
    )
    .unwrap();

    let mut spec = ExperimentSpec::new(vec![half.clone()], vec![perfect.clone()]);
    spec.ground_truth = Some(gt.clone());
    let report = run_experiment(&spec).unwrap();
    let base = report.baseline.as_ref().unwrap();
    assert_eq!(base.row(Metric::Ap50).unwrap().mean, 1.0);
    assert_eq!(base.row(Metric::Ap50To95).unwrap().mean, 1.0);
    // ranked [FP, TP] over 3 GTs: precision 1/2 up to recall 1/3
    let cand = report.row(Metric::Ap50).unwrap().mean;
    assert!((cand - 34.0 * 0.5 / 101.0).abs() < 1e-12, "{cand}");

    let stray = dir.path().join("stray.json");
    std::fs::write(&stray, serde_json::Value::Array(vec![flat("zzz", &[([0.0, 0.0, 1.0, 1.0], 0.5)])]).to_string()).unwrap();
    let mut bad = ExperimentSpec::new(vec![stray.clone()], vec![perfect]);
    bad.ground_truth = Some(gt);
    match run_experiment(&bad) {
        Err(Error::UnknownImages { path, ids }) => {
            assert_eq!(path, stray);
            assert_eq!(ids, vec!["zzz".to_string()]);
        }
        other => panic!("unexpected {other:?}"),
    }

    let no_gt = ExperimentSpec::new(vec![half.clone()], vec![half]);
    assert!(matches!(run_experiment(&no_gt), Err(Error::Validation(_))));
}
