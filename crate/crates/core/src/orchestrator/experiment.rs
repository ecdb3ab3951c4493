use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::{parse_detections, ImportContext, APPLE};
use crate::dataset::parse_coco;
use crate::error::{Error, Result};
use crate::eval::{
    aggregate_runs, diff_report, evaluate_run, load_run, ApConfig, EvalReport, ImageGroundTruth,
    ImagePredictions, Metric,
};

fn default_repeats() -> usize {
    5
}

fn default_candidate_label() -> String {
    "Generated".into()
}

fn default_baseline_label() -> String {
    "Baseline".into()
}

/// Repeated evaluation of a candidate against a baseline.
///
/// Each listed file is either a per-run report (a saved report or a flat
/// `{"AP@0.50": ..}` object) or a detections file, which is scored against
/// `ground_truth`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub candidate: Vec<PathBuf>,
    pub baseline: Vec<PathBuf>,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub ap: ApConfig,
    #[serde(default = "default_candidate_label")]
    pub candidate_label: String,
    #[serde(default = "default_baseline_label")]
    pub baseline_label: String,
}

impl ExperimentSpec {
    pub fn new(candidate: Vec<PathBuf>, baseline: Vec<PathBuf>) -> Self {
        Self {
            repeats: candidate.len(),
            candidate,
            baseline,
            ground_truth: None,
            ap: ApConfig::default(),
            candidate_label: default_candidate_label(),
            baseline_label: default_baseline_label(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.repeats == 0 {
            errs.push(crate::FieldError::new("repeats", "must be at least 1"));
        }
        for (field, files) in [("candidate", &self.candidate), ("baseline", &self.baseline)] {
            if files.len() != self.repeats {
                errs.push(crate::FieldError::new(
                    field,
                    format!("{} files for {} repeats", files.len(), self.repeats),
                ));
            }
        }
        if let Err(Error::Validation(e)) = self.ap.validate() {
            errs.extend(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

fn looks_like_report(v: &Value) -> bool {
    v.as_object().is_some_and(|o| {
        o.contains_key("metrics") || Metric::ALL.iter().any(|m| o.contains_key(m.label()))
    })
}

/// Reads ground truth from a COCO instances file or a flat detections file
/// (confidences ignored). Only `apple` boxes are kept.
pub fn load_ground_truth(path: &Path) -> Result<ImageGroundTruth> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text.trim_start().chars().next();
    if first == Some('{') {
        if let Ok(v) = serde_json::from_str::<Value>(&text) {
            if v.get("images").is_some() && v.get("annotations").is_some() {
                let m = parse_coco(&text, path)?;
                return Ok(m
                    .images
                    .into_iter()
                    .map(|r| (r.image_id, r.annotations.boxes))
                    .collect());
            }
        }
    }
    let dets = parse_detections(&text, path, None, &ImportContext::default())?;
    Ok(dets
        .per_image
        .into_iter()
        .map(|(id, d)| (id, d.into_iter().filter(|d| d.class_label == APPLE).map(|d| d.bbox).collect()))
        .collect())
}

/// Loads predictions, rejecting image ids absent from the ground truth.
pub fn load_predictions(path: &Path, gt: &ImageGroundTruth) -> Result<ImagePredictions> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = ImportContext::with_known_images(gt.keys().cloned());
    let dets = parse_detections(&text, path, None, &ctx)?;
    Ok(dets
        .per_image
        .into_iter()
        .map(|(id, d)| (id, d.iter().filter(|d| d.class_label == APPLE).map(|d| d.scored()).collect()))
        .collect())
}

fn score_file(path: &Path, gt: Option<&ImageGroundTruth>, cfg: &ApConfig) -> Result<EvalReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_report = serde_json::from_str::<Value>(&text).is_ok_and(|v| looks_like_report(&v));
    if is_report {
        return load_run(path);
    }
    let gt = gt.ok_or_else(|| {
        Error::invalid(
            "ground_truth",
            format!("{} holds detections, so a ground-truth file is required", path.display()),
        )
    })?;
    let preds = load_predictions(path, gt)?;
    let label = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    evaluate_run(&label, &preds, gt, cfg)
}

/// Scores every repeat, aggregates each side and attaches the difference.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<EvalReport> {
    spec.validate()?;
    let gt = spec.ground_truth.as_deref().map(load_ground_truth).transpose()?;
    let score = |files: &[PathBuf]| {
        files
            .iter()
            .map(|p| score_file(p, gt.as_ref(), &spec.ap))
            .collect::<Result<Vec<_>>>()
    };
    let candidate = aggregate_runs(&spec.candidate_label, &score(&spec.candidate)?)?;
    let baseline = aggregate_runs(&spec.baseline_label, &score(&spec.baseline)?)?;
    diff_report(&candidate, &baseline)
}
