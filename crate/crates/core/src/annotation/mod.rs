//! Automatic annotation: raw detector output is filtered by class label,
//! then by confidence, then by non-maximum suppression, and the survivors
//! become dataset annotations.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, FieldError, Result};
use crate::geometry::{self, check_unit_interval, BoundingBox, ScoredBox};

mod blob;
mod import;
mod simulated;

pub use blob::{BlobAnnotator, BlobColor};
pub use import::{
    flat_json_string, import_detections, parse_detections, write_flat_json, DetectionFormat, ImportContext,
    ImportReport, ImportedDetections,
};
pub use simulated::SimulatedDetector;

/// Class label the default filter keeps.
pub const APPLE: &str = "apple";

/// One box as emitted by an external (or simulated) detector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDetection {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    #[serde(rename = "class")]
    pub class_label: String,
    pub confidence: f64,
}

impl RawDetection {
    pub fn new(bbox: BoundingBox, class_label: impl Into<String>, confidence: f64) -> Result<Self> {
        let class_label = class_label.into();
        if class_label.is_empty() {
            return Err(Error::invalid("class", "class label must be non-empty"));
        }
        check_unit_interval("confidence", confidence)?;
        Ok(Self {
            bbox,
            class_label,
            confidence,
        })
    }

    pub fn scored(&self) -> ScoredBox {
        ScoredBox {
            bbox: self.bbox,
            confidence: self.confidence,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub allowed_classes: BTreeSet<String>,
    pub confidence_threshold: f64,
    pub nms_iou_threshold: f64,
}

impl Default for FilterConfig {
    /// Keep `apple` at confidence >= 0.70, suppress overlaps above IoU 0.2.
    fn default() -> Self {
        Self {
            allowed_classes: BTreeSet::from([APPLE.to_string()]),
            confidence_threshold: 0.70,
            nms_iou_threshold: 0.2,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.allowed_classes.is_empty() {
            errs.push(FieldError::new("allowed_classes", "must not be empty"));
        }
        for (field, v) in [
            ("confidence_threshold", self.confidence_threshold),
            ("nms_iou_threshold", self.nms_iou_threshold),
        ] {
            if !(0.0..=1.0).contains(&v) {
                errs.push(FieldError::new(field, format!("{v} is outside [0, 1]")));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationSource {
    Imported,
    Filtered,
    MockGroundTruth,
    HumanReviewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    pub source: AnnotationSource,
}

impl AnnotationSet {
    pub fn new(image_id: impl Into<String>, source: AnnotationSource) -> Self {
        Self {
            image_id: image_id.into(),
            boxes: Vec::new(),
            source,
        }
    }
}

/// Detection counts after each filter stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterTrace {
    pub input: usize,
    pub after_class: usize,
    pub after_confidence: usize,
    pub after_nms: usize,
}

pub fn filter_by_class(dets: &[RawDetection], allowed: &BTreeSet<String>) -> Vec<RawDetection> {
    dets.iter()
        .filter(|d| allowed.contains(&d.class_label))
        .cloned()
        .collect()
}

/// Keeps detections with `confidence >= threshold`.
pub fn filter_by_confidence(dets: &[RawDetection], threshold: f64) -> Vec<RawDetection> {
    dets.iter()
        .filter(|d| d.confidence >= threshold)
        .cloned()
        .collect()
}

/// Class-agnostic NMS over detections; survivors come back in ranking order.
pub fn suppress_overlaps(dets: &[RawDetection], iou_threshold: f64) -> Vec<RawDetection> {
    let scored: Vec<ScoredBox> = dets.iter().map(RawDetection::scored).collect();
    geometry::nms_indices(&scored, iou_threshold)
        .into_iter()
        .map(|i| dets[i].clone())
        .collect()
}

/// Runs class, confidence and NMS filters in that order and returns the
/// surviving detections with their stage counts.
pub fn filter_detections(
    dets: &[RawDetection],
    cfg: &FilterConfig,
) -> Result<(Vec<RawDetection>, FilterTrace)> {
    cfg.validate()?;
    let by_class = filter_by_class(dets, &cfg.allowed_classes);
    let by_conf = filter_by_confidence(&by_class, cfg.confidence_threshold);
    let kept = suppress_overlaps(&by_conf, cfg.nms_iou_threshold);
    let trace = FilterTrace {
        input: dets.len(),
        after_class: by_class.len(),
        after_confidence: by_conf.len(),
        after_nms: kept.len(),
    };
    Ok((kept, trace))
}

pub fn run_filter_pipeline(
    image_id: &str,
    dets: &[RawDetection],
    cfg: &FilterConfig,
) -> Result<AnnotationSet> {
    let (kept, _) = filter_detections(dets, cfg)?;
    Ok(AnnotationSet {
        image_id: image_id.to_string(),
        boxes: kept.into_iter().map(|d| d.bbox).collect(),
        source: AnnotationSource::Filtered,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn det(x: f64, y: f64, size: f64, class: &str, conf: f64) -> RawDetection {
        RawDetection::new(
            BoundingBox::new(x, y, x + size, y + size).unwrap(),
            class,
            conf,
        )
        .unwrap()
    }

    fn apples() -> BTreeSet<String> {
        BTreeSet::from([APPLE.to_string()])
    }

    #[test]
    fn class_filter_drops_other_labels() {
        let dets = vec![det(0.0, 0.0, 5.0, "apple", 0.9), det(9.0, 0.0, 5.0, "orange", 0.95)];
        assert_eq!(filter_by_class(&dets, &apples()), vec![dets[0].clone()]);
        assert!(filter_by_class(&[], &apples()).is_empty());
        let all = BTreeSet::from(["apple".to_string(), "orange".to_string()]);
        assert_eq!(filter_by_class(&dets, &all), dets);
    }

    #[test]
    fn confidence_boundary_is_inclusive() {
        let dets: Vec<_> = [0.69, 0.70, 0.71]
            .iter()
            .enumerate()
            .map(|(i, &c)| det(i as f64 * 10.0, 0.0, 5.0, "apple", c))
            .collect();
        let kept = filter_by_confidence(&dets, 0.70);
        assert_eq!(kept, dets[1..].to_vec());
        assert_eq!(filter_by_confidence(&dets, 0.0), dets);
        let mut with_one = dets.clone();
        with_one.push(det(50.0, 0.0, 5.0, "apple", 1.0));
        assert_eq!(filter_by_confidence(&with_one, 1.0), vec![with_one[3].clone()]);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = FilterConfig {
            allowed_classes: BTreeSet::new(),
            confidence_threshold: 1.5,
            ..FilterConfig::default()
        };
        match cfg.validate() {
            Err(Error::Validation(errs)) => assert_eq!(errs.len(), 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(RawDetection::new(BoundingBox::new(0.0, 0.0, 1.0, 1.0).unwrap(), "", 0.5).is_err());
    }

    #[test]
    fn pass_through_when_nothing_filters() {
        let dets = vec![
            det(0.0, 0.0, 5.0, "apple", 0.9),
            det(10.0, 0.0, 5.0, "apple", 0.8),
            det(20.0, 0.0, 5.0, "apple", 0.75),
        ];
        let set = run_filter_pipeline("img", &dets, &FilterConfig::default()).unwrap();
        assert_eq!(set.boxes, dets.iter().map(|d| d.bbox).collect::<Vec<_>>());
        assert_eq!(set.source, AnnotationSource::Filtered);
        assert!(run_filter_pipeline("img", &[], &FilterConfig::default())
            .unwrap()
            .boxes
            .is_empty());
    }

    #[test]
    fn nms_before_class_filter_changes_result() {
        // A confident non-apple box overlapping an apple: class-agnostic NMS
        // run first would suppress the apple and then lose the orange too.
        let orange = det(0.0, 0.0, 10.0, "orange", 0.95);
        let apple = det(1.0, 1.0, 10.0, "apple", 0.90);
        let dets = vec![orange, apple.clone()];
        let cfg = FilterConfig::default();

        let fixed_order = run_filter_pipeline("x", &dets, &cfg).unwrap().boxes;
        assert_eq!(fixed_order, vec![apple.bbox]);

        let nms_first = suppress_overlaps(&dets, cfg.nms_iou_threshold);
        let swapped = filter_by_confidence(
            &filter_by_class(&nms_first, &cfg.allowed_classes),
            cfg.confidence_threshold,
        );
        assert!(swapped.is_empty());
    }

    fn arb_det() -> impl Strategy<Value = RawDetection> {
        (
            0.0..60.0f64,
            0.0..60.0f64,
            1.0..25.0f64,
            prop::sample::select(vec!["apple", "orange", "sports ball"]),
            0.0..=1.0f64,
        )
            .prop_map(|(x, y, s, c, conf)| det(x, y, s, c, conf))
    }

    proptest! {
        #[test]
        fn pipeline_invariants(dets in prop::collection::vec(arb_det(), 0..30),
                               conf in 0.0..=1.0f64, nms_t in 0.0..=1.0f64) {
            let cfg = FilterConfig {
                allowed_classes: apples(),
                confidence_threshold: conf,
                nms_iou_threshold: nms_t,
            };
            let (kept, trace) = filter_detections(&dets, &cfg).unwrap();
            prop_assert!(trace.after_class <= trace.input);
            prop_assert!(trace.after_confidence <= trace.after_class);
            prop_assert!(trace.after_nms <= trace.after_confidence);
            for k in &kept {
                prop_assert!(dets.contains(k));
            }

            // class and confidence filters commute
            let a = filter_by_confidence(&filter_by_class(&dets, &cfg.allowed_classes), conf);
            let b = filter_by_class(&filter_by_confidence(&dets, conf), &cfg.allowed_classes);
            prop_assert_eq!(a, b);

            // greedy NMS only lets higher-ranked boxes suppress lower ones, so a
            // confidence cut commutes with it
            let nms_then_conf = filter_by_confidence(
                &suppress_overlaps(&filter_by_class(&dets, &cfg.allowed_classes), nms_t), conf);
            prop_assert_eq!(&nms_then_conf, &kept);

            // idempotent on its own output
            let (again, _) = filter_detections(&kept, &cfg).unwrap();
            prop_assert_eq!(again, kept);
        }
    }
}
