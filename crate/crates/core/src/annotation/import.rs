//! Ingests detector outputs from disk.
//!
//! Two layouts are understood:
//!
//! * `coco_results`: a JSON array of `{image_id, category_id, bbox: [x, y, w, h], score}`
//!   as written by common detector tooling.
//! * `flat_json`: one object per image,
//!   `{"image_id": str, "detections": [{"class": str, "confidence": float, "box": [x_min, y_min, x_max, y_max]}]}`,
//!   either as a JSON array of such objects or one object per line.
//!
//! Records without a confidence default to 1.0 and are counted in the
//! [`ImportReport`].

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::annotation::{RawDetection, APPLE};
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::fsio::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectionFormat {
    CocoResults,
    FlatJson,
}

impl DetectionFormat {
    /// Guesses the layout from the first record.
    pub fn detect(records: &[Value]) -> Option<Self> {
        let first = records.first()?.as_object()?;
        if first.contains_key("detections") {
            Some(DetectionFormat::FlatJson)
        } else if first.contains_key("bbox") {
            Some(DetectionFormat::CocoResults)
        } else {
            None
        }
    }
}

impl std::str::FromStr for DetectionFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coco_results" | "coco" => Ok(DetectionFormat::CocoResults),
            "flat_json" | "flat" => Ok(DetectionFormat::FlatJson),
            other => Err(Error::invalid(
                "format",
                format!("unknown detection format `{other}`"),
            )),
        }
    }
}

/// Resolves external identifiers while importing.
#[derive(Debug, Clone)]
pub struct ImportContext {
    /// External image id (COCO integer ids rendered as strings) to internal
    /// image id. When set, ids missing from the map are an error.
    pub image_ids: Option<BTreeMap<String, String>>,
    /// COCO category id to class label.
    pub categories: BTreeMap<i64, String>,
}

impl Default for ImportContext {
    fn default() -> Self {
        Self {
            image_ids: None,
            categories: BTreeMap::from([(1, APPLE.to_string())]),
        }
    }
}

impl ImportContext {
    pub fn with_known_images<I, S>(ids: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let image_ids = ids
            .into_iter()
            .map(|s| {
                let s = s.into();
                (s.clone(), s)
            })
            .collect();
        Self {
            image_ids: Some(image_ids),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImportReport {
    pub records: usize,
    pub detections: usize,
    /// Detections whose confidence was absent and defaulted to 1.0.
    pub defaulted_confidence: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ImportedDetections {
    pub per_image: BTreeMap<String, Vec<RawDetection>>,
    pub report: ImportReport,
}

pub fn import_detections(
    path: &Path,
    format: Option<DetectionFormat>,
    ctx: &ImportContext,
) -> Result<ImportedDetections> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_detections(&text, path, format, ctx)
}

/// Parses detections from an in-memory document; `origin` is only used in
/// error messages.
pub fn parse_detections(
    text: &str,
    origin: &Path,
    format: Option<DetectionFormat>,
    ctx: &ImportContext,
) -> Result<ImportedDetections> {
    let records = read_records(text, origin)?;
    let format = match format.or_else(|| DetectionFormat::detect(&records)) {
        Some(f) => f,
        None if records.is_empty() => DetectionFormat::FlatJson,
        None => {
            return Err(Error::record(
                origin,
                0,
                "bbox|detections",
                "cannot tell coco_results from flat_json",
            ))
        }
    };
    let mut out = ImportedDetections::default();
    let mut unknown = BTreeSet::new();
    let p = RecordParser { origin };
    for (idx, rec) in records.iter().enumerate() {
        out.report.records += 1;
        let obj = rec
            .as_object()
            .ok_or_else(|| Error::record(origin, idx, "<record>", "expected a JSON object"))?;
        let external = p.image_id(idx, obj.get("image_id"))?;
        let image_id = match &ctx.image_ids {
            Some(map) => match map.get(&external) {
                Some(id) => id.clone(),
                None => {
                    unknown.insert(external);
                    continue;
                }
            },
            None => external,
        };
        let entry = out.per_image.entry(image_id).or_default();
        match format {
            DetectionFormat::CocoResults => {
                let bbox = p.xywh(idx, "bbox", obj.get("bbox"))?;
                let category = obj
                    .get("category_id")
                    .and_then(Value::as_i64)
                    .ok_or_else(|| Error::record(origin, idx, "category_id", "missing or not an integer"))?;
                let class = ctx
                    .categories
                    .get(&category)
                    .cloned()
                    .unwrap_or_else(|| format!("category_{category}"));
                let conf = p.confidence(idx, "score", obj.get("score"), &mut out.report)?;
                entry.push(RawDetection {
                    bbox,
                    class_label: class,
                    confidence: conf,
                });
                out.report.detections += 1;
            }
            DetectionFormat::FlatJson => {
                let dets = obj
                    .get("detections")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::record(origin, idx, "detections", "missing or not an array"))?;
                for (j, d) in dets.iter().enumerate() {
                    let field = |f: &str| format!("detections[{j}].{f}");
                    let d = d
                        .as_object()
                        .ok_or_else(|| Error::record(origin, idx, field("<item>"), "expected an object"))?;
                    let class = d
                        .get("class")
                        .and_then(Value::as_str)
                        .filter(|s| !s.is_empty())
                        .ok_or_else(|| Error::record(origin, idx, field("class"), "missing or empty"))?;
                    let bbox = p.corners(idx, &field("box"), d.get("box"))?;
                    let conf =
                        p.confidence(idx, &field("confidence"), d.get("confidence"), &mut out.report)?;
                    entry.push(RawDetection {
                        bbox,
                        class_label: class.to_string(),
                        confidence: conf,
                    });
                    out.report.detections += 1;
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownImages {
            path: origin.to_path_buf(),
            ids: unknown.into_iter().collect(),
        });
    }
    Ok(out)
}

fn read_records(text: &str, origin: &Path) -> Result<Vec<Value>> {
    let trimmed = text.trim_start();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    if trimmed.starts_with('[') {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
        return Ok(v.as_array().cloned().unwrap_or_default());
    }
    // one object per line
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(v);
    }
    Ok(out)
}

struct RecordParser<'a> {
    origin: &'a Path,
}

impl RecordParser<'_> {
    fn err(&self, idx: usize, field: &str, msg: impl Into<String>) -> Error {
        Error::record(self.origin, idx, field, msg)
    }

    fn image_id(&self, idx: usize, v: Option<&Value>) -> Result<String> {
        match v {
            Some(Value::String(s)) if !s.is_empty() => Ok(s.clone()),
            Some(Value::Number(n)) => Ok(n.to_string()),
            _ => Err(self.err(idx, "image_id", "missing or not a string/integer")),
        }
    }

    fn four(&self, idx: usize, field: &str, v: Option<&Value>) -> Result<[f64; 4]> {
        let arr = v
            .and_then(Value::as_array)
            .filter(|a| a.len() == 4)
            .ok_or_else(|| self.err(idx, field, "expected an array of four numbers"))?;
        let mut out = [0.0; 4];
        for (o, x) in out.iter_mut().zip(arr) {
            *o = x
                .as_f64()
                .filter(|f| f.is_finite())
                .ok_or_else(|| self.err(idx, field, "non-numeric coordinate"))?;
        }
        Ok(out)
    }

    fn xywh(&self, idx: usize, field: &str, v: Option<&Value>) -> Result<BoundingBox> {
        let [x, y, w, h] = self.four(idx, field, v)?;
        if w <= 0.0 {
            return Err(self.err(idx, field, format!("width {w} must be positive")));
        }
        if h <= 0.0 {
            return Err(self.err(idx, field, format!("height {h} must be positive")));
        }
        BoundingBox::from_xywh(x, y, w, h).map_err(|e| self.err(idx, field, e.to_string()))
    }

    fn corners(&self, idx: usize, field: &str, v: Option<&Value>) -> Result<BoundingBox> {
        let c = self.four(idx, field, v)?;
        BoundingBox::try_from(c).map_err(|e| self.err(idx, field, e.to_string()))
    }

    fn confidence(
        &self,
        idx: usize,
        field: &str,
        v: Option<&Value>,
        report: &mut ImportReport,
    ) -> Result<f64> {
        match v {
            None | Some(Value::Null) => {
                report.defaulted_confidence += 1;
                Ok(1.0)
            }
            Some(x) => x
                .as_f64()
                .filter(|c| (0.0..=1.0).contains(c))
                .ok_or_else(|| self.err(idx, field, "confidence must be a number in [0, 1]")),
        }
    }
}

#[derive(Serialize)]
struct FlatRecord<'a> {
    image_id: &'a str,
    detections: &'a [RawDetection],
}

/// Serializes detections per image in the `flat_json` layout.
pub fn flat_json_string(per_image: &BTreeMap<String, Vec<RawDetection>>) -> Result<String> {
    let recs: Vec<FlatRecord<'_>> = per_image
        .iter()
        .map(|(id, dets)| FlatRecord {
            image_id: id,
            detections: dets,
        })
        .collect();
    Ok(serde_json::to_string_pretty(&recs)?)
}

pub fn write_flat_json(path: &Path, per_image: &BTreeMap<String, Vec<RawDetection>>) -> Result<()> {
    write_atomic(path, flat_json_string(per_image)?.as_bytes())
}
