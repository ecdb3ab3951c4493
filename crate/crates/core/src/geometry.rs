//! Axis-aligned bounding boxes, intersection-over-union and greedy
//! non-maximum suppression.
//!
//! Boxes use continuous corner coordinates `(x_min, y_min, x_max, y_max)` in
//! pixels. Every format converter in the crate normalizes into this
//! convention, so YOLO center/size and COCO `xywh` never leak past import.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle with strictly positive area and finite corners.
///
/// Serialized as the four-element array `[x_min, y_min, x_max, y_max]`;
/// deserialization re-validates the invariants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(format!("non-finite coordinate in {coords:?}")));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(format!("empty extent in {coords:?}")));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from COCO-style `[x, y, width, height]`.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self> {
        if width.is_nan() || height.is_nan() || width <= 0.0 || height <= 0.0 {
            return Err(Error::InvalidBox(format!(
                "non-positive size {width}x{height}"
            )));
        }
        Self::new(x, y, x + width, y + height)
    }

    /// Axis-aligned square that inscribes a circle.
    pub fn around_circle(cx: f64, cy: f64, radius: f64) -> Result<Self> {
        Self::new(cx - radius, cy - radius, cx + radius, cy + radius)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    pub fn area(&self) -> f64 {
        area(self)
    }

    /// True when the box lies inside `[0, width] x [0, height]`.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_min >= 0.0 && self.y_min >= 0.0 && self.x_max <= width && self.y_max <= height
    }

    /// Lexicographic order on `(x_min, y_min, x_max, y_max)`; used to break
    /// confidence ties deterministically.
    pub fn lexicographic_cmp(&self, other: &Self) -> Ordering {
        self.corners()
            .iter()
            .zip(other.corners().iter())
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }

    /// Applies an independent scale to each axis.
    pub fn scaled(&self, sx: f64, sy: f64) -> Result<Self> {
        Self::new(
            self.x_min * sx,
            self.y_min * sy,
            self.x_max * sx,
            self.y_max * sy,
        )
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(c: [f64; 4]) -> Result<Self> {
        Self::new(c[0], c[1], c[2], c[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.corners()
    }
}

/// A box paired with a detector confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredBox {
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl ScoredBox {
    pub fn new(bbox: BoundingBox, confidence: f64) -> Result<Self> {
        check_unit_interval("confidence", confidence)?;
        Ok(Self { bbox, confidence })
    }

    /// Ranking order: descending confidence, then ascending lexicographic box.
    pub fn rank_cmp(&self, other: &Self) -> Ordering {
        other
            .confidence
            .total_cmp(&self.confidence)
            .then_with(|| self.bbox.lexicographic_cmp(&other.bbox))
    }
}

pub(crate) fn check_unit_interval(field: &str, value: f64) -> Result<()> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{value} is outside [0, 1]")))
    }
}

pub fn area(b: &BoundingBox) -> f64 {
    b.width() * b.height()
}

/// Area of the overlap of two boxes; zero when they are disjoint or only
/// share an edge.
pub fn intersection_area(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let w = a.x_max.min(b.x_max) - a.x_min.max(b.x_min);
    let h = a.y_max.min(b.y_max) - a.y_min.max(b.y_min);
    if w <= 0.0 || h <= 0.0 {
        0.0
    } else {
        w * h
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = intersection_area(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Greedy NMS returning indices into `boxes` of the survivors, ordered by
/// descending confidence (ties broken by lexicographic box order).
///
/// A candidate is discarded when its IoU with an already kept box is
/// strictly greater than `iou_threshold`.
pub fn nms_indices(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| boxes[i].rank_cmp(&boxes[j]).then(i.cmp(&j)));

    let mut kept: Vec<usize> = Vec::new();
    for idx in order {
        let candidate = &boxes[idx].bbox;
        if kept
            .iter()
            .all(|&k| iou(&boxes[k].bbox, candidate) <= iou_threshold)
        {
            kept.push(idx);
        }
    }
    kept
}

pub fn nms(boxes: &[ScoredBox], iou_threshold: f64) -> Vec<ScoredBox> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}
