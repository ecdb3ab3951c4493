//! Dataset model: image records, manifests, seeded train/val splits,
//! resolution checks and YOLO/COCO interchange.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, APPLE};
use crate::error::{Error, FieldError, Result};

mod coco;
mod yolo;

pub use coco::{coco_string, export_coco, import_coco, parse_coco, CocoDataset};
pub use yolo::{export_yolo, format_yolo_line, import_yolo, NAMES_FILE};

/// Detector input sizes must be multiples of this.
pub const DEFAULT_STRIDE: u32 = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Real,
    Generated,
    Mock,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    #[default]
    Unassigned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub image_id: String,
    /// Path relative to the dataset root.
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub annotations: AnnotationSet,
    pub provenance: Provenance,
    #[serde(default)]
    pub split: Split,
}

impl ImageRecord {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.width == 0 || self.height == 0 {
            errs.push(FieldError::new(
                format!("{}.width/height", self.image_id),
                "must be positive",
            ));
        }
        let (w, h) = (f64::from(self.width), f64::from(self.height));
        for (i, b) in self.annotations.boxes.iter().enumerate() {
            if !b.within(w, h) {
                errs.push(FieldError::new(
                    format!("{}.annotations.boxes[{i}]", self.image_id),
                    format!("{:?} lies outside {}x{}", b.corners(), self.width, self.height),
                ));
            }
        }
        if self.annotations.image_id != self.image_id {
            errs.push(FieldError::new(
                format!("{}.annotations.image_id", self.image_id),
                "does not match the record",
            ));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// Resizes the record, scaling every box by the per-axis ratio.
    pub fn rescaled(&self, width: u32, height: u32) -> Result<Self> {
        let sx = f64::from(width) / f64::from(self.width);
        let sy = f64::from(height) / f64::from(self.height);
        let boxes = self
            .annotations
            .boxes
            .iter()
            .map(|b| b.scaled(sx, sy))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            width,
            height,
            annotations: AnnotationSet {
                boxes,
                ..self.annotations.clone()
            },
            ..self.clone()
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub classes: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            classes: vec![APPLE.to_string()],
            images: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut errs = Vec::new();
        for img in &self.images {
            if !seen.insert(img.image_id.as_str()) {
                errs.push(FieldError::new("images", format!("duplicate image id {}", img.image_id)));
            }
            if let Err(Error::Validation(e)) = img.validate() {
                errs.extend(e);
            }
        }
        if self.classes.is_empty() {
            errs.push(FieldError::new("classes", "must not be empty"));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn count(&self, split: Split) -> usize {
        self.images.iter().filter(|i| i.split == split).count()
    }

    pub fn get(&self, image_id: &str) -> Option<&ImageRecord> {
        self.images.iter().find(|i| i.image_id == image_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_fraction > 0.0 && self.train_fraction < 1.0 {
            Ok(())
        } else {
            Err(Error::invalid(
                "train_fraction",
                format!("{} is outside (0, 1)", self.train_fraction),
            ))
        }
    }

    /// `round(n * fraction)`, kept within `[1, n - 1]` so neither side is empty.
    pub fn train_count(&self, n: usize) -> usize {
        let raw = (n as f64 * self.train_fraction).round() as usize;
        raw.clamp(1, n.saturating_sub(1).max(1))
    }
}

/// Assigns every image to train or val using a seeded shuffle.
pub fn split_dataset(manifest: &DatasetManifest, spec: &SplitSpec) -> Result<DatasetManifest> {
    spec.validate()?;
    let n = manifest.images.len();
    if n < 2 {
        return Err(Error::invalid(
            "images",
            format!("need at least 2 images to split, have {n}"),
        ));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let train = spec.train_count(n);
    let mut out = manifest.clone();
    for (rank, &idx) in order.iter().enumerate() {
        out.images[idx].split = if rank < train { Split::Train } else { Split::Val };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResolutionViolation {
    pub stride: u32,
    /// Offending width, if not divisible.
    pub width: Option<u32>,
    /// Offending height, if not divisible.
    pub height: Option<u32>,
    pub stride_not_power_of_two: bool,
}

impl std::fmt::Display for ResolutionViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.stride_not_power_of_two {
            return write!(f, "stride {} is not a power of two", self.stride);
        }
        let mut parts = Vec::new();
        if let Some(w) = self.width {
            parts.push(format!("width {w}"));
        }
        if let Some(h) = self.height {
            parts.push(format!("height {h}"));
        }
        write!(f, "{} not divisible by {}", parts.join(" and "), self.stride)
    }
}

pub fn validate_resolution(width: u32, height: u32, stride: u32) -> Result<(), ResolutionViolation> {
    if !stride.is_power_of_two() {
        return Err(ResolutionViolation {
            stride,
            width: None,
            height: None,
            stride_not_power_of_two: true,
        });
    }
    let bad = |d: u32| (d % stride != 0).then_some(d);
    let v = ResolutionViolation {
        stride,
        width: bad(width),
        height: bad(height),
        stride_not_power_of_two: false,
    };
    if v.width.is_none() && v.height.is_none() {
        Ok(())
    } else {
        Err(v)
    }
}
