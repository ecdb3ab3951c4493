//! COCO instances JSON. Boxes are stored as `[x, y, w, h]` with the width
//! chosen so that `x + w` reproduces `x_max` bit for bit; extra
//! `synthdet_*` fields carry what COCO has no slot for.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, AnnotationSource};
use crate::error::{Error, Result};
use crate::fsio::{read_json, write_json};
use crate::geometry::BoundingBox;

use super::{DatasetManifest, ImageRecord, Provenance, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDataset {
    #[serde(default)]
    pub info: CocoInfo,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CocoInfo {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthdet_manifest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthdet_image_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthdet_provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthdet_split: Option<Split>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthdet_source: Option<AnnotationSource>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub area: f64,
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

/// Smallest-magnitude search around `hi - lo` for a width `w` with
/// `lo + w == hi` in f64.
fn exact_extent(lo: f64, hi: f64) -> f64 {
    let w0 = hi - lo;
    if lo + w0 == hi {
        return w0;
    }
    let (mut up, mut down) = (w0, w0);
    for _ in 0..64 {
        up = up.next_up();
        if lo + up == hi {
            return up;
        }
        down = down.next_down();
        if down > 0.0 && lo + down == hi {
            return down;
        }
    }
    w0
}

fn to_xywh(b: &BoundingBox) -> [f64; 4] {
    [
        b.x_min(),
        b.y_min(),
        exact_extent(b.x_min(), b.x_max()),
        exact_extent(b.y_min(), b.y_max()),
    ]
}

impl CocoDataset {
    pub fn from_manifest(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let categories = manifest
            .classes
            .iter()
            .enumerate()
            .map(|(i, name)| CocoCategory {
                id: i as u64 + 1,
                name: name.clone(),
            })
            .collect();
        let mut images = Vec::with_capacity(manifest.images.len());
        let mut annotations = Vec::new();
        for (i, rec) in manifest.images.iter().enumerate() {
            let id = i as u64 + 1;
            images.push(CocoImage {
                id,
                file_name: rec.file_name.clone(),
                width: rec.width,
                height: rec.height,
                synthdet_image_id: Some(rec.image_id.clone()),
                synthdet_provenance: Some(rec.provenance),
                synthdet_split: Some(rec.split),
                synthdet_source: Some(rec.annotations.source),
            });
            for b in &rec.annotations.boxes {
                annotations.push(CocoAnnotation {
                    id: annotations.len() as u64 + 1,
                    image_id: id,
                    category_id: 1,
                    bbox: to_xywh(b),
                    area: b.area(),
                    iscrowd: 0,
                });
            }
        }
        Ok(Self {
            info: CocoInfo {
                synthdet_manifest: Some(manifest.name.clone()),
            },
            images,
            annotations,
            categories,
        })
    }

    /// Converts back. Files without the `synthdet_*` extension fields get
    /// ids from the file stem, `real` provenance and no split.
    pub fn to_manifest(&self, origin: &Path) -> Result<DatasetManifest> {
        let mut cats: Vec<&CocoCategory> = self.categories.iter().collect();
        cats.sort_by_key(|c| c.id);
        let classes: Vec<String> = cats.iter().map(|c| c.name.clone()).collect();

        let mut index = BTreeMap::new();
        let mut images = Vec::with_capacity(self.images.len());
        for (i, img) in self.images.iter().enumerate() {
            let image_id = img.synthdet_image_id.clone().unwrap_or_else(|| {
                Path::new(&img.file_name)
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| img.id.to_string())
            });
            if index.insert(img.id, i).is_some() {
                return Err(Error::record(origin, i, "images.id", format!("duplicate id {}", img.id)));
            }
            images.push(ImageRecord {
                annotations: AnnotationSet::new(
                    image_id.clone(),
                    img.synthdet_source.unwrap_or(AnnotationSource::Imported),
                ),
                image_id,
                file_name: img.file_name.clone(),
                width: img.width,
                height: img.height,
                provenance: img.synthdet_provenance.unwrap_or(Provenance::Real),
                split: img.synthdet_split.unwrap_or_default(),
            });
        }
        for (i, ann) in self.annotations.iter().enumerate() {
            let &slot = index.get(&ann.image_id).ok_or_else(|| {
                Error::record(origin, i, "annotations.image_id", format!("no image with id {}", ann.image_id))
            })?;
            if !cats.iter().any(|c| c.id == ann.category_id) {
                return Err(Error::record(
                    origin,
                    i,
                    "annotations.category_id",
                    format!("unknown category {}", ann.category_id),
                ));
            }
            let [x, y, w, h] = ann.bbox;
            let b = BoundingBox::from_xywh(x, y, w, h)
                .map_err(|e| Error::record(origin, i, "annotations.bbox", e.to_string()))?;
            images[slot].annotations.boxes.push(b);
        }
        let manifest = DatasetManifest {
            name: self.info.synthdet_manifest.clone().unwrap_or_else(|| {
                origin
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default()
            }),
            classes,
            images,
        };
        manifest.validate()?;
        Ok(manifest)
    }
}

pub fn coco_string(manifest: &DatasetManifest) -> Result<String> {
    Ok(serde_json::to_string_pretty(&CocoDataset::from_manifest(manifest)?)?)
}

pub fn parse_coco(text: &str, origin: &Path) -> Result<DatasetManifest> {
    let coco: CocoDataset = serde_json::from_str(text).map_err(|e| Error::parse(origin, &e))?;
    coco.to_manifest(origin)
}

pub fn export_coco(manifest: &DatasetManifest, path: &Path) -> Result<()> {
    write_json(path, &CocoDataset::from_manifest(manifest)?)
}

pub fn import_coco(path: &Path) -> Result<DatasetManifest> {
    read_json::<CocoDataset>(path)?.to_manifest(path)
}
