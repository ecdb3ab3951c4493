//! On-disk project store: a directory tree of JSON documents and PNGs.
//!
//! ```text
//! root/
//!   images/<image>.png        generated or imported pixels
//!   generation/<image>.json   prompt, seed and backend per image
//!   truth/<image>.json        mock scene truth
//!   raw/<image>.json          unfiltered detections
//!   annotations/<image>.json  current annotation set, versioned
//!   runs/<run>.json           pipeline state
//!   manifests/<run>.json      split manifest
//!   reports/<id>.json         evaluation reports
//!   presets/<key>.json        user presets
//!   exports/<run>/            yolo/ and coco.json
//! ```

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::annotation::{AnnotationSet, AnnotationSource, FilterConfig, FilterTrace, RawDetection};
use crate::dataset::DatasetManifest;
use crate::error::{Error, FieldError, Result};
use crate::eval::EvalReport;
use crate::fsio::{read_json, write_atomic, write_json};
use crate::genclient::{GenerationJob, MockSceneTruth, PresetLibrary, PromptPreset};
use crate::geometry::BoundingBox;

use super::PipelineRun;

/// Environment variable naming the store root.
pub const STORE_ENV: &str = "SYNTHDET_STORE";
pub const DEFAULT_STORE: &str = "synthdet-store";

const DIRS: [&str; 10] = [
    "images",
    "generation",
    "truth",
    "raw",
    "annotations",
    "runs",
    "manifests",
    "reports",
    "presets",
    "exports",
];

/// Where an image came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub image_id: String,
    pub run_id: String,
    /// The single-image job actually rendered, with its item seed.
    pub job: GenerationJob,
    pub backend: String,
}

/// The current annotation set of an image plus what produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredAnnotation {
    pub version: u64,
    pub annotations: AnnotationSet,
    /// Filter applied to the raw detections, if any.
    #[serde(default)]
    pub filter: Option<FilterConfig>,
    #[serde(default)]
    pub trace: Option<FilterTrace>,
    /// Boxes removed during review, kept for provenance.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejected: Vec<BoundingBox>,
}

/// A review edit. `version` must equal the stored version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEdit {
    pub version: u64,
    /// Indices into the current box list to drop.
    #[serde(default)]
    pub reject: Vec<usize>,
    /// Boxes to append.
    #[serde(default)]
    pub add: Vec<BoundingBox>,
}

#[derive(Debug, Clone)]
pub struct ProjectStore {
    root: PathBuf,
    locks: Arc<Mutex<HashMap<String, Arc<Mutex<()>>>>>,
}

fn check_id(kind: &str, id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c));
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(kind, format!("`{id}` is not a valid id")))
    }
}

impl ProjectStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for d in DIRS {
            let p = root.join(d);
            std::fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(Self {
            root,
            locks: Arc::default(),
        })
    }

    /// Opens `$SYNTHDET_STORE`, or `./synthdet-store` when unset.
    pub fn from_env() -> Result<Self> {
        Self::open(std::env::var_os(STORE_ENV).map_or_else(|| PathBuf::from(DEFAULT_STORE), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn doc(&self, dir: &str, id: &str) -> Result<PathBuf> {
        check_id(dir, id)?;
        Ok(self.root.join(dir).join(format!("{id}.json")))
    }

    fn load<T: DeserializeOwned>(&self, dir: &str, id: &str) -> Result<T> {
        let p = self.doc(dir, id)?;
        if !p.exists() {
            return Err(Error::NotFound(format!("{dir}/{id}")));
        }
        read_json(&p)
    }

    fn exists(&self, dir: &str, id: &str) -> bool {
        self.doc(dir, id).is_ok_and(|p| p.exists())
    }

    fn ids(&self, dir: &str, ext: &str) -> Result<Vec<String>> {
        let d = self.root.join(dir);
        let mut out: Vec<String> = std::fs::read_dir(&d)
            .map_err(|e| Error::io(&d, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix(ext).map(str::to_string)
            })
            .collect();
        out.sort();
        Ok(out)
    }

    /// Path of the PNG relative to the store root.
    pub fn image_rel_path(image_id: &str) -> String {
        format!("images/{image_id}.png")
    }

    pub fn image_path(&self, image_id: &str) -> Result<PathBuf> {
        check_id("image_id", image_id)?;
        Ok(self.root.join(Self::image_rel_path(image_id)))
    }

    pub fn has_image(&self, image_id: &str) -> bool {
        self.image_path(image_id).is_ok_and(|p| p.exists())
    }

    pub fn write_image(&self, image_id: &str, png: &[u8]) -> Result<()> {
        write_atomic(&self.image_path(image_id)?, png)
    }

    pub fn read_image(&self, image_id: &str) -> Result<Vec<u8>> {
        let p = self.image_path(image_id)?;
        match std::fs::read(&p) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(Error::NotFound(format!("image {image_id}")))
            }
            Err(e) => Err(Error::io(&p, e)),
        }
    }

    pub fn image_ids(&self) -> Result<Vec<String>> {
        self.ids("images", ".png")
    }

    pub fn write_generation(&self, rec: &GenerationRecord) -> Result<()> {
        write_json(&self.doc("generation", &rec.image_id)?, rec)
    }

    pub fn generation(&self, image_id: &str) -> Result<GenerationRecord> {
        self.load("generation", image_id)
    }

    pub fn write_truth(&self, image_id: &str, truth: &MockSceneTruth) -> Result<()> {
        write_json(&self.doc("truth", image_id)?, truth)
    }

    pub fn truth(&self, image_id: &str) -> Result<MockSceneTruth> {
        self.load("truth", image_id)
    }

    pub fn write_raw(&self, image_id: &str, dets: &[RawDetection]) -> Result<()> {
        write_json(&self.doc("raw", image_id)?, dets)
    }

    pub fn raw(&self, image_id: &str) -> Result<Vec<RawDetection>> {
        self.load("raw", image_id)
    }

    pub fn has_annotations(&self, image_id: &str) -> bool {
        self.exists("annotations", image_id)
    }

    pub fn annotations(&self, image_id: &str) -> Result<StoredAnnotation> {
        self.load("annotations", image_id)
    }

    /// Per-key mutex; ids cannot contain `/`, so `run/<id>` keys never
    /// collide with image ids.
    pub(crate) fn lock_for(&self, image_id: &str) -> Arc<Mutex<()>> {
        self.locks
            .lock()
            .entry(image_id.to_string())
            .or_default()
            .clone()
    }

    /// Replaces the annotation document, bumping the version past any
    /// existing one.
    pub fn put_annotations(
        &self,
        set: AnnotationSet,
        filter: Option<FilterConfig>,
        trace: Option<FilterTrace>,
    ) -> Result<StoredAnnotation> {
        let id = set.image_id.clone();
        let lock = self.lock_for(&id);
        let _g = lock.lock();
        let version = match self.annotations(&id) {
            Ok(cur) => cur.version + 1,
            Err(Error::NotFound(_)) => 1,
            Err(e) => return Err(e),
        };
        let doc = StoredAnnotation {
            version,
            annotations: set,
            filter,
            trace,
            rejected: Vec::new(),
        };
        write_json(&self.doc("annotations", &id)?, &doc)?;
        Ok(doc)
    }

    /// Applies a review edit under the image lock; a stale `version` is a
    /// [`Error::Conflict`].
    pub fn edit_annotations(&self, image_id: &str, edit: &AnnotationEdit) -> Result<StoredAnnotation> {
        let lock = self.lock_for(image_id);
        let _g = lock.lock();
        let mut doc = self.annotations(image_id)?;
        if doc.version != edit.version {
            return Err(Error::Conflict {
                id: image_id.to_string(),
                expected: edit.version,
                current: doc.version,
            });
        }
        let n = doc.annotations.boxes.len();
        let bad: Vec<FieldError> = edit
            .reject
            .iter()
            .enumerate()
            .filter(|(_, &i)| i >= n)
            .map(|(k, i)| FieldError::new(format!("reject[{k}]"), format!("index {i} out of range for {n} boxes")))
            .collect();
        if !bad.is_empty() {
            return Err(Error::Validation(bad));
        }
        let mut kept = Vec::with_capacity(n);
        for (i, b) in doc.annotations.boxes.iter().enumerate() {
            if edit.reject.contains(&i) {
                doc.rejected.push(*b);
            } else {
                kept.push(*b);
            }
        }
        kept.extend(edit.add.iter().copied());
        doc.annotations.boxes = kept;
        doc.annotations.source = AnnotationSource::HumanReviewed;
        doc.version += 1;
        write_json(&self.doc("annotations", image_id)?, &doc)?;
        Ok(doc)
    }

    pub fn save_run(&self, run: &PipelineRun) -> Result<()> {
        write_json(&self.doc("runs", &run.run_id)?, run)
    }

    pub fn run(&self, run_id: &str) -> Result<PipelineRun> {
        self.load("runs", run_id)
    }

    pub fn has_run(&self, run_id: &str) -> bool {
        self.exists("runs", run_id)
    }

    pub fn run_ids(&self) -> Result<Vec<String>> {
        self.ids("runs", ".json")
    }

    pub fn save_manifest(&self, manifest: &DatasetManifest) -> Result<PathBuf> {
        let p = self.doc("manifests", &manifest.name)?;
        write_json(&p, manifest)?;
        Ok(p)
    }

    pub fn manifest(&self, name: &str) -> Result<DatasetManifest> {
        self.load("manifests", name)
    }

    pub fn save_report(&self, id: &str, report: &EvalReport) -> Result<PathBuf> {
        let p = self.doc("reports", id)?;
        write_json(&p, report)?;
        Ok(p)
    }

    pub fn report(&self, id: &str) -> Result<EvalReport> {
        self.load("reports", id)
    }

    /// Built-in presets overlaid with the stored user presets.
    pub fn presets(&self) -> Result<PresetLibrary> {
        let mut lib = PresetLibrary::default();
        for key in self.ids("presets", ".json")? {
            lib.insert(self.load("presets", &key)?)?;
        }
        Ok(lib)
    }

    pub fn add_preset(&self, preset: PromptPreset) -> Result<()> {
        check_id("key", &preset.key)?;
        let mut lib = self.presets()?;
        lib.insert(preset.clone())?;
        write_json(&self.doc("presets", &preset.key)?, &preset)
    }

    pub fn export_dir(&self, run_id: &str) -> Result<PathBuf> {
        check_id("run_id", run_id)?;
        Ok(self.root.join("exports").join(run_id))
    }
}
