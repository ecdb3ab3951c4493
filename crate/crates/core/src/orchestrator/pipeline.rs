use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Duration;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    filter_detections, import_detections, AnnotationSet, AnnotationSource, BlobAnnotator,
    DetectionFormat, FilterConfig, ImportContext, RawDetection, SimulatedDetector, APPLE,
};
use crate::dataset::{export_coco, export_yolo, split_dataset, DatasetManifest, ImageRecord, Provenance, SplitSpec};
use crate::error::{Error, FieldError, Result};
use crate::fsio::content_id;
use crate::genclient::{mock_generate, GenerationClient, GenerationJob, HttpBackend, SceneParams};

use super::store::{GenerationRecord, ProjectStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        #[serde(default)]
        scene: SceneParams,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        #[serde(default = "default_retries")]
        retries: u32,
    },
}

fn default_timeout() -> u64 {
    120
}

fn default_retries() -> u32 {
    2
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock {
            scene: SceneParams::default(),
        }
    }
}

impl BackendConfig {
    fn describe(&self) -> String {
        match self {
            BackendConfig::Mock { .. } => "mock".into(),
            BackendConfig::Http { url, .. } => url.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorConfig {
    /// Color-blob detector on the rendered pixels.
    Blob {
        #[serde(default = "default_min_area")]
        min_area: usize,
    },
    /// Truth perturbed into noisy raw detections (mock backend only).
    Simulated {
        #[serde(default)]
        detector: SimulatedDetector,
    },
    /// Mock truth boxes, unfiltered (mock backend only).
    Truth,
    /// Detections produced elsewhere, keyed by image id.
    Imported {
        path: PathBuf,
        #[serde(default)]
        format: Option<DetectionFormat>,
    },
}

fn default_min_area() -> usize {
    BlobAnnotator::default().min_area
}

impl Default for AnnotatorConfig {
    fn default() -> Self {
        AnnotatorConfig::Blob {
            min_area: default_min_area(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub yolo: bool,
    pub coco: bool,
}

impl Default for ExportConfig {
    fn default() -> Self {
        Self { yolo: true, coco: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Derived from the rest of the config when absent.
    #[serde(default)]
    pub run_id: Option<String>,
    /// Template job; image `i` is rendered with seed `job.seed + i`.
    pub job: GenerationJob,
    pub count: usize,
    #[serde(default)]
    pub backend: BackendConfig,
    #[serde(default)]
    pub annotator: AnnotatorConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub export: ExportConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<FieldError> = self
            .job
            .violations()
            .into_iter()
            .map(|e| FieldError::new(format!("job.{}", e.field), e.message))
            .collect();
        for (prefix, r) in [("filter", self.filter.validate()), ("split", self.split.validate())] {
            if let Err(Error::Validation(v)) = r {
                errs.extend(v.into_iter().map(|e| FieldError::new(format!("{prefix}.{}", e.field), e.message)));
            }
        }
        let mock = matches!(self.backend, BackendConfig::Mock { .. });
        if !mock && matches!(self.annotator, AnnotatorConfig::Simulated { .. } | AnnotatorConfig::Truth) {
            errs.push(FieldError::new("annotator", "needs the mock backend for scene truth"));
        }
        if let Some(id) = &self.run_id {
            if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || "-_".contains(c)) {
                errs.push(FieldError::new("run_id", format!("`{id}` is not a valid id")));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errs))
        }
    }

    /// The explicit id, or `run-` plus a digest of the config.
    pub fn resolved_run_id(&self) -> String {
        if let Some(id) = &self.run_id {
            return id.clone();
        }
        let anon = RunConfig { run_id: None, ..self.clone() };
        content_id("run", &anon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Generate,
    Annotate,
    Split,
    Export,
}

impl Stage {
    pub const ORDER: [Stage; 4] = [Stage::Generate, Stage::Annotate, Stage::Split, Stage::Export];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum StageStatus {
    Pending,
    Running,
    Done,
    Failed { cause: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub status: StageStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub run_id: String,
    pub config: RunConfig,
    pub stages: Vec<StageRecord>,
    pub image_ids: Vec<String>,
    /// Artifact name to path relative to the store root.
    pub artifacts: BTreeMap<String, String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PipelineRun {
    fn new(run_id: String, config: RunConfig) -> Self {
        let image_ids = (0..config.count).map(|i| format!("{run_id}-{i:05}")).collect();
        Self {
            run_id,
            config,
            stages: Stage::ORDER
                .iter()
                .map(|&stage| StageRecord {
                    stage,
                    status: StageStatus::Pending,
                })
                .collect(),
            image_ids,
            artifacts: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn status(&self, stage: Stage) -> &StageStatus {
        &self.stages.iter().find(|s| s.stage == stage).expect("all stages present").status
    }

    fn set(&mut self, stage: Stage, status: StageStatus) {
        self.stages.iter_mut().find(|s| s.stage == stage).expect("all stages present").status = status;
    }

    pub fn is_complete(&self) -> bool {
        self.stages.iter().all(|s| s.status == StageStatus::Done)
    }

    pub fn failure(&self) -> Option<(Stage, &str)> {
        self.stages.iter().find_map(|s| match &s.status {
            StageStatus::Failed { cause } => Some((s.stage, cause.as_str())),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Return after this stage, leaving later stages pending.
    pub stop_after: Option<Stage>,
}

/// Runs (or resumes) a pipeline. Stages already marked done are skipped;
/// a failed stage is recorded in the returned run and later stages are not
/// attempted.
pub fn run_pipeline(store: &ProjectStore, config: &RunConfig, opts: RunOptions) -> Result<PipelineRun> {
    config.validate()?;
    let run_id = config.resolved_run_id();
    // one executor per run within this process
    let lock = store.lock_for(&format!("run/{run_id}"));
    let _guard = lock.lock();
    let mut run = match store.run(&run_id) {
        Ok(existing) => {
            let mut want = config.clone();
            want.run_id = existing.config.run_id.clone();
            if existing.config != want {
                return Err(Error::AlreadyExists(format!(
                    "run {run_id} exists with a different configuration"
                )));
            }
            existing
        }
        Err(Error::NotFound(_)) => PipelineRun::new(run_id, config.clone()),
        Err(e) => return Err(e),
    };

    for stage in Stage::ORDER {
        if *run.status(stage) == StageStatus::Done {
            if opts.stop_after == Some(stage) {
                break;
            }
            continue;
        }
        run.set(stage, StageStatus::Running);
        store.save_run(&run)?;
        let result = match stage {
            Stage::Generate => generate_stage(store, &run),
            Stage::Annotate => annotate_stage(store, &run),
            Stage::Split => split_stage(store, &mut run),
            Stage::Export => export_stage(store, &mut run),
        };
        match result {
            Ok(()) => run.set(stage, StageStatus::Done),
            Err(e) => {
                tracing::error!(run = %run.run_id, ?stage, error = %e, "stage failed");
                run.set(stage, StageStatus::Failed { cause: e.to_string() });
                store.save_run(&run)?;
                return Ok(run);
            }
        }
        store.save_run(&run)?;
        if opts.stop_after == Some(stage) {
            break;
        }
    }
    Ok(run)
}

fn item_job(run: &PipelineRun, index: usize) -> GenerationJob {
    GenerationJob {
        seed: run.config.job.item_seed(index as u32),
        batch_size: 1,
        ..run.config.job.clone()
    }
}

fn generate_stage(store: &ProjectStore, run: &PipelineRun) -> Result<()> {
    let todo: Vec<(usize, &String)> = run
        .image_ids
        .iter()
        .enumerate()
        .filter(|(_, id)| !(store.has_image(id) && store.generation(id).is_ok()))
        .collect();
    let backend = run.config.backend.describe();
    let record = |id: &str, job: GenerationJob| GenerationRecord {
        image_id: id.to_string(),
        run_id: run.run_id.clone(),
        job,
        backend: backend.clone(),
    };
    match &run.config.backend {
        BackendConfig::Mock { scene } => todo.par_iter().try_for_each(|&(i, id)| {
            let job = item_job(run, i);
            let (png, truth) = mock_generate(&job, scene)?;
            store.write_truth(id, &truth)?;
            store.write_image(id, &png)?;
            store.write_generation(&record(id, job))
        }),
        BackendConfig::Http { url, timeout_secs, retries } => {
            let client = GenerationClient::new(HttpBackend::new(url.clone(), Duration::from_secs(*timeout_secs))?)
                .with_retries(*retries, Duration::from_millis(500));
            for &(i, id) in &todo {
                let job = item_job(run, i);
                let handle = client.submit(&job)?;
                let result = client.fetch(&handle)?;
                store.write_image(id, &result.images[0].png)?;
                store.write_generation(&record(id, job))?;
            }
            Ok(())
        }
    }
}

fn load_rgb(store: &ProjectStore, id: &str) -> Result<RgbImage> {
    let bytes = store.read_image(id)?;
    Ok(image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)?.to_rgb8())
}

fn annotate_stage(store: &ProjectStore, run: &PipelineRun) -> Result<()> {
    let imported = match &run.config.annotator {
        AnnotatorConfig::Imported { path, format } => Some(
            import_detections(path, *format, &ImportContext::with_known_images(run.image_ids.iter().cloned()))?
                .per_image,
        ),
        _ => None,
    };
    let filter = &run.config.filter;
    run.image_ids
        .par_iter()
        .filter(|id| !(store.has_annotations(id) && store.raw(id).is_ok()))
        .try_for_each(|id| {
            let (raw, filtered): (Vec<RawDetection>, bool) = match &run.config.annotator {
                AnnotatorConfig::Blob { min_area } => {
                    let annot = BlobAnnotator {
                        min_area: *min_area,
                        class_label: APPLE.to_string(),
                    };
                    (annot.annotate(&load_rgb(store, id)?), true)
                }
                AnnotatorConfig::Simulated { detector } => (detector.detect(&store.truth(id)?), true),
                AnnotatorConfig::Truth => {
                    let truth = store.truth(id)?;
                    let dets = truth
                        .boxes
                        .iter()
                        .map(|b| RawDetection::new(*b, APPLE, 1.0))
                        .collect::<Result<Vec<_>>>()?;
                    (dets, false)
                }
                AnnotatorConfig::Imported { .. } => {
                    let map = imported.as_ref().expect("imported detections loaded");
                    (map.get(id.as_str()).cloned().unwrap_or_default(), true)
                }
            };
            store.write_raw(id, &raw)?;
            if filtered {
                let (kept, trace) = filter_detections(&raw, filter)?;
                let set = AnnotationSet {
                    image_id: id.clone(),
                    boxes: kept.into_iter().map(|d| d.bbox).collect(),
                    source: AnnotationSource::Filtered,
                };
                store.put_annotations(set, Some(filter.clone()), Some(trace))?;
            } else {
                let set = AnnotationSet {
                    image_id: id.clone(),
                    boxes: raw.iter().map(|d| d.bbox).collect(),
                    source: AnnotationSource::MockGroundTruth,
                };
                store.put_annotations(set, None, None)?;
            }
            Ok(())
        })
}

/// Builds the manifest from the store's current annotation documents.
pub fn current_manifest(store: &ProjectStore, run: &PipelineRun) -> Result<DatasetManifest> {
    let mut manifest = DatasetManifest::new(run.run_id.clone());
    let provenance = match run.config.backend {
        BackendConfig::Mock { .. } => Provenance::Mock,
        BackendConfig::Http { .. } => Provenance::Generated,
    };
    for id in &run.image_ids {
        let doc = store.annotations(id)?;
        let gen = store.generation(id)?;
        manifest.images.push(ImageRecord {
            image_id: id.clone(),
            file_name: ProjectStore::image_rel_path(id),
            width: gen.job.width,
            height: gen.job.height,
            annotations: doc.annotations,
            provenance,
            split: Default::default(),
        });
    }
    Ok(manifest)
}

fn split_stage(store: &ProjectStore, run: &mut PipelineRun) -> Result<()> {
    let manifest = current_manifest(store, run)?;
    let manifest = match manifest.images.len() {
        0 => {
            run.warnings.push("no images were generated; manifest is empty".into());
            manifest
        }
        1 => {
            run.warnings.push("a single image cannot be split; left unassigned".into());
            manifest
        }
        _ => split_dataset(&manifest, &run.config.split)?,
    };
    store.save_manifest(&manifest)?;
    run.artifacts.insert("manifest".into(), format!("manifests/{}.json", manifest.name));
    Ok(())
}

/// Writes the configured exports using the current annotations and the
/// splits recorded in the run manifest. Also used to re-export after review.
pub fn export_run(store: &ProjectStore, run: &PipelineRun) -> Result<BTreeMap<String, String>> {
    let split = store.manifest(&run.run_id)?;
    let mut manifest = current_manifest(store, run)?;
    for rec in &mut manifest.images {
        if let Some(s) = split.get(&rec.image_id) {
            rec.split = s.split;
        }
    }
    let dir = store.export_dir(&run.run_id)?;
    let mut artifacts = BTreeMap::new();
    if run.config.export.yolo {
        let yolo = dir.join("yolo");
        if yolo.exists() {
            std::fs::remove_dir_all(&yolo).map_err(|e| Error::io(&yolo, e))?;
        }
        std::fs::create_dir_all(yolo.join("images")).map_err(|e| Error::io(&yolo, e))?;
        export_yolo(&manifest, store.root(), &yolo)?;
        artifacts.insert("yolo".into(), format!("exports/{}/yolo", run.run_id));
    }
    if run.config.export.coco {
        export_coco(&manifest, &dir.join("coco.json"))?;
        artifacts.insert("coco".into(), format!("exports/{}/coco.json", run.run_id));
    }
    Ok(artifacts)
}

fn export_stage(store: &ProjectStore, run: &mut PipelineRun) -> Result<()> {
    let artifacts = export_run(store, run)?;
    run.artifacts.extend(artifacts);
    Ok(())
}
