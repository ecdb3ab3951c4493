use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use synthdet_core::annotation::{
    filter_detections, import_detections, write_flat_json, BlobAnnotator, DetectionFormat, ImportContext,
    SimulatedDetector,
};
use synthdet_core::dataset::{export_coco, export_yolo, split_dataset, validate_resolution, DEFAULT_STRIDE};
use synthdet_core::eval::{ap_at, evaluate_run, render_table};
use synthdet_core::fsio::{read_json, write_atomic, write_json};
use synthdet_core::genclient::{
    mock_generate, GenerationClient, GenerationJob, HttpBackend, MockSceneTruth, PresetLibrary, SceneParams,
};
use synthdet_core::kernel::check::run_suite;
use synthdet_core::orchestrator::{
    load_ground_truth, load_predictions, run_experiment, run_pipeline, ExperimentSpec, ProjectStore, RunOptions,
    Stage,
};
use synthdet_core::{
    AnnotationSet, AnnotationSource, ApConfig, DatasetManifest, FilterConfig, ImageRecord, Provenance, RunConfig,
    Split, SplitSpec,
};

use crate::config::{self, ConfigFile};

pub struct Context<'a> {
    pub cfg: Option<&'a ConfigFile>,
    pub store: Option<PathBuf>,
}

impl Context<'_> {
    fn resolve<T: Serialize + serde::de::DeserializeOwned>(&self, name: &str, flags: &T) -> Result<T> {
        config::resolve(self.cfg, name, flags)
    }

    fn store(&self) -> Result<ProjectStore> {
        Ok(match &self.store {
            Some(p) => ProjectStore::open(p)?,
            None => ProjectStore::from_env()?,
        })
    }

    fn presets(&self) -> Result<PresetLibrary> {
        match &self.store {
            Some(_) => Ok(self.store()?.presets()?),
            None => Ok(PresetLibrary::default()),
        }
    }
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("--{flag} is required (or set it in the config file)"))
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateArgs {
    /// Preset key: A to F, final or shadow [default: final]
    #[arg(long)]
    pub preset: Option<String>,
    /// `mock` or the base URL of a generation server [default: mock]
    #[arg(long)]
    pub backend: Option<String>,
    /// Number of images [default: 1]
    #[arg(long)]
    pub count: Option<u32>,
    /// Seed of the first image; image i uses seed + i [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: generated]
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub steps: Option<u32>,
    #[arg(long)]
    pub cfg_scale: Option<f64>,
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long)]
    pub negative_prompt: Option<String>,
    #[arg(long)]
    pub scheduler: Option<String>,
    /// Mock scenes with no leaf cover and no ground apples
    #[arg(long)]
    pub unoccluded: bool,
    /// HTTP request timeout in seconds [default: 120]
    #[arg(long)]
    pub timeout_secs: Option<u64>,
    /// Retries for transient HTTP failures [default: 2]
    #[arg(long)]
    pub retries: Option<u32>,
}

pub fn generate(ctx: &Context, flags: &GenerateArgs) -> Result<ExitCode> {
    let a = ctx.resolve("generate", flags)?;
    let lib = ctx.presets()?;
    let key = a.preset.as_deref().unwrap_or("final");
    let preset = lib.get(key).ok_or_else(|| {
        let keys: Vec<&str> = lib.iter().map(|p| p.key.as_str()).collect();
        anyhow!("unknown preset `{key}` (known: {})", keys.join(", "))
    })?;
    let mut job = GenerationJob::from_preset(preset, a.seed.unwrap_or(0));
    if let Some(v) = a.width {
        job.width = v;
    }
    if let Some(v) = a.height {
        job.height = v;
    }
    if let Some(v) = a.steps {
        job.steps = v;
    }
    if let Some(v) = a.cfg_scale {
        job.cfg_scale = v;
    }
    if let Some(v) = a.prompt {
        job.positive_prompt = v;
    }
    if let Some(v) = a.negative_prompt {
        job.negative_prompt = v;
    }
    if let Some(v) = a.scheduler {
        job.scheduler_id = v;
    }
    job.validate()?;

    let out = a.out.unwrap_or_else(|| PathBuf::from("generated"));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let scene = if a.unoccluded {
        SceneParams::unoccluded()
    } else {
        SceneParams::default()
    };
    let backend = a.backend.as_deref().unwrap_or("mock");
    let http = if backend == "mock" {
        None
    } else {
        let b = HttpBackend::new(backend, Duration::from_secs(a.timeout_secs.unwrap_or(120)))?;
        Some(GenerationClient::new(b).with_retries(a.retries.unwrap_or(2), Duration::from_millis(500)))
    };

    let count = a.count.unwrap_or(1);
    for i in 0..count {
        let item = GenerationJob {
            seed: job.item_seed(i),
            batch_size: 1,
            ..job.clone()
        };
        let stem = format!("img-{i:05}");
        let png = match &http {
            None => {
                let (png, truth) = mock_generate(&item, &scene)?;
                write_json(&out.join(format!("{stem}.truth.json")), &truth)?;
                png
            }
            Some(client) => {
                let handle = client.submit(&item)?;
                let mut result = client.fetch(&handle)?;
                result.images.remove(0).png
            }
        };
        write_atomic(&out.join(format!("{stem}.png")), &png)?;
        write_json(&out.join(format!("{stem}.job.json")), &item)?;
    }
    println!("wrote {count} images to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterArgs {
    /// Keep detections at or above this confidence [default: 0.70]
    #[arg(long)]
    pub confidence: Option<f64>,
    /// Suppress boxes overlapping a kept box above this IoU [default: 0.2]
    #[arg(long)]
    pub nms_iou: Option<f64>,
    /// Comma-separated classes to keep [default: apple]
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
}

impl FilterArgs {
    fn config(&self) -> Result<FilterConfig> {
        let mut cfg = FilterConfig::default();
        if let Some(v) = self.confidence {
            cfg.confidence_threshold = v;
        }
        if let Some(v) = self.nms_iou {
            cfg.nms_iou_threshold = v;
        }
        if !self.classes.is_empty() {
            cfg.allowed_classes = self.classes.iter().cloned().collect::<BTreeSet<_>>();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateArgs {
    /// Directory of PNG images
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Manifest to write [default: <images>/manifest.json]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// blob, simulated (needs mock truth files) or truth [default: blob]
    #[arg(long)]
    pub annotator: Option<String>,
    /// Detections from an external detector instead of an annotator
    #[arg(long)]
    pub detections: Option<PathBuf>,
    /// Layout of --detections: coco_results or flat_json [default: detect]
    #[arg(long)]
    pub format: Option<String>,
    /// Minimum blob size in pixels for the blob annotator
    #[arg(long)]
    pub min_area: Option<usize>,
    /// Dataset name [default: the image directory name]
    #[arg(long)]
    pub name: Option<String>,
    /// Also write the unfiltered detections as flat JSON
    #[arg(long)]
    pub raw_out: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub filter: FilterArgs,
}

fn png_stems(dir: &Path) -> Result<Vec<String>> {
    let mut stems: Vec<String> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str()?.strip_suffix(".png").map(str::to_string))
        .collect();
    stems.sort();
    Ok(stems)
}

pub fn annotate(ctx: &Context, flags: &AnnotateArgs) -> Result<ExitCode> {
    let a = ctx.resolve("annotate", flags)?;
    let dir = required(a.images.clone(), "images")?;
    let filter = a.filter.config()?;
    let stems = png_stems(&dir)?;
    let imported = match &a.detections {
        Some(p) => {
            let format = a.format.as_deref().map(str::parse::<DetectionFormat>).transpose()?;
            Some(import_detections(p, format, &ImportContext::with_known_images(stems.iter().cloned()))?)
        }
        None => None,
    };
    let annotator = a.annotator.as_deref().unwrap_or("blob");
    let blob = BlobAnnotator {
        min_area: a.min_area.unwrap_or(BlobAnnotator::default().min_area),
        ..BlobAnnotator::default()
    };
    let name = a.name.clone().unwrap_or_else(|| {
        dir.file_name().map_or_else(|| "dataset".into(), |s| s.to_string_lossy().into_owned())
    });

    let mut manifest = DatasetManifest::new(name);
    let mut raw_all = BTreeMap::new();
    let (mut raw_count, mut kept_count) = (0, 0);
    for stem in &stems {
        let path = dir.join(format!("{stem}.png"));
        let img = image::open(&path).with_context(|| format!("decoding {}", path.display()))?.to_rgb8();
        let truth_path = dir.join(format!("{stem}.truth.json"));
        let truth: Option<MockSceneTruth> = if truth_path.exists() {
            Some(read_json(&truth_path)?)
        } else {
            None
        };
        let need_truth = || truth.as_ref().ok_or_else(|| anyhow!("{} is missing", truth_path.display()));
        let raw = match (&imported, annotator) {
            (Some(imp), _) => Some(imp.per_image.get(stem).cloned().unwrap_or_default()),
            (None, "blob") => Some(blob.annotate(&img)),
            (None, "simulated") => Some(SimulatedDetector::default().detect(need_truth()?)),
            (None, "truth") => None,
            (None, other) => bail!("unknown annotator `{other}` (blob, simulated or truth)"),
        };
        let set = match raw {
            Some(raw) => {
                let (kept, _) = filter_detections(&raw, &filter)?;
                raw_count += raw.len();
                kept_count += kept.len();
                raw_all.insert(stem.clone(), raw);
                let source = if imported.is_some() {
                    AnnotationSource::Imported
                } else {
                    AnnotationSource::Filtered
                };
                AnnotationSet {
                    image_id: stem.clone(),
                    boxes: kept.into_iter().map(|d| d.bbox).collect(),
                    source,
                }
            }
            None => AnnotationSet {
                image_id: stem.clone(),
                boxes: need_truth()?.boxes.clone(),
                source: AnnotationSource::MockGroundTruth,
            },
        };
        manifest.images.push(ImageRecord {
            image_id: stem.clone(),
            file_name: format!("{stem}.png"),
            width: img.width(),
            height: img.height(),
            annotations: set,
            provenance: if truth.is_some() {
                Provenance::Mock
            } else {
                Provenance::Generated
            },
            split: Split::Unassigned,
        });
    }
    manifest.validate()?;
    let out = a.out.unwrap_or_else(|| dir.join("manifest.json"));
    write_json(&out, &manifest)?;
    if let Some(p) = &a.raw_out {
        write_flat_json(p, &raw_all)?;
    }
    if raw_all.is_empty() {
        println!("{} images annotated from truth -> {}", stems.len(), out.display());
    } else {
        println!("{} images, kept {kept_count} of {raw_count} detections -> {}", stems.len(), out.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitArgs {
    /// Manifest to split
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Where to write the split manifest [default: overwrite --manifest]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Share of images for training [default: 0.8]
    #[arg(long)]
    pub train_fraction: Option<f64>,
    /// Shuffle seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn split(ctx: &Context, flags: &SplitArgs) -> Result<ExitCode> {
    let a = ctx.resolve("split", flags)?;
    let path = required(a.manifest, "manifest")?;
    let manifest: DatasetManifest = read_json(&path)?;
    let spec = SplitSpec {
        train_fraction: a.train_fraction.unwrap_or(SplitSpec::default().train_fraction),
        seed: a.seed.unwrap_or(0),
    };
    let split = split_dataset(&manifest, &spec)?;
    let out = a.out.unwrap_or(path);
    write_json(&out, &split)?;
    println!(
        "train {}, val {} -> {}",
        split.count(Split::Train),
        split.count(Split::Val),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExportArgs {
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Directory the manifest's file names are relative to [default: the manifest's directory]
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Write a YOLO dataset into this directory
    #[arg(long)]
    pub yolo: Option<PathBuf>,
    /// Write a COCO instances file
    #[arg(long)]
    pub coco: Option<PathBuf>,
    /// Detector stride used for the resolution check [default: 32]
    #[arg(long)]
    pub stride: Option<u32>,
}

pub fn export(ctx: &Context, flags: &ExportArgs) -> Result<ExitCode> {
    let a = ctx.resolve("export", flags)?;
    let path = required(a.manifest, "manifest")?;
    if a.yolo.is_none() && a.coco.is_none() {
        bail!("nothing to export: pass --yolo and/or --coco");
    }
    let manifest: DatasetManifest = read_json(&path)?;
    let stride = a.stride.unwrap_or(DEFAULT_STRIDE);
    let sizes: BTreeSet<(u32, u32)> = manifest.images.iter().map(|r| (r.width, r.height)).collect();
    for (w, h) in sizes {
        if let Err(v) = validate_resolution(w, h, stride) {
            eprintln!("warning: {w}x{h}: {v}");
        }
    }
    let images = a
        .images
        .unwrap_or_else(|| path.parent().map(Path::to_path_buf).unwrap_or_default());
    if let Some(dir) = &a.yolo {
        export_yolo(&manifest, &images, dir)?;
        println!("yolo -> {}", dir.display());
    }
    if let Some(file) = &a.coco {
        export_coco(&manifest, file)?;
        println!("coco -> {}", file.display());
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    /// Detections to score (COCO results or flat JSON)
    #[arg(long)]
    pub pred: Option<PathBuf>,
    /// Ground truth (COCO instances or flat JSON)
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Report only AP at this IoU threshold
    #[arg(long)]
    pub iou: Option<f64>,
    /// Save the full report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn eval(ctx: &Context, flags: &EvalArgs) -> Result<ExitCode> {
    let a = ctx.resolve("eval", flags)?;
    let gt_path = required(a.gt, "gt")?;
    let pred_path = required(a.pred, "pred")?;
    let gts = load_ground_truth(&gt_path)?;
    let preds = load_predictions(&pred_path, &gts)?;
    let cfg = ApConfig::default();
    let label = pred_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let report = evaluate_run(&label, &preds, &gts, &cfg)?;
    match a.iou {
        Some(t) => {
            if !(0.0..=1.0).contains(&t) {
                bail!("--iou must lie in [0, 1], got {t}");
            }
            let r = ap_at(&preds, &gts, t, &cfg);
            println!("AP@{t:.2}: {:.4}", r.ap);
        }
        None => {
            for row in &report.metrics {
                println!("{}: {:.4}", row.metric.label(), row.mean);
            }
        }
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    if let Some(out) = &a.out {
        report.save(out)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentArgs {
    /// One file per repeat: a per-run report or a detections file
    #[arg(long, num_args = 1..)]
    pub candidate: Vec<PathBuf>,
    #[arg(long, num_args = 1..)]
    pub baseline: Vec<PathBuf>,
    /// Ground truth, needed when the inputs are detections
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Expected number of files per side [default: number of candidate files]
    #[arg(long)]
    pub repeats: Option<usize>,
    /// Save the aggregated report as JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// [default: Generated]
    #[arg(long)]
    pub candidate_label: Option<String>,
    /// [default: Baseline]
    #[arg(long)]
    pub baseline_label: Option<String>,
}

pub fn experiment(ctx: &Context, flags: &ExperimentArgs) -> Result<ExitCode> {
    let a = ctx.resolve("experiment", flags)?;
    let mut spec = ExperimentSpec::new(a.candidate, a.baseline);
    spec.ground_truth = a.gt;
    if let Some(r) = a.repeats {
        spec.repeats = r;
    }
    if let Some(l) = a.candidate_label {
        spec.candidate_label = l;
    }
    if let Some(l) = a.baseline_label {
        spec.baseline_label = l;
    }
    let report = run_experiment(&spec)?;
    print!("{}", render_table(&report));
    if let Some(out) = &a.out {
        report.save(out)?;
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelCheckArgs {
    /// [default: 7]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Monte Carlo draws for the variance checks [default: 10000]
    #[arg(long)]
    pub samples: Option<usize>,
    /// Print the outcomes as JSON
    #[arg(long)]
    pub json: bool,
}

pub fn kernel_check(ctx: &Context, flags: &KernelCheckArgs) -> Result<ExitCode> {
    let a = ctx.resolve("kernel-check", flags)?;
    let samples = a.samples.unwrap_or(10_000);
    if samples < 2 {
        bail!("--samples must be at least 2");
    }
    let outcomes = run_suite(a.seed.unwrap_or(7), samples)?;
    if a.json {
        println!("{}", serde_json::to_string_pretty(&outcomes)?);
    } else {
        for o in &outcomes {
            println!("{} {:<24} {}", if o.passed { "ok  " } else { "FAIL" }, o.name, o.detail);
        }
    }
    Ok(if outcomes.iter().all(|o| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

#[derive(Debug, Default, Clone, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServeArgs {
    /// [default: 127.0.0.1:8080]
    #[arg(long)]
    pub addr: Option<SocketAddr>,
}

pub fn serve(ctx: &Context, flags: &ServeArgs) -> Result<ExitCode> {
    let a = ctx.resolve("serve", flags)?;
    let addr = a.addr.unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080)));
    let store = ctx.store()?;
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(synthdet_service::serve(addr, store))
        .with_context(|| format!("serving on {addr}"))?;
    Ok(ExitCode::SUCCESS)
}

/// Flags applied on top of the `[pipeline]` table, which holds a run
/// config.
#[derive(Debug, Default, Clone, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub run_id: Option<String>,
    /// Preset for the job template when the config has no `job` [default: final]
    #[arg(long)]
    pub preset: Option<String>,
    /// Number of images [default: 10]
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    /// `mock` or the base URL of a generation server
    #[arg(long)]
    pub backend: Option<String>,
    /// Stop after this stage: generate, annotate, split or export
    #[arg(long)]
    pub stop_after: Option<String>,
}

fn run_config(ctx: &Context, a: &PipelineArgs) -> Result<RunConfig> {
    let lib = ctx.presets()?;
    let key = a.preset.as_deref().unwrap_or("final");
    let preset = lib.get(key).ok_or_else(|| anyhow!("unknown preset `{key}`"))?;
    let mut v = json!({ "job": GenerationJob::from_preset(preset, 0), "count": 10 });
    if let Some(cfg) = ctx.cfg {
        config::deep_merge(&mut v, cfg.section("pipeline")?);
    }
    if let Some(id) = &a.run_id {
        v["run_id"] = json!(id);
    }
    if let Some(n) = a.count {
        v["count"] = json!(n);
    }
    for (key, val) in [("seed", a.seed.map(|s| json!(s))), ("width", a.width.map(|w| json!(w))), ("height", a.height.map(|h| json!(h)))] {
        if let Some(val) = val {
            v["job"][key] = val;
        }
    }
    if let Some(b) = &a.backend {
        v["backend"] = if b == "mock" {
            json!({ "kind": "mock" })
        } else {
            json!({ "kind": "http", "url": b })
        };
    }
    serde_json::from_value(v).context("pipeline config")
}

pub fn pipeline(ctx: &Context, a: &PipelineArgs) -> Result<ExitCode> {
    let config = run_config(ctx, a)?;
    let stop_after: Option<Stage> = a
        .stop_after
        .as_deref()
        .map(|s| serde_json::from_value(json!(s)).map_err(|_| anyhow!("unknown stage `{s}`")))
        .transpose()?;
    let store = ctx.store()?;
    let run = run_pipeline(&store, &config, RunOptions { stop_after })?;
    println!("run {} ({} images) in {}", run.run_id, run.image_ids.len(), store.root().display());
    for rec in &run.stages {
        println!("  {:<9} {}", serde_json::to_value(rec.stage)?.as_str().unwrap_or(""), describe(&rec.status));
    }
    for (kind, path) in &run.artifacts {
        println!("  {kind}: {path}");
    }
    for w in &run.warnings {
        eprintln!("warning: {w}");
    }
    Ok(match run.failure() {
        Some((stage, cause)) => {
            eprintln!("error: stage {stage:?} failed: {cause}");
            ExitCode::FAILURE
        }
        None => ExitCode::SUCCESS,
    })
}

fn describe(s: &synthdet_core::orchestrator::StageStatus) -> String {
    use synthdet_core::orchestrator::StageStatus::*;
    match s {
        Pending => "pending".into(),
        Running => "running".into(),
        Done => "done".into(),
        Failed { cause } => format!("failed: {cause}"),
    }
}
