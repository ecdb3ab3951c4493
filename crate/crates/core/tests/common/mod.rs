#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use synthdet_core::annotation::RawDetection;
use synthdet_core::genclient::{preset, GenerationJob, SceneParams};
use synthdet_core::orchestrator::{AnnotatorConfig, BackendConfig, RunConfig};
use synthdet_core::{BoundingBox, FilterConfig, SplitSpec};

pub fn bb(x0: f64, y0: f64, x1: f64, y1: f64) -> BoundingBox {
    BoundingBox::new(x0, y0, x1, y1).unwrap()
}

fn det(b: BoundingBox, class: &str, conf: f64) -> RawDetection {
    RawDetection::new(b, class, conf).unwrap()
}

/// Twelve detections exercising every filter stage at the default
/// operating point (apple, >= 0.70, NMS IoU 0.2).
pub fn golden_detections() -> Vec<RawDetection> {
    vec![
        det(bb(0.0, 0.0, 10.0, 10.0), "apple", 0.95),
        // IoU 90/110 with the first box
        det(bb(1.0, 0.0, 11.0, 10.0), "apple", 0.90),
        // exactly at the confidence threshold
        det(bb(20.0, 0.0, 30.0, 10.0), "apple", 0.70),
        det(bb(40.0, 0.0, 50.0, 10.0), "apple", 0.6999),
        det(bb(40.0, 0.0, 50.0, 10.0), "orange", 0.99),
        // a foreign class that would suppress the next box if NMS ran first
        det(bb(60.0, 0.0, 70.0, 10.0), "pear", 0.90),
        det(bb(60.0, 0.0, 70.0, 10.0), "apple", 0.80),
        // IoU 80/120 with the previous apple
        det(bb(62.0, 0.0, 72.0, 10.0), "apple", 0.75),
        det(bb(80.0, 0.0, 90.0, 10.0), "apple", 0.72),
        // IoU 40/160 = 0.25
        det(bb(86.0, 0.0, 96.0, 10.0), "apple", 0.71),
        det(bb(100.0, 0.0, 110.0, 10.0), "apple", 0.88),
        // contained, IoU 20/100 = 0.2 exactly, not above the threshold
        det(bb(100.0, 0.0, 110.0, 2.0), "apple", 0.86),
    ]
}

/// Survivors in output order, worked out by hand from the list above.
pub fn golden_survivors() -> Vec<RawDetection> {
    let all = golden_detections();
    [0, 10, 11, 6, 8, 2].iter().map(|&i| all[i].clone()).collect()
}

pub fn small_job(seed: u64, width: u32, height: u32) -> GenerationJob {
    let mut job = GenerationJob::from_preset(&preset("final").unwrap(), seed);
    job.width = width;
    job.height = height;
    job
}

pub fn mock_config(run_id: &str, count: usize, width: u32, height: u32) -> RunConfig {
    RunConfig {
        run_id: Some(run_id.to_string()),
        job: small_job(1000, width, height),
        count,
        backend: BackendConfig::Mock {
            scene: SceneParams::default(),
        },
        annotator: AnnotatorConfig::default(),
        filter: FilterConfig::default(),
        split: SplitSpec {
            train_fraction: 0.8,
            seed: 17,
        },
        export: Default::default(),
    }
}

/// Every file under `root`, keyed by relative path.
pub fn tree_bytes(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

pub struct LoopOutcome {
    pub ap50: f64,
    pub images: usize,
    pub truth_boxes: usize,
    pub tree: BTreeMap<String, Vec<u8>>,
}

/// Mock scenes through the blob annotator and default filter, scored
/// against the scene truth.
pub fn mock_loop(store_root: &Path, count: usize, width: u32, height: u32) -> LoopOutcome {
    use synthdet_core::annotation::filter_detections;
    use synthdet_core::eval::{ap_at, ImageGroundTruth, ImagePredictions};
    use synthdet_core::orchestrator::{run_pipeline, ProjectStore, RunOptions};
    use synthdet_core::ApConfig;

    let store = ProjectStore::open(store_root).unwrap();
    let mut cfg = mock_config("e2e", count, width, height);
    cfg.backend = BackendConfig::Mock {
        scene: SceneParams::unoccluded(),
    };
    let run = run_pipeline(&store, &cfg, RunOptions::default()).unwrap();
    assert!(run.is_complete(), "{:?}", run.failure());

    let mut preds = ImagePredictions::new();
    let mut gts = ImageGroundTruth::new();
    for id in &run.image_ids {
        let (kept, _) = filter_detections(&store.raw(id).unwrap(), &cfg.filter).unwrap();
        preds.insert(id.clone(), kept.iter().map(|d| d.scored()).collect());
        gts.insert(id.clone(), store.truth(id).unwrap().boxes);
    }
    let ap = ap_at(&preds, &gts, 0.5, &ApConfig::default());
    LoopOutcome {
        ap50: ap.ap,
        images: run.image_ids.len(),
        truth_boxes: gts.values().map(Vec::len).sum(),
        tree: tree_bytes(store_root),
    }
}
