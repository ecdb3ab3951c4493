//! Pipeline composition (generate, annotate, split, export), the repeated
//! experiment protocol and the on-disk project store.

mod experiment;
mod pipeline;
mod store;

pub use experiment::{load_ground_truth, load_predictions, run_experiment, ExperimentSpec};
pub use pipeline::{
    current_manifest, export_run, run_pipeline, AnnotatorConfig, BackendConfig, ExportConfig,
    PipelineRun, RunConfig, RunOptions, Stage, StageRecord, StageStatus,
};
pub use store::{
    AnnotationEdit, GenerationRecord, ProjectStore, StoredAnnotation, DEFAULT_STORE, STORE_ENV,
};

use crate::annotation::{filter_detections, AnnotationSet, AnnotationSource, FilterConfig, FilterTrace};
use crate::error::Result;

/// Applies `cfg` to the stored raw detections of an image without writing
/// anything.
pub fn preview_filter(store: &ProjectStore, image_id: &str, cfg: &FilterConfig) -> Result<(AnnotationSet, FilterTrace)> {
    let raw = store.raw(image_id)?;
    let (kept, trace) = filter_detections(&raw, cfg)?;
    Ok((
        AnnotationSet {
            image_id: image_id.to_string(),
            boxes: kept.into_iter().map(|d| d.bbox).collect(),
            source: AnnotationSource::Filtered,
        },
        trace,
    ))
}
