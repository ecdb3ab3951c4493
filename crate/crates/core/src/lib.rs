//! Synthetic orchard imagery to detector training data: mock and HTTP
//! image generation, auto-annotation with class/confidence/NMS filtering,
//! dataset splitting and YOLO/COCO interchange, AP evaluation, and a small
//! diffusion kernel for checking the underlying math.

pub mod annotation;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsio;
pub mod genclient;
pub mod geometry;
pub mod kernel;
pub mod orchestrator;

pub use annotation::{AnnotationSet, AnnotationSource, FilterConfig, RawDetection};
pub use dataset::{DatasetManifest, ImageRecord, Provenance, Split, SplitSpec};
pub use error::{Error, FieldError, Result};
pub use eval::{ApConfig, EvalReport, Metric, MetricRow};
pub use genclient::{GenerationJob, PromptPreset};
pub use geometry::{BoundingBox, ScoredBox};
pub use orchestrator::{PipelineRun, ProjectStore, RunConfig};
