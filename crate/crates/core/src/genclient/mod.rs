//! Text-to-image generation jobs.
//!
//! A [`GenerationJob`] carries the prompt pair and sampler knobs. Jobs are
//! validated locally (resolution stride, guidance range) before any I/O and
//! then executed by a [`GenerationBackend`]: either the HTTP wire contract
//! against an external server or the deterministic procedural mock.

use serde::{Deserialize, Serialize};

use crate::dataset::{validate_resolution, DEFAULT_STRIDE};
use crate::error::FieldError;

mod backend;
mod mock;
mod presets;
mod wire;

pub use backend::{
    GeneratedImage, GenerationBackend, GenerationClient, GenerationResult, HttpBackend, JobHandle,
    MockBackend, BACKEND_URL_ENV, DEFAULT_BACKEND_URL,
};
pub use mock::{mock_generate, render_scene, AppleCircle, AppleColor, MockSceneTruth, SceneParams};
pub use presets::{builtin_presets, preset, PresetLibrary, PromptPreset, PRESET_KEYS};
pub use wire::{GenerateRequest, GenerateResponse};

/// Scheduler identifier passed through to backends unchanged.
pub const DEFAULT_SCHEDULER: &str = "EulerDiscreteScheduler";

pub const CFG_SCALE_RANGE: std::ops::RangeInclusive<f64> = 1.0..=30.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub positive_prompt: String,
    #[serde(default)]
    pub negative_prompt: String,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub cfg_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_scheduler")]
    pub scheduler_id: String,
    #[serde(default = "one")]
    pub batch_size: u32,
}

fn default_scheduler() -> String {
    DEFAULT_SCHEDULER.to_string()
}

fn one() -> u32 {
    1
}

impl GenerationJob {
    pub fn from_preset(preset: &PromptPreset, seed: u64) -> Self {
        Self {
            positive_prompt: preset.positive_prompt.clone(),
            negative_prompt: preset.negative_prompt.clone(),
            width: preset.width,
            height: preset.height,
            steps: preset.steps,
            cfg_scale: preset.cfg_scale,
            seed,
            scheduler_id: DEFAULT_SCHEDULER.to_string(),
            batch_size: 1,
        }
    }

    /// Collects every invariant violation; an empty list means the job is valid.
    pub fn violations(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        if self.positive_prompt.trim().is_empty() {
            errs.push(FieldError::new("positive_prompt", "must not be empty"));
        }
        if self.width == 0 || self.height == 0 {
            errs.push(FieldError::new("width/height", "must be positive"));
        } else if let Err(v) = validate_resolution(self.width, self.height, DEFAULT_STRIDE) {
            if let Some(w) = v.width {
                errs.push(FieldError::new(
                    "width",
                    format!("{w} is not divisible by {}", v.stride),
                ));
            }
            if let Some(h) = v.height {
                errs.push(FieldError::new(
                    "height",
                    format!("{h} is not divisible by {}", v.stride),
                ));
            }
        }
        if self.steps == 0 {
            errs.push(FieldError::new("steps", "must be at least 1"));
        }
        if !CFG_SCALE_RANGE.contains(&self.cfg_scale) {
            errs.push(FieldError::new(
                "cfg_scale",
                format!("{} is outside [1, 30]", self.cfg_scale),
            ));
        }
        if self.batch_size == 0 {
            errs.push(FieldError::new("batch_size", "must be at least 1"));
        }
        if self.scheduler_id.trim().is_empty() {
            errs.push(FieldError::new("scheduler_id", "must not be empty"));
        }
        errs
    }

    pub fn validate(&self) -> Result<(), GenerationError> {
        let errs = self.violations();
        if errs.is_empty() {
            Ok(())
        } else {
            Err(GenerationError::InvalidJob(errs))
        }
    }

    /// Seed used for batch item `index`.
    pub fn item_seed(&self, index: u32) -> u64 {
        self.seed.wrapping_add(u64::from(index))
    }
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum GenerationError {
    #[error("invalid generation job: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InvalidJob(Vec<FieldError>),
    #[error("backend connection failed: {0}")]
    Connection(String),
    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),
    /// Non-success status from the backend; `body` is surfaced verbatim.
    #[error("backend returned {status}: {body}")]
    Backend { status: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("unknown job handle {0}")]
    UnknownHandle(u64),
}

impl GenerationError {
    pub fn is_retryable(&self) -> bool {
        match self {
            GenerationError::Connection(_) | GenerationError::Timeout(_) => true,
            GenerationError::Backend { status, .. } => *status >= 500,
            _ => false,
        }
    }
}
