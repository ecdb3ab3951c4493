//! JSON bodies of `POST {endpoint}/v1/generate`.

use serde::{Deserialize, Serialize};

use super::GenerationJob;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub negative_prompt: String,
    pub width: u32,
    pub height: u32,
    pub steps: u32,
    pub cfg_scale: f64,
    pub seed: u64,
    pub scheduler: String,
    pub batch_size: u32,
}

/// `images` holds base64-encoded PNGs; `parameters` echoes the request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub images: Vec<String>,
    pub seed: u64,
    pub parameters: GenerateRequest,
}

impl From<&GenerationJob> for GenerateRequest {
    fn from(job: &GenerationJob) -> Self {
        Self {
            prompt: job.positive_prompt.clone(),
            negative_prompt: job.negative_prompt.clone(),
            width: job.width,
            height: job.height,
            steps: job.steps,
            cfg_scale: job.cfg_scale,
            seed: job.seed,
            scheduler: job.scheduler_id.clone(),
            batch_size: job.batch_size,
        }
    }
}

impl From<&GenerateRequest> for GenerationJob {
    fn from(r: &GenerateRequest) -> Self {
        Self {
            positive_prompt: r.prompt.clone(),
            negative_prompt: r.negative_prompt.clone(),
            width: r.width,
            height: r.height,
            steps: r.steps,
            cfg_scale: r.cfg_scale,
            seed: r.seed,
            scheduler_id: r.scheduler.clone(),
            batch_size: r.batch_size,
        }
    }
}
