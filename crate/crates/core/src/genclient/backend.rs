use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::mock::{mock_generate, MockSceneTruth, SceneParams};
use super::wire::{GenerateRequest, GenerateResponse};
use super::{GenerationError, GenerationJob};

/// Environment variable holding the default backend base URL.
pub const BACKEND_URL_ENV: &str = "SYNTHDET_BACKEND_URL";
pub const DEFAULT_BACKEND_URL: &str = "http://127.0.0.1:7860";

/// Something that turns a generate request into a generate response.
pub trait GenerationBackend: Send + Sync {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GenerationError>;
}

/// Procedural backend; batch item `i` is rendered from `seed + i`.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    pub scene: SceneParams,
}

impl MockBackend {
    pub fn new(scene: SceneParams) -> Self {
        Self { scene }
    }

    /// Like [`GenerationBackend::generate`] but also returns the truth for
    /// every batch item, in order.
    pub fn generate_with_truth(
        &self,
        req: &GenerateRequest,
    ) -> Result<(GenerateResponse, Vec<MockSceneTruth>), GenerationError> {
        let job = GenerationJob::from(req);
        let errs = job.violations();
        if !errs.is_empty() {
            return Err(GenerationError::Backend {
                status: 422,
                body: serde_json::json!({ "errors": errs }).to_string(),
            });
        }
        let mut images = Vec::with_capacity(req.batch_size as usize);
        let mut truths = Vec::with_capacity(req.batch_size as usize);
        for i in 0..req.batch_size {
            let item = GenerationJob {
                seed: job.item_seed(i),
                batch_size: 1,
                ..job.clone()
            };
            let (png, truth) = mock_generate(&item, &self.scene)
                .map_err(|e| GenerationError::Protocol(e.to_string()))?;
            images.push(BASE64.encode(png));
            truths.push(truth);
        }
        Ok((
            GenerateResponse {
                images,
                seed: req.seed,
                parameters: req.clone(),
            },
            truths,
        ))
    }
}

impl GenerationBackend for MockBackend {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GenerationError> {
        self.generate_with_truth(req).map(|(resp, _)| resp)
    }
}

/// Speaks the `POST {base_url}/v1/generate` contract.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base_url: String,
    timeout: Duration,
    client: reqwest::blocking::Client,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Result<Self, GenerationError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GenerationError::Connection(e.to_string()))?;
        Ok(Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout,
            client,
        })
    }

    /// Uses `SYNTHDET_BACKEND_URL`, falling back to the local default.
    pub fn from_env(timeout: Duration) -> Result<Self, GenerationError> {
        let url = std::env::var(BACKEND_URL_ENV).unwrap_or_else(|_| DEFAULT_BACKEND_URL.to_string());
        Self::new(url, timeout)
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/generate", self.base_url)
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, req: &GenerateRequest) -> Result<GenerateResponse, GenerationError> {
        let resp = self
            .client
            .post(self.endpoint())
            .json(req)
            .send()
            .map_err(|e| {
                if e.is_timeout() {
                    GenerationError::Timeout(self.timeout)
                } else {
                    GenerationError::Connection(e.to_string())
                }
            })?;
        let status = resp.status();
        let body = resp.text().map_err(|e| {
            if e.is_timeout() {
                GenerationError::Timeout(self.timeout)
            } else {
                GenerationError::Connection(e.to_string())
            }
        })?;
        if !status.is_success() {
            return Err(GenerationError::Backend {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_str(&body).map_err(|e| GenerationError::Protocol(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct JobHandle {
    pub id: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedImage {
    pub seed: u64,
    pub width: u32,
    pub height: u32,
    #[serde(skip)]
    pub png: Vec<u8>,
}

/// Decoded images plus the job as echoed by the backend.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub job: GenerationJob,
    pub images: Vec<GeneratedImage>,
}

/// Validates jobs, executes them on a backend with bounded retries, and keeps
/// results so `fetch` is idempotent.
pub struct GenerationClient<B> {
    backend: B,
    max_retries: u32,
    retry_delay: Duration,
    next_id: AtomicU64,
    results: Mutex<BTreeMap<u64, GenerationResult>>,
}

impl<B: GenerationBackend> GenerationClient<B> {
    pub fn new(backend: B) -> Self {
        Self {
            backend,
            max_retries: 2,
            retry_delay: Duration::from_millis(200),
            next_id: AtomicU64::new(1),
            results: Mutex::new(BTreeMap::new()),
        }
    }

    pub fn with_retries(mut self, max_retries: u32, delay: Duration) -> Self {
        self.max_retries = max_retries;
        self.retry_delay = delay;
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn submit(&self, job: &GenerationJob) -> Result<JobHandle, GenerationError> {
        job.validate()?;
        let req = GenerateRequest::from(job);
        let mut attempt = 0;
        let resp = loop {
            match self.backend.generate(&req) {
                Ok(r) => break r,
                Err(e) if e.is_retryable() && attempt < self.max_retries => {
                    attempt += 1;
                    tracing::warn!(attempt, error = %e, "retrying generation request");
                    std::thread::sleep(self.retry_delay * attempt);
                }
                Err(e) => return Err(e),
            }
        };
        let result = decode_response(job, &resp)?;
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.results.lock().insert(id, result);
        Ok(JobHandle { id, seed: job.seed })
    }

    pub fn fetch(&self, handle: &JobHandle) -> Result<GenerationResult, GenerationError> {
        self.results
            .lock()
            .get(&handle.id)
            .cloned()
            .ok_or(GenerationError::UnknownHandle(handle.id))
    }
}

fn decode_response(
    job: &GenerationJob,
    resp: &GenerateResponse,
) -> Result<GenerationResult, GenerationError> {
    if resp.seed != job.seed {
        return Err(GenerationError::Protocol(format!(
            "seed echo {} does not match request {}",
            resp.seed, job.seed
        )));
    }
    if resp.images.len() != job.batch_size as usize {
        return Err(GenerationError::Protocol(format!(
            "expected {} images, got {}",
            job.batch_size,
            resp.images.len()
        )));
    }
    let mut images = Vec::with_capacity(resp.images.len());
    for (i, b64) in resp.images.iter().enumerate() {
        let png = BASE64
            .decode(b64)
            .map_err(|e| GenerationError::Protocol(format!("image {i}: {e}")))?;
        let (w, h) = image::ImageReader::new(std::io::Cursor::new(&png))
            .with_guessed_format()
            .map_err(|e| GenerationError::Protocol(format!("image {i}: {e}")))?
            .into_dimensions()
            .map_err(|e| GenerationError::Protocol(format!("image {i}: {e}")))?;
        if (w, h) != (job.width, job.height) {
            return Err(GenerationError::Protocol(format!(
                "image {i} is {w}x{h}, expected {}x{}",
                job.width, job.height
            )));
        }
        images.push(GeneratedImage {
            seed: job.item_seed(i as u32),
            width: w,
            height: h,
            png,
        });
    }
    Ok(GenerationResult {
        job: GenerationJob::from(&resp.parameters),
        images,
    })
}
