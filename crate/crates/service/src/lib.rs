//! REST API over a [`ProjectStore`]. Handlers hold no state of their own;
//! everything is read from and written to the store on each request.

mod error;

use std::net::SocketAddr;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use synthdet_core::annotation::FilterTrace;
use synthdet_core::eval::render_table;
use synthdet_core::fsio::content_id;
use synthdet_core::genclient::{GenerateRequest, GenerateResponse, GenerationBackend, GenerationError, MockBackend, PromptPreset};
use synthdet_core::orchestrator::{
    export_run, preview_filter, run_experiment, run_pipeline, AnnotationEdit, ExperimentSpec, PipelineRun,
    ProjectStore, RunOptions, Stage, StageStatus, StoredAnnotation,
};
use synthdet_core::{BoundingBox, EvalReport, FilterConfig, RunConfig};

pub use error::{ApiError, ApiResult, ErrorBody};

type Body<T> = Result<Json<T>, JsonRejection>;

fn parse<T>(body: Body<T>) -> ApiResult<T> {
    body.map(|Json(v)| v).map_err(ApiError::from)
}

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce() -> synthdet_core::Result<T> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(ApiError::from)
}

pub fn router(store: ProjectStore) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route("/runs", get(list_runs).post(create_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/export", post(export))
        .route("/experiments", post(create_experiment))
        .route("/reports/{id}", get(get_report))
        .route("/images", get(list_images))
        .route("/images/{id}", get(get_image))
        .route("/images/{id}/annotations", get(get_annotations).patch(patch_annotations))
        .route("/preview/filter", post(preview))
        .route("/presets", get(list_presets).post(create_preset))
        .route("/v1/generate", post(mock_generate))
        .with_state(store)
}

async fn list_runs(State(store): State<ProjectStore>) -> ApiResult<Json<Vec<String>>> {
    blocking(move || store.run_ids()).await.map(Json)
}

#[derive(Debug, Default, Deserialize)]
struct RunQuery {
    #[serde(default)]
    detach: bool,
}

#[derive(Debug, Serialize)]
struct Accepted {
    run_id: String,
}

async fn create_run(State(store): State<ProjectStore>, Query(q): Query<RunQuery>, body: Body<RunConfig>) -> ApiResult<Response> {
    let config = parse(body)?;
    config.validate()?;
    if q.detach {
        let run_id = config.resolved_run_id();
        tokio::task::spawn_blocking(move || {
            if let Err(e) = run_pipeline(&store, &config, RunOptions::default()) {
                tracing::error!(error = %e, "detached run failed to start");
            }
        });
        return Ok((StatusCode::ACCEPTED, Json(Accepted { run_id })).into_response());
    }
    let run = blocking(move || run_pipeline(&store, &config, RunOptions::default())).await?;
    Ok((StatusCode::CREATED, Json(run)).into_response())
}

async fn get_run(State(store): State<ProjectStore>, Path(id): Path<String>) -> ApiResult<Json<PipelineRun>> {
    blocking(move || store.run(&id)).await.map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExportResponse {
    pub run_id: String,
    pub artifacts: std::collections::BTreeMap<String, String>,
}

async fn export(State(store): State<ProjectStore>, Path(id): Path<String>) -> ApiResult<Json<ExportResponse>> {
    let run = {
        let (store, id) = (store.clone(), id.clone());
        blocking(move || store.run(&id)).await?
    };
    if *run.status(Stage::Split) != StageStatus::Done {
        return Err(ApiError::new(StatusCode::CONFLICT, format!("run {id} has not been split yet")));
    }
    let artifacts = blocking(move || export_run(&store, &run)).await?;
    Ok(Json(ExportResponse { run_id: id, artifacts }))
}

#[derive(Debug, Deserialize)]
struct ExperimentRequest {
    #[serde(default)]
    report_id: Option<String>,
    #[serde(flatten)]
    spec: ExperimentSpec,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentResponse {
    pub report_id: String,
    pub report: EvalReport,
    pub table: String,
}

async fn create_experiment(
    State(store): State<ProjectStore>,
    body: Body<ExperimentRequest>,
) -> ApiResult<(StatusCode, Json<ExperimentResponse>)> {
    let req = parse(body)?;
    let report_id = req.report_id.clone().unwrap_or_else(|| content_id("exp", &req.spec));
    let resp = blocking(move || {
        let report = run_experiment(&req.spec)?;
        store.save_report(&report_id, &report)?;
        Ok(ExperimentResponse {
            table: render_table(&report),
            report_id,
            report,
        })
    })
    .await?;
    Ok((StatusCode::CREATED, Json(resp)))
}

async fn get_report(State(store): State<ProjectStore>, Path(id): Path<String>) -> ApiResult<Json<EvalReport>> {
    blocking(move || store.report(&id)).await.map(Json)
}

async fn list_images(State(store): State<ProjectStore>) -> ApiResult<Json<Vec<String>>> {
    blocking(move || store.image_ids()).await.map(Json)
}

async fn get_image(State(store): State<ProjectStore>, Path(id): Path<String>) -> ApiResult<Response> {
    let png = blocking(move || store.read_image(&id)).await?;
    Ok(([(header::CONTENT_TYPE, "image/png"), (header::CACHE_CONTROL, "max-age=3600")], png).into_response())
}

async fn get_annotations(State(store): State<ProjectStore>, Path(id): Path<String>) -> ApiResult<Json<StoredAnnotation>> {
    blocking(move || store.annotations(&id)).await.map(Json)
}

async fn patch_annotations(
    State(store): State<ProjectStore>,
    Path(id): Path<String>,
    body: Body<AnnotationEdit>,
) -> ApiResult<Json<StoredAnnotation>> {
    let edit = parse(body)?;
    blocking(move || store.edit_annotations(&id, &edit)).await.map(Json)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewRequest {
    pub image_id: String,
    #[serde(default)]
    pub filter: FilterConfig,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PreviewResponse {
    pub image_id: String,
    pub boxes: Vec<BoundingBox>,
    pub trace: FilterTrace,
}

async fn preview(State(store): State<ProjectStore>, body: Body<PreviewRequest>) -> ApiResult<Json<PreviewResponse>> {
    let req = parse(body)?;
    let (set, trace) = blocking(move || preview_filter(&store, &req.image_id, &req.filter)).await?;
    Ok(Json(PreviewResponse {
        image_id: set.image_id,
        boxes: set.boxes,
        trace,
    }))
}

async fn list_presets(State(store): State<ProjectStore>) -> ApiResult<Json<Vec<PromptPreset>>> {
    blocking(move || Ok(store.presets()?.iter().cloned().collect())).await.map(Json)
}

async fn create_preset(
    State(store): State<ProjectStore>,
    body: Body<PromptPreset>,
) -> ApiResult<(StatusCode, Json<PromptPreset>)> {
    let preset = parse(body)?;
    let saved = preset.clone();
    blocking(move || store.add_preset(saved)).await?;
    Ok((StatusCode::CREATED, Json(preset)))
}

/// The generation wire contract served by the mock backend, so a pipeline
/// can be pointed at this service as its HTTP backend.
async fn mock_generate(body: Body<GenerateRequest>) -> ApiResult<Json<GenerateResponse>> {
    let req = parse(body)?;
    let resp = tokio::task::spawn_blocking(move || MockBackend::default().generate(&req))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?;
    match resp {
        Ok(r) => Ok(Json(r)),
        Err(GenerationError::Backend { status, body }) => Err(ApiError::new(
            StatusCode::from_u16(status).unwrap_or(StatusCode::BAD_REQUEST),
            body,
        )),
        Err(e) => Err(synthdet_core::Error::from(e).into()),
    }
}

/// Serves until Ctrl-C.
pub async fn serve(addr: SocketAddr, store: ProjectStore) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, root = %store.root().display(), "serving");
    axum::serve(listener, router(store))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

/// A server on its own runtime thread, stopped on drop. Lets blocking
/// clients (and tests) talk to a live instance.
pub struct BackgroundServer {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl BackgroundServer {
    pub fn start(addr: SocketAddr, store: ProjectStore) -> std::io::Result<Self> {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let addr = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let thread = std::thread::spawn(move || {
            rt.block_on(async move {
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, router(store)).with_graceful_shutdown(shutdown).await {
                    tracing::error!(error = %e, "server stopped");
                }
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
