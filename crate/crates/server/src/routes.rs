use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Multipart, Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use spice_core::hints::{HintKind, HintLayer};
use spice_core::imageops::{decode_png, encode_png, resize, ResampleFilter};
use spice_core::orchestrator::{
    run_edit_step, run_sweep, PipelineError, StepOptions, SweepAxis, SweepOptions, SweepSidecar,
};
use spice_core::{BinaryMask, BoundingBox, Channels, ContextMask, EditConfig, EditSession, EditStep, ImageBuffer};

use crate::error::ApiError;
use crate::state::{lock_map, AppState, BusyGuard, SessionSlot};
use crate::{MAX_BODY_BYTES, THUMBNAIL_MAX_SIDE};

/// How one uploaded hint raster should be applied.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HintSpec {
    pub kind: HintKind,
    /// Falls back to the config's `patch_opacity`.
    #[serde(default)]
    pub opacity: Option<f64>,
}

/// JSON `config` part of a step request.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepRequestConfig {
    #[serde(flatten)]
    pub edit: EditConfig,
    /// One entry per uploaded hint, in upload order. Missing entries default
    /// to color patches.
    #[serde(default)]
    pub hint_layers: Vec<HintSpec>,
    #[serde(default)]
    pub context_scale: Option<f64>,
    /// Return a polling token instead of waiting for the result.
    #[serde(default, rename = "async")]
    pub run_async: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRequestConfig {
    #[serde(flatten)]
    pub step: StepRequestConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub thumb_height: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub index: usize,
    pub region: BoundingBox,
    pub config: EditConfig,
    pub backend_id: String,
    pub duration_ms: u64,
    pub continuation_digests: Vec<String>,
    pub result_sha256: String,
    pub result_url: String,
    pub thumbnail_url: String,
}

impl StepSummary {
    fn new(session_id: &str, step: &EditStep) -> Self {
        let base = format!("/v1/sessions/{session_id}/steps/{}", step.index);
        Self {
            index: step.index,
            region: step.region,
            config: step.config.clone(),
            backend_id: step.provenance.backend_id.clone(),
            duration_ms: step.provenance.duration_ms,
            continuation_digests: step.provenance.continuation_digests.clone(),
            result_sha256: step.result.digest_hex(),
            result_url: format!("{base}/result.png"),
            thumbnail_url: format!("{base}/thumbnail.png"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub width: u32,
    pub height: u32,
    pub channels: Channels,
    /// Index of the active step, -1 for the base image.
    pub cursor: isize,
    pub busy: bool,
    pub active_sha256: String,
    pub base_url: String,
    pub active_url: String,
    pub steps: Vec<StepSummary>,
}

impl SessionSummary {
    fn new(session: &EditSession, busy: bool) -> Self {
        let id = session.id();
        let base = session.base_image();
        Self {
            session_id: id.to_string(),
            width: base.width(),
            height: base.height(),
            channels: base.channels(),
            cursor: session.cursor(),
            busy,
            active_sha256: session.active_image().digest_hex(),
            base_url: format!("/v1/sessions/{id}/base.png"),
            active_url: format!("/v1/sessions/{id}/active.png"),
            steps: session.steps().iter().map(|s| StepSummary::new(id, s)).collect(),
        }
    }
}

/// State of an asynchronous step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum JobStatus {
    Running,
    Succeeded { step: StepSummary },
    Failed { error: ApiError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub sweep_id: String,
    pub succeeded: usize,
    pub sidecar: SweepSidecar,
    pub contact_url: String,
}

pub(crate) fn build(state: AppState) -> Router {
    Router::new()
        .route("/v1/health", get(health))
        .route("/v1/sessions", post(create_session).get(list_sessions))
        .route("/v1/sessions/{id}", get(get_session))
        .route("/v1/sessions/{id}/base.png", get(base_png))
        .route("/v1/sessions/{id}/active.png", get(active_png))
        .route("/v1/sessions/{id}/steps", post(create_step))
        .route("/v1/sessions/{id}/steps/{t}/result.png", get(step_result))
        .route("/v1/sessions/{id}/steps/{t}/thumbnail.png", get(step_thumbnail))
        .route("/v1/sessions/{id}/jobs/{token}", get(get_job))
        .route("/v1/sessions/{id}/revert", post(revert))
        .route("/v1/sessions/{id}/cancel", post(cancel))
        .route("/v1/sessions/{id}/sweeps", post(create_sweep))
        .route("/v1/sessions/{id}/sweeps/{sid}/contact.png", get(sweep_contact))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .with_state(state)
}

async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}

async fn list_sessions(State(state): State<AppState>) -> Json<serde_json::Value> {
    Json(serde_json::json!({ "sessions": state.session_ids() }))
}

async fn create_session(
    State(state): State<AppState>,
    mut form: Multipart,
) -> Result<Response, ApiError> {
    let mut image = None;
    while let Some(field) = form.next_field().await.map_err(multipart_err)? {
        if field.name() == Some("image") {
            image = Some(field.bytes().await.map_err(multipart_err)?);
        }
    }
    let bytes = image.ok_or_else(|| ApiError::bad_request("missing multipart field 'image'"))?;
    let id = blocking(move || {
        let base = decode_png(&bytes)?;
        let id = uuid::Uuid::new_v4().simple().to_string();
        state.insert(EditSession::new(id.clone(), base))?;
        Ok(id)
    })
    .await?;
    tracing::info!(session = %id, "session created");
    Ok((StatusCode::CREATED, Json(serde_json::json!({ "session_id": id }))).into_response())
}

async fn get_session(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<SessionSummary>, ApiError> {
    let slot = state.slot(&id)?;
    Ok(Json(SessionSummary::new(&slot.snapshot(), slot.is_busy())))
}

async fn base_png(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.slot(&id)?.snapshot();
    let bytes = blocking(move || Ok(encode_png(session.base_image())?)).await?;
    Ok(png_response(bytes))
}

async fn active_png(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let session = state.slot(&id)?.snapshot();
    let bytes = blocking(move || Ok(encode_png(session.active_image())?)).await?;
    Ok(png_response(bytes))
}

fn committed_step(session: &EditSession, t: usize) -> Result<Arc<ImageBuffer>, ApiError> {
    session
        .step(t)
        .map(|s| Arc::clone(&s.result))
        .ok_or_else(|| ApiError::not_found(format!("session has no step {t}")))
}

async fn step_result(
    State(state): State<AppState>,
    Path((id, t)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    let image = committed_step(&state.slot(&id)?.snapshot(), t)?;
    let bytes = blocking(move || Ok(encode_png(&image)?)).await?;
    Ok(png_response(bytes))
}

pub(crate) fn thumbnail(image: &ImageBuffer) -> Result<ImageBuffer, ApiError> {
    let (w, h) = image.dims();
    let long = w.max(h);
    if long <= THUMBNAIL_MAX_SIDE {
        return Ok(image.clone());
    }
    let scale = |v: u32| ((u64::from(v) * u64::from(THUMBNAIL_MAX_SIDE) + u64::from(long) / 2) / u64::from(long)).max(1) as u32;
    let (tw, th) = (scale(w), scale(h));
    Ok(resize(image, tw, th, ResampleFilter::for_raster((w, h), (tw, th)))?)
}

async fn step_thumbnail(
    State(state): State<AppState>,
    Path((id, t)): Path<(String, usize)>,
) -> Result<Response, ApiError> {
    let image = committed_step(&state.slot(&id)?.snapshot(), t)?;
    let bytes = blocking(move || Ok(encode_png(&thumbnail(&image)?)?)).await?;
    Ok(png_response(bytes))
}

async fn get_job(
    State(state): State<AppState>,
    Path((id, token)): Path<(String, String)>,
) -> Result<Json<JobStatus>, ApiError> {
    let slot = state.slot(&id)?;
    let jobs = lock_map(&slot.jobs);
    jobs.get(&token)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job '{token}'")))
}

#[derive(Debug, Deserialize)]
struct RevertBody {
    to_step: isize,
}

async fn revert(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<RevertBody>,
) -> Result<Json<SessionSummary>, ApiError> {
    let slot = state.slot(&id)?;
    let guard = slot.try_claim()?;
    let summary = blocking(move || {
        let slot = guard.slot();
        state.update(slot, |s| {
            s.revert(body.to_step).map_err(|e| ApiError::bad_request(e.to_string()))
        })?;
        Ok(SessionSummary::new(&slot.snapshot(), true))
    })
    .await?;
    Ok(Json(SessionSummary { busy: false, ..summary }))
}

async fn cancel(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> Result<Json<serde_json::Value>, ApiError> {
    let slot = state.slot(&id)?;
    let cancelled = slot.cancel();
    Ok(Json(serde_json::json!({ "cancelled": cancelled })))
}

fn multipart_err(e: axum::extract::multipart::MultipartError) -> ApiError {
    ApiError::bad_request(format!("malformed multipart body: {e}"))
}

/// Raw parts of a step or sweep upload.
struct StepForm {
    mask: Bytes,
    hints: Vec<Bytes>,
    config: Option<String>,
}

async fn read_step_form(mut form: Multipart) -> Result<StepForm, ApiError> {
    let mut mask = None;
    let mut hints = Vec::new();
    let mut config = None;
    while let Some(field) = form.next_field().await.map_err(multipart_err)? {
        match field.name() {
            Some("mask") => mask = Some(field.bytes().await.map_err(multipart_err)?),
            Some("hint") => hints.push(field.bytes().await.map_err(multipart_err)?),
            Some("config") => config = Some(field.text().await.map_err(multipart_err)?),
            _ => {}
        }
    }
    Ok(StepForm {
        mask: mask.ok_or_else(|| ApiError::bad_request("missing multipart field 'mask'"))?,
        hints,
        config,
    })
}

fn parse_config<T: serde::de::DeserializeOwned + Default>(text: Option<&str>) -> Result<T, ApiError> {
    match text {
        None => Ok(T::default()),
        Some(t) => serde_json::from_str(t).map_err(|e| ApiError::bad_request(format!("invalid config JSON: {e}"))),
    }
}

pub(crate) fn decode_mask(bytes: &[u8]) -> Result<ContextMask, ApiError> {
    let image = decode_png(bytes).map_err(|e| ApiError::bad_request(format!("mask: {e}")))?;
    let mask = BinaryMask::from_image(&image).map_err(|e| ApiError::bad_request(format!("mask: {e}")))?;
    Ok(ContextMask::new(mask))
}

struct PreparedStep {
    mask: ContextMask,
    hints: Vec<HintLayer>,
    config: EditConfig,
    context_scale: Option<f64>,
}

fn prepare(form: &StepForm, request: &StepRequestConfig) -> Result<PreparedStep, ApiError> {
    request
        .edit
        .validate()
        .map_err(|e| ApiError::bad_request(e.to_string()))?;
    if request.hint_layers.len() > form.hints.len() {
        return Err(ApiError::bad_request(format!(
            "{} hint_layers entries for {} uploaded hints",
            request.hint_layers.len(),
            form.hints.len()
        )));
    }
    let mask = decode_mask(&form.mask)?;
    let hints = form
        .hints
        .iter()
        .enumerate()
        .map(|(i, bytes)| {
            let spec = request.hint_layers.get(i);
            let raster = decode_png(bytes).map_err(|e| ApiError::bad_request(format!("hint {i}: {e}")))?;
            let kind = spec.map_or(HintKind::ColorPatch, |s| s.kind);
            let opacity = spec.and_then(|s| s.opacity).unwrap_or(request.edit.patch_opacity);
            HintLayer::new(kind, raster, opacity).map_err(|e| ApiError::bad_request(format!("hint {i}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(PreparedStep {
        mask,
        hints,
        config: request.edit.clone(),
        context_scale: request.context_scale,
    })
}

/// Runs one step against the current active image and commits it.
fn execute_step(state: &AppState, guard: &BusyGuard, prepared: &PreparedStep) -> Result<StepSummary, ApiError> {
    let slot: &SessionSlot = guard.slot();
    let snapshot = slot.snapshot();
    let active = Arc::clone(snapshot.active_image());
    let options = StepOptions {
        context_scale: prepared.context_scale,
        cancel: Some(Arc::clone(&guard.cancel)),
        ..StepOptions::default()
    };
    let step = run_edit_step(
        &active,
        &prepared.mask,
        &prepared.hints,
        &prepared.config,
        state.backend().as_ref(),
        &options,
    )?;
    if guard.cancel.load(std::sync::atomic::Ordering::SeqCst) {
        return Err(PipelineError::Cancelled.into());
    }
    let id = snapshot.id().to_string();
    state.update(slot, |s| {
        let index = s.commit_step(step).map_err(|e| ApiError::conflict(e.to_string()))?;
        Ok(StepSummary::new(&id, &s.steps()[index]))
    })
}

async fn run_step(state: AppState, guard: BusyGuard, prepared: PreparedStep) -> Result<StepSummary, ApiError> {
    let permit = Arc::clone(state.permits())
        .acquire_owned()
        .await
        .map_err(|_| ApiError::internal("server is shutting down"))?;
    blocking(move || {
        let out = execute_step(&state, &guard, &prepared);
        drop(permit);
        drop(guard);
        out
    })
    .await
}

async fn create_step(
    State(state): State<AppState>,
    Path(id): Path<String>,
    form: Multipart,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let form = read_step_form(form).await?;
    let request: StepRequestConfig = parse_config(form.config.as_deref())?;
    let run_async = request.run_async;
    let prepared = blocking(move || prepare(&form, &request)).await?;
    let guard = slot.try_claim()?;

    if !run_async {
        let summary = run_step(state, guard, prepared).await.inspect_err(|e| {
            tracing::warn!(session = %id, error = %e.message, "step failed");
        })?;
        tracing::info!(session = %id, step = summary.index, "step committed");
        return Ok((StatusCode::OK, Json(summary)).into_response());
    }

    let token = uuid::Uuid::new_v4().simple().to_string();
    lock_map(&slot.jobs).insert(token.clone(), JobStatus::Running);
    let job_slot = Arc::clone(&slot);
    let job_token = token.clone();
    tokio::spawn(async move {
        let status = match run_step(state, guard, prepared).await {
            Ok(step) => JobStatus::Succeeded { step },
            Err(error) => JobStatus::Failed { error },
        };
        lock_map(&job_slot.jobs).insert(job_token, status);
    });
    let body = serde_json::json!({
        "job_id": token,
        "status_url": format!("/v1/sessions/{id}/jobs/{token}"),
    });
    Ok((StatusCode::ACCEPTED, Json(body)).into_response())
}

async fn create_sweep(
    State(state): State<AppState>,
    Path(id): Path<String>,
    form: Multipart,
) -> Result<Json<SweepSummary>, ApiError> {
    let slot = state.slot(&id)?;
    let form = read_step_form(form).await?;
    let text = form
        .config
        .as_deref()
        .ok_or_else(|| ApiError::bad_request("missing multipart field 'config'"))?;
    let request: SweepRequestConfig =
        serde_json::from_str(text).map_err(|e| ApiError::bad_request(format!("invalid config JSON: {e}")))?;
    let session = slot.snapshot();
    let permit = Arc::clone(state.permits())
        .acquire_owned()
        .await
        .map_err(|_| ApiError::internal("server is shutting down"))?;
    let jobs = request.jobs.unwrap_or(1).clamp(1, state.parallelism());
    let backend = Arc::clone(state.backend());
    let (result, png) = blocking(move || {
        let prepared = prepare(&form, &request.step)?;
        let options = SweepOptions {
            jobs,
            step: StepOptions {
                context_scale: prepared.context_scale,
                ..StepOptions::default()
            },
            thumb_height: request.thumb_height.unwrap_or(SweepOptions::default().thumb_height),
        };
        let result = run_sweep(
            session.active_image(),
            &prepared.mask,
            &prepared.hints,
            &prepared.config,
            backend.as_ref(),
            request.axis,
            &request.values,
            &options,
        )?;
        drop(permit);
        let png = encode_png(&result.contact_sheet)?;
        Ok((result, png))
    })
    .await?;
    let sweep_id = uuid::Uuid::new_v4().simple().to_string();
    lock_map(&slot.sweeps).insert(sweep_id.clone(), Arc::new(png));
    Ok(Json(SweepSummary {
        contact_url: format!("/v1/sessions/{id}/sweeps/{sweep_id}/contact.png"),
        sweep_id,
        succeeded: result.succeeded(),
        sidecar: result.sidecar(),
    }))
}

async fn sweep_contact(
    State(state): State<AppState>,
    Path((id, sid)): Path<(String, String)>,
) -> Result<Response, ApiError> {
    let slot = state.slot(&id)?;
    let png = lock_map(&slot.sweeps)
        .get(&sid)
        .cloned()
        .ok_or_else(|| ApiError::not_found(format!("unknown sweep '{sid}'")))?;
    Ok(png_response(png.as_ref().clone()))
}
