//! Stand-alone denoise/embed service with mock semantics.

use std::sync::Arc;

use axum::extract::{DefaultBodyLimit, State};
use axum::routing::{get, post};
use axum::{Json, Router};

use spice_core::backend::wire::{
    serve_denoise, serve_embed, DenoiseRequestWire, DenoiseResponseWire, EmbedRequestWire,
    EmbedResponseWire,
};
use spice_core::backend::{Denoiser, Embedder, MockDenoiser, MockEmbedder};

use crate::error::ApiError;

#[derive(Clone)]
struct MockState {
    denoiser: Arc<dyn Denoiser>,
    embedder: Arc<dyn Embedder>,
}

async fn denoise(
    State(state): State<MockState>,
    Json(body): Json<DenoiseRequestWire>,
) -> Result<Json<DenoiseResponseWire>, ApiError> {
    let reply = tokio::task::spawn_blocking(move || serve_denoise(state.denoiser.as_ref(), &body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(reply))
}

async fn embed(
    State(state): State<MockState>,
    Json(body): Json<EmbedRequestWire>,
) -> Result<Json<EmbedResponseWire>, ApiError> {
    let reply = tokio::task::spawn_blocking(move || serve_embed(state.embedder.as_ref(), &body))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))??;
    Ok(Json(reply))
}

/// Routes `POST /v1/denoise` and `POST /v1/embed` backed by the mock models.
pub fn mock_backend_router() -> Router {
    backend_router(Arc::new(MockDenoiser::new()), Arc::new(MockEmbedder))
}

pub fn backend_router(denoiser: Arc<dyn Denoiser>, embedder: Arc<dyn Embedder>) -> Router {
    Router::new()
        .route("/v1/denoise", post(denoise))
        .route("/v1/embed", post(embed))
        .route("/v1/health", get(|| async { Json(serde_json::json!({"status": "ok"})) }))
        .layer(DefaultBodyLimit::max(crate::MAX_BODY_BYTES))
        .with_state(MockState { denoiser, embedder })
}
