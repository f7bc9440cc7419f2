//! HTTP API over editing sessions.
//!
//! Sessions live under a project root, one directory per session, and are
//! written back on every commit. A mock backend router is also provided for
//! exercising the denoise and embedding wire protocols.

pub mod error;
pub mod mock;
mod routes;
mod state;

use std::future::Future;
use std::path::PathBuf;
use std::sync::Arc;

use axum::Router;
use tokio::net::TcpListener;

use spice_core::backend::Denoiser;

pub use error::{ApiError, ErrorCode};
pub use mock::{backend_router, mock_backend_router};
pub use routes::{
    HintSpec, JobStatus, SessionSummary, StepRequestConfig, StepSummary, SweepRequestConfig,
    SweepSummary,
};
pub use state::{AppState, StateError};

/// Largest accepted request body.
pub const MAX_BODY_BYTES: usize = 256 * 1024 * 1024;

/// Longest side of the thumbnails served for each step.
pub const THUMBNAIL_MAX_SIDE: u32 = 256;

#[derive(Clone)]
pub struct ServerConfig {
    pub project_root: PathBuf,
    pub backend: Arc<dyn Denoiser>,
    /// Upper bound on concurrently executing steps and sweep cells.
    pub parallelism: usize,
}

pub fn router(state: AppState) -> Router {
    routes::build(state)
}

/// Serves until `shutdown` resolves, then cancels in-flight steps and waits
/// for open requests to finish.
pub async fn serve<F>(listener: TcpListener, state: AppState, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    let app = router(state.clone());
    let signal_state = state.clone();
    axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            tracing::info!("shutting down, cancelling in-flight steps");
            signal_state.cancel_all();
        })
        .await
}

/// Serves [`mock_backend_router`] until `shutdown` resolves.
pub async fn serve_mock<F>(listener: TcpListener, shutdown: F) -> std::io::Result<()>
where
    F: Future<Output = ()> + Send + 'static,
{
    axum::serve(listener, mock_backend_router())
        .with_graceful_shutdown(shutdown)
        .await
}
