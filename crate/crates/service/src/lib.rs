//! REST control plane over the slice engine.
//!
//! The HTTP layer is stateless; every mutation funnels through the ordered
//! command channel owned by the engine loop, and reads return immutable
//! snapshots, so concurrent requests always observe consistent state.

mod api;
mod handle;

pub use api::{router, AppState, ErrorBody};
pub use handle::{start_engine, Command, EngineHandle, ServeMode};

use slicer_core::engine::EngineOptions;
use slicer_core::model::{ClusterConfig, ModelError};

/// Builds the engine loop and the router in one step.
pub fn build(
    cluster: ClusterConfig,
    options: EngineOptions,
    mode: ServeMode,
) -> Result<axum::Router, ModelError> {
    let handle = start_engine(cluster, options, mode)?;
    Ok(router(handle))
}

/// Serves until the listener fails; use from a tokio runtime.
pub async fn serve(
    listener: tokio::net::TcpListener,
    router: axum::Router,
) -> std::io::Result<()> {
    axum::serve(listener, router).await
}
