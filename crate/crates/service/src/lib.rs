//! Dispatch service: snapshot intake, cadence and event triggers, operator
//! controls, staleness-gated publish, fail-safe mode and an append-only
//! audit log, served over HTTP/JSON with a server-sent event stream.

pub mod api;
pub mod audit;
pub mod clock;
pub mod config;
pub mod error;
pub mod service;
pub mod state;
pub mod stub_router;

use std::sync::Arc;

pub use config::{ConfigError, ServiceConfig};
pub use error::ServiceError;
pub use service::Service;

use audit::AuditLog;
use clock::SystemClock;
use stormcrew_core::travel::provider_from_config;

/// Run the service until interrupted.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let provider = provider_from_config(&cfg.travel).map_err(|e| ServiceError::Provider(e.to_string()))?;
    let audit = match &cfg.audit_log {
        Some(path) => AuditLog::open(path)?,
        None => AuditLog::in_memory(),
    };
    let listen = cfg.listen;
    let service = Service::new(cfg, Arc::new(SystemClock), provider, audit)?;
    let background = service.spawn_background();
    let listener = tokio::net::TcpListener::bind(listen)
        .await
        .map_err(|e| ServiceError::Internal(format!("bind {listen}: {e}")))?;
    tracing::info!(%listen, "dispatch service listening");
    let result = axum::serve(listener, api::router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()));
    for task in background {
        task.abort();
    }
    result
}
