//! In-process stand-in for a road-network distance-matrix service.
//!
//! Answers `POST /matrix` with great-circle times at a fixed speed, and can
//! be switched into failure modes to exercise client fallbacks.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::State;
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use stormcrew_core::travel::{HaversineProvider, MatrixRequest, MatrixResponse, TravelProvider};
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    #[default]
    None,
    /// Every request gets a 500.
    Fail,
    /// Every other cell is `null`.
    NullCells,
    /// Answer correctly after a pause.
    Delay { millis: u64 },
}

struct StubState {
    speed: HaversineProvider,
    token: Option<String>,
    fault: Mutex<Fault>,
    requests: AtomicU64,
}

#[derive(Clone)]
pub struct StubRouter {
    state: Arc<StubState>,
}

impl StubRouter {
    pub fn new(speed_mph: f64, token: Option<String>) -> Self {
        StubRouter {
            state: Arc::new(StubState {
                speed: HaversineProvider::new(speed_mph),
                token,
                fault: Mutex::new(Fault::None),
                requests: AtomicU64::new(0),
            }),
        }
    }

    pub fn set_fault(&self, fault: Fault) {
        *self.state.fault.lock().unwrap_or_else(|e| e.into_inner()) = fault;
    }

    pub fn requests(&self) -> u64 {
        self.state.requests.load(Ordering::Relaxed)
    }

    pub fn app(&self) -> Router {
        Router::new().route("/matrix", post(matrix)).with_state(Arc::clone(&self.state))
    }

    /// Bind `addr` (port 0 picks one) and serve in the background.
    pub async fn spawn(&self, addr: SocketAddr) -> std::io::Result<(SocketAddr, JoinHandle<()>)> {
        let listener = TcpListener::bind(addr).await?;
        let bound = listener.local_addr()?;
        let app = self.app();
        let handle = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, app).await {
                tracing::error!(error = %e, "stub router stopped");
            }
        });
        Ok((bound, handle))
    }
}

async fn matrix(State(state): State<Arc<StubState>>, headers: HeaderMap, Json(req): Json<MatrixRequest>) -> Response {
    state.requests.fetch_add(1, Ordering::Relaxed);
    if let Some(token) = &state.token {
        let bearer = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
        if bearer != Some(format!("Bearer {token}").as_str()) {
            return StatusCode::UNAUTHORIZED.into_response();
        }
    }
    let fault = *state.fault.lock().unwrap_or_else(|e| e.into_inner());
    match fault {
        Fault::Fail => return (StatusCode::INTERNAL_SERVER_ERROR, "injected failure").into_response(),
        Fault::Delay { millis } => tokio::time::sleep(Duration::from_millis(millis)).await,
        Fault::None | Fault::NullCells => {}
    }
    let mut n = 0usize;
    let seconds = req
        .origins
        .iter()
        .map(|o| {
            req.destinations
                .iter()
                .map(|d| {
                    n += 1;
                    if fault == Fault::NullCells && n % 2 == 0 {
                        None
                    } else {
                        state.speed.seconds(o, d).ok()
                    }
                })
                .collect()
        })
        .collect();
    Json(MatrixResponse { seconds }).into_response()
}
