//! HTTP/JSON surface under `/v1/awcs/{awc}`, plus the SSE stream.

use std::convert::Infallible;

use axum::body::Bytes;
use axum::extract::{Path, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::broadcast::error::RecvError;

use crate::error::ServiceError;
use crate::service::{PublishRequest, Service, TriggerOutcome};
use crate::state::{Control, TriggerSource};

pub fn router(service: Service) -> Router {
    let awc = Router::new()
        .route("/snapshot", get(get_snapshot).post(post_snapshot))
        .route("/trigger", post(trigger))
        .route("/controls", get(get_controls).post(post_control))
        .route("/draft", get(get_draft))
        .route("/publish", post(publish))
        .route("/plan", get(get_plan))
        .route("/staleness", get(staleness))
        .route("/status", get(status))
        .route("/events", get(events));
    Router::new()
        .nest("/v1/awcs/{awc}", awc)
        .route_layer(middleware::from_fn_with_state(service.clone(), require_token))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(service)
}

async fn require_token(State(svc): State<Service>, req: Request, next: Next) -> Response {
    if let Some(token) = &svc.config().auth_token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ServiceError> {
    serde_json::from_slice(body).map_err(|e| ServiceError::BadRequest(e.to_string()))
}

fn raw_json(body: String) -> Response {
    ([(header::CONTENT_TYPE, "application/json")], body).into_response()
}

async fn get_snapshot(State(svc): State<Service>, Path(awc): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.snapshot(&awc)?).into_response())
}

async fn post_snapshot(
    State(svc): State<Service>,
    Path(awc): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let ack = svc.ingest(&awc, &body).await?;
    Ok((StatusCode::CREATED, Json(ack)).into_response())
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TriggerRequest {
    source: TriggerSource,
}

async fn trigger(State(svc): State<Service>, Path(awc): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let req: TriggerRequest = if body.is_empty() { TriggerRequest::default() } else { parse(&body)? };
    let outcome = svc.trigger(&awc, req.source).await?;
    let status = match outcome {
        TriggerOutcome::Drafted { .. } => StatusCode::CREATED,
        _ => StatusCode::ACCEPTED,
    };
    Ok((status, Json(outcome)).into_response())
}

async fn get_controls(State(svc): State<Service>, Path(awc): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.controls(&awc)?).into_response())
}

async fn post_control(
    State(svc): State<Service>,
    Path(awc): Path<String>,
    body: Bytes,
) -> Result<Response, ServiceError> {
    let control: Control = parse(&body)?;
    Ok(Json(svc.apply_control(&awc, control)?).into_response())
}

async fn get_draft(State(svc): State<Service>, Path(awc): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.draft(&awc)?).into_response())
}

async fn publish(State(svc): State<Service>, Path(awc): Path<String>, body: Bytes) -> Result<Response, ServiceError> {
    let req: PublishRequest = parse(&body)?;
    Ok(raw_json(svc.publish(&awc, &req)?))
}

async fn get_plan(State(svc): State<Service>, Path(awc): Path<String>) -> Result<Response, ServiceError> {
    Ok(raw_json(svc.plan_body(&awc)?))
}

async fn staleness(State(svc): State<Service>, Path(awc): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.staleness(&awc)?).into_response())
}

async fn status(State(svc): State<Service>, Path(awc): Path<String>) -> Result<Response, ServiceError> {
    Ok(Json(svc.status(&awc)?).into_response())
}

async fn events(
    State(svc): State<Service>,
    Path(awc): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ServiceError> {
    svc.status(&awc)?;
    let rx = svc.subscribe();
    let stream = stream::unfold((rx, awc), |(mut rx, awc)| async move {
        loop {
            match rx.recv().await {
                Ok(ev) if ev.awc == awc => {
                    let event = Event::default().event(ev.kind).data(ev.data.to_string());
                    return Some((Ok(event), (rx, awc)));
                }
                Ok(_) | Err(RecvError::Lagged(_)) => continue,
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(stream).keep_alive(KeepAlive::default()))
}
