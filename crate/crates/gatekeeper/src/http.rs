//! HTTP/JSON API under `/api/v1`.

use std::collections::BTreeMap;
use std::future::Future;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gatekeeper_core::access::Outcome;
use gatekeeper_core::auditlog::{AuditAction, ProvenanceQuery};
use gatekeeper_core::egress::{EgressOutcome, ReviewStatus};
use gatekeeper_core::governance::ClassificationDecision;
use gatekeeper_core::time::Timestamp;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;

use crate::error::GatewayError;
use crate::service::Gateway;

pub type Shared = Arc<Mutex<Gateway>>;

type Reply = Result<(StatusCode, Value), GatewayError>;

pub const SECOND_FACTOR_HEADER: &str = "x-second-factor";

pub fn router(gateway: Shared) -> Router {
    Router::new()
        .route("/api/v1/healthz", get(healthz))
        .route("/api/v1/datasets", post(register_dataset))
        .route("/api/v1/datasets/{id}", get(get_dataset))
        .route("/api/v1/datasets/{id}/records:request", post(request_records))
        .route("/api/v1/classification-requests", post(submit_classification))
        .route("/api/v1/classification-requests/{target}", post(decide_classification))
        .route("/api/v1/appeals", post(file_appeal))
        .route("/api/v1/appeals/{target}", post(decide_appeal))
        .route("/api/v1/egress-requests", post(egress))
        .route("/api/v1/review-queue", get(review_queue))
        .route("/api/v1/review-queue/{target}", post(decide_review))
        .route("/api/v1/audit", get(audit_query))
        .route("/api/v1/audit:verify", get(audit_verify))
        .with_state(gateway)
}

/// Serves until `shutdown` resolves, then lets in-flight requests finish
/// and writes a final snapshot.
pub async fn serve(gateway: Shared, listener: TcpListener, shutdown: impl Future<Output = ()> + Send + 'static) -> std::io::Result<()> {
    axum::serve(listener, router(gateway.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    let g = gateway.clone();
    let flushed = tokio::task::spawn_blocking(move || lock(&g).flush()).await;
    if let Ok(Err(e)) = flushed {
        tracing::error!("final snapshot failed: {e}");
    }
    Ok(())
}

fn lock(g: &Shared) -> std::sync::MutexGuard<'_, Gateway> {
    g.lock().unwrap_or_else(|p| p.into_inner())
}

fn bearer(headers: &HeaderMap) -> Option<String> {
    let v = headers.get(header::AUTHORIZATION)?.to_str().ok()?;
    v.strip_prefix("Bearer ").map(|t| t.trim().to_owned())
}

fn second_factor(headers: &HeaderMap) -> Option<String> {
    headers.get(SECOND_FACTOR_HEADER)?.to_str().ok().map(String::from)
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, GatewayError> {
    serde_json::from_slice(body).map_err(|e| GatewayError::Invalid(format!("request body: {e}")))
}

/// `{id}:{verb}` path segments.
fn split_target<'a>(target: &'a str, verb: &str) -> Result<&'a str, GatewayError> {
    match target.rsplit_once(':') {
        Some((id, v)) if v == verb && !id.is_empty() => Ok(id),
        _ => Err(GatewayError::Invalid(format!("expected {{id}}:{verb}, got {target:?}"))),
    }
}

fn ok<T: Serialize>(status: StatusCode, v: T) -> Reply {
    Ok((status, serde_json::to_value(v).expect("response serializes")))
}

async fn run(gateway: Shared, f: impl FnOnce(&mut Gateway) -> Reply + Send + 'static) -> Response {
    let res = tokio::task::spawn_blocking(move || f(&mut lock(&gateway))).await;
    match res {
        Ok(Ok((status, body))) => (status, Json(body)).into_response(),
        Ok(Err(e)) => error_response(e),
        Err(e) => error_response(GatewayError::Storage(format!("handler panicked: {e}"))),
    }
}

pub fn error_response(e: GatewayError) -> Response {
    let status = StatusCode::from_u16(e.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut body = json!({"error_code": e.code(), "message": e.to_string()});
    let mut retry = None;
    match &e {
        GatewayError::Denied(d) => {
            body["decision"] = json!(d);
            retry = d.retry_after.map(|m| m.get().div_ceil(1000).max(1));
        }
        GatewayError::EgressBlocked { id, verdict } => {
            body["id"] = json!(id);
            body["verdict"] = json!(verdict);
        }
        _ => {}
    }
    if status.is_server_error() {
        tracing::error!("{e}");
    }
    let mut resp = (status, Json(body)).into_response();
    if let Some(secs) = retry {
        resp.headers_mut().insert(header::RETRY_AFTER, HeaderValue::from(secs));
    }
    resp
}

async fn healthz(State(g): State<Shared>) -> Response {
    run(g, |g| ok(StatusCode::OK, g.health())).await
}

async fn register_dataset(State(g): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let req = parse(&body)?;
        ok(StatusCode::CREATED, g.register_dataset(token.as_deref(), req)?)
    })
    .await
}

async fn get_dataset(State(g): State<Shared>, headers: HeaderMap, Path(id): Path<String>) -> Response {
    let token = bearer(&headers);
    run(g, move |g| ok(StatusCode::OK, g.dataset(token.as_deref(), &id)?)).await
}

async fn request_records(State(g): State<Shared>, headers: HeaderMap, Path(id): Path<String>, body: Bytes) -> Response {
    let token = bearer(&headers);
    let factor = second_factor(&headers);
    run(g, move |g| {
        let req = parse(&body)?;
        let resp = g.request_records(token.as_deref(), factor.as_deref(), &id, req)?;
        let status = match resp.decision.outcome {
            Outcome::Escalate => StatusCode::ACCEPTED,
            _ => StatusCode::OK,
        };
        ok(status, resp)
    })
    .await
}

async fn submit_classification(State(g): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let req = parse(&body)?;
        ok(StatusCode::CREATED, g.submit_classification(token.as_deref(), req)?)
    })
    .await
}

async fn decide_classification(State(g): State<Shared>, headers: HeaderMap, Path(target): Path<String>, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let id = split_target(&target, "decide")?;
        let decision: ClassificationDecision = if body.is_empty() { Default::default() } else { parse(&body)? };
        ok(StatusCode::OK, g.decide_classification(token.as_deref(), id, decision)?)
    })
    .await
}

async fn file_appeal(State(g): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let req = parse(&body)?;
        ok(StatusCode::CREATED, g.file_appeal(token.as_deref(), req)?)
    })
    .await
}

async fn decide_appeal(State(g): State<Shared>, headers: HeaderMap, Path(target): Path<String>, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let id = split_target(&target, "decide")?;
        let req = parse(&body)?;
        ok(StatusCode::OK, g.decide_appeal(token.as_deref(), id, req)?)
    })
    .await
}

async fn egress(State(g): State<Shared>, headers: HeaderMap, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let req = parse(&body)?;
        let resp = g.egress(token.as_deref(), req)?;
        let status = match resp.verdict.outcome {
            EgressOutcome::Queued => StatusCode::ACCEPTED,
            _ => StatusCode::OK,
        };
        ok(status, resp)
    })
    .await
}

fn review_status(s: &str) -> Result<ReviewStatus, GatewayError> {
    match s.to_ascii_lowercase().as_str() {
        "pending" => Ok(ReviewStatus::Pending),
        "approved" => Ok(ReviewStatus::Approved),
        "denied" => Ok(ReviewStatus::Denied),
        _ => Err(GatewayError::Invalid(format!("unknown review status {s:?}"))),
    }
}

async fn review_queue(State(g): State<Shared>, headers: HeaderMap, Query(q): Query<BTreeMap<String, String>>) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let status = q.get("status").map(|s| review_status(s)).transpose()?;
        ok(StatusCode::OK, g.review_queue(token.as_deref(), status)?)
    })
    .await
}

async fn decide_review(State(g): State<Shared>, headers: HeaderMap, Path(target): Path<String>, body: Bytes) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let id = split_target(&target, "decide")?;
        let req = parse(&body)?;
        ok(StatusCode::OK, g.decide_review(token.as_deref(), id, req)?)
    })
    .await
}

fn query_num<T: std::str::FromStr>(q: &BTreeMap<String, String>, key: &str) -> Result<Option<T>, GatewayError> {
    q.get(key)
        .map(|v| v.parse().map_err(|_| GatewayError::Invalid(format!("query parameter {key}: {v:?}"))))
        .transpose()
}

/// Filters: resource, actor, action, from, to (ms, `[from, to)`); paging: offset, limit.
async fn audit_query(State(g): State<Shared>, headers: HeaderMap, Query(q): Query<BTreeMap<String, String>>) -> Response {
    let token = bearer(&headers);
    run(g, move |g| {
        let action = match q.get("action") {
            Some(a) => Some(
                serde_json::from_value::<AuditAction>(json!(a))
                    .map_err(|_| GatewayError::Invalid(format!("unknown audit action {a:?}")))?,
            ),
            None => None,
        };
        let filter = ProvenanceQuery {
            resource: q.get("resource").cloned(),
            actor: q.get("actor").cloned(),
            action,
            from: query_num::<i64>(&q, "from")?.map(Timestamp),
            to: query_num::<i64>(&q, "to")?.map(Timestamp),
        };
        let offset = query_num::<usize>(&q, "offset")?.unwrap_or(0);
        let limit = query_num::<usize>(&q, "limit")?.unwrap_or(100).min(1000);
        let all = g.audit_query(token.as_deref(), &filter)?;
        let page: Vec<_> = all.iter().skip(offset).take(limit).collect();
        ok(StatusCode::OK, json!({"total": all.len(), "offset": offset, "entries": page}))
    })
    .await
}

async fn audit_verify(State(g): State<Shared>, headers: HeaderMap) -> Response {
    let token = bearer(&headers);
    run(g, move |g| ok(StatusCode::OK, g.audit_verify(token.as_deref())?)).await
}
