use std::collections::HashMap;
use std::sync::Arc;

use apub_core::engine::{new_query_id, EngineError};
use apub_core::graph::FactPattern;
use apub_core::ingest::{parse_failure_report, parse_submission, Format, Verdict};
use apub_core::query::{QueryError, Zoom};
use apub_core::store::{Rating, VersionRef};
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::auth::Access;
use crate::cache::{CacheKey, Cached};
use crate::error::ApiError;
use crate::wire::{
    dataset_csv, DatasetResponse, FactsResponse, PublicationResponse, QueryResponse, SubmitResponse,
};
use crate::{AppState, API_KEY_HEADER, CACHE_HEADER};

type Shared = State<Arc<AppState>>;

fn header_key(headers: &HeaderMap) -> Option<String> {
    headers
        .get(API_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string)
}

fn parse_body<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body)
        .map_err(|e| ApiError::bad_request("malformed_body", format!("invalid JSON body: {e}")))
}

fn engine_error(e: EngineError) -> ApiError {
    match e {
        EngineError::Query(QueryError::EmptyQuestion) => {
            ApiError::bad_request("empty_question", "question is empty")
        }
        EngineError::Query(QueryError::Provider(p)) | EngineError::Provider(p) => ApiError::new(
            StatusCode::SERVICE_UNAVAILABLE,
            "provider_unavailable",
            p.to_string(),
        ),
        EngineError::UnknownQuery(id) => ApiError::not_found(format!("unknown query_id {id:?}")),
        other => {
            tracing::error!(error = %other, "engine failure");
            ApiError::internal(other.to_string())
        }
    }
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

#[derive(Debug, Deserialize)]
struct QueryRequest {
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    zoom: Option<String>,
    #[serde(default)]
    api_key: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub response: QueryResponse,
    pub cache_hit: bool,
}

/// Serves from the cache when fresh, otherwise answers at the requested zoom and at
/// headline zoom for the summary. Logs exactly one query event either way.
pub fn run_query(
    state: &AppState,
    question: &str,
    zoom: Zoom,
    actor: &str,
) -> Result<QueryOutcome, EngineError> {
    let engine = &state.engine;
    let generation = engine.generation();
    let key = CacheKey::new(question, zoom);
    if let Some(mut hit) = state.cache.get(&key, generation, engine.now()) {
        hit.answer.query_id = new_query_id();
        engine.log_query(&hit.answer, actor, true)?;
        return Ok(QueryOutcome {
            response: QueryResponse::new(&hit.answer, &hit.summary),
            cache_hit: true,
        });
    }
    let answer = engine.answer(question, zoom, &new_query_id())?;
    let summary = if zoom == Zoom::Headline || answer.refused {
        answer.text.clone()
    } else {
        engine.answer(question, Zoom::Headline, "")?.text
    };
    engine.log_query(&answer, actor, false)?;
    let response = QueryResponse::new(&answer, &summary);
    state
        .cache
        .put(key, Cached { answer, summary }, generation, engine.now());
    Ok(QueryOutcome {
        response,
        cache_hit: false,
    })
}

pub async fn query(
    State(state): Shared,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let req: QueryRequest = parse_body(&body)?;
    let key = header_key(&headers).or(req.api_key);
    let caller = state.auth.authorize(key.as_deref(), Access::Read)?;
    let question = req.question.unwrap_or_default();
    if question.trim().is_empty() {
        return Err(ApiError::bad_request("empty_question", "question is empty"));
    }
    let zoom = match req.zoom.as_deref() {
        None => Zoom::default(),
        Some(z) => z
            .parse::<Zoom>()
            .map_err(|m| ApiError::bad_request("unknown_zoom", m))?,
    };
    let outcome = blocking(move || {
        run_query(&state, question.trim(), zoom, &caller.actor).map_err(engine_error)
    })
    .await?;
    let mut resp = Json(outcome.response).into_response();
    resp.headers_mut().insert(
        CACHE_HEADER,
        HeaderValue::from_static(if outcome.cache_hit { "hit" } else { "miss" }),
    );
    Ok(resp)
}

fn flag(params: &HashMap<String, String>, name: &str) -> Result<bool, ApiError> {
    match params.get(name).map(|v| v.trim().to_lowercase()).as_deref() {
        None | Some("") | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") => Ok(true),
        Some(other) => Err(ApiError::bad_request(
            "bad_parameter",
            format!("{name} must be true or false, got {other:?}"),
        )),
    }
}

pub async fn facts(
    State(state): Shared,
    headers: HeaderMap,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    state
        .auth
        .authorize(header_key(&headers).as_deref(), Access::Read)?;
    let field = |k: &str| params.get(k).filter(|v| !v.trim().is_empty()).cloned();
    let pattern = FactPattern {
        subject: field("subject"),
        relation: field("relation"),
        object: field("object"),
    };
    if pattern.is_empty() {
        return Err(ApiError::bad_request(
            "empty_pattern",
            "at least one of subject, relation or object is required",
        ));
    }
    let include_superseded = flag(&params, "include_superseded")?;
    let snap = state.engine.snapshot();
    let result = snap
        .graph()
        .query_facts(&pattern, include_superseded, snap.synthesis());
    Ok(Json(FactsResponse::new(&result, snap.graph())).into_response())
}

pub async fn data(
    State(state): Shared,
    headers: HeaderMap,
    Path(dataset_id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    state
        .auth
        .authorize(header_key(&headers).as_deref(), Access::Read)?;
    let format = params
        .get("format")
        .map_or("json".to_string(), |f| f.trim().to_lowercase());
    if format != "json" && format != "csv" {
        return Err(ApiError::bad_request(
            "unknown_format",
            format!("unknown format {format:?} (expected json or csv)"),
        ));
    }
    let snap = state.engine.snapshot();
    let d = snap
        .dataset(&dataset_id)
        .ok_or_else(|| ApiError::not_found(format!("unknown dataset {dataset_id:?}")))?;
    let superseded = snap.is_superseded(&d.version_ref());
    if format == "json" {
        return Ok(Json(DatasetResponse::new(d, superseded)).into_response());
    }
    let body = dataset_csv(d, superseded).map_err(|e| ApiError::internal(e.to_string()))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], body).into_response())
}

pub async fn submit(
    State(state): Shared,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    let caller = state
        .auth
        .authorize(header_key(&headers).as_deref(), Access::Contribute)?;
    let markdown = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/markdown"));
    let format = if markdown {
        Format::Markdown
    } else {
        Format::ApJson
    };
    let doc = match parse_submission(&body, format) {
        Ok(doc) => doc,
        Err(e) => {
            return match parse_failure_report(&e) {
                Some(report) => Ok(submit_response(None, report)),
                None => Err(ApiError::bad_request("malformed_body", e.to_string())),
            }
        }
    };
    let outcome = blocking(move || {
        state
            .engine
            .ingest(&doc, &caller.actor)
            .map_err(engine_error)
    })
    .await?;
    Ok(submit_response(outcome.committed, outcome.report))
}

fn submit_response(
    committed: Option<VersionRef>,
    report: apub_core::ingest::ValidationReport,
) -> Response {
    let status = if committed.is_some() && report.verdict != Verdict::Rejected {
        StatusCode::CREATED
    } else {
        StatusCode::UNPROCESSABLE_ENTITY
    };
    let body = SubmitResponse {
        pub_id: committed.as_ref().map(|r| r.pub_id.clone()),
        version: committed.as_ref().map(|r| r.version),
        report,
    };
    (status, Json(body)).into_response()
}

#[derive(Debug, Deserialize)]
struct FeedbackRequest {
    #[serde(default)]
    query_id: Option<String>,
    #[serde(default)]
    rating: Option<String>,
    #[serde(default)]
    flag_reason: Option<String>,
}

pub async fn feedback(
    State(state): Shared,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, ApiError> {
    state
        .auth
        .authorize(header_key(&headers).as_deref(), Access::Read)?;
    let req: FeedbackRequest = parse_body(&body)?;
    let query_id = req
        .query_id
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| ApiError::bad_request("missing_query_id", "query_id is required"))?;
    let rating = match req.rating.as_deref() {
        Some("up") => Rating::Up,
        Some("down") => Rating::Down,
        other => {
            return Err(ApiError::bad_request(
                "bad_rating",
                format!("rating must be \"up\" or \"down\", got {other:?}"),
            ))
        }
    };
    let flag_reason = req.flag_reason;
    blocking(move || {
        state
            .engine
            .feedback(query_id.trim(), rating, flag_reason)
            .map_err(engine_error)
    })
    .await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

pub async fn publication(
    State(state): Shared,
    headers: HeaderMap,
    Path(pub_id): Path<String>,
    Query(params): Query<HashMap<String, String>>,
) -> Result<Response, ApiError> {
    state
        .auth
        .authorize(header_key(&headers).as_deref(), Access::Read)?;
    let snap = state.engine.snapshot();
    let version = match params.get("version") {
        Some(v) => Some(v.trim().parse::<u32>().map_err(|_| {
            ApiError::bad_request(
                "bad_parameter",
                format!("version must be a positive integer, got {v:?}"),
            )
        })?),
        None => snap
            .latest_active(&pub_id)
            .or_else(|| snap.latest_version(&pub_id)),
    };
    let missing = || ApiError::not_found(format!("unknown publication {pub_id:?}"));
    let r = VersionRef::new(pub_id.clone(), version.ok_or_else(missing)?);
    let events = state.engine.store().events();
    let body = PublicationResponse::new(&snap, &r, &events).ok_or_else(missing)?;
    Ok(Json(body).into_response())
}
