//! HTTP service over the publication engine: query, facts, data, submission, feedback
//! and publication endpoints, with a query cache, API-key auth and rate limiting.

pub mod auth;
pub mod cache;
pub mod error;
mod handlers;
pub mod wire;

use std::net::SocketAddr;
use std::sync::Arc;

use apub_core::config::Settings;
use apub_core::engine::{open_from_settings, Engine, EngineError};
use axum::extract::{ConnectInfo, Request, State};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use thiserror::Error;

pub use auth::{Access, AuthPolicy, Caller, RateLimiter, Role};
pub use cache::QueryCache;
pub use error::ApiError;
pub use handlers::{run_query, QueryOutcome};

pub const API_KEY_HEADER: &str = "x-api-key";
pub const CACHE_HEADER: &str = "x-cache";

pub struct AppState {
    pub engine: Arc<Engine>,
    pub cache: QueryCache,
    pub auth: AuthPolicy,
    pub limiter: RateLimiter,
}

#[derive(Debug, Error)]
pub enum ServerError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Auth(#[from] auth::AuthError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AppState {
    pub fn new(engine: Arc<Engine>, settings: &Settings) -> Result<AppState, ServerError> {
        Ok(AppState {
            engine,
            cache: QueryCache::new(settings.cache.ttl_s, settings.cache.max_entries),
            auth: AuthPolicy::load(
                settings.auth.enabled,
                settings.auth.require_key_for_reads,
                settings.auth.keys_file.as_deref(),
            )?,
            limiter: RateLimiter::new(settings.auth.rate_per_s, settings.auth.burst),
        })
    }

    pub fn from_settings(settings: &Settings) -> Result<AppState, ServerError> {
        let engine = Arc::new(open_from_settings(settings, None)?);
        AppState::new(engine, settings)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/query", post(handlers::query))
        .route("/v1/facts", get(handlers::facts))
        .route("/v1/data/{dataset_id}", get(handlers::data))
        .route("/v1/submit", post(handlers::submit))
        .route("/v1/feedback", post(handlers::feedback))
        .route("/v1/publications/{*pub_id}", get(handlers::publication))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            ApiError::new(
                axum::http::StatusCode::METHOD_NOT_ALLOWED,
                "method_not_allowed",
                "method not allowed on this endpoint",
            )
        })
        .layer(middleware::from_fn_with_state(state.clone(), rate_limit))
        .with_state(state)
}

/// Buckets by API key when one is presented, else by client address.
async fn rate_limit(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let who = match req
        .headers()
        .get(API_KEY_HEADER)
        .and_then(|v| v.to_str().ok())
    {
        Some(key) => format!("key:{key}"),
        None => req
            .extensions()
            .get::<ConnectInfo<SocketAddr>>()
            .map_or_else(
                || "addr:unknown".to_string(),
                |c| format!("addr:{}", c.0.ip()),
            ),
    };
    if !state.limiter.allow(&who) {
        return ApiError::new(
            axum::http::StatusCode::TOO_MANY_REQUESTS,
            "rate_limited",
            "too many requests; slow down",
        )
        .into_response();
    }
    next.run(req).await
}

/// Binds `addr` and serves until ctrl-c.
pub async fn serve(state: Arc<AppState>, addr: &str) -> Result<(), ServerError> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(
        listener,
        router(state).into_make_service_with_connect_info::<SocketAddr>(),
    )
    .with_graceful_shutdown(async {
        let _ = tokio::signal::ctrl_c().await;
    })
    .await?;
    Ok(())
}
