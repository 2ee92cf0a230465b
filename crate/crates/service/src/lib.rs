//! HTTP+JSON API over a factorlens store: model inspection, what-if
//! prediction, and previewed, optimistic-concurrency edits.
//!
//! Every route lives under `/api/v1/`. Responses computed from parameters
//! carry the `version` (short content hash) of those parameters; edit
//! requests must echo the version they were composed against and are
//! rejected with 409 when it is stale.

mod dto;
mod error;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use tower_http::cors::{Any, CorsLayer};

pub use dto::*;
pub use error::{ApiError, ErrorBody};
pub use state::{params_version, AppState, ServiceConfig};

type Shared = Arc<AppState>;

/// Runs blocking store and solver work off the async executor.
async fn blocking<T, F>(state: Shared, f: F) -> Result<Json<T>, ApiError>
where
    T: Send + 'static,
    F: FnOnce(&AppState) -> Result<T, ApiError> + Send + 'static,
{
    tokio::task::spawn_blocking(move || f(&state))
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
        .map(Json)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

async fn list_models(State(s): State<Shared>) -> Result<Json<Vec<ModelSummary>>, ApiError> {
    blocking(s, |s| s.list_models()).await
}

async fn model_card(State(s): State<Shared>, Path(model): Path<String>) -> Result<Json<ModelCard>, ApiError> {
    blocking(s, move |s| s.model_card(&model)).await
}

async fn ames(
    State(s): State<Shared>,
    Path(model): Path<String>,
    Query(q): Query<AmeQuery>,
) -> Result<Json<AmeResponse>, ApiError> {
    blocking(s, move |s| s.ames(&model, q.params)).await
}

async fn what_if(
    State(s): State<Shared>,
    Path(model): Path<String>,
    body: Result<Json<WhatIfRequest>, JsonRejection>,
) -> Result<Json<WhatIfResponse>, ApiError> {
    let Json(req) = body?;
    blocking(s, move |s| s.what_if(&model, req)).await
}

async fn preview(
    State(s): State<Shared>,
    Path(model): Path<String>,
    body: Result<Json<PreviewRequest>, JsonRejection>,
) -> Result<Json<PreviewResponse>, ApiError> {
    let Json(req) = body?;
    blocking(s, move |s| s.preview(&model, req)).await
}

async fn discard_preview(State(s): State<Shared>, Path(model): Path<String>) -> Result<StatusCode, ApiError> {
    let Json(found) = blocking(s, move |s| s.discard_preview(&model)).await?;
    Ok(if found { StatusCode::NO_CONTENT } else { StatusCode::NOT_FOUND })
}

async fn commit(
    State(s): State<Shared>,
    Path(model): Path<String>,
    body: Result<Json<CommitRequest>, JsonRejection>,
) -> Result<Json<CommitResponse>, ApiError> {
    let Json(req) = body?;
    blocking(s, move |s| s.commit(&model, req)).await
}

async fn revert(
    State(s): State<Shared>,
    Path((model, edit)): Path<(String, String)>,
    body: Result<Json<CommitRequest>, JsonRejection>,
) -> Result<Json<CommitResponse>, ApiError> {
    let Json(req) = body?;
    blocking(s, move |s| s.revert(&model, &edit, req)).await
}

async fn edit_log(State(s): State<Shared>, Path(model): Path<String>) -> Result<Json<EditLogResponse>, ApiError> {
    blocking(s, move |s| s.edit_log(&model)).await
}

async fn require_token(State(s): State<Shared>, req: Request, next: Next) -> Response {
    if let Some(token) = &s.config.token {
        let expected = format!("Bearer {token}");
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v == expected);
        if !ok {
            return ApiError::unauthorized().into_response();
        }
    }
    next.run(req).await
}

pub fn router(state: AppState) -> Router {
    let cors = match &state.config.allowed_origin {
        Some(origin) => CorsLayer::new().allow_origin(
            origin
                .parse::<HeaderValue>()
                .unwrap_or_else(|_| HeaderValue::from_static("null")),
        ),
        None => CorsLayer::new().allow_origin(Any),
    }
    .allow_methods(Any)
    .allow_headers(Any);
    let shared = Arc::new(state);
    let api = Router::new()
        .route("/health", get(health))
        .route("/models", get(list_models))
        .route("/models/{model}", get(model_card))
        .route("/models/{model}/ames", get(ames))
        .route("/models/{model}/what-if", post(what_if))
        .route("/models/{model}/edits", get(edit_log))
        .route("/models/{model}/edits/preview", post(preview).delete(discard_preview))
        .route("/models/{model}/edits/commit", post(commit))
        .route("/models/{model}/edits/{edit}/revert", post(revert))
        .route_layer(middleware::from_fn_with_state(shared.clone(), require_token))
        .with_state(shared);
    Router::new().nest("/api/v1", api).layer(cors)
}

/// Serves until interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
