//! JSON-over-HTTP session service.
//!
//! `POST /sessions`, `POST /sessions/{id}/mvr`, `GET /sessions/{id}`. Errors
//! come back as `{"error": <code>, "message": <text>}`.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::session::{EntryRequest, SessionError, SessionStore, SessionView, StartRequest};

pub const DEFAULT_ADDR: &str = "127.0.0.1:8787";

impl IntoResponse for SessionError {
    fn into_response(self) -> Response {
        let status = match self {
            SessionError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            SessionError::OutOfOrderEntry { .. } | SessionError::SessionClosed(_) => {
                StatusCode::CONFLICT
            }
            SessionError::InvalidVote(_) => StatusCode::UNPROCESSABLE_ENTITY,
            SessionError::InvalidRequest(_) => StatusCode::BAD_REQUEST,
            SessionError::Log(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = json!({ "error": self.code(), "message": self.to_string() });
        (status, Json(body)).into_response()
    }
}

type Store = Arc<SessionStore>;

async fn start(
    State(store): State<Store>,
    Json(request): Json<StartRequest>,
) -> Result<(StatusCode, Json<SessionView>), SessionError> {
    Ok((StatusCode::CREATED, Json(store.session_start(request)?)))
}

async fn enter(
    State(store): State<Store>,
    Path(id): Path<String>,
    Json(entry): Json<EntryRequest>,
) -> Result<Json<SessionView>, SessionError> {
    store.session_enter_mvr(&id, entry).map(Json)
}

async fn status(
    State(store): State<Store>,
    Path(id): Path<String>,
) -> Result<Json<SessionView>, SessionError> {
    store.session_status(&id).map(Json)
}

pub fn router(store: Store) -> Router {
    Router::new()
        .route("/sessions", post(start))
        .route("/sessions/{id}", get(status))
        .route("/sessions/{id}/mvr", post(enter))
        .with_state(store)
}

pub async fn serve(addr: SocketAddr, store: Store) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(store)).await
}
