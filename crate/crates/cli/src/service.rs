//! `POST /classify` and `GET /health` over an immutable loaded model.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use log::{error, info};
use serde_json::json;

use intent_core::{Error, Result};

use crate::model::{ClassifyRequest, LoadedModel};

pub fn router(model: Arc<LoadedModel>) -> Router {
    Router::new()
        .route("/classify", post(classify))
        .route("/health", get(health))
        .with_state(model)
}

fn error_response(status: StatusCode, message: String) -> Response {
    (status, Json(json!({ "error": message }))).into_response()
}

async fn classify(State(model): State<Arc<LoadedModel>>, body: Bytes) -> Response {
    let request: ClassifyRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error_response(StatusCode::BAD_REQUEST, format!("malformed body: {e}")),
    };
    if request.text.trim().is_empty() {
        return error_response(StatusCode::UNPROCESSABLE_ENTITY, "text is empty".into());
    }
    // Remote embedders block, so classification runs off the async workers.
    let result = tokio::task::spawn_blocking(move || model.classify_body(&request.text)).await;
    match result {
        Ok(Ok(body)) => ([(header::CONTENT_TYPE, "application/json")], body).into_response(),
        Ok(Err(e)) => {
            error!("classify failed: {e}");
            error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
        }
        Err(e) => error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()),
    }
}

async fn health(State(model): State<Arc<LoadedModel>>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "model_version": model.version }))
}

/// Binds `addr`, prints the bound address on stdout, and serves until Ctrl-C.
pub fn serve(model: LoadedModel, addr: SocketAddr) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new().map_err(|e| Error::io("<runtime>", e))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Error::io(addr.to_string(), e))?;
        let bound = listener.local_addr().map_err(|e| Error::io(addr.to_string(), e))?;
        println!("listening on http://{bound}");
        info!("serving model {} on {bound}", model.version);
        axum::serve(listener, router(Arc::new(model)))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| Error::io(bound.to_string(), e))
    })
}
