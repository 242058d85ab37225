//! JSON-over-HTTP model protocol.
//!
//! ```text
//! POST /v1/next   {"tokens": [..]}                              -> {"probs": [..]}
//! POST /v1/masked {"tokens": [..], "retain": [..], "seed": n}   -> {"probs": [..]}
//! POST /v1/fill   {"tokens": [..], "mask_positions": [..]}      -> {"fills": {"<pos>": id}}
//! GET  /v1/info                                                 -> {"vocab_size", "model_name", "pos_tags"}
//! ```
//!
//! Non-2xx responses carry `{"error": str, "retryable": bool}`. The server
//! half lets any [`ModelBackend`] be served, which is how the toy model is
//! exposed for offline end-to-end runs.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::compression::CompressionLayer;

use crate::backend::ModelBackend;
use crate::error::{Error, Result};
use crate::proposer::{FillModel, PosTagTable};
use crate::sequence::TokenId;

pub const NEXT_PATH: &str = "/v1/next";
pub const MASKED_PATH: &str = "/v1/masked";
pub const FILL_PATH: &str = "/v1/fill";
pub const INFO_PATH: &str = "/v1/info";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextRequest {
    pub tokens: Vec<TokenId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskedRequest {
    pub tokens: Vec<TokenId>,
    pub retain: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillRequest {
    pub tokens: Vec<TokenId>,
    pub mask_positions: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbsResponse {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FillResponse {
    pub fills: BTreeMap<String, TokenId>,
}

/// `pos_tag_table`, when present, lists one part-of-speech tag per
/// vocabulary id. It is an optional extension used by the POS-matched
/// replacement strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfoResponse {
    pub vocab_size: usize,
    pub model_name: String,
    pub pos_tags: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pos_tag_table: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub error: String,
    pub retryable: bool,
}

/// What a protocol server exposes.
#[derive(Clone)]
pub struct ServedModel {
    pub backend: Arc<dyn ModelBackend>,
    pub fill: Option<Arc<dyn FillModel>>,
    pub tags: Option<Arc<PosTagTable>>,
}

struct ApiError(StatusCode, ErrorResponse);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(self.1)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(err: Error) -> Self {
        let status = match err {
            Error::InvalidToken { .. }
            | Error::EmptyContext
            | Error::Validation(_)
            | Error::LengthMismatch { .. }
            | Error::MalformedProposal { .. } => StatusCode::BAD_REQUEST,
            Error::StrategyUnavailable(_) => StatusCode::NOT_IMPLEMENTED,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let retryable = status.is_server_error() && status != StatusCode::NOT_IMPLEMENTED;
        ApiError(
            status,
            ErrorResponse {
                error: err.to_string(),
                retryable,
            },
        )
    }
}

async fn next(
    State(model): State<ServedModel>,
    Json(req): Json<NextRequest>,
) -> std::result::Result<Json<ProbsResponse>, ApiError> {
    let dist = model.backend.next_token_distribution(&req.tokens)?;
    Ok(Json(ProbsResponse {
        probs: dist.into_inner(),
    }))
}

async fn masked(
    State(model): State<ServedModel>,
    Json(req): Json<MaskedRequest>,
) -> std::result::Result<Json<ProbsResponse>, ApiError> {
    let dist = model
        .backend
        .masked_distribution(&req.tokens, &req.retain, req.seed)?;
    Ok(Json(ProbsResponse {
        probs: dist.into_inner(),
    }))
}

async fn fill(
    State(model): State<ServedModel>,
    Json(req): Json<FillRequest>,
) -> std::result::Result<Json<FillResponse>, ApiError> {
    let source = model
        .fill
        .as_ref()
        .ok_or_else(|| Error::StrategyUnavailable("this server has no fill model".into()))?;
    let fills = source.fill(&req.tokens, &req.mask_positions)?;
    Ok(Json(FillResponse {
        fills: fills.into_iter().map(|(p, t)| (p.to_string(), t)).collect(),
    }))
}

async fn info(State(model): State<ServedModel>) -> Json<InfoResponse> {
    Json(InfoResponse {
        vocab_size: model.backend.vocab_size(),
        model_name: model.backend.name().to_string(),
        pos_tags: model.tags.is_some(),
        pos_tag_table: model.tags.as_ref().map(|t| t.tag_names()),
    })
}

pub fn router(model: ServedModel) -> Router {
    Router::new()
        .route(NEXT_PATH, post(next))
        .route(MASKED_PATH, post(masked))
        .route(FILL_PATH, post(fill))
        .route(INFO_PATH, get(info))
        .layer(CompressionLayer::new())
        .with_state(model)
}

/// Serves `model` on `addr` until the process exits.
pub fn serve_blocking(model: ServedModel, addr: SocketAddr) -> Result<()> {
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        log::info!("serving model protocol on {}", listener.local_addr()?);
        axum::serve(listener, router(model)).await?;
        Ok(())
    })
}

/// A protocol server running on a background thread.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<()>>,
}

impl ServerHandle {
    /// Binds to `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn spawn(model: ServedModel, addr: SocketAddr) -> Result<Self> {
        let std_listener = std::net::TcpListener::bind(addr)?;
        std_listener.set_nonblocking(true)?;
        let addr = std_listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let thread = std::thread::spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener)
                    .expect("listener registers with the runtime");
                let _ = axum::serve(listener, router(model))
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await;
            });
        });
        Ok(Self {
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_response_uses_string_keys() {
        let resp = FillResponse {
            fills: [("3".to_string(), 17)].into_iter().collect(),
        };
        assert_eq!(
            serde_json::to_string(&resp).unwrap(),
            r#"{"fills":{"3":17}}"#
        );
    }

    #[test]
    fn info_extension_is_optional() {
        let info: InfoResponse =
            serde_json::from_str(r#"{"vocab_size":5,"model_name":"m","pos_tags":false}"#).unwrap();
        assert_eq!(info.pos_tag_table, None);
        let text = serde_json::to_string(&info).unwrap();
        assert!(!text.contains("pos_tag_table"));
    }
}
