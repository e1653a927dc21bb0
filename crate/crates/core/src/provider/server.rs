//! Exposes a provider over the logits wire protocol.

use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use thiserror::Error;
use tokio::sync::oneshot;

use super::wire::{ErrorBody, LogitsResponse, TextBody, TokensBody, VocabResponse, WireLogProb};
use super::{ProviderError, ProviderHandle, PROTOCOL_VERSION};
use crate::types::TokenId;

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("could not bind {addr}: {reason}")]
    BindFailed { addr: String, reason: String },
    #[error("server runtime failed: {0}")]
    Runtime(String),
}

struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn bad_request(code: &str, message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            body: ErrorBody::new(code, message),
        }
    }
}

impl From<ProviderError> for ApiError {
    fn from(e: ProviderError) -> Self {
        match e {
            ProviderError::TokenOutOfRange { .. } => {
                Self::bad_request("token_out_of_range", e.to_string())
            }
            other => Self {
                status: StatusCode::BAD_GATEWAY,
                body: ErrorBody::new("upstream_error", other.to_string()),
            },
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

fn parse<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request("malformed_body", e.to_string()))
}

/// Runs a provider call off the async executor; providers may block.
async fn blocking<T, F>(f: F) -> Result<T, ApiError>
where
    T: Send + 'static,
    F: FnOnce() -> Result<T, ProviderError> + Send + 'static,
{
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            body: ErrorBody::new("internal", e.to_string()),
        })?
        .map_err(ApiError::from)
}

async fn vocab(State(p): State<ProviderHandle>) -> Json<VocabResponse> {
    let info = p.vocab_info();
    Json(VocabResponse {
        vocab_size: info.vocab_size,
        vocab_hash: info.vocab_hash.to_string(),
        normalized: info.normalized,
        protocol_version: PROTOCOL_VERSION,
        eos_id: info.eos.map(|t| t.0),
    })
}

async fn logits(
    State(p): State<ProviderHandle>,
    body: Bytes,
) -> Result<Json<LogitsResponse>, ApiError> {
    let req: TokensBody = parse(&body)?;
    let ctx: Vec<TokenId> = req.tokens.into_iter().map(TokenId).collect();
    let lp = blocking(move || p.next_logprobs(&ctx)).await?;
    Ok(Json(LogitsResponse {
        logprobs: lp.into_values().into_iter().map(WireLogProb).collect(),
    }))
}

async fn tokenize(
    State(p): State<ProviderHandle>,
    body: Bytes,
) -> Result<Json<TokensBody>, ApiError> {
    let req: TextBody = parse(&body)?;
    let ids = blocking(move || p.tokenize(&req.text)).await?;
    Ok(Json(TokensBody {
        tokens: ids.into_iter().map(|t| t.0).collect(),
    }))
}

async fn detokenize(
    State(p): State<ProviderHandle>,
    body: Bytes,
) -> Result<Json<TextBody>, ApiError> {
    let req: TokensBody = parse(&body)?;
    let ids: Vec<TokenId> = req.tokens.into_iter().map(TokenId).collect();
    let text = blocking(move || p.detokenize(&ids)).await?;
    Ok(Json(TextBody { text }))
}

/// Router serving the four wire-protocol endpoints for `provider`.
pub fn router(provider: ProviderHandle) -> Router {
    Router::new()
        .route("/v1/vocab", get(vocab))
        .route("/v1/logits", post(logits))
        .route("/v1/tokenize", post(tokenize))
        .route("/v1/detokenize", post(detokenize))
        .with_state(provider)
}

/// A server running on its own thread. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<(), ServerError>>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server exits.
    pub fn wait(mut self) -> Result<(), ServerError> {
        self.join()
    }

    pub fn shutdown(mut self) -> Result<(), ServerError> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.join()
    }

    fn join(&mut self) -> Result<(), ServerError> {
        match self.thread.take() {
            Some(t) => t
                .join()
                .map_err(|_| ServerError::Runtime("server thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        let _ = self.join();
    }
}

/// Binds `addr` and serves `provider` on a background thread.
///
/// Binding happens before this returns, so `BindFailed` is reported
/// synchronously and port 0 resolves to the actual port in
/// [`ServerHandle::local_addr`].
pub fn serve_provider(
    provider: ProviderHandle,
    addr: impl ToSocketAddrs + std::fmt::Debug,
) -> Result<ServerHandle, ServerError> {
    let bind_failed = |reason: String| ServerError::BindFailed {
        addr: format!("{addr:?}"),
        reason,
    };
    let listener = TcpListener::bind(&addr).map_err(|e| bind_failed(e.to_string()))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| bind_failed(e.to_string()))?;
    let local = listener
        .local_addr()
        .map_err(|e| bind_failed(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = router(provider);

    let thread = std::thread::Builder::new()
        .name(format!("serve-{local}"))
        .spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .enable_all()
                .build()
                .map_err(|e| ServerError::Runtime(e.to_string()))?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(listener)
                    .map_err(|e| ServerError::Runtime(e.to_string()))?;
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = rx.await;
                    })
                    .await
                    .map_err(|e| ServerError::Runtime(e.to_string()))
            })
        })
        .map_err(|e| ServerError::Runtime(e.to_string()))?;
    log::info!("serving provider on http://{local}");
    Ok(ServerHandle {
        addr: local,
        shutdown: Some(tx),
        thread: Some(thread),
    })
}
