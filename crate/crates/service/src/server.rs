//! HTTP front end: `GET /ws/{session_id}?role=...` upgrades to a WebSocket
//! carrying protocol envelopes; `GET /health` reports liveness.

use std::future::Future;
use std::net::SocketAddr;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;

use crate::config::ServiceConfig;
use crate::hub::Hub;
use crate::protocol::{Role, PROTOCOL_VERSION};
use crate::ServiceError;

pub struct Server {
    listener: TcpListener,
    hub: Hub,
}

#[derive(Deserialize)]
struct JoinQuery {
    role: String,
}

impl Server {
    /// Binds `config.bind`; port 0 picks a free port.
    pub async fn bind(config: ServiceConfig) -> Result<Self, ServiceError> {
        let listener = TcpListener::bind(config.bind).await?;
        let hub = Hub::new(config)?;
        Ok(Server { listener, hub })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, ServiceError> {
        Ok(self.listener.local_addr()?)
    }

    pub fn hub(&self) -> &Hub {
        &self.hub
    }

    pub fn router(hub: Hub) -> Router {
        Router::new()
            .route("/health", get(health))
            .route("/ws/{session_id}", get(join))
            .with_state(hub)
    }

    /// Serves until `shutdown` resolves, then ends every run and closes the
    /// logs before returning.
    pub async fn run(self, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServiceError> {
        let hub = self.hub.clone();
        let stopping = self.hub.clone();
        tracing::info!(addr = %self.listener.local_addr()?, "listening");
        axum::serve(self.listener, Self::router(hub))
            .with_graceful_shutdown(async move {
                shutdown.await;
                stopping.shutdown().await;
            })
            .await?;
        self.hub.shutdown().await;
        Ok(())
    }
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok", "protocol_version": PROTOCOL_VERSION }))
}

fn valid_session_id(id: &str) -> bool {
    !id.is_empty() && id.len() <= 64 && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

async fn join(
    State(hub): State<Hub>,
    Path(session_id): Path<String>,
    Query(query): Query<JoinQuery>,
    ws: WebSocketUpgrade,
) -> Response {
    if !valid_session_id(&session_id) {
        return (StatusCode::BAD_REQUEST, "session id: 1-64 letters, digits, `-` or `_`").into_response();
    }
    let role: Role = match query.role.parse() {
        Ok(r) => r,
        Err(e) => return (StatusCode::BAD_REQUEST, e.to_string()).into_response(),
    };
    ws.on_upgrade(move |socket| pump(hub, session_id, role, socket))
}

async fn pump(hub: Hub, session_id: String, role: Role, mut socket: WebSocket) {
    let mut conn = match hub.connect(&session_id, role) {
        Ok(c) => c,
        Err(e) => {
            tracing::warn!("rejecting connection: {e}");
            let _ = socket.send(Message::Close(None)).await;
            return;
        }
    };
    loop {
        tokio::select! {
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    conn.send_text(text.as_str());
                }
                Some(Ok(Message::Binary(bytes))) => {
                    conn.send_text(String::from_utf8_lossy(&bytes));
                }
                Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                Some(Ok(Message::Close(_))) | None => break,
                Some(Err(e)) => {
                    tracing::debug!("socket error: {e}");
                    break;
                }
            },
            outgoing = conn.recv_text() => match outgoing {
                Some(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        break;
                    }
                }
                None => {
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
            },
        }
    }
}
