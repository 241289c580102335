//! WebSocket and HTTP front end over a shared [`Hub`].

use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use blocks_core::{Millis, WorldId};
use blocks_protocol::{encode, RejectReason, ServerMsg};
use tokio::net::TcpListener;
use tokio::sync::mpsc;

use crate::hub::{ConnId, Hub, Outgoing};

enum Frame {
    Text(String),
    Close(String),
}

struct Inner {
    hub: Hub,
    senders: HashMap<ConnId, mpsc::UnboundedSender<Frame>>,
}

impl Inner {
    /// Queues outgoing frames while the lock is held, so every client sees
    /// events in sequence order.
    fn dispatch(&mut self, out: Vec<Outgoing>) {
        for o in out {
            let (conn, frame) = match o {
                Outgoing::Send(c, msg) => (c, Frame::Text(encode(&msg))),
                Outgoing::Close(c, why) => (c, Frame::Close(why)),
            };
            if let Some(tx) = self.senders.get(&conn) {
                let _ = tx.send(frame);
            }
        }
    }
}

#[derive(Clone)]
pub struct AppState(Arc<Mutex<Inner>>);

impl AppState {
    pub fn new(hub: Hub) -> Self {
        Self(Arc::new(Mutex::new(Inner { hub, senders: HashMap::new() })))
    }

    pub fn with_hub<R>(&self, f: impl FnOnce(&mut Hub) -> R) -> R {
        f(&mut self.0.lock().unwrap().hub)
    }
}

pub fn now_ms() -> Millis {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as Millis)
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(ws_upgrade))
        .route("/worlds", get(list_worlds))
        .route("/worlds/{id}/snapshot", get(world_snapshot))
        .route("/worlds/{id}/export", get(world_export))
        .route("/healthz", get(|| async { "ok" }))
        .with_state(state)
}

async fn list_worlds(State(state): State<AppState>) -> Response {
    Json(state.with_hub(|h| h.world_infos())).into_response()
}

async fn world_snapshot(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.with_hub(|h| h.snapshot(&WorldId::new(id))) {
        Some(s) => Json(s).into_response(),
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn world_export(State(state): State<AppState>, Path(id): Path<String>) -> Response {
    match state.with_hub(|h| h.export(&WorldId::new(id))) {
        Ok(log) => ([(header::CONTENT_TYPE, "application/x-ndjson")], log).into_response(),
        Err(crate::hub::HubError::UnknownWorld(_)) => StatusCode::NOT_FOUND.into_response(),
        Err(e) => (StatusCode::INTERNAL_SERVER_ERROR, e.to_string()).into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| connection(socket, state))
}

async fn connection(mut socket: WebSocket, state: AppState) {
    let (tx, mut rx) = mpsc::unbounded_channel();
    let conn = {
        let mut inner = state.0.lock().unwrap();
        let conn = inner.hub.connect();
        inner.senders.insert(conn, tx);
        conn
    };
    loop {
        tokio::select! {
            frame = rx.recv() => match frame {
                Some(Frame::Text(text)) => {
                    if socket.send(Message::Text(text.into())).await.is_err() {
                        break;
                    }
                }
                Some(Frame::Close(why)) => {
                    tracing::info!(conn, "closing connection: {why}");
                    let _ = socket.send(Message::Close(None)).await;
                    break;
                }
                None => break,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Text(text))) => {
                    let mut inner = state.0.lock().unwrap();
                    let out = inner.hub.handle_frame(conn, text.as_str(), now_ms());
                    inner.dispatch(out);
                }
                Some(Ok(Message::Binary(_))) => {
                    let reject = ServerMsg::reject(None, RejectReason::Malformed, "frames must be UTF-8 text");
                    state.0.lock().unwrap().dispatch(vec![Outgoing::Send(conn, reject)]);
                }
                Some(Ok(Message::Close(_))) | Some(Err(_)) | None => break,
                Some(Ok(_)) => {}
            },
        }
    }
    let mut inner = state.0.lock().unwrap();
    inner.senders.remove(&conn);
    let out = inner.hub.disconnect(conn, now_ms());
    inner.dispatch(out);
}

/// Broadcasts coalesced presence every `interval` until the process exits.
pub async fn presence_loop(state: AppState, interval: Duration) {
    let mut ticker = tokio::time::interval(interval);
    loop {
        ticker.tick().await;
        let mut inner = state.0.lock().unwrap();
        let out = inner.hub.tick(now_ms());
        inner.dispatch(out);
    }
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    state: AppState,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let ticker = tokio::spawn(presence_loop(state.clone(), Duration::from_millis(100)));
    let result = axum::serve(listener, router(state)).with_graceful_shutdown(shutdown).await;
    ticker.abort();
    result
}
