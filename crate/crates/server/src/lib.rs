//! Live websocket front end for a running session.
//!
//! `GET /stream` upgrades to a websocket carrying JSON [`StreamMessage`]s;
//! clients send `{"kind":"control","cmd":...}` objects back. `GET /healthz`
//! answers `ok`. Everything else is served from the static asset directory,
//! or a built-in placeholder page when none is configured.
//!
//! There is no authentication. Bind to loopback unless the network is trusted.

mod hub;

use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Component, Path, PathBuf};

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{State, Request};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use crossbeam_channel::Sender;
use futures::{SinkExt, StreamExt};
use tokio::net::TcpListener;
use tokio::sync::watch;

use pieeg_core::actuation::PinSink;
use pieeg_core::protocol::{Ack, ClientMessage, Payload, StreamMessage};
use pieeg_core::session::{spawn_live, ControlRequest, LiveHandle, SessionError, SessionSummary};
use pieeg_core::SessionConfig;

pub use hub::{Batch, Hub, LOSSLESS_LIMIT, LOSSY_CAPACITY};

pub const DEFAULT_PORT: u16 = 8089;

const PLACEHOLDER_INDEX: &str = "<!doctype html>\n<title>pieeg</title>\n<p>pieeg stream server. \
Connect a websocket client to <code>/stream</code>.</p>\n";

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub addr: SocketAddr,
    pub static_dir: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            addr: SocketAddr::from((Ipv4Addr::LOCALHOST, DEFAULT_PORT)),
            static_dir: None,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    pub hub: Hub,
    pub control: Sender<ControlRequest>,
    /// Flips to true when the server shuts down; open sockets then close.
    pub closing: watch::Receiver<bool>,
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/stream", get(stream))
        .route("/healthz", get(|| async { "ok" }));
    let app = match static_dir {
        Some(dir) => app.fallback(move |req: Request| static_file(dir.clone(), req)),
        None => app.route("/", get(|| async { Html(PLACEHOLDER_INDEX) })),
    };
    app.with_state(state)
}

/// A live session plus the hub that broadcasts it.
pub struct LiveServer {
    pub hub: Hub,
    pub live: LiveHandle,
    closing: watch::Sender<bool>,
}

impl LiveServer {
    pub fn start(config: SessionConfig, hardware_sink: Option<Box<dyn PinSink + Send>>) -> Result<Self, SessionError> {
        let hub = Hub::new();
        let live = spawn_live(config, Box::new(hub.clone()), hardware_sink)?;
        Ok(Self { hub, live, closing: watch::Sender::new(false) })
    }

    pub fn state(&self) -> AppState {
        AppState {
            hub: self.hub.clone(),
            control: self.live.control(),
            closing: self.closing.subscribe(),
        }
    }

    /// Serves until `shutdown` resolves, then stops the session.
    pub async fn serve(
        self,
        listener: TcpListener,
        static_dir: Option<PathBuf>,
        shutdown: impl std::future::Future<Output = ()> + Send + 'static,
    ) -> Result<Option<SessionSummary>, SessionError> {
        let app = router(self.state(), static_dir);
        let closing = self.closing.clone();
        axum::serve(listener, app)
            .with_graceful_shutdown(async move {
                shutdown.await;
                closing.send_replace(true);
            })
            .await
            .map_err(SessionError::Io)?;
        tokio::task::spawn_blocking(move || self.live.shutdown())
            .await
            .map_err(|e| SessionError::Source(e.to_string()))?
    }
}

/// Serves `dir/<path>`, with `index.html` for directories. Paths that try
/// to leave `dir` are not found.
async fn static_file(dir: PathBuf, req: Request) -> Response {
    let rel = Path::new(req.uri().path().trim_start_matches('/'));
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let mut path = dir.join(rel);
    if tokio::fs::metadata(&path).await.is_ok_and(|m| m.is_dir()) {
        path.push("index.html");
    }
    match tokio::fs::read(&path).await {
        Ok(body) => {
            let mime = mime_guess::from_path(&path).first_or_octet_stream();
            ([(header::CONTENT_TYPE, mime.essence_str().to_string())], body).into_response()
        }
        Err(_) => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn stream(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| client(socket, state))
}

async fn client(socket: WebSocket, state: AppState) {
    let (id, notify) = state.hub.connect();
    log::info!("client {id} connected");
    let (mut tx, mut rx) = socket.split();

    let hub = state.hub.clone();
    let writer = async move {
        let mut seq = 0u64;
        loop {
            notify.notified().await;
            let batch = hub.drain(id);
            for payload in batch.payloads {
                seq += 1;
                let text = serde_json::to_string(&StreamMessage { seq, payload }).expect("messages serialize");
                if tx.send(Message::Text(text.into())).await.is_err() {
                    return;
                }
            }
            if batch.overflowed {
                log::warn!("client {id} fell too far behind; closing");
                let _ = tx.send(Message::Close(None)).await;
                return;
            }
        }
    };

    let mut closing = state.closing.clone();
    let hub = state.hub.clone();
    let reader = async move {
        while let Some(Ok(msg)) = rx.next().await {
            let text = match msg {
                Message::Text(t) => t,
                Message::Close(_) => break,
                _ => continue,
            };
            match serde_json::from_str::<ClientMessage>(&text) {
                Ok(ClientMessage::Control(command)) => {
                    let req = ControlRequest { command, client: Some(id), reply: None };
                    if state.control.send(req).is_err() {
                        break;
                    }
                }
                Err(e) => hub.send_to(
                    id,
                    Payload::Ack(Ack { cmd_seq: 0, ok: false, reason: Some(format!("bad message: {e}")), config: None }),
                ),
            }
        }
    };

    tokio::select! {
        _ = writer => {}
        _ = reader => {}
        _ = closing.wait_for(|c| *c) => {}
    }
    state.hub.disconnect(id);
    log::info!("client {id} disconnected");
}
