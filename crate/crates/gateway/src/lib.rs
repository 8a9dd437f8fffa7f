//! Live teaching sessions over websockets.
//!
//! A teacher connects to `/ws`, starts a trial and presses the spacebar;
//! presses are queued and drained once per tick into the session engine,
//! which runs in realtime mode. Every tick is streamed back to the teacher
//! and to any observers connected to `/observe/{trial_id}`. Each trial's
//! trace is written as JSON Lines with null ground truth.

pub mod protocol;
mod trial;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc};

use taskcomm::{Config, TaskHypothesis, DEFAULT_MAX_TICKS};

pub use protocol::{ClientMessage, ServerMessage, TickMessage, TrialSummary, PROTOCOL_VERSION};
pub use trial::PressQueue;

/// Environment variable holding the default bind address.
pub const BIND_ENV: &str = "TASKCOMM_BIND";
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    pub config: Config,
    /// Live traces and post-trial reports are written here.
    pub trace_dir: PathBuf,
    /// Overrides the wall-clock tick length.
    pub pace: Option<Duration>,
    pub max_ticks: u32,
}

impl GatewayConfig {
    pub fn new(config: Config, trace_dir: impl Into<PathBuf>) -> Self {
        GatewayConfig {
            config,
            trace_dir: trace_dir.into(),
            pace: None,
            max_ticks: DEFAULT_MAX_TICKS,
        }
    }
}

struct Shared {
    cfg: GatewayConfig,
    next_id: AtomicU64,
    /// Tick streams of running trials, for observers.
    trials: Mutex<HashMap<String, broadcast::Sender<Arc<str>>>>,
}

#[derive(Clone)]
pub struct AppState(Arc<Shared>);

impl AppState {
    pub fn new(cfg: GatewayConfig) -> Self {
        AppState(Arc::new(Shared {
            cfg,
            next_id: AtomicU64::new(0),
            trials: Mutex::new(HashMap::new()),
        }))
    }

    fn trial_id(&self) -> String {
        let n = self.0.next_id.fetch_add(1, Ordering::Relaxed);
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        format!("live-{stamp}-{n}")
    }

    /// Ids of the trials currently running.
    pub fn running(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.0.trials.lock().unwrap().keys().cloned().collect();
        ids.sort();
        ids
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/ws", get(teacher_socket))
        .route("/observe/{trial_id}", get(observer_socket))
        .route("/health", get(|| async { "ok" }))
        .with_state(state)
}

/// Serves until the listener fails.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

/// Bind address from `flag`, else from [`BIND_ENV`], else [`DEFAULT_BIND`].
pub fn bind_address(flag: Option<&str>) -> Result<SocketAddr, std::net::AddrParseError> {
    match flag {
        Some(a) => a.parse(),
        None => std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.into()).parse(),
    }
}

async fn teacher_socket(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    ws.on_upgrade(move |socket| teacher_session(socket, state))
}

async fn observer_socket(
    ws: WebSocketUpgrade,
    Path(trial_id): Path<String>,
    State(state): State<AppState>,
) -> impl IntoResponse {
    ws.on_upgrade(move |socket| observe(socket, state, trial_id))
}

async fn observe(mut socket: WebSocket, state: AppState, trial_id: String) {
    let rx = state.0.trials.lock().unwrap().get(&trial_id).map(|tx| tx.subscribe());
    let Some(mut rx) = rx else {
        let msg = ServerMessage::error("unknown_trial", format!("no running trial {trial_id}"));
        let _ = socket.send(Message::Text(protocol::encode(&msg).into())).await;
        return;
    };
    loop {
        tokio::select! {
            msg = rx.recv() => match msg {
                Ok(text) => {
                    if socket.send(Message::Text(text.as_ref().into())).await.is_err() {
                        return;
                    }
                }
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::warn!(trial_id, skipped = n, "observer lagged");
                }
                Err(broadcast::error::RecvError::Closed) => return,
            },
            incoming = socket.recv() => match incoming {
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {
                    let msg = ServerMessage::error("read_only", "observers cannot send messages");
                    let _ = socket.send(Message::Text(protocol::encode(&msg).into())).await;
                }
            },
        }
    }
}

/// The trial a teacher connection is running, if any.
struct Active {
    trial_id: String,
    card: TaskHypothesis,
    presses: PressQueue,
    handle: trial::Handle,
}

async fn teacher_session(socket: WebSocket, state: AppState) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut outbox) = mpsc::unbounded_channel::<Arc<str>>();
    let writer = tokio::spawn(async move {
        while let Some(text) = outbox.recv().await {
            if sink.send(Message::Text(text.as_ref().into())).await.is_err() {
                break;
            }
        }
    });
    let reply = |msg: ServerMessage| {
        let _ = out.send(protocol::encode(&msg).into());
    };

    let mut active: Option<Active> = None;
    let mut last_ended: Option<(String, TaskHypothesis)> = None;
    while let Some(incoming) = stream.next().await {
        let text = match incoming {
            Ok(Message::Text(t)) => t,
            Ok(Message::Close(_)) | Err(_) => break,
            Ok(_) => continue,
        };
        if active.as_ref().is_some_and(|a| a.handle.is_finished()) {
            let a = active.take().unwrap();
            last_ended = Some((a.trial_id, a.card));
        }
        let msg = match protocol::decode(&text) {
            Ok(m) => m,
            Err(e) => {
                reply(e);
                continue;
            }
        };
        match msg {
            ClientMessage::StartTrial { card } => {
                if active.is_some() {
                    reply(ServerMessage::error("trial_active", "reset the running trial first"));
                    continue;
                }
                let card = card.unwrap_or_else(trial::random_card);
                let trial_id = state.trial_id();
                let (tx, _) = broadcast::channel(1024);
                state.0.trials.lock().unwrap().insert(trial_id.clone(), tx.clone());
                reply(ServerMessage::TrialStarted {
                    trial_id: trial_id.clone(),
                    card,
                });
                let presses = PressQueue::default();
                let handle = trial::spawn(trial::Params {
                    trial_id: trial_id.clone(),
                    card,
                    cfg: state.0.cfg.clone(),
                    presses: presses.clone(),
                    teacher: out.clone(),
                    observers: tx,
                    on_exit: {
                        let state = state.clone();
                        let id = trial_id.clone();
                        Box::new(move || {
                            state.0.trials.lock().unwrap().remove(&id);
                        })
                    },
                });
                active = Some(Active {
                    trial_id,
                    card,
                    presses,
                    handle,
                });
            }
            ClientMessage::Spacebar { .. } => match &active {
                Some(a) => a.presses.push(),
                None => reply(ServerMessage::error("no_active_trial", "start a trial before pressing")),
            },
            ClientMessage::Reset => {
                if let Some(a) = active.take() {
                    a.handle.abort().await;
                    last_ended = Some((a.trial_id, a.card));
                }
            }
            ClientMessage::Report { correct, intelligence } => match (&active, &last_ended) {
                (None, Some((trial_id, card))) => {
                    let report = serde_json::json!({
                        "trial_id": trial_id,
                        "card": card,
                        "correct": correct,
                        "intelligence": intelligence,
                    });
                    let path = state.0.cfg.trace_dir.join(format!("{trial_id}.report.json"));
                    if let Err(e) = std::fs::write(&path, report.to_string() + "\n") {
                        reply(ServerMessage::error("io", e.to_string()));
                    }
                }
                _ => reply(ServerMessage::error(
                    "no_finished_trial",
                    "reports follow a finished trial",
                )),
            },
        }
    }
    if let Some(a) = active.take() {
        if !a.handle.is_finished() {
            tracing::warn!(trial_id = a.trial_id, "teacher disconnected, aborting trial");
        }
        a.handle.abort().await;
    }
    drop(out);
    let _ = writer.await;
}
