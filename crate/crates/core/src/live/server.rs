//! Websocket front end for [`LiveSession`].
//!
//! `GET /ws` upgrades to a session, `GET /health` reports liveness and the
//! number of open sessions, and everything else falls through to an optional
//! static directory (the teaching console build).

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::Response;
use axum::routing::get;
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tokio::time::{interval_at, Duration, Instant, Interval, MissedTickBehavior};
use tower_http::services::ServeDir;

use super::{LiveConfig, LiveSession, ServerMsg};

#[derive(Clone)]
pub struct AppState {
    pub cfg: Arc<LiveConfig>,
    /// Session logs and final models go here when set.
    pub log_dir: Option<PathBuf>,
    active: Arc<AtomicUsize>,
    next_id: Arc<AtomicU64>,
}

impl AppState {
    pub fn new(cfg: LiveConfig, log_dir: Option<PathBuf>) -> Self {
        Self {
            cfg: Arc::new(cfg),
            log_dir,
            active: Arc::default(),
            next_id: Arc::default(),
        }
    }

    pub fn active_sessions(&self) -> usize {
        self.active.load(Ordering::SeqCst)
    }
}

pub fn router(state: AppState, static_dir: Option<PathBuf>) -> Router {
    let app = Router::new()
        .route("/ws", get(ws_handler))
        .route("/health", get(health));
    let app = match static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir)),
        None => app,
    };
    app.with_state(state)
}

pub async fn serve(
    addr: SocketAddr,
    state: AppState,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    let listener = TcpListener::bind(addr).await?;
    serve_on(listener, state, static_dir).await
}

pub async fn serve_on(
    listener: TcpListener,
    state: AppState,
    static_dir: Option<PathBuf>,
) -> std::io::Result<()> {
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state, static_dir)).await
}

async fn health(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "status": "ok", "sessions": st.active_sessions() }))
}

async fn ws_handler(ws: WebSocketUpgrade, State(st): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| run_session(socket, st))
}

struct ActiveGuard(Arc<AtomicUsize>);

impl Drop for ActiveGuard {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

async fn next_tick(ticker: &mut Option<Interval>) {
    match ticker {
        Some(i) => {
            i.tick().await;
        }
        None => std::future::pending().await,
    }
}

async fn run_session(mut socket: WebSocket, st: AppState) {
    st.active.fetch_add(1, Ordering::SeqCst);
    let _guard = ActiveGuard(st.active.clone());
    let id = st.next_id.fetch_add(1, Ordering::SeqCst);
    let mut session = LiveSession::new((*st.cfg).clone(), id);
    let origin = Instant::now();
    let now = || origin.elapsed().as_secs_f64();
    let period = Duration::from_secs_f64(st.cfg.tick);
    let mut ticker: Option<Interval> = None;
    log::info!("session {id} connected");

    loop {
        // messages first: an utterance that arrived before a tick is ingested before it
        let out: Vec<ServerMsg> = tokio::select! {
            biased;
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => session.handle_text(text.as_str(), now()),
                Some(Ok(Message::Binary(bytes))) => session.handle_binary(&bytes),
                Some(Ok(Message::Close(_))) | None => break,
                Some(Ok(_)) => continue,
                Some(Err(e)) => {
                    log::warn!("session {id}: {e}");
                    break;
                }
            },
            _ = next_tick(&mut ticker) => session.tick(now()),
        };
        for m in out {
            let text = serde_json::to_string(&m).expect("server messages serialize");
            if socket.send(Message::Text(text.into())).await.is_err() {
                break;
            }
        }
        if session.is_ticking() && ticker.is_none() {
            let mut i = interval_at(Instant::now() + period, period);
            i.set_missed_tick_behavior(MissedTickBehavior::Burst);
            ticker = Some(i);
        }
        if session.is_done() {
            break;
        }
    }

    let log = session.finalize(now());
    log::info!("session {id} finished with score {}", session.score());
    if let Some(dir) = &st.log_dir {
        let result = std::fs::create_dir_all(dir)
            .map_err(|e| e.to_string())
            .and_then(|()| {
                log.write(&dir.join(format!("session-{id}.jsonl")))
                    .map_err(|e| e.to_string())
            })
            .and_then(|()| {
                std::fs::write(
                    dir.join(format!("session-{id}.model.json")),
                    session.learner().model.to_checkpoint_json(),
                )
                .map_err(|e| e.to_string())
            });
        if let Err(e) = result {
            log::error!("session {id}: could not write log: {e}");
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}
