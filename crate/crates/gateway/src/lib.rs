//! Network gateway for the sketchfly control loop.
//!
//! One port serves a WebSocket endpoint (`/ws`), the protocol schema
//! (`/protocol.schema.json`), loop statistics (`/api/stats`) and, unless
//! headless, static UI assets. Each client gets a reader task that routes
//! its messages into the control thread and a writer task that forwards
//! frames (latest-wins, rate capped), telemetry, events and acks.

pub mod engine;
pub mod loadtest;
pub mod protocol;

use std::collections::HashMap;
use std::io;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, AtomicU8, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, Utf8Bytes, WebSocket, WebSocketUpgrade};
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use base64::Engine as _;
use futures::{SinkExt, StreamExt};
use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use serde::Deserialize;
use tokio::sync::{broadcast, mpsc, watch, Notify};
use tokio::time::Instant;
use tower_http::services::ServeDir;

use sketchfly::control::ControlLoop;

pub use engine::{CadenceStats, Engine, EngineOptions, RawFrame};
pub use protocol::{parse_client, ClientMessage, FrameMessage, ProtocolError, ServerMessage, Stream, PROTOCOL_VERSION, SCHEMA};

use protocol::{ack, encode, peek_id, ALL_STREAMS};

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Shared secret; clients pass `?token=` or `Authorization: Bearer`.
    pub token: Option<String>,
    /// Larger client messages close the connection.
    pub max_message_bytes: usize,
    /// Frame rate cap per client.
    pub max_fps: f64,
    pub session_timeout: Duration,
    pub ping_interval: Duration,
    /// Static UI assets; `None` runs headless.
    pub ui_dir: Option<PathBuf>,
    pub engine: EngineOptions,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            token: None,
            max_message_bytes: 64 * 1024,
            max_fps: 15.0,
            session_timeout: Duration::from_secs(30),
            ping_interval: Duration::from_secs(5),
            ui_dir: None,
            engine: EngineOptions::default(),
        }
    }
}

/// A frame encoded once and shared by every client.
#[derive(Debug)]
pub struct EncodedFrame {
    pub seq: u64,
    pub text: Utf8Bytes,
}

#[derive(Debug)]
struct SessionInfo {
    last_seen: Instant,
    close: Arc<Notify>,
}

struct Shared {
    cfg: GatewayConfig,
    engine: Engine,
    frames: watch::Receiver<Option<Arc<EncodedFrame>>>,
    sessions: Mutex<HashMap<u64, SessionInfo>>,
    next_id: AtomicU64,
}

impl Shared {
    fn touch(&self, id: u64) {
        if let Some(s) = self.sessions.lock().expect("session lock").get_mut(&id) {
            s.last_seen = Instant::now();
        }
    }

    fn drop_session(&self, id: u64) {
        if let Some(s) = self.sessions.lock().expect("session lock").remove(&id) {
            s.close.notify_one();
        }
    }
}

/// The running service: control thread, frame encoder and session reaper.
#[derive(Clone)]
pub struct Gateway {
    shared: Arc<Shared>,
}

impl Gateway {
    /// Starts the control thread and background tasks. Must be called from
    /// inside a Tokio runtime.
    pub fn start(cl: ControlLoop, cfg: GatewayConfig) -> Self {
        let engine = Engine::spawn(cl, cfg.engine.clone());
        let (enc_tx, enc_rx) = watch::channel(None);
        tokio::spawn(encode_frames(engine.frames(), enc_tx, Duration::from_secs_f64(1.0 / cfg.max_fps.max(0.1))));
        let shared = Arc::new(Shared { cfg, engine, frames: enc_rx, sessions: Mutex::new(HashMap::new()), next_id: AtomicU64::new(1) });
        tokio::spawn(reap_sessions(Arc::downgrade(&shared)));
        Self { shared }
    }

    pub fn engine(&self) -> &Engine {
        &self.shared.engine
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.shared.cfg
    }

    pub fn session_count(&self) -> usize {
        self.shared.sessions.lock().expect("session lock").len()
    }

    pub fn router(&self) -> Router {
        let mut router = Router::new()
            .route("/ws", get(ws_handler))
            .route("/protocol.schema.json", get(schema))
            .route("/api/stats", get(stats))
            .route("/api/health", get(|| async { "ok" }))
            .with_state(Arc::clone(&self.shared));
        if let Some(dir) = &self.shared.cfg.ui_dir {
            router = router.fallback_service(ServeDir::new(dir));
        }
        router
    }
}

/// Niceness of runtime threads relative to the control thread.
pub const NETWORK_NICENESS: i32 = 10;

/// A multi-threaded runtime whose threads (workers and the blocking pool
/// that encodes frames) run at lower priority than the control thread, so
/// socket and encoding work cannot push a control tick past its deadline.
pub fn runtime() -> io::Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().on_thread_start(lower_thread_priority).build()
}

/// Lowers the calling thread's scheduling priority. Best effort.
pub fn lower_thread_priority() {
    #[cfg(target_os = "linux")]
    // SAFETY: plain syscalls on the calling thread; on Linux a tid names a
    // single thread for PRIO_PROCESS.
    unsafe {
        let tid = libc::syscall(libc::SYS_gettid) as libc::id_t;
        libc::setpriority(libc::PRIO_PROCESS, tid, NETWORK_NICENESS);
    }
}

/// Serves `gateway` on `listener` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    gateway: Gateway,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> io::Result<()> {
    axum::serve(listener, gateway.router()).with_graceful_shutdown(shutdown).await
}

pub fn encode_frame(raw: &RawFrame) -> FrameMessage {
    let f = &raw.frame;
    let mut png = Vec::with_capacity(f.width() * f.height() / 2);
    PngEncoder::new_with_quality(&mut png, CompressionType::Fast, FilterType::Sub)
        .write_image(&f.to_luma8(), f.width() as u32, f.height() as u32, ExtendedColorType::L8)
        .expect("in-memory PNG encoding");
    let mut msg = FrameMessage {
        seq: f.seq,
        ts_ms: f.ts_ms,
        width: f.width(),
        height: f.height(),
        format: "png".into(),
        image: base64::engine::general_purpose::STANDARD.encode(&png),
        mode: raw.mode,
        bbox: None,
        centroid: None,
        psr: None,
        valid: None,
    };
    msg.overlay(raw.track.as_ref());
    msg
}

async fn encode_frames(
    mut raw: watch::Receiver<Option<Arc<RawFrame>>>,
    out: watch::Sender<Option<Arc<EncodedFrame>>>,
    min_interval: Duration,
) {
    loop {
        if raw.changed().await.is_err() {
            break;
        }
        let Some(frame) = raw.borrow_and_update().clone() else { continue };
        let started = Instant::now();
        let encoded = tokio::task::spawn_blocking(move || {
            let msg = encode_frame(&frame);
            (msg.seq, encode(&ServerMessage::Frame(msg)))
        });
        let Ok((seq, text)) = encoded.await else { break };
        out.send_replace(Some(Arc::new(EncodedFrame { seq, text: text.into() })));
        tokio::time::sleep_until(started + min_interval).await;
    }
}

async fn reap_sessions(shared: std::sync::Weak<Shared>) {
    loop {
        let Some(s) = shared.upgrade() else { break };
        let timeout = s.cfg.session_timeout;
        let now = Instant::now();
        s.sessions.lock().expect("session lock").retain(|id, info| {
            let alive = now.duration_since(info.last_seen) < timeout;
            if !alive {
                tracing::info!(session = id, "reaping stale session");
                info.close.notify_one();
            }
            alive
        });
        drop(s);
        tokio::time::sleep((timeout / 4).max(Duration::from_millis(50))).await;
    }
}

async fn schema() -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "application/schema+json")], SCHEMA)
}

async fn stats(State(shared): State<Arc<Shared>>) -> impl IntoResponse {
    let sessions = shared.sessions.lock().expect("session lock").len();
    Json(serde_json::json!({ "v": PROTOCOL_VERSION, "sessions": sessions, "cadence": shared.engine.cadence() }))
}

#[derive(Debug, Deserialize)]
struct WsQuery {
    token: Option<String>,
}

fn authorized(cfg: &GatewayConfig, query: &WsQuery, headers: &HeaderMap) -> bool {
    let Some(expected) = &cfg.token else { return true };
    let bearer = headers.get(header::AUTHORIZATION).and_then(|h| h.to_str().ok()).and_then(|h| h.strip_prefix("Bearer "));
    query.token.as_deref() == Some(expected.as_str()) || bearer == Some(expected.as_str())
}

async fn ws_handler(
    ws: WebSocketUpgrade,
    Query(query): Query<WsQuery>,
    headers: HeaderMap,
    State(shared): State<Arc<Shared>>,
) -> Response {
    if !authorized(&shared.cfg, &query, &headers) {
        return (StatusCode::UNAUTHORIZED, "missing or wrong token").into_response();
    }
    let limit = shared.cfg.max_message_bytes;
    ws.max_message_size(limit).max_frame_size(limit).on_upgrade(move |socket| client(socket, shared)).into_response()
}

fn stream_bit(s: Stream) -> u8 {
    match s {
        Stream::Frames => 1,
        Stream::Telemetry => 2,
        Stream::Events => 4,
    }
}

async fn client(socket: WebSocket, shared: Arc<Shared>) {
    let id = shared.next_id.fetch_add(1, Ordering::Relaxed);
    let close = Arc::new(Notify::new());
    shared.sessions.lock().expect("session lock").insert(id, SessionInfo { last_seen: Instant::now(), close: Arc::clone(&close) });
    tracing::debug!(session = id, "client connected");
    let streams = Arc::new(AtomicU8::new(7));
    let (sink, stream) = socket.split();
    let (ack_tx, ack_rx) = mpsc::channel::<Utf8Bytes>(64);
    let (w, h) = shared.engine.frame_size();
    let hello = encode(&ServerMessage::Hello {
        session: id,
        frame_width: w,
        frame_height: h,
        max_fps: shared.cfg.max_fps,
        telemetry_hz: shared.cfg.engine.telemetry_hz,
        streams: ALL_STREAMS.to_vec(),
    });
    let _ = ack_tx.send(hello.into()).await;
    let mut writer = tokio::spawn(write_loop(sink, Arc::clone(&shared), id, Arc::clone(&streams), ack_rx, Arc::clone(&close)));
    let mut reader = tokio::spawn(read_loop(stream, Arc::clone(&shared), id, streams, ack_tx));
    tokio::select! {
        _ = &mut writer => reader.abort(),
        _ = &mut reader => {
            // let queued acks drain before closing
            let _ = tokio::time::timeout(Duration::from_millis(200), &mut writer).await;
            writer.abort();
        }
    }
    shared.drop_session(id);
    tracing::debug!(session = id, "client disconnected");
}

async fn read_loop(
    mut stream: futures::stream::SplitStream<WebSocket>,
    shared: Arc<Shared>,
    id: u64,
    streams: Arc<AtomicU8>,
    acks: mpsc::Sender<Utf8Bytes>,
) {
    let frame_size = shared.engine.frame_size();
    while let Some(msg) = stream.next().await {
        let Ok(msg) = msg else { break };
        shared.touch(id);
        let text = match msg {
            Message::Text(t) => t,
            Message::Binary(_) => {
                let _ = acks.send(ack(None, None, Err("binary messages are not supported".into())).into()).await;
                continue;
            }
            Message::Close(_) => break,
            Message::Ping(_) | Message::Pong(_) => continue,
        };
        let reply = match parse_client(&text) {
            Err(e) => {
                let (mid, kind) = peek_id(&text);
                ack(mid, kind.as_deref(), Err(e.to_string()))
            }
            Ok(env) => {
                let kind = env.message.kind();
                let result = match &env.message {
                    ClientMessage::Subscribe { streams: list } => {
                        streams.store(list.iter().fold(0, |m, s| m | stream_bit(*s)), Ordering::Relaxed);
                        Ok(())
                    }
                    msg => match msg.to_event(frame_size) {
                        Err(e) => Err(e.to_string()),
                        Ok(None) => Ok(()),
                        Ok(Some(ev)) => shared.engine.send(ev).await.unwrap_or_else(|_| Err("control loop stopped".into())),
                    },
                };
                ack(env.id, Some(kind), result)
            }
        };
        if acks.send(reply.into()).await.is_err() {
            break;
        }
    }
}

async fn write_loop(
    mut sink: futures::stream::SplitSink<WebSocket, Message>,
    shared: Arc<Shared>,
    id: u64,
    streams: Arc<AtomicU8>,
    mut acks: mpsc::Receiver<Utf8Bytes>,
    close: Arc<Notify>,
) {
    let mut frames = shared.frames.clone();
    frames.mark_unchanged();
    let mut bus = shared.engine.subscribe();
    let min_gap = Duration::from_secs_f64(1.0 / shared.cfg.max_fps.max(0.1));
    let mut next_frame_at = Instant::now();
    let mut pending = false;
    let mut last_seq = None;
    let mut ping = tokio::time::interval(shared.cfg.ping_interval);
    ping.tick().await;
    loop {
        let wants = |s: Stream| streams.load(Ordering::Relaxed) & stream_bit(s) != 0;
        let out = tokio::select! {
            biased;
            _ = close.notified() => break,
            msg = acks.recv() => match msg {
                Some(text) => Message::Text(text),
                None => break,
            },
            changed = frames.changed(), if !pending => {
                if changed.is_err() {
                    break;
                }
                pending = true;
                continue;
            }
            _ = tokio::time::sleep_until(next_frame_at), if pending => {
                pending = false;
                let latest = frames.borrow_and_update().clone();
                match latest {
                    // newest only; never resend or go backwards
                    Some(f) if wants(Stream::Frames) && last_seq.is_none_or(|s| f.seq > s) => {
                        last_seq = Some(f.seq);
                        next_frame_at = Instant::now() + min_gap;
                        Message::Text(f.text.clone())
                    }
                    _ => continue,
                }
            }
            msg = bus.recv() => match msg {
                Ok(m) if wants(if m.telemetry { Stream::Telemetry } else { Stream::Events }) => Message::Text(m.text),
                Ok(_) => continue,
                Err(broadcast::error::RecvError::Lagged(n)) => {
                    tracing::debug!(session = id, skipped = n, "slow client skipped bus messages");
                    continue;
                }
                Err(broadcast::error::RecvError::Closed) => break,
            },
            _ = ping.tick() => Message::Ping(Default::default()),
        };
        if sink.send(out).await.is_err() {
            tracing::debug!(session = id, "send failed; dropping session");
            break;
        }
    }
    shared.drop_session(id);
    let _ = sink.close().await;
}
