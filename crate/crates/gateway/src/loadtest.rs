//! Headless load test: an in-process gateway, a crowd of WebSocket clients
//! flooding it with commands, and one client that reads slowly. Reports the
//! control loop's cadence under that load and whether every client saw
//! frames in sequence order.

use std::time::Duration;

use futures::{SinkExt, StreamExt};
use serde::Serialize;
use tokio::time::{interval, sleep, timeout, Instant};
use tokio_tungstenite::connect_async;
use tokio_tungstenite::tungstenite::Message;

use sketchfly::control::{ControlConfig, ControlLoop};
use sketchfly::sim::{ground_truth_bbox, Billboard, DroneState, Scene, Texture};

use crate::{serve, CadenceStats, Gateway, GatewayConfig};

#[derive(Debug, Clone)]
pub struct LoadConfig {
    pub clients: usize,
    pub throttled: usize,
    pub duration: Duration,
    /// Commands per second each normal client sends.
    pub command_rate_hz: f64,
    /// Pause between reads of a throttled client.
    pub throttle_delay: Duration,
    /// Engage the tracker on the scene target before measuring.
    pub tracking: bool,
}

impl Default for LoadConfig {
    fn default() -> Self {
        Self {
            clients: 8,
            throttled: 1,
            duration: Duration::from_secs(10),
            command_rate_hz: 20.0,
            throttle_delay: Duration::from_millis(250),
            tracking: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct ClientReport {
    pub throttled: bool,
    pub frames: usize,
    pub out_of_order: usize,
    pub acks: usize,
    pub last_seq: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LoadReport {
    pub clients: Vec<ClientReport>,
    pub cadence: CadenceStats,
    pub frames_out_of_order: usize,
    /// Length of the measurement window.
    pub duration_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("client failed: {0}")]
    Client(String),
}

pub fn load_scene() -> Scene {
    Scene {
        objects: vec![Billboard {
            id: "target".into(),
            center: [0.1, 5.0, 1.0],
            size: [0.4, 0.4],
            facing_deg: 180.0,
            texture: Texture::Noise { seed: 11, period: 32.0, low: 0.05, high: 0.95 },
            visible: true,
        }],
        ..Default::default()
    }
}

/// Reads `"seq":N` from the start of a frame message. The server writes
/// `seq` ahead of the image, so the payload never needs decoding.
fn head_seq(head: &str) -> Option<u64> {
    let rest = &head[head.find("\"seq\":")? + 6..];
    let end = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
    rest[..end].parse().ok()
}

async fn client(url: String, throttled: bool, rate_hz: f64, delay: Duration, until: Instant) -> Result<ClientReport, LoadError> {
    let (ws, _) = connect_async(&url).await.map_err(|e| LoadError::Client(e.to_string()))?;
    let (mut tx, mut rx) = ws.split();
    let mut rep = ClientReport { throttled, ..Default::default() };
    let mut ticker = interval(Duration::from_secs_f64(1.0 / rate_hz.max(0.1)));
    let mut id = 0u64;
    loop {
        let now = Instant::now();
        if now >= until {
            break;
        }
        if throttled {
            sleep(delay.min(until - now)).await;
        }
        let msg = tokio::select! {
            _ = ticker.tick(), if !throttled => {
                id += 1;
                let cmd = serde_json::json!({"v": 1, "id": id, "type": "go"}).to_string();
                tx.send(Message::Text(cmd.into())).await.map_err(|e| LoadError::Client(e.to_string()))?;
                continue;
            }
            m = timeout(until.saturating_duration_since(Instant::now()), rx.next()) => m,
        };
        let Ok(Some(msg)) = msg else { break };
        let Message::Text(text) = msg.map_err(|e| LoadError::Client(e.to_string()))? else { continue };
        // peek at the type without decoding the image
        let head = &text[..text.len().min(64)];
        if head.contains("\"type\":\"frame\"") {
            let seq = head_seq(head).ok_or_else(|| LoadError::Client(format!("frame without seq: {head}")))?;
            if rep.last_seq.is_some_and(|l| seq <= l) {
                rep.out_of_order += 1;
            }
            rep.last_seq = Some(seq);
            rep.frames += 1;
        } else if head.contains("\"type\":\"ack\"") {
            rep.acks += 1;
        }
    }
    let _ = tx.close().await;
    Ok(rep)
}

/// Runs the load test against a fresh in-process gateway.
pub async fn run_load_test(cfg: &LoadConfig, control: ControlConfig) -> Result<LoadReport, LoadError> {
    let start = DroneState::at([0.0, 0.0, 1.0], 0.0);
    let scene = load_scene();
    let bbox = ground_truth_bbox(&start, &scene, &control.camera, "target").map_err(|e| LoadError::Setup(e.to_string()))?;
    let cl = ControlLoop::new(control, scene, "load", start).map_err(|e| LoadError::Setup(e.to_string()))?;
    let gw = Gateway::start(cl, GatewayConfig::default());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| LoadError::Setup(e.to_string()))?;
    let url = format!("ws://{}/ws", listener.local_addr().map_err(|e| LoadError::Setup(e.to_string()))?);
    let (stop_tx, stop_rx) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve(listener, gw.clone(), async move {
        let _ = stop_rx.await;
    }));
    // wait for the first frame, then engage the tracker
    let mut frames = gw.engine().frames();
    timeout(Duration::from_secs(5), frames.wait_for(|f| f.is_some())).await.map_err(|_| LoadError::Setup("no frame".into()))?.map_err(|e| LoadError::Setup(e.to_string()))?;
    if cfg.tracking {
        if let Some(b) = bbox {
            let r = gw.engine().send(sketchfly::control::ControlEvent::Select(b)).await;
            r.map_err(|e| LoadError::Setup(e.to_string()))?.map_err(LoadError::Setup)?;
        }
    }
    let until = Instant::now() + cfg.duration;
    let mut tasks = Vec::new();
    for i in 0..cfg.clients + cfg.throttled {
        let throttled = i >= cfg.clients;
        tasks.push(tokio::spawn(client(url.clone(), throttled, cfg.command_rate_hz, cfg.throttle_delay, until)));
    }
    // measure once everyone is connected
    sleep(Duration::from_millis(300)).await;
    gw.engine().reset_cadence();
    let measured_from = Instant::now();
    let mut clients = Vec::new();
    for t in tasks {
        clients.push(t.await.map_err(|e| LoadError::Client(e.to_string()))??);
    }
    let cadence = gw.engine().cadence();
    let duration_s = measured_from.elapsed().as_secs_f64();
    let _ = stop_tx.send(());
    let _ = server.await;
    let frames_out_of_order = clients.iter().map(|c| c.out_of_order).sum();
    Ok(LoadReport { clients, cadence, frames_out_of_order, duration_s })
}
