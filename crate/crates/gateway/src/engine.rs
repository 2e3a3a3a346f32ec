//! The real-time control thread and its queues.
//!
//! The thread owns the [`ControlLoop`] and paces it against the wall clock.
//! Requests arrive on a channel and are drained at the start of each tick;
//! outputs leave through non-blocking channels (a latest-wins frame slot and
//! a broadcast bus), so no client can stall a tick.

use std::collections::VecDeque;
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use axum::extract::ws::Utf8Bytes;
use serde::Serialize;
use tokio::sync::{broadcast, oneshot, watch};

use sketchfly::control::{ControlEvent, ControlLoop, Mode};
use sketchfly::frame::GrayFrame;
use sketchfly::tracker::TrackResult;

use crate::protocol::{encode, ServerMessage};

/// A rendered frame with the tracker output it produced.
#[derive(Debug, Clone)]
pub struct RawFrame {
    pub frame: Arc<GrayFrame>,
    pub track: Option<TrackResult>,
    pub mode: Mode,
}

/// A serialized bus message and the stream it belongs to.
#[derive(Debug, Clone)]
pub struct BusMessage {
    pub telemetry: bool,
    pub text: Utf8Bytes,
}

pub enum Request {
    Event(ControlEvent, oneshot::Sender<Result<(), String>>),
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CadenceStats {
    pub ticks: u64,
    /// Intervals in the measurement window.
    pub intervals: usize,
    pub nominal_period_ms: f64,
    pub mean_period_ms: f64,
    pub rate_hz: f64,
    /// RMS deviation of tick intervals from nominal, as a fraction of nominal.
    pub rms_jitter: f64,
    /// Largest single-interval deviation, as a fraction of nominal.
    pub max_jitter: f64,
    /// Ticks whose work ran past the next deadline.
    pub overruns: u64,
}

#[derive(Debug)]
struct CadenceMeter {
    nominal: f64,
    last: Option<Instant>,
    intervals: VecDeque<f64>,
    capacity: usize,
    ticks: u64,
    overruns: u64,
}

impl CadenceMeter {
    fn new(nominal: f64, capacity: usize) -> Self {
        Self { nominal, last: None, intervals: VecDeque::with_capacity(capacity), capacity, ticks: 0, overruns: 0 }
    }

    fn record(&mut self, at: Instant) {
        if let Some(prev) = self.last {
            if self.intervals.len() == self.capacity {
                self.intervals.pop_front();
            }
            self.intervals.push_back(at.duration_since(prev).as_secs_f64());
        }
        self.last = Some(at);
        self.ticks += 1;
    }

    fn reset(&mut self) {
        self.intervals.clear();
        self.last = None;
        self.overruns = 0;
    }

    fn stats(&self) -> CadenceStats {
        let n = self.intervals.len();
        let mean = if n == 0 { 0.0 } else { self.intervals.iter().sum::<f64>() / n as f64 };
        let dev = |x: f64| (x - self.nominal) / self.nominal;
        let rms = if n == 0 { 0.0 } else { (self.intervals.iter().map(|&x| dev(x).powi(2)).sum::<f64>() / n as f64).sqrt() };
        let max = self.intervals.iter().map(|&x| dev(x).abs()).fold(0.0, f64::max);
        CadenceStats {
            ticks: self.ticks,
            intervals: n,
            nominal_period_ms: self.nominal * 1e3,
            mean_period_ms: mean * 1e3,
            rate_hz: if mean > 0.0 { 1.0 / mean } else { 0.0 },
            rms_jitter: rms,
            max_jitter: max,
            overruns: self.overruns,
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineOptions {
    /// Pace ticks to the wall clock; otherwise run as fast as possible.
    pub realtime: bool,
    pub telemetry_hz: f64,
    /// Cadence intervals kept for statistics.
    pub cadence_window: usize,
    pub bus_capacity: usize,
    /// Time before each deadline spent yielding instead of sleeping.
    pub spin: Duration,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self { realtime: true, telemetry_hz: 10.0, cadence_window: 12_000, bus_capacity: 256, spin: Duration::from_millis(1) }
    }
}

/// Handle to a running control thread.
pub struct Engine {
    requests: mpsc::Sender<Request>,
    frames: watch::Receiver<Option<Arc<RawFrame>>>,
    bus: broadcast::Sender<BusMessage>,
    cadence: Arc<Mutex<CadenceMeter>>,
    frame_size: (usize, usize),
    thread: Option<JoinHandle<()>>,
}

impl Engine {
    pub fn spawn(mut cl: ControlLoop, opts: EngineOptions) -> Self {
        let (req_tx, req_rx) = mpsc::channel::<Request>();
        let (frame_tx, frame_rx) = watch::channel(None);
        let (bus_tx, _) = broadcast::channel(opts.bus_capacity.max(1));
        let hz = cl.config().physics_hz;
        let period = Duration::from_secs_f64(1.0 / hz);
        let cadence = Arc::new(Mutex::new(CadenceMeter::new(period.as_secs_f64(), opts.cadence_window.max(2))));
        let frame_size = (cl.config().camera.width, cl.config().camera.height);
        let telemetry_every = ((hz / opts.telemetry_hz.max(1e-3)).round() as u64).max(1);
        let bus = bus_tx.clone();
        let meter = Arc::clone(&cadence);
        let thread = thread::Builder::new()
            .name("control-loop".into())
            .spawn(move || {
                let mut next = Instant::now();
                'run: loop {
                    if opts.realtime {
                        let now = Instant::now();
                        if next > now {
                            // Sleep short of the deadline and yield through the rest:
                            // waking a parked thread on a virtualized core can take
                            // several milliseconds.
                            if next > now + opts.spin {
                                thread::sleep(next - now - opts.spin);
                            }
                            while Instant::now() < next {
                                thread::yield_now();
                            }
                        } else if now - next > period {
                            // more than a whole period late: resync rather than
                            // firing a burst of stale catch-up ticks
                            next = now;
                        }
                    }
                    let started = Instant::now();
                    meter.lock().expect("cadence lock").record(started);
                    loop {
                        match req_rx.try_recv() {
                            Ok(Request::Event(ev, reply)) => {
                                let _ = reply.send(cl.submit(ev));
                            }
                            Ok(Request::Shutdown) | Err(mpsc::TryRecvError::Disconnected) => break 'run,
                            Err(mpsc::TryRecvError::Empty) => break,
                        }
                    }
                    match cl.step() {
                        Ok(out) => {
                            if let Some(frame) = out.frame {
                                frame_tx.send_replace(Some(Arc::new(RawFrame { frame, track: out.track, mode: cl.mode() })));
                            }
                            for n in out.notices {
                                publish(&bus, false, &ServerMessage::Event(n));
                            }
                        }
                        Err(e) => {
                            tracing::error!("control tick failed: {e}");
                            publish(&bus, false, &ServerMessage::Event(sketchfly::control::Notice::Error { reason: e.to_string() }));
                        }
                    }
                    if cl.tick_count() % telemetry_every == 0 {
                        publish(&bus, true, &ServerMessage::Telemetry(cl.telemetry()));
                    }
                    next += period;
                    if opts.realtime && Instant::now() > next {
                        meter.lock().expect("cadence lock").overruns += 1;
                    }
                }
                if let Some(dir) = cl.shutdown() {
                    tracing::info!("capture session closed: {}", dir.display());
                }
            })
            .expect("spawn control thread");
        Self { requests: req_tx, frames: frame_rx, bus: bus_tx, cadence, frame_size, thread: Some(thread) }
    }

    /// Queues an event; the reply arrives after the next tick boundary.
    pub fn send(&self, event: ControlEvent) -> oneshot::Receiver<Result<(), String>> {
        let (tx, rx) = oneshot::channel();
        if self.requests.send(Request::Event(event, tx)).is_err() {
            tracing::warn!("control thread is gone");
        }
        rx
    }

    pub fn requests(&self) -> mpsc::Sender<Request> {
        self.requests.clone()
    }

    pub fn frames(&self) -> watch::Receiver<Option<Arc<RawFrame>>> {
        self.frames.clone()
    }

    pub fn subscribe(&self) -> broadcast::Receiver<BusMessage> {
        self.bus.subscribe()
    }

    pub fn frame_size(&self) -> (usize, usize) {
        self.frame_size
    }

    pub fn cadence(&self) -> CadenceStats {
        self.cadence.lock().expect("cadence lock").stats()
    }

    /// Starts a fresh measurement window.
    pub fn reset_cadence(&self) {
        self.cadence.lock().expect("cadence lock").reset();
    }

    pub fn shutdown(&mut self) {
        let _ = self.requests.send(Request::Shutdown);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn publish(bus: &broadcast::Sender<BusMessage>, telemetry: bool, msg: &ServerMessage) {
    if bus.receiver_count() > 0 {
        let _ = bus.send(BusMessage { telemetry, text: encode(msg).into() });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sketchfly::control::{ControlConfig, Notice};
    use sketchfly::sim::{DroneState, Scene};

    fn engine(realtime: bool) -> Engine {
        let cl = ControlLoop::new(ControlConfig::default(), Scene::default(), "empty", DroneState::at([0.0, 0.0, 0.0], 0.0)).unwrap();
        Engine::spawn(cl, EngineOptions { realtime, ..Default::default() })
    }

    #[test]
    fn meter_statistics() {
        let mut m = CadenceMeter::new(0.01, 4);
        let t0 = Instant::now();
        for (i, ms) in [0u64, 10, 20, 31, 40].iter().enumerate() {
            m.record(t0 + Duration::from_millis(*ms));
            assert_eq!(m.ticks, i as u64 + 1);
        }
        let s = m.stats();
        assert_eq!(s.intervals, 4);
        assert!((s.mean_period_ms - 10.0).abs() < 1e-9);
        assert!((s.max_jitter - 0.1).abs() < 1e-9);
    }

    #[test]
    fn realtime_rate_is_close_to_nominal() {
        let e = engine(true);
        thread::sleep(Duration::from_millis(1500));
        let s = e.cadence();
        assert!((s.rate_hz - 100.0).abs() < 5.0, "{s:?}");
    }

    #[test]
    fn events_are_acknowledged_and_broadcast() {
        let e = engine(false);
        let mut bus = e.subscribe();
        assert_eq!(e.send(ControlEvent::Takeoff).blocking_recv().unwrap(), Ok(()));
        let err = e.send(ControlEvent::SetMode(Mode::Tracking)).blocking_recv().unwrap();
        assert!(err.unwrap_err().contains("target"));
        let expected = serde_json::to_value(ServerMessage::Event(Notice::Error { reason: String::new() })).unwrap();
        let mut saw_error = false;
        for _ in 0..10_000 {
            if let Ok(m) = bus.try_recv() {
                let v: serde_json::Value = serde_json::from_str(&m.text).unwrap();
                assert_eq!(v["v"], 1);
                saw_error |= v["kind"] == expected["kind"];
                if saw_error {
                    break;
                }
            } else {
                thread::sleep(Duration::from_millis(1));
            }
        }
        assert!(saw_error);
    }
}
