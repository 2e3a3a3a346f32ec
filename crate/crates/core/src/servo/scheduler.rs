//! Fixed-rate command emission with a zero-order hold between tracker updates.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use super::ControlCommand;

pub const COMMAND_RATE_HZ: f64 = 100.0;

/// Single-slot latest-value mailbox: a new post replaces an unconsumed one.
#[derive(Debug, Default)]
pub struct Mailbox<T> {
    slot: Mutex<Option<T>>,
}

impl<T> Mailbox<T> {
    pub fn new() -> Self {
        Self { slot: Mutex::new(None) }
    }

    /// Stores `value`, returning the unconsumed value it displaced.
    pub fn post(&self, value: T) -> Option<T> {
        self.slot.lock().unwrap().replace(value)
    }

    pub fn take(&self) -> Option<T> {
        self.slot.lock().unwrap().take()
    }
}

/// Repeats the last command until a fresh one arrives.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroOrderHold {
    held: ControlCommand,
}

impl ZeroOrderHold {
    pub fn new() -> Self {
        Self { held: ControlCommand::HOVER }
    }

    pub fn tick(&mut self, fresh: Option<ControlCommand>) -> ControlCommand {
        if let Some(cmd) = fresh {
            self.held = cmd;
        }
        self.held
    }

    pub fn held(&self) -> ControlCommand {
        self.held
    }
}

/// Sleeps to absolute deadlines so per-tick work does not accumulate drift.
#[derive(Debug)]
pub struct PeriodicTicker {
    period: Duration,
    next: Instant,
}

impl PeriodicTicker {
    pub fn new(period: Duration) -> Self {
        Self { period, next: Instant::now() + period }
    }

    pub fn from_rate(hz: f64) -> Self {
        Self::new(Duration::from_secs_f64(1.0 / hz))
    }

    pub fn period(&self) -> Duration {
        self.period
    }

    /// Blocks until the next deadline and returns the wake-up instant. After an overrun of
    /// more than one period the schedule restarts from now.
    pub fn wait(&mut self) -> Instant {
        let mut now = Instant::now();
        // coarse sleep, then spin out the last stretch for sub-millisecond accuracy
        const SPIN: Duration = Duration::from_micros(300);
        if self.next > now + SPIN {
            std::thread::sleep(self.next - now - SPIN);
        }
        loop {
            now = Instant::now();
            if now >= self.next {
                break;
            }
            std::hint::spin_loop();
        }
        self.next += self.period;
        if now > self.next {
            self.next = now + self.period;
        }
        now
    }
}

/// Summary of observed tick intervals against a nominal period.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CadenceStats {
    pub ticks: usize,
    pub nominal_s: f64,
    pub mean_s: f64,
    pub std_s: f64,
    pub max_abs_dev_s: f64,
}

impl CadenceStats {
    pub fn from_instants(ticks: &[Instant], nominal: Duration) -> Self {
        let intervals: Vec<f64> = ticks.windows(2).map(|w| (w[1] - w[0]).as_secs_f64()).collect();
        let nominal_s = nominal.as_secs_f64();
        if intervals.is_empty() {
            return Self { ticks: ticks.len(), nominal_s, mean_s: 0.0, std_s: 0.0, max_abs_dev_s: 0.0 };
        }
        let n = intervals.len() as f64;
        let mean_s = intervals.iter().sum::<f64>() / n;
        let std_s = (intervals.iter().map(|d| (d - mean_s).powi(2)).sum::<f64>() / n).sqrt();
        let max_abs_dev_s = intervals.iter().map(|d| (d - nominal_s).abs()).fold(0.0, f64::max);
        Self { ticks: ticks.len(), nominal_s, mean_s, std_s, max_abs_dev_s }
    }

    /// Interval standard deviation relative to the nominal period.
    pub fn jitter(&self) -> f64 {
        self.std_s / self.nominal_s
    }

    pub fn rate_hz(&self) -> f64 {
        if self.mean_s > 0.0 {
            1.0 / self.mean_s
        } else {
            0.0
        }
    }
}

/// Real-time emitter: every period it takes the freshest command from the
/// mailbox (or repeats the held one) and hands it to the sink.
pub struct CommandScheduler {
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Vec<Instant>>>,
}

impl CommandScheduler {
    pub fn spawn<F>(rate_hz: f64, mailbox: Arc<Mailbox<ControlCommand>>, mut sink: F) -> Self
    where
        F: FnMut(ControlCommand) + Send + 'static,
    {
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            let mut ticker = PeriodicTicker::from_rate(rate_hz);
            let mut hold = ZeroOrderHold::new();
            let mut ticks = Vec::new();
            while !flag.load(Ordering::Relaxed) {
                ticks.push(ticker.wait());
                sink(hold.tick(mailbox.take()));
            }
            ticks
        });
        Self { stop, handle: Some(handle) }
    }

    /// Stops the thread and returns the tick instants it produced.
    pub fn stop(mut self) -> Vec<Instant> {
        self.stop.store(true, Ordering::Relaxed);
        self.handle.take().map(|h| h.join().unwrap_or_default()).unwrap_or_default()
    }
}

impl Drop for CommandScheduler {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::mpsc;

    #[test]
    fn mailbox_keeps_latest() {
        let m = Mailbox::new();
        assert_eq!(m.post(1), None);
        assert_eq!(m.post(2), Some(1));
        assert_eq!(m.take(), Some(2));
        assert_eq!(m.take(), None);
    }

    #[test]
    fn hold_repeats_previous() {
        let mut h = ZeroOrderHold::new();
        let c = ControlCommand::clamped(0.0, 0.0, 0.2, 0.1, 5);
        assert_eq!(h.tick(None), ControlCommand::HOVER);
        assert_eq!(h.tick(Some(c)), c);
        assert_eq!(h.tick(None), c);
    }

    #[test]
    fn emits_one_hundred_commands_per_second() {
        let mailbox = Arc::new(Mailbox::new());
        let (tx, rx) = mpsc::channel();
        let start = Instant::now();
        let sched = CommandScheduler::spawn(COMMAND_RATE_HZ, mailbox.clone(), move |c| {
            let _ = tx.send((Instant::now(), c));
        });
        let fresh = ControlCommand::clamped(0.0, 0.0, 0.0, 0.5, 1);
        std::thread::sleep(Duration::from_millis(200));
        mailbox.post(fresh);
        std::thread::sleep(Duration::from_millis(800));
        drop(sched);
        let emitted: Vec<_> = rx.try_iter().filter(|(t, _)| *t <= start + Duration::from_secs(1)).collect();
        assert!((98..=102).contains(&emitted.len()), "{} commands", emitted.len());
        // zero-order hold: once the fresh command lands it repeats
        let after: Vec<_> = emitted.iter().skip_while(|(_, c)| *c != fresh).collect();
        assert!(after.len() > 50);
        assert!(after.iter().all(|(_, c)| *c == fresh));
    }
}
