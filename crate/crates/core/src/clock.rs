//! Time source for timeouts, backoff, breaker reopen deadlines and journal
//! timestamps.

use std::future::Future;
use std::pin::Pin;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

pub type Sleep = Pin<Box<dyn Future<Output = ()> + Send + 'static>>;

pub trait Clock: Send + Sync + 'static {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> u64;

    fn sleep(&self, duration: Duration) -> Sleep;
}

/// Wall clock backed by tokio timers.
#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
    }

    fn sleep(&self, duration: Duration) -> Sleep {
        Box::pin(tokio::time::sleep(duration))
    }
}

/// Virtual clock for tests. A sleep completes on its first poll and moves
/// time forward by the requested amount; every polled sleep is recorded.
/// Sleeps that are never polled (the losing side of a `select!`) leave time
/// alone. Clones share one timeline.
///
/// Only pair it with in-process transports: a real socket would lose every
/// race against a sleep that finishes instantly.
#[derive(Debug, Clone)]
pub struct ManualClock {
    inner: Arc<ManualInner>,
}

#[derive(Debug)]
struct ManualInner {
    now: AtomicU64,
    sleeps: Mutex<Vec<Duration>>,
}

impl ManualClock {
    pub fn new(start_ms: u64) -> Self {
        Self {
            inner: Arc::new(ManualInner {
                now: AtomicU64::new(start_ms),
                sleeps: Mutex::new(Vec::new()),
            }),
        }
    }

    pub fn advance(&self, duration: Duration) {
        self.inner
            .now
            .fetch_add(duration.as_millis() as u64, Ordering::SeqCst);
    }

    /// Every sleep completed so far, in order.
    pub fn sleeps(&self) -> Vec<Duration> {
        self.inner.sleeps.lock().unwrap().clone()
    }

    pub fn clear_sleeps(&self) {
        self.inner.sleeps.lock().unwrap().clear();
    }
}

impl Default for ManualClock {
    fn default() -> Self {
        Self::new(1_000_000)
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> u64 {
        self.inner.now.load(Ordering::SeqCst)
    }

    fn sleep(&self, duration: Duration) -> Sleep {
        let clock = self.clone();
        Box::pin(async move {
            clock.inner.sleeps.lock().unwrap().push(duration);
            clock.advance(duration);
        })
    }
}
