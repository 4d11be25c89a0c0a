use std::sync::Mutex;
use std::time::{Duration, Instant};

/// Time source for rate limiting and retry backoff.
pub trait Clock: Send + Sync {
    /// Time since an arbitrary fixed origin.
    fn now(&self) -> Duration;
    fn sleep(&self, d: Duration);
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl SystemClock {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Default for SystemClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, d: Duration) {
        std::thread::sleep(d)
    }
}

/// A clock that only moves when slept on. Every sleep adds its full
/// duration, including sleeps from concurrent threads.
#[derive(Debug, Default)]
pub struct SimClock {
    now: Mutex<Duration>,
    slept: Mutex<Duration>,
}

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sum of all requested sleeps.
    pub fn total_slept(&self) -> Duration {
        *self.slept.lock().expect("clock poisoned")
    }
}

impl Clock for SimClock {
    fn now(&self) -> Duration {
        *self.now.lock().expect("clock poisoned")
    }

    fn sleep(&self, d: Duration) {
        *self.slept.lock().expect("clock poisoned") += d;
        let mut now = self.now.lock().expect("clock poisoned");
        *now += d;
    }
}

/// Requests-per-minute ceiling with a burst of one: start times are spaced
/// at least `60 / ceiling` seconds apart, so any 60 s window holds at most
/// `ceiling` starts.
pub struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Duration>>,
}

impl RateLimiter {
    pub fn per_minute(ceiling: f64) -> Self {
        assert!(
            ceiling > 0.0 && ceiling.is_finite(),
            "rate ceiling must be positive"
        );
        Self {
            // rounded up, or `ceiling` truncated intervals can fit in 60 s
            interval: Duration::from_nanos((60e9 / ceiling).ceil() as u64),
            next: Mutex::new(None),
        }
    }

    pub fn interval(&self) -> Duration {
        self.interval
    }

    /// Block until the caller may start a request. Returns the granted start
    /// time on `clock`.
    pub fn acquire(&self, clock: &dyn Clock) -> Duration {
        let (slot, wait) = {
            let mut next = self.next.lock().expect("limiter poisoned");
            let now = clock.now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + self.interval);
            (slot, slot.saturating_sub(now))
        };
        if !wait.is_zero() {
            clock.sleep(wait);
        }
        slot
    }
}
