use std::sync::Mutex;

use chrono::{DateTime, Duration, Utc};

pub type Timestamp = DateTime<Utc>;

/// Source of wall-clock time. Injected so tests can control ordering and skew.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        Utc::now()
    }
}

/// A clock that only moves when told to. Each `now()` call advances by `step`.
#[derive(Debug)]
pub struct ManualClock {
    current: Mutex<Timestamp>,
    step: Duration,
}

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        Self::with_step(start, Duration::milliseconds(1))
    }

    pub fn with_step(start: Timestamp, step: Duration) -> Self {
        ManualClock {
            current: Mutex::new(start),
            step,
        }
    }

    pub fn set(&self, t: Timestamp) {
        *self.current.lock().unwrap() = t;
    }

    pub fn advance(&self, by: Duration) {
        let mut cur = self.current.lock().unwrap();
        *cur += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        let mut cur = self.current.lock().unwrap();
        let t = *cur;
        *cur += self.step;
        t
    }
}
