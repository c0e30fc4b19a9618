use std::sync::atomic::{AtomicI64, Ordering};
use std::time::Duration;

use chrono::{DateTime, TimeDelta, Utc};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Simulation clock. Time only moves when the owner advances it.
#[derive(Debug)]
pub struct VirtualClock {
    start: DateTime<Utc>,
    offset_us: AtomicI64,
}

impl VirtualClock {
    pub fn starting_at(start: DateTime<Utc>) -> Self {
        Self {
            start,
            offset_us: AtomicI64::new(0),
        }
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn elapsed(&self) -> Duration {
        Duration::from_micros(self.offset_us.load(Ordering::Acquire).max(0) as u64)
    }

    pub fn advance_by(&self, d: Duration) {
        self.offset_us.fetch_add(d.as_micros() as i64, Ordering::AcqRel);
    }

    /// Moves the clock forward to `t`. Never moves backwards.
    pub fn advance_to(&self, t: DateTime<Utc>) {
        let target = (t - self.start).num_microseconds().unwrap_or(i64::MAX);
        self.offset_us.fetch_max(target, Ordering::AcqRel);
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> DateTime<Utc> {
        self.start + TimeDelta::microseconds(self.offset_us.load(Ordering::Acquire))
    }
}
