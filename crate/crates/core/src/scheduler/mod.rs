//! Two-lane priority task queue and worker pool.
//!
//! Daily arrivals are always dequeued before legacy backfill work; the
//! legacy lane is ordered by acquisition date. Priority applies at dequeue
//! time only, a running legacy task is never interrupted.

mod clock;
mod pool;
mod queue;
mod transport;

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Lane, SeriesDescriptor};

pub use clock::{Clock, SystemClock, VirtualClock};
pub use pool::{run_pool, run_pool_with_arrivals, Arrival, ClockMode, DrainMode, PoolConfig, PoolControl, ProcessOutcome, StopMode, TaskPipeline, ThroughputReport};
pub use queue::{LegacyEnqueueReport, QueueDepths, TaskQueue, TraceEvent};
pub use transport::{pump_transport, InProcessTransport, PumpReport, QueueTransport, TaskMessage, TransportError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("series {series_uid} has modality {modality}; only CT is indexed")]
    RejectedModality { series_uid: String, modality: String },
    #[error("series {series_uid} already has an active task {task_id}")]
    DuplicateActiveTask { series_uid: String, task_id: TaskId },
    #[error("unknown task {0}")]
    UnknownTask(TaskId),
    #[error("task {task_id} is {state}, expected {expected}")]
    InvalidState {
        task_id: TaskId,
        state: TaskState,
        expected: TaskState,
    },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("queue snapshot: {0}")]
    Snapshot(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u64);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task-{}", self.0)
    }
}

impl FromStr for TaskId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix("task-").unwrap_or(s);
        digits
            .parse()
            .map(TaskId)
            .map_err(|_| format!("invalid task id {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskState {
    Queued,
    Running,
    Done,
    Failed,
    Dead,
}

impl TaskState {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Done | TaskState::Dead)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskState::Queued => "queued",
            TaskState::Running => "running",
            TaskState::Done => "done",
            TaskState::Failed => "failed",
            TaskState::Dead => "dead",
        }
    }
}

impl fmt::Display for TaskState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexTask {
    pub task_id: TaskId,
    pub series: SeriesDescriptor,
    pub lane: Lane,
    pub enqueued_at: DateTime<Utc>,
    pub state: TaskState,
    pub attempts: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub finished_at: Option<DateTime<Utc>>,
    /// Earliest time a retried task may run again.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub not_before: Option<DateTime<Utc>>,
}

impl IndexTask {
    pub fn acquisition_date(&self) -> NaiveDate {
        self.series.acquisition_date
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Success,
    Failure(String),
}

/// Direction of the legacy backfill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Chronology {
    #[default]
    OldestFirst,
    NewestFirst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before retry `n` is `backoff[min(n, len) - 1]`; empty means
    /// immediate re-queue.
    #[serde(default)]
    pub backoff: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            backoff: Vec::new(),
        }
    }
}

impl RetryPolicy {
    pub fn delay_after(&self, attempts: u32) -> Duration {
        if self.backoff.is_empty() || attempts == 0 {
            return Duration::ZERO;
        }
        let idx = (attempts as usize).min(self.backoff.len()) - 1;
        self.backoff[idx]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct QueueConfig {
    pub retry: RetryPolicy,
    pub legacy_order: Chronology,
}

impl QueueConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.retry.max_attempts == 0 {
            return Err(SchedulerError::ConfigInvalid("max_attempts must be at least 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_id_text() {
        assert_eq!(TaskId(42).to_string(), "task-42");
        assert_eq!("task-42".parse::<TaskId>().unwrap(), TaskId(42));
        assert_eq!("42".parse::<TaskId>().unwrap(), TaskId(42));
        assert!("task-x".parse::<TaskId>().is_err());
    }

    #[test]
    fn backoff_schedule() {
        let p = RetryPolicy {
            max_attempts: 5,
            backoff: vec![Duration::from_secs(10), Duration::from_secs(60)],
        };
        assert_eq!(p.delay_after(1), Duration::from_secs(10));
        assert_eq!(p.delay_after(2), Duration::from_secs(60));
        assert_eq!(p.delay_after(4), Duration::from_secs(60));
        assert_eq!(RetryPolicy::default().delay_after(2), Duration::ZERO);
    }
}
