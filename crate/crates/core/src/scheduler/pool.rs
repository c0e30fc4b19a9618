use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use chrono::{DateTime, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::clock::{Clock, SystemClock, VirtualClock};
use super::queue::TaskQueue;
use super::{IndexTask, Outcome, SchedulerError, TaskId, TaskState};
use crate::ingest::{Lane, SeriesDescriptor};

/// Result of running one task through the indexing pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessOutcome {
    pub result: Result<(), String>,
    /// How long the work occupies a worker. Drives the virtual clock; in
    /// real mode the measured wall time is used instead.
    pub service_time: Duration,
}

pub trait TaskPipeline: Send + Sync {
    fn process(&self, task: &IndexTask) -> ProcessOutcome;
}

impl<F> TaskPipeline for F
where
    F: Fn(&IndexTask) -> ProcessOutcome + Send + Sync,
{
    fn process(&self, task: &IndexTask) -> ProcessOutcome {
        self(task)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    Real,
    /// Discrete-event simulation starting at the given instant. Runs single
    /// threaded and is fully deterministic for a deterministic pipeline.
    Virtual { start: DateTime<Utc> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrainMode {
    /// Return once nothing is queued, delayed or running.
    #[default]
    UntilEmpty,
    /// Keep polling for work until stopped or the horizon passes.
    UntilStopped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMode {
    /// Finish and commit in-flight tasks, take no new ones.
    Graceful,
    /// Return in-flight tasks to the queue with their attempt refunded.
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolConfig {
    pub worker_count: usize,
    pub clock: ClockMode,
    /// Stop after this much (real or virtual) time. In-flight tasks that
    /// would finish later are returned to the queue.
    pub horizon: Option<Duration>,
    pub drain: DrainMode,
    /// Real mode only: how long an idle worker sleeps between polls.
    pub idle_poll: Duration,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self {
            worker_count: 8,
            clock: ClockMode::Real,
            horizon: None,
            drain: DrainMode::UntilEmpty,
            idle_poll: Duration::from_millis(50),
        }
    }
}

impl PoolConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        if self.worker_count == 0 {
            return Err(SchedulerError::ConfigInvalid("worker_count must be at least 1".into()));
        }
        if self.drain == DrainMode::UntilStopped && self.horizon.is_none() && matches!(self.clock, ClockMode::Virtual { .. }) {
            return Err(SchedulerError::ConfigInvalid(
                "a virtual-clock pool that drains until stopped needs a horizon".into(),
            ));
        }
        Ok(())
    }
}

/// Shared handle for stopping a running pool and reading live counters.
#[derive(Debug, Default)]
pub struct PoolControl {
    stop: Mutex<Option<StopMode>>,
    in_flight: AtomicUsize,
    succeeded: AtomicU64,
    failed_attempts: AtomicU64,
}

impl PoolControl {
    pub fn new() -> Self {
        Self::default()
    }

    /// Requests a stop. An immediate request overrides a graceful one.
    pub fn stop(&self, mode: StopMode) {
        let mut stop = self.stop.lock().unwrap_or_else(|e| e.into_inner());
        if *stop != Some(StopMode::Immediate) {
            *stop = Some(mode);
        }
    }

    pub fn stop_requested(&self) -> Option<StopMode> {
        *self.stop.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight.load(Ordering::Acquire)
    }

    pub fn succeeded(&self) -> u64 {
        self.succeeded.load(Ordering::Acquire)
    }

    pub fn failed_attempts(&self) -> u64 {
        self.failed_attempts.load(Ordering::Acquire)
    }

    fn count(&self, task: &IndexTask) {
        if task.state == TaskState::Done {
            self.succeeded.fetch_add(1, Ordering::AcqRel);
        } else {
            self.failed_attempts.fetch_add(1, Ordering::AcqRel);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThroughputReport {
    pub worker_count: usize,
    pub elapsed_seconds: f64,
    pub succeeded: u64,
    pub failed_attempts: u64,
    pub dead: u64,
    /// In-flight tasks returned to the queue at the horizon or on an
    /// immediate stop.
    pub abandoned: u64,
    pub busy_seconds: f64,
    pub daily_dispatched: u64,
    pub legacy_dispatched: u64,
}

impl ThroughputReport {
    /// Successfully indexed series per hour of elapsed time.
    pub fn tasks_per_hour(&self) -> f64 {
        if self.elapsed_seconds <= 0.0 {
            return 0.0;
        }
        self.succeeded as f64 * 3600.0 / self.elapsed_seconds
    }

    pub fn utilization(&self) -> f64 {
        let capacity = self.elapsed_seconds * self.worker_count as f64;
        if capacity <= 0.0 {
            return 0.0;
        }
        self.busy_seconds / capacity
    }

    fn record(&mut self, task: &IndexTask) {
        match task.state {
            TaskState::Done => self.succeeded += 1,
            TaskState::Dead => {
                self.failed_attempts += 1;
                self.dead += 1;
            }
            _ => self.failed_attempts += 1,
        }
    }

    fn dispatched(&mut self, lane: Lane) {
        match lane {
            Lane::Daily => self.daily_dispatched += 1,
            Lane::Legacy => self.legacy_dispatched += 1,
        }
    }
}

/// A series that shows up while a simulated pool is running.
#[derive(Debug, Clone, PartialEq)]
pub struct Arrival {
    /// Offset from the simulation start.
    pub at: Duration,
    pub series: SeriesDescriptor,
    pub lane: Lane,
}

fn to_outcome(result: Result<(), String>) -> Outcome {
    match result {
        Ok(()) => Outcome::Success,
        Err(reason) => Outcome::Failure(reason),
    }
}

/// Runs the worker pool against `queue` until it drains, is stopped, or the
/// horizon passes.
pub fn run_pool(
    queue: &TaskQueue,
    pipeline: &dyn TaskPipeline,
    config: &PoolConfig,
    control: &PoolControl,
) -> Result<ThroughputReport, SchedulerError> {
    run_pool_with_arrivals(queue, pipeline, config, control, Vec::new())
}

/// [`run_pool`] with scheduled arrivals. Arrivals are only supported with
/// the virtual clock; in real mode callers enqueue directly.
pub fn run_pool_with_arrivals(
    queue: &TaskQueue,
    pipeline: &dyn TaskPipeline,
    config: &PoolConfig,
    control: &PoolControl,
    arrivals: Vec<Arrival>,
) -> Result<ThroughputReport, SchedulerError> {
    config.validate()?;
    match config.clock {
        ClockMode::Real if !arrivals.is_empty() => Err(SchedulerError::ConfigInvalid(
            "scheduled arrivals need the virtual clock".into(),
        )),
        ClockMode::Real => Ok(run_real(queue, pipeline, config, control)),
        ClockMode::Virtual { start } => Ok(run_virtual(queue, pipeline, config, control, start, arrivals)),
    }
}

fn run_real(queue: &TaskQueue, pipeline: &dyn TaskPipeline, config: &PoolConfig, control: &PoolControl) -> ThroughputReport {
    let clock = SystemClock;
    let started = Instant::now();
    let report = Mutex::new(ThroughputReport {
        worker_count: config.worker_count,
        elapsed_seconds: 0.0,
        succeeded: 0,
        failed_attempts: 0,
        dead: 0,
        abandoned: 0,
        busy_seconds: 0.0,
        daily_dispatched: 0,
        legacy_dispatched: 0,
    });
    let past_horizon = || config.horizon.is_some_and(|h| started.elapsed() >= h);

    std::thread::scope(|scope| {
        for worker in 0..config.worker_count {
            let report = &report;
            let past_horizon = &past_horizon;
            scope.spawn(move || loop {
                if control.stop_requested().is_some() || past_horizon() {
                    break;
                }
                let Some(task) = queue.next_task(clock.now()) else {
                    if config.drain == DrainMode::UntilEmpty && queue.is_idle() {
                        queue.notify_all();
                        break;
                    }
                    let mut wait = config.idle_poll;
                    if let Some(at) = queue.next_wakeup() {
                        let until = (at - clock.now()).to_std().unwrap_or(Duration::ZERO);
                        wait = wait.min(until.max(Duration::from_millis(1)));
                    }
                    queue.wait_for_work(wait);
                    continue;
                };
                control.in_flight.fetch_add(1, Ordering::AcqRel);
                tracing::debug!(worker, task = %task.task_id, series = %task.series.series_uid, "dispatch");
                let t = Instant::now();
                let outcome = pipeline.process(&task);
                let busy = t.elapsed();
                control.in_flight.fetch_sub(1, Ordering::AcqRel);
                let mut report = report.lock().unwrap_or_else(|e| e.into_inner());
                report.dispatched(task.lane);
                report.busy_seconds += busy.as_secs_f64();
                if control.stop_requested() == Some(StopMode::Immediate) {
                    if queue.abandon(task.task_id).is_ok() {
                        report.abandoned += 1;
                    }
                    break;
                }
                match queue.complete(task.task_id, to_outcome(outcome.result), clock.now()) {
                    Ok(after) => {
                        control.count(&after);
                        report.record(&after);
                    }
                    Err(e) => tracing::warn!(task = %task.task_id, error = %e, "complete failed"),
                }
            });
        }
    });

    let mut report = report.into_inner().unwrap_or_else(|e| e.into_inner());
    report.elapsed_seconds = started.elapsed().as_secs_f64();
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    // arrivals at time t are visible to workers freed at the same instant
    Arrival,
    Finish,
}

fn run_virtual(
    queue: &TaskQueue,
    pipeline: &dyn TaskPipeline,
    config: &PoolConfig,
    control: &PoolControl,
    start: DateTime<Utc>,
    mut arrivals: Vec<Arrival>,
) -> ThroughputReport {
    let clock = VirtualClock::starting_at(start);
    let horizon_at = config.horizon.map(|h| start + TimeDelta::from_std(h).unwrap_or(TimeDelta::MAX));
    let mut report = ThroughputReport {
        worker_count: config.worker_count,
        elapsed_seconds: 0.0,
        succeeded: 0,
        failed_attempts: 0,
        dead: 0,
        abandoned: 0,
        busy_seconds: 0.0,
        daily_dispatched: 0,
        legacy_dispatched: 0,
    };

    arrivals.sort_by_key(|a| a.at);
    let mut arrivals = arrivals.into_iter().peekable();
    let mut events: BinaryHeap<Reverse<(DateTime<Utc>, EventKind, u64)>> = BinaryHeap::new();
    let mut in_flight: BTreeMap<u64, (usize, TaskId, ProcessOutcome)> = BTreeMap::new();
    // lowest index first so the schedule is reproducible
    let mut idle: Vec<usize> = (0..config.worker_count).rev().collect();
    let mut seq = 0u64;

    let schedule_arrival = |events: &mut BinaryHeap<_>, seq: &mut u64, a: &Arrival| {
        *seq += 1;
        events.push(Reverse((start + TimeDelta::from_std(a.at).unwrap_or(TimeDelta::MAX), EventKind::Arrival, *seq)));
        *seq
    };
    let mut pending_arrivals: BTreeMap<u64, Arrival> = BTreeMap::new();
    if let Some(a) = arrivals.next() {
        let id = schedule_arrival(&mut events, &mut seq, &a);
        pending_arrivals.insert(id, a);
    }

    loop {
        let stop = control.stop_requested();
        if stop == Some(StopMode::Immediate) {
            break;
        }
        let now = clock.now();
        if stop.is_none() {
            while let Some(&worker) = idle.last() {
                let Some(task) = queue.next_task(now) else { break };
                idle.pop();
                report.dispatched(task.lane);
                let outcome = pipeline.process(&task);
                seq += 1;
                let finish = now + TimeDelta::from_std(outcome.service_time).unwrap_or(TimeDelta::MAX);
                events.push(Reverse((finish, EventKind::Finish, seq)));
                in_flight.insert(seq, (worker, task.task_id, outcome));
                control.in_flight.fetch_add(1, Ordering::AcqRel);
            }
        }

        let next_event = events.peek().map(|Reverse(e)| *e);
        let wakeup = if stop.is_none() && !idle.is_empty() { queue.next_wakeup() } else { None };
        let next_time = match (next_event.map(|e| e.0), wakeup) {
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
            (None, None) => {
                if config.drain == DrainMode::UntilStopped {
                    if let Some(h) = horizon_at {
                        clock.advance_to(h);
                    }
                }
                break;
            }
        };
        if horizon_at.is_some_and(|h| next_time > h) {
            clock.advance_to(horizon_at.expect("checked"));
            break;
        }
        clock.advance_to(next_time);
        if wakeup == Some(next_time) && next_event.is_none_or(|e| e.0 > next_time) {
            continue;
        }

        let Reverse((at, kind, id)) = events.pop().expect("peeked");
        match kind {
            EventKind::Arrival => {
                let a = pending_arrivals.remove(&id).expect("scheduled arrival");
                if let Err(e) = queue.enqueue(a.series, a.lane, at) {
                    tracing::debug!(error = %e, "arrival rejected");
                }
                if let Some(next) = arrivals.next() {
                    let id = schedule_arrival(&mut events, &mut seq, &next);
                    pending_arrivals.insert(id, next);
                }
            }
            EventKind::Finish => {
                let (worker, task_id, outcome) = in_flight.remove(&id).expect("in-flight task");
                control.in_flight.fetch_sub(1, Ordering::AcqRel);
                report.busy_seconds += outcome.service_time.as_secs_f64();
                match queue.complete(task_id, to_outcome(outcome.result), at) {
                    Ok(after) => {
                        control.count(&after);
                        report.record(&after);
                    }
                    Err(e) => tracing::warn!(task = %task_id, error = %e, "complete failed"),
                }
                idle.push(worker);
                idle.sort_unstable_by(|a, b| b.cmp(a));
            }
        }
    }

    let end = clock.now();
    for (_, (_, task_id, outcome)) in in_flight {
        control.in_flight.fetch_sub(1, Ordering::AcqRel);
        // only the part of the run inside the window counts as busy time
        let started = queue.get(task_id).and_then(|t| t.started_at).unwrap_or(end);
        let inside = (end - started).to_std().unwrap_or(Duration::ZERO).min(outcome.service_time);
        report.busy_seconds += inside.as_secs_f64();
        if queue.abandon(task_id).is_ok() {
            report.abandoned += 1;
        }
    }
    report.elapsed_seconds = clock.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::AtomicU32;

    use chrono::{NaiveDate, TimeZone};

    use super::*;
    use crate::ingest::Modality;
    use crate::scheduler::QueueConfig;

    fn start() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 0, 0, 0).unwrap()
    }

    fn series(i: usize) -> SeriesDescriptor {
        SeriesDescriptor {
            series_uid: format!("1.2.{i}"),
            study_uid: format!("1.3.{i}"),
            patient_pseudonym: format!("p{}", i % 7),
            acquisition_date: NaiveDate::from_ymd_opt(2000, 1, 1).unwrap() + TimeDelta::days(i as i64),
            modality: Modality::Ct,
            body_region_hint: None,
            source: Lane::Legacy,
        }
    }

    fn fixed(secs: u64) -> impl Fn(&IndexTask) -> ProcessOutcome + Send + Sync {
        move |_: &IndexTask| ProcessOutcome {
            result: Ok(()),
            service_time: Duration::from_secs(secs),
        }
    }

    #[test]
    fn virtual_throughput_is_exact_for_constant_service() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        q.enqueue_legacy((0..6000).map(series).collect(), start());
        let config = PoolConfig {
            worker_count: 8,
            clock: ClockMode::Virtual { start: start() },
            horizon: Some(Duration::from_secs(24 * 3600)),
            ..Default::default()
        };
        let report = run_pool(&q, &fixed(144), &config, &PoolControl::new()).unwrap();
        assert_eq!(report.succeeded, 4800);
        assert!((report.tasks_per_hour() - 200.0).abs() < 1e-9);
        assert!((report.utilization() - 1.0).abs() < 1e-9);
        assert_eq!(q.depths().queued(), 1200);
    }

    #[test]
    fn horizon_abandons_in_flight() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        q.enqueue_legacy((0..10).map(series).collect(), start());
        let config = PoolConfig {
            worker_count: 2,
            clock: ClockMode::Virtual { start: start() },
            horizon: Some(Duration::from_secs(150)),
            ..Default::default()
        };
        let report = run_pool(&q, &fixed(100), &config, &PoolControl::new()).unwrap();
        assert_eq!((report.succeeded, report.abandoned), (2, 2));
        let d = q.depths();
        assert_eq!((d.running, d.queued(), d.done), (0, 8, 2));
        assert!((report.busy_seconds - 300.0).abs() < 1e-9);
    }

    #[test]
    fn drains_with_retries() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        q.enqueue_legacy((0..20).map(series).collect(), start());
        let calls = AtomicU32::new(0);
        let flaky = |t: &IndexTask| ProcessOutcome {
            result: if calls.fetch_add(1, Ordering::Relaxed).is_multiple_of(3) && t.attempts < 3 {
                Err("transient".into())
            } else {
                Ok(())
            },
            service_time: Duration::from_secs(10),
        };
        let config = PoolConfig {
            worker_count: 3,
            clock: ClockMode::Virtual { start: start() },
            ..Default::default()
        };
        let report = run_pool(&q, &flaky, &config, &PoolControl::new()).unwrap();
        assert_eq!(report.succeeded, 20);
        assert!(report.failed_attempts > 0);
        assert!(q.is_idle());
    }

    #[test]
    fn permanent_failure_goes_dead_after_max_attempts() {
        let broken = |_: &IndexTask| ProcessOutcome {
            result: Err("segmentation crashed".into()),
            service_time: Duration::ZERO,
        };
        for clock in [ClockMode::Real, ClockMode::Virtual { start: start() }] {
            let q = TaskQueue::new(QueueConfig::default()).unwrap();
            q.enqueue_legacy((0..12).map(series).collect(), start());
            let config = PoolConfig {
                worker_count: 4,
                clock,
                ..Default::default()
            };
            let report = run_pool(&q, &broken, &config, &PoolControl::new()).unwrap();
            assert_eq!((report.dead, report.failed_attempts), (12, 36));
            let d = q.depths();
            assert_eq!((d.dead, d.done, d.queued(), d.failed_attempts), (12, 0, 0, 36));
            for t in q.tasks() {
                assert_eq!(t.state, TaskState::Dead);
                assert_eq!(t.attempts, 3);
                assert_eq!(t.last_error.as_deref(), Some("segmentation crashed"));
            }
        }
    }

    #[test]
    fn arrivals_preempt_backlog_at_dispatch() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        q.enqueue_legacy((0..4).map(series).collect(), start());
        q.enable_trace();
        let mut daily = series(99);
        daily.source = Lane::Daily;
        let arrivals = vec![Arrival {
            at: Duration::from_secs(5),
            series: daily,
            lane: Lane::Daily,
        }];
        let config = PoolConfig {
            worker_count: 1,
            clock: ClockMode::Virtual { start: start() },
            ..Default::default()
        };
        run_pool_with_arrivals(&q, &fixed(10), &config, &PoolControl::new(), arrivals).unwrap();
        let order: Vec<String> = q
            .take_trace()
            .into_iter()
            .filter_map(|e| match e {
                super::super::TraceEvent::Dequeued { series_uid, .. } => Some(series_uid),
                _ => None,
            })
            .collect();
        assert_eq!(order, ["1.2.0", "1.2.99", "1.2.1", "1.2.2", "1.2.3"]);
    }

    #[test]
    fn real_pool_drains() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        q.enqueue_legacy((0..50).map(series).collect(), start());
        let work = |_: &IndexTask| ProcessOutcome {
            result: Ok(()),
            service_time: Duration::ZERO,
        };
        let config = PoolConfig {
            worker_count: 4,
            ..Default::default()
        };
        let report = run_pool(&q, &work, &config, &PoolControl::new()).unwrap();
        assert_eq!(report.succeeded, 50);
        assert_eq!(q.depths().done, 50);
    }

    #[test]
    fn stop_before_start_does_nothing() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        q.enqueue_legacy((0..5).map(series).collect(), start());
        let control = PoolControl::new();
        control.stop(StopMode::Graceful);
        for clock in [ClockMode::Real, ClockMode::Virtual { start: start() }] {
            let config = PoolConfig {
                worker_count: 2,
                clock,
                ..Default::default()
            };
            let report = run_pool(&q, &fixed(1), &config, &control).unwrap();
            assert_eq!(report.succeeded, 0);
        }
        assert_eq!(q.depths().queued(), 5);
    }

    #[test]
    fn invalid_configs() {
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        let bad = PoolConfig {
            worker_count: 0,
            ..Default::default()
        };
        assert!(run_pool(&q, &fixed(1), &bad, &PoolControl::new()).is_err());
        let unbounded = PoolConfig {
            clock: ClockMode::Virtual { start: start() },
            drain: DrainMode::UntilStopped,
            ..Default::default()
        };
        assert!(run_pool(&q, &fixed(1), &unbounded, &PoolControl::new()).is_err());
    }
}
