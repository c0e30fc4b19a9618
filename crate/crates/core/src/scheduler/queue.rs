use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::Duration;

use chrono::{DateTime, Datelike, NaiveDate, TimeDelta, Utc};
use serde::{Deserialize, Serialize};

use super::{IndexTask, Outcome, QueueConfig, SchedulerError, TaskId, TaskState};
use crate::ingest::{Lane, SeriesDescriptor};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
enum OrderKey {
    Daily { enqueued_at: DateTime<Utc>, seq: u64 },
    Legacy { date_key: i32, series_uid: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Slot {
    task: IndexTask,
    key: OrderKey,
}

/// One linearized queue operation, recorded when tracing is enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TraceEvent {
    /// The task became eligible for dequeue (fresh enqueue, retry, or
    /// abandoned run).
    Enqueued {
        task_id: TaskId,
        lane: Lane,
        acquisition_date: NaiveDate,
        series_uid: String,
        retry: bool,
    },
    Dequeued {
        task_id: TaskId,
        lane: Lane,
        acquisition_date: NaiveDate,
        series_uid: String,
    },
    Finished { task_id: TaskId, state: TaskState },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueDepths {
    pub daily_queued: usize,
    pub legacy_queued: usize,
    /// Re-queued tasks waiting out their retry backoff.
    pub delayed: usize,
    pub running: usize,
    pub done: usize,
    pub dead: usize,
    pub total_enqueued: usize,
    pub failed_attempts: u64,
}

impl QueueDepths {
    pub fn queued(&self) -> usize {
        self.daily_queued + self.legacy_queued + self.delayed
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LegacyEnqueueReport {
    pub enqueued: usize,
    pub rejections: Vec<(String, SchedulerError)>,
}

#[derive(Debug, Default)]
struct State {
    config: QueueConfig,
    next_id: u64,
    next_seq: u64,
    slots: BTreeMap<TaskId, Slot>,
    daily: BTreeSet<(OrderKey, TaskId)>,
    legacy: BTreeSet<(OrderKey, TaskId)>,
    delayed: BTreeSet<(DateTime<Utc>, TaskId)>,
    active: HashMap<String, TaskId>,
    latest: HashMap<String, TaskId>,
    running: usize,
    done: usize,
    dead: usize,
    failed_attempts: u64,
    trace: Option<Vec<TraceEvent>>,
}

impl State {
    fn record(&mut self, event: impl FnOnce() -> TraceEvent) {
        if let Some(trace) = self.trace.as_mut() {
            trace.push(event());
        }
    }

    fn legacy_key(&self, series: &SeriesDescriptor) -> OrderKey {
        let days = series.acquisition_date.num_days_from_ce();
        OrderKey::Legacy {
            date_key: match self.config.legacy_order {
                super::Chronology::OldestFirst => days,
                super::Chronology::NewestFirst => -days,
            },
            series_uid: series.series_uid.clone(),
        }
    }

    fn make_eligible(&mut self, id: TaskId, retry: bool) {
        let slot = &self.slots[&id];
        let entry = (slot.key.clone(), id);
        let lane = slot.task.lane;
        let acquisition_date = slot.task.series.acquisition_date;
        let series_uid = slot.task.series.series_uid.clone();
        match lane {
            Lane::Daily => self.daily.insert(entry),
            Lane::Legacy => self.legacy.insert(entry),
        };
        self.record(|| TraceEvent::Enqueued {
            task_id: id,
            lane,
            acquisition_date,
            series_uid,
            retry,
        });
    }

    fn promote_delayed(&mut self, now: DateTime<Utc>) {
        while let Some(&(at, id)) = self.delayed.first() {
            if at > now {
                break;
            }
            self.delayed.pop_first();
            if let Some(slot) = self.slots.get_mut(&id) {
                slot.task.not_before = None;
            }
            self.make_eligible(id, true);
        }
    }

    fn enqueue(&mut self, series: SeriesDescriptor, lane: Lane, now: DateTime<Utc>) -> Result<IndexTask, SchedulerError> {
        if !series.modality.is_ct() {
            return Err(SchedulerError::RejectedModality {
                series_uid: series.series_uid,
                modality: series.modality.to_string(),
            });
        }
        if let Some(&task_id) = self.active.get(&series.series_uid) {
            return Err(SchedulerError::DuplicateActiveTask {
                series_uid: series.series_uid,
                task_id,
            });
        }
        self.next_id += 1;
        let task_id = TaskId(self.next_id);
        let key = match lane {
            Lane::Daily => {
                self.next_seq += 1;
                OrderKey::Daily {
                    enqueued_at: now,
                    seq: self.next_seq,
                }
            }
            Lane::Legacy => self.legacy_key(&series),
        };
        let task = IndexTask {
            task_id,
            series,
            lane,
            enqueued_at: now,
            state: TaskState::Queued,
            attempts: 0,
            last_error: None,
            started_at: None,
            finished_at: None,
            not_before: None,
        };
        self.active.insert(task.series.series_uid.clone(), task_id);
        self.latest.insert(task.series.series_uid.clone(), task_id);
        self.slots.insert(task_id, Slot { task: task.clone(), key });
        self.make_eligible(task_id, false);
        Ok(task)
    }

    fn depths(&self) -> QueueDepths {
        QueueDepths {
            daily_queued: self.daily.len(),
            legacy_queued: self.legacy.len(),
            delayed: self.delayed.len(),
            running: self.running,
            done: self.done,
            dead: self.dead,
            total_enqueued: self.slots.len(),
            failed_attempts: self.failed_attempts,
        }
    }

    fn rebuild(config: QueueConfig, next_id: u64, next_seq: u64, slots: Vec<Slot>) -> Self {
        let mut state = State {
            config,
            next_id,
            next_seq,
            ..State::default()
        };
        for mut slot in slots {
            let id = slot.task.task_id;
            let uid = slot.task.series.series_uid.clone();
            if slot.task.state == TaskState::Running || slot.task.state == TaskState::Failed {
                // interrupted run: hand the attempt back
                slot.task.state = TaskState::Queued;
                slot.task.attempts = slot.task.attempts.saturating_sub(1);
                slot.task.started_at = None;
            }
            let state_now = slot.task.state;
            let not_before = slot.task.not_before;
            state.latest.insert(uid.clone(), id);
            state.slots.insert(id, slot);
            match state_now {
                TaskState::Queued => {
                    state.active.insert(uid, id);
                    match not_before {
                        Some(at) => {
                            state.delayed.insert((at, id));
                        }
                        None => state.make_eligible(id, false),
                    }
                }
                TaskState::Done => state.done += 1,
                TaskState::Dead => state.dead += 1,
                TaskState::Running | TaskState::Failed => unreachable!(),
            }
            state.failed_attempts += u64::from(state.slots[&id].task.attempts)
                - u64::from(state_now == TaskState::Done && state.slots[&id].task.attempts > 0);
        }
        state
    }
}

#[derive(Serialize, Deserialize)]
struct QueueSnapshot {
    config: QueueConfig,
    next_id: u64,
    next_seq: u64,
    tasks: Vec<Slot>,
}

/// Shared two-lane queue. All operations take one lock, so every dequeue
/// observes a consistent view of both lanes.
#[derive(Debug)]
pub struct TaskQueue {
    state: Mutex<State>,
    work: Condvar,
}

impl TaskQueue {
    pub fn new(config: QueueConfig) -> Result<Self, SchedulerError> {
        config.validate()?;
        Ok(Self {
            state: Mutex::new(State {
                config,
                ..State::default()
            }),
            work: Condvar::new(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn config(&self) -> QueueConfig {
        self.lock().config.clone()
    }

    /// Starts recording [`TraceEvent`]s.
    pub fn enable_trace(&self) {
        self.lock().trace.get_or_insert_with(Vec::new);
    }

    pub fn take_trace(&self) -> Vec<TraceEvent> {
        self.lock().trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn enqueue(&self, series: SeriesDescriptor, lane: Lane, now: DateTime<Utc>) -> Result<IndexTask, SchedulerError> {
        let task = self.lock().enqueue(series, lane, now)?;
        self.work.notify_one();
        Ok(task)
    }

    pub fn enqueue_daily(&self, series: SeriesDescriptor, now: DateTime<Utc>) -> Result<IndexTask, SchedulerError> {
        self.enqueue(series, Lane::Daily, now)
    }

    /// Queues a backfill batch. Invalid items are reported, the rest are
    /// queued regardless of batch order.
    pub fn enqueue_legacy(&self, batch: Vec<SeriesDescriptor>, now: DateTime<Utc>) -> LegacyEnqueueReport {
        let mut report = LegacyEnqueueReport::default();
        {
            let mut state = self.lock();
            for series in batch {
                let uid = series.series_uid.clone();
                match state.enqueue(series, Lane::Legacy, now) {
                    Ok(_) => report.enqueued += 1,
                    Err(e) => report.rejections.push((uid, e)),
                }
            }
        }
        self.work.notify_all();
        report
    }

    /// Dequeues the next eligible task and marks it running: the oldest
    /// daily task if any, otherwise the first legacy task in backfill order.
    pub fn next_task(&self, now: DateTime<Utc>) -> Option<IndexTask> {
        let mut state = self.lock();
        state.promote_delayed(now);
        let (_, id) = state.daily.pop_first().or_else(|| state.legacy.pop_first())?;
        state.running += 1;
        let slot = state.slots.get_mut(&id).expect("queued task has a slot");
        slot.task.state = TaskState::Running;
        slot.task.attempts += 1;
        slot.task.started_at = Some(now);
        let task = slot.task.clone();
        state.record(|| TraceEvent::Dequeued {
            task_id: id,
            lane: task.lane,
            acquisition_date: task.series.acquisition_date,
            series_uid: task.series.series_uid.clone(),
        });
        Some(task)
    }

    /// Records the outcome of a running task. Failures are re-queued with
    /// their original ordering key until `max_attempts` is reached.
    pub fn complete(&self, task_id: TaskId, outcome: Outcome, now: DateTime<Utc>) -> Result<IndexTask, SchedulerError> {
        let mut state = self.lock();
        let retry = state.config.retry.clone();
        let slot = state.slots.get_mut(&task_id).ok_or(SchedulerError::UnknownTask(task_id))?;
        if slot.task.state != TaskState::Running {
            return Err(SchedulerError::InvalidState {
                task_id,
                state: slot.task.state,
                expected: TaskState::Running,
            });
        }
        let uid = slot.task.series.series_uid.clone();
        let mut requeue = None;
        match outcome {
            Outcome::Success => {
                slot.task.state = TaskState::Done;
                slot.task.finished_at = Some(now);
            }
            Outcome::Failure(reason) => {
                slot.task.state = TaskState::Failed;
                slot.task.last_error = Some(reason);
                if slot.task.attempts < retry.max_attempts {
                    slot.task.state = TaskState::Queued;
                    slot.task.started_at = None;
                    let delay = retry.delay_after(slot.task.attempts);
                    if delay.is_zero() {
                        requeue = Some(None);
                    } else {
                        let at = now + TimeDelta::from_std(delay).unwrap_or(TimeDelta::MAX);
                        slot.task.not_before = Some(at);
                        requeue = Some(Some(at));
                    }
                } else {
                    slot.task.state = TaskState::Dead;
                    slot.task.finished_at = Some(now);
                }
            }
        }
        let task = slot.task.clone();
        state.running -= 1;
        if task.last_error.is_some() && task.state != TaskState::Done {
            state.failed_attempts += 1;
        }
        match requeue {
            Some(None) => state.make_eligible(task_id, true),
            Some(Some(at)) => {
                state.delayed.insert((at, task_id));
            }
            None => {
                state.active.remove(&uid);
                if task.state == TaskState::Done {
                    state.done += 1;
                } else {
                    state.dead += 1;
                }
                state.record(|| TraceEvent::Finished {
                    task_id,
                    state: task.state,
                });
            }
        }
        drop(state);
        self.work.notify_all();
        Ok(task)
    }

    /// Returns a running task to the queue without consuming an attempt.
    pub fn abandon(&self, task_id: TaskId) -> Result<(), SchedulerError> {
        let mut state = self.lock();
        let slot = state.slots.get_mut(&task_id).ok_or(SchedulerError::UnknownTask(task_id))?;
        if slot.task.state != TaskState::Running {
            return Err(SchedulerError::InvalidState {
                task_id,
                state: slot.task.state,
                expected: TaskState::Running,
            });
        }
        slot.task.state = TaskState::Queued;
        slot.task.attempts -= 1;
        slot.task.started_at = None;
        state.running -= 1;
        state.make_eligible(task_id, true);
        drop(state);
        self.work.notify_all();
        Ok(())
    }

    pub fn get(&self, task_id: TaskId) -> Option<IndexTask> {
        self.lock().slots.get(&task_id).map(|s| s.task.clone())
    }

    /// Most recent task created for a series.
    pub fn latest_for_series(&self, series_uid: &str) -> Option<IndexTask> {
        let state = self.lock();
        let id = state.latest.get(series_uid)?;
        state.slots.get(id).map(|s| s.task.clone())
    }

    /// All tasks ordered by id.
    pub fn tasks(&self) -> Vec<IndexTask> {
        self.lock().slots.values().map(|s| s.task.clone()).collect()
    }

    pub fn depths(&self) -> QueueDepths {
        self.lock().depths()
    }

    /// Nothing queued, delayed or running.
    pub fn is_idle(&self) -> bool {
        let state = self.lock();
        state.daily.is_empty() && state.legacy.is_empty() && state.delayed.is_empty() && state.running == 0
    }

    /// Earliest time a backoff-delayed task becomes eligible.
    pub fn next_wakeup(&self) -> Option<DateTime<Utc>> {
        self.lock().delayed.first().map(|&(at, _)| at)
    }

    pub fn has_eligible(&self, now: DateTime<Utc>) -> bool {
        let state = self.lock();
        !state.daily.is_empty() || !state.legacy.is_empty() || state.delayed.first().is_some_and(|&(at, _)| at <= now)
    }

    /// Blocks until the queue changes or `timeout` elapses.
    pub fn wait_for_work(&self, timeout: Duration) {
        let state = self.lock();
        let _ = self.work.wait_timeout(state, timeout);
    }

    pub fn notify_all(&self) {
        self.work.notify_all();
    }

    pub fn to_json(&self) -> Vec<u8> {
        let state = self.lock();
        let snapshot = QueueSnapshot {
            config: state.config.clone(),
            next_id: state.next_id,
            next_seq: state.next_seq,
            tasks: state.slots.values().cloned().collect(),
        };
        serde_json::to_vec_pretty(&snapshot).expect("queue snapshot serialize")
    }

    /// Restores a saved queue. Tasks that were running when the snapshot
    /// was taken are put back in the queue with their attempt refunded.
    pub fn from_json(bytes: &[u8]) -> Result<Self, SchedulerError> {
        let snapshot: QueueSnapshot =
            serde_json::from_slice(bytes).map_err(|e| SchedulerError::Snapshot(e.to_string()))?;
        snapshot.config.validate()?;
        let mut seen = std::collections::HashSet::new();
        for slot in &snapshot.tasks {
            if !seen.insert(slot.task.task_id) || slot.task.task_id.0 > snapshot.next_id {
                return Err(SchedulerError::Snapshot(format!("bad task id {}", slot.task.task_id)));
            }
        }
        Ok(Self {
            state: Mutex::new(State::rebuild(snapshot.config, snapshot.next_id, snapshot.next_seq, snapshot.tasks)),
            work: Condvar::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::ingest::Modality;
    use crate::scheduler::{Chronology, RetryPolicy};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 6, 0, 0).unwrap()
    }

    fn series(uid: &str, year: i32) -> SeriesDescriptor {
        SeriesDescriptor {
            series_uid: uid.into(),
            study_uid: format!("st-{uid}"),
            patient_pseudonym: "p".into(),
            acquisition_date: NaiveDate::from_ymd_opt(year, 6, 1).unwrap(),
            modality: Modality::Ct,
            body_region_hint: None,
            source: Lane::Legacy,
        }
    }

    fn queue() -> TaskQueue {
        TaskQueue::new(QueueConfig::default()).unwrap()
    }

    #[test]
    fn daily_enqueue() {
        let q = queue();
        let task = q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        assert_eq!(task.state, TaskState::Queued);
        assert_eq!(task.lane, Lane::Daily);
        assert_eq!(task.attempts, 0);
    }

    #[test]
    fn rejects_non_ct() {
        let q = queue();
        let mut s = series("m1", 2024);
        s.modality = Modality::Mr;
        assert!(matches!(
            q.enqueue_daily(s, t0()),
            Err(SchedulerError::RejectedModality { .. })
        ));
    }

    #[test]
    fn duplicate_active() {
        let q = queue();
        q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        assert!(matches!(
            q.enqueue_daily(series("d1", 2024), t0()),
            Err(SchedulerError::DuplicateActiveTask { .. })
        ));
        // allowed again once finished
        let t = q.next_task(t0()).unwrap();
        q.complete(t.task_id, Outcome::Success, t0()).unwrap();
        assert!(q.enqueue_daily(series("d1", 2024), t0()).is_ok());
    }

    #[test]
    fn legacy_is_chronological() {
        let q = queue();
        let report = q.enqueue_legacy(vec![series("a", 2019), series("b", 2003), series("c", 2011)], t0());
        assert_eq!(report.enqueued, 3);
        let years: Vec<i32> = std::iter::from_fn(|| q.next_task(t0()))
            .map(|t| t.acquisition_date().year())
            .collect();
        assert_eq!(years, [2003, 2011, 2019]);
    }

    #[test]
    fn legacy_newest_first() {
        let q = TaskQueue::new(QueueConfig {
            legacy_order: Chronology::NewestFirst,
            ..Default::default()
        })
        .unwrap();
        q.enqueue_legacy(vec![series("a", 2019), series("b", 2003), series("c", 2011)], t0());
        let years: Vec<i32> = std::iter::from_fn(|| q.next_task(t0()))
            .map(|t| t.acquisition_date().year())
            .collect();
        assert_eq!(years, [2019, 2011, 2003]);
    }

    #[test]
    fn legacy_ties_break_on_series_uid() {
        let q = queue();
        q.enqueue_legacy(vec![series("z", 2010), series("a", 2010)], t0());
        assert_eq!(q.next_task(t0()).unwrap().series.series_uid, "a");
    }

    #[test]
    fn empty_and_mixed_batches() {
        let q = queue();
        assert_eq!(q.enqueue_legacy(vec![], t0()).enqueued, 0);
        let mut batch: Vec<_> = (0..5).map(|i| series(&format!("s{i}"), 2000 + i)).collect();
        batch[2].modality = Modality::Mr;
        let report = q.enqueue_legacy(batch, t0());
        assert_eq!(report.enqueued, 4);
        assert_eq!(report.rejections.len(), 1);
        assert_eq!(report.rejections[0].0, "s2");
    }

    #[test]
    fn daily_preempts_legacy_ordering() {
        let q = queue();
        q.enqueue_legacy(vec![series("l1", 2003)], t0());
        q.enqueue_daily(series("d1", 2024), t0() + TimeDelta::hours(1)).unwrap();
        assert_eq!(q.next_task(t0()).unwrap().series.series_uid, "d1");
        assert_eq!(q.next_task(t0()).unwrap().series.series_uid, "l1");
        assert!(q.next_task(t0()).is_none());
    }

    #[test]
    fn daily_is_fifo() {
        let q = queue();
        for i in 0..5 {
            q.enqueue_daily(series(&format!("d{i}"), 2024), t0()).unwrap();
        }
        let order: Vec<_> = std::iter::from_fn(|| q.next_task(t0())).map(|t| t.series.series_uid).collect();
        assert_eq!(order, ["d0", "d1", "d2", "d3", "d4"]);
    }

    #[test]
    fn retry_then_dead() {
        let q = queue();
        q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        for attempt in 1..=3 {
            let t = q.next_task(t0()).unwrap();
            assert_eq!(t.attempts, attempt);
            let after = q.complete(t.task_id, Outcome::Failure("boom".into()), t0()).unwrap();
            if attempt < 3 {
                assert_eq!(after.state, TaskState::Queued);
                assert_eq!(after.attempts, attempt);
            } else {
                assert_eq!(after.state, TaskState::Dead);
            }
        }
        assert!(q.next_task(t0()).is_none());
        let d = q.depths();
        assert_eq!((d.dead, d.failed_attempts, d.total_enqueued), (1, 3, 1));
    }

    #[test]
    fn success_is_done() {
        let q = queue();
        q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        let t = q.next_task(t0()).unwrap();
        let done = q.complete(t.task_id, Outcome::Success, t0()).unwrap();
        assert_eq!(done.state, TaskState::Done);
        assert_eq!(q.depths().done, 1);
    }

    #[test]
    fn complete_errors() {
        let q = queue();
        assert!(matches!(
            q.complete(TaskId(99), Outcome::Success, t0()),
            Err(SchedulerError::UnknownTask(_))
        ));
        let t = q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        assert!(matches!(
            q.complete(t.task_id, Outcome::Success, t0()),
            Err(SchedulerError::InvalidState { .. })
        ));
    }

    #[test]
    fn backoff_delays_eligibility() {
        let q = TaskQueue::new(QueueConfig {
            retry: RetryPolicy {
                max_attempts: 2,
                backoff: vec![Duration::from_secs(60)],
            },
            ..Default::default()
        })
        .unwrap();
        q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        let t = q.next_task(t0()).unwrap();
        q.complete(t.task_id, Outcome::Failure("x".into()), t0()).unwrap();
        assert_eq!(q.depths().delayed, 1);
        assert!(q.next_task(t0() + TimeDelta::seconds(59)).is_none());
        assert_eq!(q.next_wakeup(), Some(t0() + TimeDelta::seconds(60)));
        assert!(q.next_task(t0() + TimeDelta::seconds(60)).is_some());
    }

    #[test]
    fn abandon_refunds_attempt() {
        let q = queue();
        q.enqueue_daily(series("d1", 2024), t0()).unwrap();
        let t = q.next_task(t0()).unwrap();
        q.abandon(t.task_id).unwrap();
        let again = q.next_task(t0()).unwrap();
        assert_eq!(again.attempts, 1);
    }

    #[test]
    fn snapshot_round_trip_requeues_running() {
        let q = queue();
        q.enqueue_legacy(vec![series("a", 2010), series("b", 2005)], t0());
        q.enqueue_daily(series("d", 2024), t0()).unwrap();
        let running = q.next_task(t0()).unwrap();
        assert_eq!(running.series.series_uid, "d");
        let restored = TaskQueue::from_json(&q.to_json()).unwrap();
        let d = restored.depths();
        assert_eq!((d.daily_queued, d.legacy_queued, d.running, d.total_enqueued), (1, 2, 0, 3));
        let order: Vec<_> = std::iter::from_fn(|| restored.next_task(t0())).map(|t| t.series.series_uid).collect();
        assert_eq!(order, ["d", "b", "a"]);
        // ids continue after the restored maximum
        let fresh = restored.enqueue_daily(series("e", 2024), t0()).unwrap();
        assert_eq!(fresh.task_id, TaskId(4));
        assert!(TaskQueue::from_json(b"{").is_err());
    }

    #[test]
    fn accounting_identity_holds() {
        let q = queue();
        q.enqueue_legacy((0..10).map(|i| series(&format!("s{i}"), 2000 + i)).collect(), t0());
        for i in 0..7 {
            let t = q.next_task(t0()).unwrap();
            let outcome = if i % 2 == 0 { Outcome::Success } else { Outcome::Failure("x".into()) };
            q.complete(t.task_id, outcome, t0()).unwrap();
            let d = q.depths();
            assert_eq!(d.done + d.queued() + d.running + d.dead, d.total_enqueued);
        }
    }
}
