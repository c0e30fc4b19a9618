use std::collections::VecDeque;
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::queue::TaskQueue;
use crate::ingest::{Lane, SeriesDescriptor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransportError {
    #[error("undecodable task message: {0}")]
    Decode(String),
    #[error("invalid task message: {0}")]
    Invalid(String),
    #[error("transport closed")]
    Closed,
}

/// Wire format for handing a series to the scheduler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskMessage {
    pub lane: Lane,
    pub series: SeriesDescriptor,
}

impl TaskMessage {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("task message serialize")
    }

    pub fn decode(bytes: &[u8], today: NaiveDate) -> Result<Self, TransportError> {
        let msg: TaskMessage = serde_json::from_slice(bytes).map_err(|e| TransportError::Decode(e.to_string()))?;
        msg.series.validate(today).map_err(TransportError::Invalid)?;
        Ok(msg)
    }
}

/// Moves encoded task messages from producers to the scheduler.
pub trait QueueTransport: Send + Sync {
    fn send(&self, payload: Vec<u8>) -> Result<(), TransportError>;
    /// Up to `max` pending payloads, oldest first.
    fn receive(&self, max: usize) -> Result<Vec<Vec<u8>>, TransportError>;
}

#[derive(Debug, Default)]
pub struct InProcessTransport {
    inner: Mutex<(VecDeque<Vec<u8>>, bool)>,
}

impl InProcessTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn close(&self) {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).1 = true;
    }

    pub fn pending(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).0.len()
    }
}

impl QueueTransport for InProcessTransport {
    fn send(&self, payload: Vec<u8>) -> Result<(), TransportError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if inner.1 {
            return Err(TransportError::Closed);
        }
        inner.0.push_back(payload);
        Ok(())
    }

    fn receive(&self, max: usize) -> Result<Vec<Vec<u8>>, TransportError> {
        let mut inner = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        if inner.0.is_empty() && inner.1 {
            return Err(TransportError::Closed);
        }
        let n = max.min(inner.0.len());
        Ok(inner.0.drain(..n).collect())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PumpReport {
    pub accepted: usize,
    /// Rejected payloads with the reason, in arrival order.
    pub rejected: Vec<String>,
}

/// Drains up to `max` messages from the transport into the queue.
pub fn pump_transport(
    transport: &dyn QueueTransport,
    queue: &TaskQueue,
    max: usize,
    now: DateTime<Utc>,
) -> Result<PumpReport, TransportError> {
    let mut report = PumpReport::default();
    for payload in transport.receive(max)? {
        let msg = match TaskMessage::decode(&payload, now.date_naive()) {
            Ok(msg) => msg,
            Err(e) => {
                report.rejected.push(e.to_string());
                continue;
            }
        };
        match queue.enqueue(msg.series, msg.lane, now) {
            Ok(_) => report.accepted += 1,
            Err(e) => report.rejected.push(e.to_string()),
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::ingest::Modality;
    use crate::scheduler::QueueConfig;

    fn msg(uid: &str, modality: Modality) -> TaskMessage {
        TaskMessage {
            lane: Lane::Daily,
            series: SeriesDescriptor {
                series_uid: uid.into(),
                study_uid: "st".into(),
                patient_pseudonym: "p".into(),
                acquisition_date: NaiveDate::from_ymd_opt(2024, 1, 2).unwrap(),
                modality,
                body_region_hint: Some("thorax".into()),
                source: Lane::Daily,
            },
        }
    }

    #[test]
    fn round_trip() {
        let today = NaiveDate::from_ymd_opt(2024, 2, 1).unwrap();
        let m = msg("1.2", Modality::Ct);
        assert_eq!(TaskMessage::decode(&m.encode(), today).unwrap(), m);
        assert!(matches!(TaskMessage::decode(b"{\"lane\":1}", today), Err(TransportError::Decode(_))));
        let early = NaiveDate::from_ymd_opt(2023, 1, 1).unwrap();
        assert!(matches!(TaskMessage::decode(&m.encode(), early), Err(TransportError::Invalid(_))));
    }

    #[test]
    fn pump_moves_valid_messages() {
        let now = Utc.with_ymd_and_hms(2024, 2, 1, 8, 0, 0).unwrap();
        let t = InProcessTransport::new();
        t.send(msg("a", Modality::Ct).encode()).unwrap();
        t.send(b"garbage".to_vec()).unwrap();
        t.send(msg("b", Modality::Mr).encode()).unwrap();
        t.send(msg("a", Modality::Ct).encode()).unwrap();
        let q = TaskQueue::new(QueueConfig::default()).unwrap();
        let report = pump_transport(&t, &q, 10, now).unwrap();
        assert_eq!(report.accepted, 1);
        assert_eq!(report.rejected.len(), 3);
        assert_eq!(q.depths().daily_queued, 1);
        t.close();
        assert_eq!(t.send(vec![]), Err(TransportError::Closed));
        assert!(pump_transport(&t, &q, 10, now).is_err());
    }
}
