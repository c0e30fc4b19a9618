//! Independent reference implementations used to check the library.
//!
//! Nothing here calls into the code under test for the property being
//! checked: search is a linear scan, dedup is a set of serialized resources,
//! scheduling order is replayed against a model of the queue contents.

#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap, HashSet};

use chrono::{NaiveDate, TimeDelta};
use ctindex_core::fhir::ResourceSet;
use ctindex_core::ingest::{Lane, Modality, SeriesDescriptor};
use ctindex_core::scheduler::{Chronology, TraceEvent};
use ctindex_core::search::{DocAnnotation, IndexDocument, Query};
use rand::seq::IndexedRandom;
use rand::Rng;

pub const CODES: [&str; 12] = [
    "10200004", "78961009", "64033007", "15497006", "39607008", "3341006", "80891009", "28231008",
    "181414000", "71854001", "76752008", "62413002",
];

pub const PATIENTS: [&str; 9] = ["p-a", "p-b", "p-c", "p-d", "p-e", "p-f", "p-g", "with space", "q\"uote"];

pub fn base_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2005, 1, 1).unwrap()
}

pub fn series(i: usize, patient: &str, lane: Lane) -> SeriesDescriptor {
    SeriesDescriptor {
        series_uid: format!("1.2.840.99.{i}"),
        study_uid: format!("1.2.840.98.{i}"),
        patient_pseudonym: patient.into(),
        acquisition_date: base_date() + TimeDelta::days((i as i64 * 7919) % 6500),
        modality: Modality::Ct,
        body_region_hint: None,
        source: lane,
    }
}

pub fn random_doc(rng: &mut impl Rng, i: usize) -> IndexDocument {
    let n = rng.random_range(1..=6);
    let codes: Vec<&str> = CODES.choose_multiple(rng, n).copied().collect();
    IndexDocument {
        series_uid: format!("1.2.{i}"),
        patient_pseudonym: PATIENTS.choose(rng).unwrap().to_string(),
        acquisition_date: base_date() + TimeDelta::days(rng.random_range(0..400)),
        annotations: codes
            .into_iter()
            .map(|c| DocAnnotation {
                snomed_code: c.into(),
                radlex_id: None,
                volume_mm3: (rng.random_range(0..2000) * 1000) as f64,
                mean_intensity: rng.random_range(-200..200) as f64 / 2.0,
            })
            .collect(),
        indexer_version: "0.1.0".into(),
        mapping_version: "1.0.0".into(),
    }
}

fn random_bound(rng: &mut impl Rng, lo: i64, hi: i64, scale: f64) -> (Option<f64>, Option<f64>) {
    let a = rng.random_range(lo..=hi) as f64 * scale;
    let b = rng.random_range(lo..=hi) as f64 * scale;
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    match rng.random_range(0..4) {
        0 => (Some(a), None),
        1 => (None, Some(b)),
        _ => (Some(a), Some(b)),
    }
}

pub fn random_leaf(rng: &mut impl Rng) -> Query {
    let code = CODES.choose(rng).unwrap().to_string();
    match rng.random_range(0..7) {
        0 => Query::MatchAll,
        1 | 2 => Query::HasCode(code),
        3 => {
            let (min, max) = random_bound(rng, 0, 2000, 1000.0);
            Query::VolumeInRange { code, min, max }
        }
        4 => {
            let (min, max) = random_bound(rng, -200, 200, 0.5);
            Query::IntensityInRange { code, min, max }
        }
        5 => {
            let a = base_date() + TimeDelta::days(rng.random_range(0..400));
            let b = base_date() + TimeDelta::days(rng.random_range(0..400));
            let (a, b) = (a.min(b), a.max(b));
            let (min, max) = match rng.random_range(0..3) {
                0 => (Some(a), None),
                1 => (None, Some(b)),
                _ => (Some(a), Some(b)),
            };
            Query::DateInRange { min, max }
        }
        _ => Query::PatientIs(PATIENTS.choose(rng).unwrap().to_string()),
    }
}

/// Random query whose depth is at most `max_depth`.
pub fn random_query(rng: &mut impl Rng, max_depth: usize) -> Query {
    if max_depth <= 1 || rng.random_bool(0.3) {
        return random_leaf(rng);
    }
    match rng.random_range(0..3) {
        0 => Query::Not(Box::new(random_query(rng, max_depth - 1))),
        op => {
            let n = rng.random_range(1..=3);
            let children = (0..n).map(|_| random_query(rng, max_depth - 1)).collect();
            if op == 1 {
                Query::And(children)
            } else {
                Query::Or(children)
            }
        }
    }
}

fn in_range(v: f64, min: Option<f64>, max: Option<f64>) -> bool {
    min.is_none_or(|m| v >= m) && max.is_none_or(|m| v <= m)
}

pub fn matches(doc: &IndexDocument, q: &Query) -> bool {
    match q {
        Query::MatchAll => true,
        Query::HasCode(c) => doc.annotations.iter().any(|a| &a.snomed_code == c),
        Query::VolumeInRange { code, min, max } => doc
            .annotations
            .iter()
            .any(|a| &a.snomed_code == code && in_range(a.volume_mm3, *min, *max)),
        Query::IntensityInRange { code, min, max } => doc
            .annotations
            .iter()
            .any(|a| &a.snomed_code == code && in_range(a.mean_intensity, *min, *max)),
        Query::DateInRange { min, max } => {
            min.is_none_or(|m| doc.acquisition_date >= m) && max.is_none_or(|m| doc.acquisition_date <= m)
        }
        Query::PatientIs(p) => &doc.patient_pseudonym == p,
        Query::And(c) => c.iter().all(|q| matches(doc, q)),
        Query::Or(c) => c.iter().any(|q| matches(doc, q)),
        Query::Not(q) => !matches(doc, q),
    }
}

/// Linear scan in result order: newest first, then series uid.
pub fn brute_force(docs: &[IndexDocument], q: &Query) -> Vec<String> {
    let mut hits: Vec<&IndexDocument> = docs.iter().filter(|d| matches(d, q)).collect();
    hits.sort_by(|a, b| {
        b.acquisition_date
            .cmp(&a.acquisition_date)
            .then_with(|| a.series_uid.cmp(&b.series_uid))
    });
    hits.into_iter().map(|d| d.series_uid.clone()).collect()
}

/// Distinct resources by serialized content, the way a FHIR server that
/// honours conditional creates would store them.
pub fn distinct_serialized_resources(sets: &[ResourceSet]) -> usize {
    let mut seen = HashSet::new();
    for set in sets {
        for r in set.resources() {
            seen.insert(serde_json::to_string(&r).unwrap());
        }
    }
    seen.len()
}

/// Replays a queue trace against a model of what is waiting and reports
/// every dequeue that was not the one the ordering rules demand:
/// a legacy task while daily work waited, a daily task out of arrival order,
/// or a legacy task that was not the chronologically first one waiting.
pub fn ordering_violations(trace: &[TraceEvent], legacy_order: Chronology) -> Vec<String> {
    let mut daily: BTreeSet<u64> = BTreeSet::new();
    let mut legacy: BTreeSet<(i64, String, u64)> = BTreeSet::new();
    let mut legacy_key: HashMap<u64, (i64, String, u64)> = HashMap::new();
    let mut violations = Vec::new();
    for (i, event) in trace.iter().enumerate() {
        match event {
            TraceEvent::Enqueued {
                task_id,
                lane,
                acquisition_date,
                series_uid,
                ..
            } => {
                let n = task_id.0;
                match lane {
                    Lane::Daily => {
                        daily.insert(n);
                    }
                    Lane::Legacy => {
                        let days = acquisition_date.signed_duration_since(NaiveDate::MIN).num_days();
                        let days = match legacy_order {
                            Chronology::OldestFirst => days,
                            Chronology::NewestFirst => -days,
                        };
                        let key = (days, series_uid.clone(), n);
                        legacy.insert(key.clone());
                        legacy_key.insert(n, key);
                    }
                }
            }
            TraceEvent::Dequeued { task_id, lane, .. } => {
                let n = task_id.0;
                match lane {
                    Lane::Daily => match daily.first() {
                        Some(&first) if first == n => {
                            daily.remove(&n);
                        }
                        other => {
                            violations.push(format!("event {i}: daily {task_id} dequeued, expected {other:?}"));
                            daily.remove(&n);
                        }
                    },
                    Lane::Legacy => {
                        if !daily.is_empty() {
                            violations.push(format!("event {i}: legacy {task_id} dequeued with {} daily waiting", daily.len()));
                        }
                        let key = legacy_key.get(&n).cloned();
                        match (legacy.first(), &key) {
                            (Some(first), Some(k)) if first == k => {}
                            (first, _) => violations.push(format!(
                                "event {i}: legacy {task_id} dequeued, expected {:?}",
                                first.map(|f| f.2)
                            )),
                        }
                        if let Some(k) = key {
                            legacy.remove(&k);
                        }
                    }
                }
            }
            TraceEvent::Finished { .. } => {}
        }
    }
    violations
}
