//! Embedded inverted index over annotated series.

mod query;
mod snapshot;

use std::cmp::Reverse;
use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::AnnotationSet;
use crate::ingest::SeriesDescriptor;

pub use query::{parse_query, Query, MAX_QUERY_DEPTH};
pub use snapshot::{decode_snapshot, encode_snapshot, SNAPSHOT_MAGIC, SNAPSHOT_VERSION};

pub const MAX_PAGE_LIMIT: usize = 10_000;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("invalid document: {0}")]
    InvalidDocument(String),
    #[error("malformed query: {0}")]
    MalformedQuery(String),
    #[error("corrupt snapshot: {0}")]
    CorruptSnapshot(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocAnnotation {
    pub snomed_code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radlex_id: Option<String>,
    pub volume_mm3: f64,
    pub mean_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexDocument {
    pub series_uid: String,
    pub patient_pseudonym: String,
    pub acquisition_date: NaiveDate,
    pub annotations: Vec<DocAnnotation>,
    pub indexer_version: String,
    pub mapping_version: String,
}

impl IndexDocument {
    pub fn from_annotations(ann: &AnnotationSet, series: &SeriesDescriptor) -> Self {
        Self {
            series_uid: series.series_uid.clone(),
            patient_pseudonym: series.patient_pseudonym.clone(),
            acquisition_date: series.acquisition_date,
            annotations: ann
                .annotations
                .iter()
                .map(|a| DocAnnotation {
                    snomed_code: a.snomed_code.clone(),
                    radlex_id: a.radlex_id.clone(),
                    volume_mm3: a.volume_mm3,
                    mean_intensity: a.mean_intensity,
                })
                .collect(),
            indexer_version: ann.indexer_version.clone(),
            mapping_version: ann.mapping_version.clone(),
        }
    }

    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidDocument(m));
        if self.series_uid.is_empty() {
            return bad("empty series_uid".into());
        }
        if self.patient_pseudonym.is_empty() {
            return bad(format!("{}: empty patient pseudonym", self.series_uid));
        }
        if self.annotations.is_empty() {
            return bad(format!("{}: no annotations", self.series_uid));
        }
        for a in &self.annotations {
            if !query::is_valid_code(&a.snomed_code) {
                return bad(format!("{}: invalid code {:?}", self.series_uid, a.snomed_code));
            }
            if !a.volume_mm3.is_finite() || a.volume_mm3 < 0.0 || !a.mean_intensity.is_finite() {
                return bad(format!("{}: non-finite measurement for {}", self.series_uid, a.snomed_code));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub offset: usize,
    pub limit: usize,
}

impl Default for Page {
    fn default() -> Self {
        Self { offset: 0, limit: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub total: usize,
    /// Ordered by acquisition date descending, then series uid.
    pub hits: Vec<String>,
}

type DocId = u32;

#[derive(Debug, Clone, Copy)]
struct Measurement {
    doc: DocId,
    volume: f64,
    intensity: f64,
}

/// Single-threaded index. Wrap in [`SharedIndex`] for concurrent use.
#[derive(Debug, Default)]
pub struct SearchIndex {
    docs: Vec<Option<IndexDocument>>,
    by_uid: HashMap<String, DocId>,
    /// Sorted, deduplicated doc ids per code.
    postings: HashMap<String, Vec<DocId>>,
    columns: HashMap<String, Vec<Measurement>>,
    dates: BTreeMap<NaiveDate, Vec<DocId>>,
    patients: HashMap<String, Vec<DocId>>,
}

fn insert_sorted(list: &mut Vec<DocId>, id: DocId) {
    if let Err(at) = list.binary_search(&id) {
        list.insert(at, id);
    }
}

fn remove_sorted(list: &mut Vec<DocId>, id: DocId) {
    if let Ok(at) = list.binary_search(&id) {
        list.remove(at);
    }
}

fn intersect(a: &[DocId], b: &[DocId]) -> Vec<DocId> {
    let (mut i, mut j, mut out) = (0, 0, Vec::new());
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

fn union(a: &[DocId], b: &[DocId]) -> Vec<DocId> {
    let (mut i, mut j, mut out) = (0, 0, Vec::with_capacity(a.len().max(b.len())));
    while i < a.len() || j < b.len() {
        let take_a = j == b.len() || (i < a.len() && a[i] <= b[j]);
        let v = if take_a { a[i] } else { b[j] };
        if take_a {
            i += 1;
            if j < b.len() && b[j] == v {
                j += 1;
            }
        } else {
            j += 1;
        }
        out.push(v);
    }
    out
}

fn difference(a: &[DocId], b: &[DocId]) -> Vec<DocId> {
    let mut j = 0;
    let mut out = Vec::with_capacity(a.len());
    for &v in a {
        while j < b.len() && b[j] < v {
            j += 1;
        }
        if j == b.len() || b[j] != v {
            out.push(v);
        }
    }
    out
}

fn in_range(v: f64, min: Option<f64>, max: Option<f64>) -> bool {
    min.is_none_or(|lo| v >= lo) && max.is_none_or(|hi| v <= hi)
}

impl SearchIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.by_uid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_uid.is_empty()
    }

    pub fn get(&self, series_uid: &str) -> Option<&IndexDocument> {
        self.by_uid.get(series_uid).and_then(|&id| self.docs[id as usize].as_ref())
    }

    /// Documents ordered by series uid.
    pub fn documents(&self) -> Vec<&IndexDocument> {
        let mut docs: Vec<&IndexDocument> = self.docs.iter().flatten().collect();
        docs.sort_by(|a, b| a.series_uid.cmp(&b.series_uid));
        docs
    }

    /// Adds a document, replacing any earlier one for the same series.
    pub fn index_document(&mut self, doc: IndexDocument) -> Result<(), SearchError> {
        doc.validate()?;
        let id = match self.by_uid.get(&doc.series_uid) {
            Some(&id) => {
                self.unlink(id);
                id
            }
            None => {
                let id = DocId::try_from(self.docs.len())
                    .map_err(|_| SearchError::InvalidDocument("index is full".into()))?;
                self.docs.push(None);
                self.by_uid.insert(doc.series_uid.clone(), id);
                id
            }
        };
        for a in &doc.annotations {
            insert_sorted(self.postings.entry(a.snomed_code.clone()).or_default(), id);
            self.columns.entry(a.snomed_code.clone()).or_default().push(Measurement {
                doc: id,
                volume: a.volume_mm3,
                intensity: a.mean_intensity,
            });
        }
        insert_sorted(self.dates.entry(doc.acquisition_date).or_default(), id);
        insert_sorted(self.patients.entry(doc.patient_pseudonym.clone()).or_default(), id);
        self.docs[id as usize] = Some(doc);
        Ok(())
    }

    pub fn remove(&mut self, series_uid: &str) -> Option<IndexDocument> {
        // the slot stays allocated but empty; ids are never reused
        let id = self.by_uid.remove(series_uid)?;
        self.unlink(id)
    }

    fn unlink(&mut self, id: DocId) -> Option<IndexDocument> {
        let doc = self.docs[id as usize].take()?;
        for a in &doc.annotations {
            if let Some(list) = self.postings.get_mut(&a.snomed_code) {
                remove_sorted(list, id);
                if list.is_empty() {
                    self.postings.remove(&a.snomed_code);
                }
            }
            if let Some(col) = self.columns.get_mut(&a.snomed_code) {
                col.retain(|m| m.doc != id);
                if col.is_empty() {
                    self.columns.remove(&a.snomed_code);
                }
            }
        }
        if let Some(list) = self.dates.get_mut(&doc.acquisition_date) {
            remove_sorted(list, id);
            if list.is_empty() {
                self.dates.remove(&doc.acquisition_date);
            }
        }
        if let Some(list) = self.patients.get_mut(&doc.patient_pseudonym) {
            remove_sorted(list, id);
            if list.is_empty() {
                self.patients.remove(&doc.patient_pseudonym);
            }
        }
        Some(doc)
    }

    fn all_ids(&self) -> Vec<DocId> {
        let mut ids: Vec<DocId> = self.by_uid.values().copied().collect();
        ids.sort_unstable();
        ids
    }

    fn scan_column(&self, code: &str, pick: impl Fn(&Measurement) -> f64, min: Option<f64>, max: Option<f64>) -> Vec<DocId> {
        let mut ids: Vec<DocId> = self
            .columns
            .get(code)
            .map(|col| col.iter().filter(|m| in_range(pick(m), min, max)).map(|m| m.doc).collect())
            .unwrap_or_default();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn eval(&self, q: &Query) -> Vec<DocId> {
        match q {
            Query::MatchAll => self.all_ids(),
            Query::HasCode(code) => self.postings.get(code).cloned().unwrap_or_default(),
            Query::VolumeInRange { code, min, max } => self.scan_column(code, |m| m.volume, *min, *max),
            Query::IntensityInRange { code, min, max } => self.scan_column(code, |m| m.intensity, *min, *max),
            Query::DateInRange { min, max } => {
                let lo = min.unwrap_or(NaiveDate::MIN);
                let hi = max.unwrap_or(NaiveDate::MAX);
                let mut ids: Vec<DocId> = self.dates.range(lo..=hi).flat_map(|(_, ids)| ids.iter().copied()).collect();
                ids.sort_unstable();
                ids
            }
            Query::PatientIs(p) => self.patients.get(p).cloned().unwrap_or_default(),
            Query::And(children) => {
                let mut iter = children.iter();
                let mut acc = iter.next().map(|c| self.eval(c)).unwrap_or_else(|| self.all_ids());
                for c in iter {
                    if acc.is_empty() {
                        break;
                    }
                    acc = intersect(&acc, &self.eval(c));
                }
                acc
            }
            Query::Or(children) => children.iter().fold(Vec::new(), |acc, c| union(&acc, &self.eval(c))),
            Query::Not(inner) => difference(&self.all_ids(), &self.eval(inner)),
        }
    }

    pub fn search(&self, q: &Query, page: Page) -> Result<SearchResult, SearchError> {
        if page.limit > MAX_PAGE_LIMIT {
            return Err(SearchError::MalformedQuery(format!(
                "limit {} exceeds {MAX_PAGE_LIMIT}",
                page.limit
            )));
        }
        q.validate()?;
        let mut hits: Vec<&IndexDocument> = self
            .eval(q)
            .into_iter()
            .filter_map(|id| self.docs[id as usize].as_ref())
            .collect();
        hits.sort_by(|a, b| {
            Reverse(a.acquisition_date)
                .cmp(&Reverse(b.acquisition_date))
                .then_with(|| a.series_uid.cmp(&b.series_uid))
        });
        Ok(SearchResult {
            total: hits.len(),
            hits: hits
                .into_iter()
                .skip(page.offset)
                .take(page.limit)
                .map(|d| d.series_uid.clone())
                .collect(),
        })
    }

    /// Distinct codes with their document frequency, by code.
    pub fn code_frequencies(&self) -> BTreeMap<String, usize> {
        self.postings.iter().map(|(c, ids)| (c.clone(), ids.len())).collect()
    }

    pub fn to_snapshot(&self) -> Vec<u8> {
        encode_snapshot(&self.documents())
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, SearchError> {
        let mut index = Self::new();
        for doc in decode_snapshot(bytes)? {
            let uid = doc.series_uid.clone();
            if index.get(&uid).is_some() {
                return Err(SearchError::CorruptSnapshot(format!("duplicate series {uid}")));
            }
            index
                .index_document(doc)
                .map_err(|e| SearchError::CorruptSnapshot(e.to_string()))?;
        }
        Ok(index)
    }

    /// Writes the snapshot via a temporary file and rename.
    pub fn persist(&self, path: impl Into<PathBuf>) -> Result<(), SearchError> {
        let path = path.into();
        let tmp = path.with_extension("snap.tmp");
        let io = |source| SearchError::Io {
            path: path.clone(),
            source,
        };
        std::fs::write(&tmp, self.to_snapshot()).map_err(io)?;
        std::fs::rename(&tmp, &path).map_err(io)
    }

    pub fn restore(path: impl Into<PathBuf>) -> Result<Self, SearchError> {
        let path = path.into();
        let bytes = std::fs::read(&path).map_err(|source| SearchError::Io { path, source })?;
        Self::from_snapshot(&bytes)
    }
}

/// Thread-safe index: many readers, one writer. A document is applied under
/// the write lock, so searches never observe it half-indexed.
#[derive(Debug, Default)]
pub struct SharedIndex {
    inner: RwLock<SearchIndex>,
}

impl SharedIndex {
    pub fn new(index: SearchIndex) -> Self {
        Self {
            inner: RwLock::new(index),
        }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, SearchIndex> {
        self.inner.read().unwrap_or_else(|e| e.into_inner())
    }

    pub fn write(&self) -> RwLockWriteGuard<'_, SearchIndex> {
        self.inner.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn index_document(&self, doc: IndexDocument) -> Result<(), SearchError> {
        self.write().index_document(doc)
    }

    pub fn search(&self, q: &Query, page: Page) -> Result<SearchResult, SearchError> {
        self.read().search(q, page)
    }

    pub fn len(&self) -> usize {
        self.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.read().is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(uid: &str, date: (i32, u32, u32), codes: &[(&str, f64)]) -> IndexDocument {
        IndexDocument {
            series_uid: uid.into(),
            patient_pseudonym: format!("p-{uid}"),
            acquisition_date: NaiveDate::from_ymd_opt(date.0, date.1, date.2).unwrap(),
            annotations: codes
                .iter()
                .map(|&(c, v)| DocAnnotation {
                    snomed_code: c.into(),
                    radlex_id: None,
                    volume_mm3: v,
                    mean_intensity: 50.0,
                })
                .collect(),
            indexer_version: "0.1.0".into(),
            mapping_version: "1.0.0".into(),
        }
    }

    fn all(idx: &SearchIndex, q: &str) -> Vec<String> {
        idx.search(&parse_query(q).unwrap(), Page { offset: 0, limit: 10_000 }).unwrap().hits
    }

    #[test]
    fn presence_and_order() {
        let mut idx = SearchIndex::new();
        idx.index_document(doc("b", (2020, 1, 1), &[("10200004", 1.5e6)])).unwrap();
        idx.index_document(doc("a", (2020, 1, 1), &[("10200004", 0.9e6)])).unwrap();
        idx.index_document(doc("c", (2022, 1, 1), &[("64033007", 1.0)])).unwrap();
        assert_eq!(all(&idx, "code:10200004"), ["a", "b"]);
        assert_eq!(all(&idx, "all"), ["c", "a", "b"]);
        assert_eq!(all(&idx, "vol:10200004:[1000000,]"), ["b"]);
        assert_eq!(all(&idx, "not(code:10200004)"), ["c"]);
        assert_eq!(all(&idx, "date:[2021-01-01,]"), ["c"]);
        assert_eq!(all(&idx, "patient:p-a"), ["a"]);
        assert!(all(&idx, "and(code:10200004,not(code:10200004))").is_empty());
    }

    #[test]
    fn reindex_replaces() {
        let mut idx = SearchIndex::new();
        idx.index_document(doc("a", (2020, 1, 1), &[("1", 1.0)])).unwrap();
        idx.index_document(doc("a", (2021, 1, 1), &[("2", 1.0)])).unwrap();
        assert_eq!(idx.len(), 1);
        assert!(all(&idx, "code:1").is_empty());
        assert!(all(&idx, "vol:1:[,]").is_empty());
        assert!(all(&idx, "date:[2020-01-01,2020-01-01]").is_empty());
        assert_eq!(all(&idx, "code:2"), ["a"]);
    }

    #[test]
    fn invalid_documents() {
        let mut idx = SearchIndex::new();
        assert!(matches!(
            idx.index_document(doc("a", (2020, 1, 1), &[])),
            Err(SearchError::InvalidDocument(_))
        ));
        assert!(idx.index_document(doc("a", (2020, 1, 1), &[("1", f64::NAN)])).is_err());
        assert!(idx.index_document(doc("a", (2020, 1, 1), &[("a b", 1.0)])).is_err());
    }

    #[test]
    fn empty_index_and_paging() {
        let mut idx = SearchIndex::new();
        let r = idx.search(&Query::MatchAll, Page::default()).unwrap();
        assert_eq!((r.total, r.hits.len()), (0, 0));
        for i in 0..25 {
            idx.index_document(doc(&format!("s{i:02}"), (2020, 1, 1), &[("1", 1.0)])).unwrap();
        }
        let r = idx.search(&Query::MatchAll, Page { offset: 20, limit: 10 }).unwrap();
        assert_eq!(r.total, 25);
        assert_eq!(r.hits, ["s20", "s21", "s22", "s23", "s24"]);
        assert!(idx.search(&Query::MatchAll, Page { offset: 0, limit: 10_001 }).is_err());
    }

    #[test]
    fn remove_drops_postings() {
        let mut idx = SearchIndex::new();
        idx.index_document(doc("a", (2020, 1, 1), &[("1", 1.0)])).unwrap();
        assert!(idx.remove("a").is_some());
        assert!(idx.remove("a").is_none());
        assert!(all(&idx, "all").is_empty());
        assert!(idx.code_frequencies().is_empty());
    }

    #[test]
    fn set_ops() {
        assert_eq!(union(&[1, 3, 5], &[2, 3, 6]), [1, 2, 3, 5, 6]);
        assert_eq!(intersect(&[1, 3, 5], &[2, 3, 5]), [3, 5]);
        assert_eq!(difference(&[1, 2, 3, 4], &[2, 4, 9]), [1, 3]);
    }

    #[test]
    fn persist_restore() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.snap");
        let mut idx = SearchIndex::new();
        SearchIndex::new().persist(&path).unwrap();
        assert!(SearchIndex::restore(&path).unwrap().is_empty());
        idx.index_document(doc("a", (2020, 1, 1), &[("1", 1.0)])).unwrap();
        idx.index_document(doc("b", (2021, 1, 1), &[("1", 2.0), ("2", 3.0)])).unwrap();
        idx.persist(&path).unwrap();
        let back = SearchIndex::restore(&path).unwrap();
        assert_eq!(all(&back, "vol:1:[1.5,]"), ["b"]);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(SearchIndex::restore(&path), Err(SearchError::CorruptSnapshot(_))));
    }
}
