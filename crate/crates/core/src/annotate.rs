//! Turns segmentation statistics into coded annotations.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{LabelSetId, SegmentationStatistics};
use crate::termmap::MappingTable;

#[derive(Debug, Error, PartialEq)]
pub enum AnnotateError {
    #[error("statistics use label set {stats}, mapping table targets {table}")]
    LabelSetMismatch { stats: LabelSetId, table: LabelSetId },
    #[error("label {0:?} has no mapping (strict policy)")]
    UnmappedLabel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyMode {
    /// Unmapped labels are recorded on the set.
    #[default]
    Lenient,
    /// Any unmapped label above the volume threshold aborts.
    Strict,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationPolicy {
    pub mode: PolicyMode,
    /// Structures with volume at or below this are dropped.
    pub min_volume_mm3: f64,
}

impl Default for AnnotationPolicy {
    fn default() -> Self {
        Self {
            mode: PolicyMode::Lenient,
            min_volume_mm3: 0.0,
        }
    }
}

impl AnnotationPolicy {
    pub fn strict() -> Self {
        Self {
            mode: PolicyMode::Strict,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub label: String,
    pub snomed_code: String,
    pub snomed_display: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radlex_id: Option<String>,
    pub volume_mm3: f64,
    pub mean_intensity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    pub series_uid: String,
    /// Sorted by label.
    pub annotations: Vec<Annotation>,
    /// Sorted.
    pub unmapped_labels: Vec<String>,
    pub indexer_version: String,
    pub mapping_version: String,
    pub created_at: DateTime<Utc>,
}

impl AnnotationSet {
    /// Canonical text form used for audit export and the result store.
    pub fn to_canonical_json(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("annotation set serialize");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

/// Who produced the set and when.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunStamp {
    pub indexer_version: String,
    pub created_at: DateTime<Utc>,
}

pub fn annotate(
    stats: &SegmentationStatistics,
    table: &MappingTable,
    policy: &AnnotationPolicy,
    stamp: &RunStamp,
) -> Result<AnnotationSet, AnnotateError> {
    if stats.label_set_id != table.target_label_set_id() {
        return Err(AnnotateError::LabelSetMismatch {
            stats: stats.label_set_id,
            table: table.target_label_set_id(),
        });
    }
    let mut annotations = Vec::new();
    let mut unmapped_labels = Vec::new();
    for s in &stats.structures {
        if s.volume_mm3 <= policy.min_volume_mm3 {
            continue;
        }
        match table.lookup(&s.label) {
            Some(entry) => annotations.push(Annotation {
                label: s.label.clone(),
                snomed_code: entry.snomed_code.clone(),
                snomed_display: entry.snomed_display.clone(),
                radlex_id: entry.radlex_id.clone(),
                volume_mm3: s.volume_mm3,
                mean_intensity: s.mean_intensity,
            }),
            None if policy.mode == PolicyMode::Strict => {
                return Err(AnnotateError::UnmappedLabel(s.label.clone()));
            }
            None => unmapped_labels.push(s.label.clone()),
        }
    }
    annotations.sort_by(|a, b| a.label.cmp(&b.label));
    unmapped_labels.sort();
    Ok(AnnotationSet {
        series_uid: stats.series_uid.clone(),
        annotations,
        unmapped_labels,
        indexer_version: stamp.indexer_version.clone(),
        mapping_version: table.map_version().to_owned(),
        created_at: stamp.created_at,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnnotationCount {
    pub total: u64,
    pub mean_per_series: f64,
}

pub fn annotation_count(corpus: &[AnnotationSet]) -> AnnotationCount {
    let total: u64 = corpus.iter().map(|s| s.annotations.len() as u64).sum();
    let mean_per_series = if corpus.is_empty() {
        0.0
    } else {
        total as f64 / corpus.len() as f64
    };
    AnnotationCount { total, mean_per_series }
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;

    use super::*;
    use crate::ingest::{LabelCatalog, StructureStat};

    fn stamp() -> RunStamp {
        RunStamp {
            indexer_version: "0.1.0".into(),
            created_at: Utc.with_ymd_and_hms(2024, 3, 1, 12, 0, 0).unwrap(),
        }
    }

    fn stats(structures: &[(&str, f64)]) -> SegmentationStatistics {
        SegmentationStatistics {
            series_uid: "s1".into(),
            segmenter_name: "seg".into(),
            segmenter_version: "1.0.0".into(),
            label_set_id: LabelSetId::V1_104,
            structures: structures
                .iter()
                .map(|(label, v)| StructureStat {
                    label: (*label).into(),
                    volume_mm3: *v,
                    mean_intensity: 50.0,
                })
                .collect(),
        }
    }

    fn partial_table() -> MappingTable {
        let full = MappingTable::bundled_v1();
        let entries = full.entries().iter().filter(|e| e.label != "spleen").cloned().collect();
        MappingTable::new("1.0.0", LabelSetId::V1_104, entries, &Default::default()).unwrap()
    }

    #[test]
    fn zero_volume_dropped() {
        let set = annotate(
            &stats(&[("liver", 1_420_000.0), ("spleen", 0.0)]),
            &MappingTable::bundled_v1(),
            &AnnotationPolicy::default(),
            &stamp(),
        )
        .unwrap();
        assert_eq!(set.annotations.len(), 1);
        assert_eq!(set.annotations[0].label, "liver");
        assert_eq!(set.annotations[0].snomed_code, "10200004");
        assert!(set.unmapped_labels.is_empty());
        assert_eq!(set.mapping_version, "1.0.0");
    }

    #[test]
    fn unmapped_lenient_vs_strict() {
        let input = stats(&[("liver", 10.0), ("spleen", 20.0)]);
        let lenient = annotate(&input, &partial_table(), &AnnotationPolicy::default(), &stamp()).unwrap();
        assert_eq!(lenient.unmapped_labels, ["spleen"]);
        assert_eq!(lenient.annotations.len(), 1);
        assert_eq!(
            annotate(&input, &partial_table(), &AnnotationPolicy::strict(), &stamp()),
            Err(AnnotateError::UnmappedLabel("spleen".into()))
        );
    }

    #[test]
    fn threshold_is_exclusive() {
        let policy = AnnotationPolicy {
            min_volume_mm3: 100.0,
            ..Default::default()
        };
        let set = annotate(
            &stats(&[("liver", 100.0), ("spleen", 100.5)]),
            &MappingTable::bundled_v1(),
            &policy,
            &stamp(),
        )
        .unwrap();
        let labels: Vec<_> = set.annotations.iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels, ["spleen"]);
    }

    #[test]
    fn full_catalog_saturates() {
        let structures: Vec<(&str, f64)> = LabelCatalog::builtin(LabelSetId::V1_104)
            .labels()
            .iter()
            .map(|l| (l.as_str(), 1000.0))
            .collect();
        let set = annotate(&stats(&structures), &MappingTable::bundled_v1(), &AnnotationPolicy::strict(), &stamp())
            .unwrap();
        assert_eq!(set.annotations.len(), 104);
        assert!(set.annotations.windows(2).all(|w| w[0].label < w[1].label));
    }

    #[test]
    fn label_set_mismatch() {
        let mut s = stats(&[]);
        s.label_set_id = LabelSetId::V2_117;
        assert!(matches!(
            annotate(&s, &MappingTable::bundled_v1(), &AnnotationPolicy::default(), &stamp()),
            Err(AnnotateError::LabelSetMismatch { .. })
        ));
    }

    #[test]
    fn counts() {
        assert_eq!(
            annotation_count(&[]),
            AnnotationCount {
                total: 0,
                mean_per_series: 0.0
            }
        );
        let table = MappingTable::bundled_v1();
        let mk = |labels: &[&str]| {
            let s: Vec<(&str, f64)> = labels.iter().map(|l| (*l, 1.0)).collect();
            annotate(&stats(&s), &table, &AnnotationPolicy::default(), &stamp()).unwrap()
        };
        let corpus = [
            mk(&["liver", "spleen"]),
            mk(&["liver", "spleen", "aorta"]),
            mk(&["liver", "spleen", "aorta", "colon"]),
        ];
        assert_eq!(
            annotation_count(&corpus),
            AnnotationCount {
                total: 9,
                mean_per_series: 3.0
            }
        );
    }

    #[test]
    fn canonical_json_round_trip() {
        let set = annotate(
            &stats(&[("liver", 1.5), ("spleen", 2.25)]),
            &MappingTable::bundled_v1(),
            &AnnotationPolicy::default(),
            &stamp(),
        )
        .unwrap();
        let bytes = set.to_canonical_json();
        assert_eq!(AnnotationSet::from_json(&bytes).unwrap(), set);
        assert_eq!(AnnotationSet::from_json(&bytes).unwrap().to_canonical_json(), bytes);
    }
}
