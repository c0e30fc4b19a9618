//! The per-series statistics file (`*.segstats.json`).
//!
//! ```json
//! {
//!   "series_uid": "1.2.840.113619.2.55",
//!   "segmenter_name": "mock-segmenter",
//!   "segmenter_version": "1.5.7",
//!   "label_set_id": "v1_104",
//!   "structures": {
//!     "liver":  { "volume_mm3": 1420000.0, "mean_intensity": 62.0 },
//!     "spleen": { "volume_mm3": 210000.0,  "mean_intensity": 55.5 }
//!   }
//! }
//! ```
//!
//! Structure order in the file is preserved. Zero volumes are kept; the
//! annotation step decides what to drop.

use std::collections::HashSet;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::catalog::{is_valid_label, CatalogRegistry, LabelSetId};
use super::{IngestError, SeriesDescriptor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureStat {
    pub label: String,
    pub volume_mm3: f64,
    pub mean_intensity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationStatistics {
    pub series_uid: String,
    pub segmenter_name: String,
    pub segmenter_version: String,
    pub label_set_id: LabelSetId,
    pub structures: Vec<StructureStat>,
}

#[derive(Serialize, Deserialize)]
struct Measurement {
    volume_mm3: f64,
    mean_intensity: f64,
}

/// Map form of the structure list that keeps order and duplicates so both
/// can be checked after parsing.
struct StructureEntries(Vec<(String, Measurement)>);

impl<'de> Deserialize<'de> for StructureEntries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct EntriesVisitor;

        impl<'de> Visitor<'de> for EntriesVisitor {
            type Value = StructureEntries;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("an object mapping labels to measurements")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
                let mut entries = Vec::with_capacity(map.size_hint().unwrap_or(0));
                while let Some((label, m)) = map.next_entry::<String, Measurement>()? {
                    entries.push((label, m));
                }
                Ok(StructureEntries(entries))
            }
        }

        deserializer.deserialize_map(EntriesVisitor)
    }
}

struct StructuresRef<'a>(&'a [StructureStat]);

impl Serialize for StructuresRef<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for s in self.0 {
            map.serialize_entry(
                &s.label,
                &Measurement {
                    volume_mm3: s.volume_mm3,
                    mean_intensity: s.mean_intensity,
                },
            )?;
        }
        map.end()
    }
}

#[derive(Deserialize)]
struct RawFile {
    series_uid: String,
    segmenter_name: String,
    segmenter_version: String,
    label_set_id: LabelSetId,
    structures: StructureEntries,
}

#[derive(Serialize)]
struct FileRef<'a> {
    series_uid: &'a str,
    segmenter_name: &'a str,
    segmenter_version: &'a str,
    label_set_id: LabelSetId,
    structures: StructuresRef<'a>,
}

impl SegmentationStatistics {
    /// Serializes in the documented file schema.
    pub fn to_json(&self) -> Vec<u8> {
        let file = FileRef {
            series_uid: &self.series_uid,
            segmenter_name: &self.segmenter_name,
            segmenter_version: &self.segmenter_version,
            label_set_id: self.label_set_id,
            structures: StructuresRef(&self.structures),
        };
        let mut out = serde_json::to_vec_pretty(&file).expect("statistics serialize");
        out.push(b'\n');
        out
    }

    pub fn structure(&self, label: &str) -> Option<&StructureStat> {
        self.structures.iter().find(|s| s.label == label)
    }
}

/// Parses and validates a statistics file against the bundled catalogs.
pub fn parse_statistics(
    raw: &[u8],
    expected: &SeriesDescriptor,
) -> Result<SegmentationStatistics, IngestError> {
    parse_statistics_with(raw, expected, &CatalogRegistry::default())
}

pub fn parse_statistics_with(
    raw: &[u8],
    expected: &SeriesDescriptor,
    catalogs: &CatalogRegistry,
) -> Result<SegmentationStatistics, IngestError> {
    let text = std::str::from_utf8(raw)
        .map_err(|e| IngestError::MalformedFile(format!("not UTF-8: {e}")))?;
    let file: RawFile = serde_json::from_str(text).map_err(|e| {
        use serde_json::error::Category;
        match e.classify() {
            Category::Data => IngestError::SchemaViolation(e.to_string()),
            Category::Io | Category::Syntax | Category::Eof => {
                IngestError::MalformedFile(e.to_string())
            }
        }
    })?;

    if file.series_uid.trim().is_empty() {
        return Err(IngestError::SchemaViolation("series_uid is empty".into()));
    }
    if file.segmenter_name.trim().is_empty() {
        return Err(IngestError::SchemaViolation("segmenter_name is empty".into()));
    }
    semver::Version::parse(&file.segmenter_version).map_err(|e| {
        IngestError::SchemaViolation(format!(
            "segmenter_version {:?}: {e}",
            file.segmenter_version
        ))
    })?;

    let catalog = catalogs.get(file.label_set_id);
    let mut seen = HashSet::with_capacity(file.structures.0.len());
    let mut structures = Vec::with_capacity(file.structures.0.len());
    for (label, m) in file.structures.0 {
        if !is_valid_label(&label) {
            return Err(IngestError::SchemaViolation(format!("invalid label {label:?}")));
        }
        if !seen.insert(label.clone()) {
            return Err(IngestError::SchemaViolation(format!("duplicate label {label:?}")));
        }
        if !m.volume_mm3.is_finite() || m.volume_mm3 < 0.0 {
            return Err(IngestError::SchemaViolation(format!(
                "{label}: volume_mm3 must be a non-negative number, got {}",
                m.volume_mm3
            )));
        }
        if !m.mean_intensity.is_finite() {
            return Err(IngestError::SchemaViolation(format!(
                "{label}: mean_intensity must be finite"
            )));
        }
        if !catalog.contains(&label) {
            return Err(IngestError::UnknownLabel {
                label,
                label_set: file.label_set_id,
            });
        }
        structures.push(StructureStat {
            label,
            volume_mm3: m.volume_mm3,
            mean_intensity: m.mean_intensity,
        });
    }

    if file.series_uid != expected.series_uid {
        return Err(IngestError::SeriesMismatch {
            expected: expected.series_uid.clone(),
            found: file.series_uid,
        });
    }

    Ok(SegmentationStatistics {
        series_uid: file.series_uid,
        segmenter_name: file.segmenter_name,
        segmenter_version: file.segmenter_version,
        label_set_id: file.label_set_id,
        structures,
    })
}
