//! Curated label → SNOMED CT / RadLex mapping tables.
//!
//! Tables are CSV with two leading metadata comments:
//!
//! ```text
//! #map_version: 1.0.0
//! #label_set: v1_104
//! label,snomed_code,snomed_display,radlex_id,equivalence_degree,notes
//! liver,10200004,Liver structure,RID58,1,
//! ```
//!
//! Equivalence degrees follow the five-step scale used for terminology
//! maps: 1 equivalent meaning, 2 equivalent with synonymy, 3 source broader
//! than target, 4 source narrower than target, 5 no map possible. Degree 5
//! rows carry the `NOMAP` sentinel instead of a concept id.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{is_valid_label, CatalogRegistry, LabelCatalog, LabelSetId};

pub const NOMAP: &str = "NOMAP";
pub const SNOMED_SYSTEM: &str = "http://snomed.info/sct";
const HEADER: [&str; 6] = [
    "label",
    "snomed_code",
    "snomed_display",
    "radlex_id",
    "equivalence_degree",
    "notes",
];

/// The mapping table shipped for the first catalog generation.
pub const BUNDLED_V1_TABLE: &str = include_str!("../data/mapping_v1_104.csv");

#[derive(Debug, Error)]
pub enum MappingError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing or invalid metadata: {0}")]
    Metadata(String),
    #[error("row {row}: {reason}")]
    MalformedRow { row: u64, reason: String },
    #[error("row {row}: duplicate label {label:?}")]
    DuplicateLabel { row: u64, label: String },
    #[error("row {row}: label {label:?} is not in catalog {label_set}")]
    UnknownLabel {
        row: u64,
        label: String,
        label_set: LabelSetId,
    },
    #[error("row {row}: equivalence degree {value:?} is outside 1-5")]
    BadEquivalenceDegree { row: u64, value: String },
    #[error("table targets {table} but catalog is {catalog}")]
    CatalogMismatch { table: LabelSetId, catalog: LabelSetId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct EquivalenceDegree(u8);

impl EquivalenceDegree {
    pub const EQUIVALENT: Self = Self(1);
    pub const NO_MAP: Self = Self(5);

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn is_no_map(self) -> bool {
        self.0 == 5
    }
}

impl TryFrom<u8> for EquivalenceDegree {
    type Error = String;

    fn try_from(value: u8) -> Result<Self, Self::Error> {
        if (1..=5).contains(&value) {
            Ok(Self(value))
        } else {
            Err(format!("equivalence degree {value} is outside 1-5"))
        }
    }
}

impl From<EquivalenceDegree> for u8 {
    fn from(d: EquivalenceDegree) -> Self {
        d.0
    }
}

impl fmt::Display for EquivalenceDegree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub label: String,
    pub snomed_code: String,
    pub snomed_display: String,
    pub radlex_id: Option<String>,
    pub equivalence_degree: EquivalenceDegree,
    pub notes: Option<String>,
}

impl MappingEntry {
    pub fn is_mapped(&self) -> bool {
        !self.equivalence_degree.is_no_map()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingTable {
    map_version: String,
    target_label_set_id: LabelSetId,
    entries: Vec<MappingEntry>,
    by_label: HashMap<String, usize>,
}

fn is_snomed_id(code: &str) -> bool {
    (6..=18).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_digit())
}

fn is_radlex_id(id: &str) -> bool {
    id.len() > 3 && id.starts_with("RID") && id[3..].bytes().all(|b| b.is_ascii_digit())
}

fn non_empty(s: &str) -> Option<String> {
    let s = s.trim();
    (!s.is_empty()).then(|| s.to_owned())
}

impl MappingTable {
    /// Builds a table from already-validated parts. Entries are checked with
    /// the same rules as the file loader.
    pub fn new(
        map_version: impl Into<String>,
        target_label_set_id: LabelSetId,
        entries: Vec<MappingEntry>,
        catalogs: &CatalogRegistry,
    ) -> Result<Self, MappingError> {
        let map_version = map_version.into();
        validate_version(&map_version)?;
        let catalog = catalogs.get(target_label_set_id);
        let mut by_label = HashMap::with_capacity(entries.len());
        for (i, entry) in entries.iter().enumerate() {
            let row = i as u64 + 1;
            validate_entry(entry, row, catalog)?;
            if by_label.insert(entry.label.clone(), i).is_some() {
                return Err(MappingError::DuplicateLabel {
                    row,
                    label: entry.label.clone(),
                });
            }
        }
        Ok(Self {
            map_version,
            target_label_set_id,
            entries,
            by_label,
        })
    }

    pub fn bundled_v1() -> Self {
        parse_mapping(BUNDLED_V1_TABLE, &CatalogRegistry::default()).expect("bundled table is valid")
    }

    pub fn map_version(&self) -> &str {
        &self.map_version
    }

    pub fn target_label_set_id(&self) -> LabelSetId {
        self.target_label_set_id
    }

    pub fn entries(&self) -> &[MappingEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The raw row for `label`, including degree-5 rows.
    pub fn entry(&self, label: &str) -> Option<&MappingEntry> {
        self.by_label.get(label).map(|&i| &self.entries[i])
    }

    /// The usable mapping for `label`; `None` when the label is absent or
    /// explicitly unmappable.
    pub fn lookup(&self, label: &str) -> Option<&MappingEntry> {
        self.entry(label).filter(|e| e.is_mapped())
    }

    pub fn contains_code(&self, snomed_code: &str) -> bool {
        self.entries
            .iter()
            .any(|e| e.is_mapped() && e.snomed_code == snomed_code)
    }

    /// Serializes in the file format accepted by [`parse_mapping`].
    pub fn to_csv(&self) -> String {
        let mut out = format!(
            "#map_version: {}\n#label_set: {}\n",
            self.map_version, self.target_label_set_id
        );
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        writer.write_record(HEADER).expect("write to Vec");
        for e in &self.entries {
            let degree = e.equivalence_degree.to_string();
            writer
                .write_record([
                    e.label.as_str(),
                    e.snomed_code.as_str(),
                    e.snomed_display.as_str(),
                    e.radlex_id.as_deref().unwrap_or(""),
                    degree.as_str(),
                    e.notes.as_deref().unwrap_or(""),
                ])
                .expect("write to Vec");
        }
        let body = writer.into_inner().expect("flush Vec");
        out.push_str(std::str::from_utf8(&body).expect("csv output is UTF-8"));
        out
    }
}

fn validate_version(v: &str) -> Result<(), MappingError> {
    semver::Version::parse(v)
        .map(|_| ())
        .map_err(|e| MappingError::Metadata(format!("map_version {v:?}: {e}")))
}

fn validate_entry(entry: &MappingEntry, row: u64, catalog: &LabelCatalog) -> Result<(), MappingError> {
    let malformed = |reason: String| MappingError::MalformedRow { row, reason };
    if !is_valid_label(&entry.label) {
        return Err(malformed(format!("invalid label {:?}", entry.label)));
    }
    if !catalog.contains(&entry.label) {
        return Err(MappingError::UnknownLabel {
            row,
            label: entry.label.clone(),
            label_set: catalog.id(),
        });
    }
    if entry.equivalence_degree.is_no_map() {
        if entry.snomed_code != NOMAP {
            return Err(malformed(format!(
                "degree 5 rows must use {NOMAP}, found {:?}",
                entry.snomed_code
            )));
        }
    } else {
        if !is_snomed_id(&entry.snomed_code) {
            return Err(malformed(format!("invalid SNOMED CT id {:?}", entry.snomed_code)));
        }
        if entry.snomed_display.trim().is_empty() {
            return Err(malformed("snomed_display is empty".into()));
        }
    }
    if let Some(rid) = &entry.radlex_id {
        if !is_radlex_id(rid) {
            return Err(malformed(format!("invalid RadLex id {rid:?}")));
        }
    }
    Ok(())
}

/// Parses and validates a table. All-or-nothing: the first bad row fails
/// the whole load.
pub fn parse_mapping(text: &str, catalogs: &CatalogRegistry) -> Result<MappingTable, MappingError> {
    let mut map_version = None;
    let mut label_set = None;
    let mut meta_lines = 0u64;
    let mut rest = text;
    while let Some(line) = rest.lines().next() {
        let Some(meta) = line.strip_prefix('#') else { break };
        meta_lines += 1;
        rest = &rest[line.len()..];
        rest = rest.strip_prefix("\r\n").or_else(|| rest.strip_prefix('\n')).unwrap_or(rest);
        let Some((key, value)) = meta.split_once(':') else {
            continue;
        };
        match key.trim() {
            "map_version" => map_version = Some(value.trim().to_owned()),
            "label_set" => {
                label_set = Some(
                    value
                        .trim()
                        .parse::<LabelSetId>()
                        .map_err(|e| MappingError::Metadata(e.to_string()))?,
                )
            }
            _ => {}
        }
    }
    let map_version = map_version.ok_or_else(|| MappingError::Metadata("map_version missing".into()))?;
    validate_version(&map_version)?;
    let label_set = label_set.ok_or_else(|| MappingError::Metadata("label_set missing".into()))?;
    let catalog = catalogs.get(label_set);

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(rest.as_bytes());
    let headers = reader.headers().map_err(|e| MappingError::MalformedRow {
        row: meta_lines + 1,
        reason: e.to_string(),
    })?;
    if headers.iter().map(str::trim).ne(HEADER) {
        return Err(MappingError::MalformedRow {
            row: meta_lines + 1,
            reason: format!("header must be {}", HEADER.join(",")),
        });
    }

    let mut entries = Vec::new();
    let mut by_label = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| MappingError::MalformedRow {
            row: meta_lines + e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let row = meta_lines + record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let degree_raw = field(4);
        let equivalence_degree = degree_raw
            .parse::<u8>()
            .ok()
            .and_then(|d| EquivalenceDegree::try_from(d).ok())
            .ok_or_else(|| MappingError::BadEquivalenceDegree {
                row,
                value: degree_raw.to_owned(),
            })?;
        let entry = MappingEntry {
            label: field(0).to_owned(),
            snomed_code: field(1).to_owned(),
            snomed_display: field(2).to_owned(),
            radlex_id: non_empty(field(3)),
            equivalence_degree,
            notes: non_empty(field(5)),
        };
        validate_entry(&entry, row, catalog)?;
        if by_label.insert(entry.label.clone(), entries.len()).is_some() {
            return Err(MappingError::DuplicateLabel { row, label: entry.label });
        }
        entries.push(entry);
    }

    Ok(MappingTable {
        map_version,
        target_label_set_id: label_set,
        entries,
        by_label,
    })
}

pub fn load_mapping(path: impl AsRef<Path>) -> Result<MappingTable, MappingError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| MappingError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_mapping(&text, &CatalogRegistry::default())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub label_set_id: LabelSetId,
    pub map_version: String,
    pub catalog_size: usize,
    pub mapped_count: usize,
    pub mapped_fraction: f64,
    /// Catalog labels without a usable mapping, in catalog order.
    pub unmapped: Vec<String>,
    /// Entry count per equivalence degree (all entries, including degree 5).
    pub degree_histogram: BTreeMap<u8, usize>,
}

pub fn coverage_report(table: &MappingTable, catalog: &LabelCatalog) -> Result<CoverageReport, MappingError> {
    if catalog.id() != table.target_label_set_id() {
        return Err(MappingError::CatalogMismatch {
            table: table.target_label_set_id(),
            catalog: catalog.id(),
        });
    }
    let mut degree_histogram: BTreeMap<u8, usize> = (1..=5).map(|d| (d, 0)).collect();
    for e in table.entries() {
        *degree_histogram.entry(e.equivalence_degree.get()).or_default() += 1;
    }
    let unmapped: Vec<String> = catalog
        .labels()
        .iter()
        .filter(|l| table.lookup(l).is_none())
        .cloned()
        .collect();
    let mapped_count = catalog.len() - unmapped.len();
    let mapped_fraction = if catalog.is_empty() {
        0.0
    } else {
        mapped_count as f64 / catalog.len() as f64
    };
    Ok(CoverageReport {
        label_set_id: catalog.id(),
        map_version: table.map_version().to_owned(),
        catalog_size: catalog.len(),
        mapped_count,
        mapped_fraction,
        unmapped,
        degree_histogram,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn registry() -> CatalogRegistry {
        CatalogRegistry::default()
    }

    fn table_text(rows: &[&str]) -> String {
        let mut s = String::from(
            "#map_version: 0.1.0\n#label_set: v1_104\nlabel,snomed_code,snomed_display,radlex_id,equivalence_degree,notes\n",
        );
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    #[test]
    fn bundled_table_is_complete() {
        let table = MappingTable::bundled_v1();
        assert_eq!(table.len(), 104);
        assert_eq!(table.map_version(), "1.0.0");
        let report = coverage_report(&table, LabelCatalog::builtin(LabelSetId::V1_104)).unwrap();
        assert_eq!(report.mapped_fraction, 1.0);
        assert!(report.unmapped.is_empty());
    }

    #[test]
    fn liver_lookup() {
        let table = MappingTable::bundled_v1();
        let liver = table.lookup("liver").unwrap();
        assert_eq!(liver.snomed_code, "10200004");
        assert_eq!(liver.snomed_display, "Liver structure");
        assert!(table.lookup("nonexistent_xyz").is_none());
    }

    #[test]
    fn degree_five_is_not_mapped() {
        let text = table_text(&["liver,NOMAP,,,5,no target concept", "spleen,78961009,Splenic structure,,1,"]);
        let table = parse_mapping(&text, &registry()).unwrap();
        assert!(table.entry("liver").is_some());
        assert!(table.lookup("liver").is_none());
        assert!(table.lookup("spleen").is_some());
    }

    #[test]
    fn duplicate_label() {
        let text = table_text(&[
            "liver,10200004,Liver structure,,1,",
            "liver,10200004,Liver structure,,1,",
        ]);
        assert!(matches!(
            parse_mapping(&text, &registry()),
            Err(MappingError::DuplicateLabel { row: 5, .. })
        ));
    }

    #[test]
    fn bad_degree() {
        for degree in ["0", "6", "x", ""] {
            let text = table_text(&[&format!("liver,10200004,Liver structure,,{degree},")]);
            assert!(
                matches!(
                    parse_mapping(&text, &registry()),
                    Err(MappingError::BadEquivalenceDegree { row: 4, .. })
                ),
                "{degree}"
            );
        }
    }

    #[test]
    fn row_level_errors() {
        let cases = [
            ("skull,1234567,Skull,,1,", "unknown"),
            ("liver,NOMAP,,,1,", "malformed"),
            ("liver,10200004,,,1,", "malformed"),
            ("liver,10200004,Liver structure,58,1,", "malformed"),
            ("liver,10200004,Liver structure,,5,", "malformed"),
            ("liver,10200004,Liver structure,,1", "malformed"),
        ];
        for (row, kind) in cases {
            let err = parse_mapping(&table_text(&[row]), &registry()).unwrap_err();
            let ok = match kind {
                "unknown" => matches!(err, MappingError::UnknownLabel { .. }),
                _ => matches!(err, MappingError::MalformedRow { .. }),
            };
            assert!(ok, "{row}: {err:?}");
        }
    }

    #[test]
    fn metadata_is_required() {
        let no_meta = "label,snomed_code,snomed_display,radlex_id,equivalence_degree,notes\n";
        assert!(matches!(parse_mapping(no_meta, &registry()), Err(MappingError::Metadata(_))));
        let bad_header = "#map_version: 1.0.0\n#label_set: v1_104\nlabel,code\n";
        assert!(matches!(
            parse_mapping(bad_header, &registry()),
            Err(MappingError::MalformedRow { row: 3, .. })
        ));
    }

    #[test]
    fn coverage_with_missing_labels() {
        let full = MappingTable::bundled_v1();
        let dropped = ["liver", "spleen", "face", "rib_left_3"];
        let entries: Vec<_> = full
            .entries()
            .iter()
            .filter(|e| !dropped.contains(&e.label.as_str()))
            .cloned()
            .collect();
        let table = MappingTable::new("1.0.1", LabelSetId::V1_104, entries, &registry()).unwrap();
        let report = coverage_report(&table, LabelCatalog::builtin(LabelSetId::V1_104)).unwrap();
        assert_eq!(report.mapped_count, 100);
        assert_eq!(report.mapped_fraction, 100.0 / 104.0);
        let mut unmapped = report.unmapped.clone();
        unmapped.sort();
        assert_eq!(unmapped, ["face", "liver", "rib_left_3", "spleen"]);
        assert_eq!(report.degree_histogram.values().sum::<usize>(), 100);
    }

    #[test]
    fn coverage_catalog_mismatch() {
        let table = MappingTable::bundled_v1();
        assert!(matches!(
            coverage_report(&table, LabelCatalog::builtin(LabelSetId::V2_117)),
            Err(MappingError::CatalogMismatch { .. })
        ));
    }

    #[test]
    fn csv_round_trip() {
        let table = MappingTable::bundled_v1();
        assert_eq!(parse_mapping(&table.to_csv(), &registry()).unwrap(), table);
    }
}
