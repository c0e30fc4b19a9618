//! Versioned label catalogs.
//!
//! A catalog is the closed set of structure labels a segmenter version can
//! emit. Three catalogs ship with the crate; others can be loaded from the
//! same one-label-per-line text format as long as their size matches the
//! declared label-set id.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::IngestError;

/// Identifies a segmenter label-set version.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LabelSetId {
    #[serde(rename = "v1_104")]
    V1_104,
    #[serde(rename = "v2_117")]
    V2_117,
    #[serde(rename = "v2plus_124")]
    V2Plus124,
}

impl LabelSetId {
    pub const ALL: [LabelSetId; 3] = [LabelSetId::V1_104, LabelSetId::V2_117, LabelSetId::V2Plus124];

    pub fn as_str(self) -> &'static str {
        match self {
            LabelSetId::V1_104 => "v1_104",
            LabelSetId::V2_117 => "v2_117",
            LabelSetId::V2Plus124 => "v2plus_124",
        }
    }

    /// Number of labels the catalog for this id must contain.
    pub fn expected_size(self) -> usize {
        match self {
            LabelSetId::V1_104 => 104,
            LabelSetId::V2_117 => 117,
            LabelSetId::V2Plus124 => 124,
        }
    }
}

impl fmt::Display for LabelSetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LabelSetId {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LabelSetId::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| IngestError::UnknownLabelSet(s.to_owned()))
    }
}

/// Returns true when `label` matches `[a-z0-9_]+`.
pub fn is_valid_label(label: &str) -> bool {
    !label.is_empty()
        && label
            .bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelCatalog {
    id: LabelSetId,
    labels: Vec<String>,
    members: HashSet<String>,
}

impl LabelCatalog {
    /// Parses a catalog file: one label per line, `#` comments and blank
    /// lines ignored.
    pub fn from_text(id: LabelSetId, text: &str) -> Result<Self, IngestError> {
        let mut labels = Vec::new();
        let mut members = HashSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if !is_valid_label(line) {
                return Err(IngestError::InvalidCatalog(format!(
                    "line {}: invalid label {line:?}",
                    idx + 1
                )));
            }
            if !members.insert(line.to_owned()) {
                return Err(IngestError::InvalidCatalog(format!(
                    "line {}: duplicate label {line:?}",
                    idx + 1
                )));
            }
            labels.push(line.to_owned());
        }
        if labels.len() != id.expected_size() {
            return Err(IngestError::InvalidCatalog(format!(
                "catalog {id} must list {} labels, found {}",
                id.expected_size(),
                labels.len()
            )));
        }
        Ok(Self { id, labels, members })
    }

    /// The catalog bundled with the crate for `id`.
    pub fn builtin(id: LabelSetId) -> &'static LabelCatalog {
        static V1: OnceLock<LabelCatalog> = OnceLock::new();
        static V2: OnceLock<LabelCatalog> = OnceLock::new();
        static V2P: OnceLock<LabelCatalog> = OnceLock::new();
        let (cell, text) = match id {
            LabelSetId::V1_104 => (&V1, include_str!("../../data/catalogs/v1_104.txt")),
            LabelSetId::V2_117 => (&V2, include_str!("../../data/catalogs/v2_117.txt")),
            LabelSetId::V2Plus124 => (&V2P, include_str!("../../data/catalogs/v2plus_124.txt")),
        };
        cell.get_or_init(|| LabelCatalog::from_text(id, text).expect("bundled catalog is valid"))
    }

    pub fn id(&self) -> LabelSetId {
        self.id
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn contains(&self, label: &str) -> bool {
        self.members.contains(label)
    }

    /// Labels in file order.
    pub fn labels(&self) -> &[String] {
        &self.labels
    }
}

/// Resolves label-set ids to catalogs. Defaults to the bundled catalogs;
/// individual ids can be overridden with externally loaded files.
#[derive(Debug, Clone, Default)]
pub struct CatalogRegistry {
    overrides: Vec<LabelCatalog>,
}

impl CatalogRegistry {
    pub fn with_catalog(mut self, catalog: LabelCatalog) -> Self {
        self.overrides.retain(|c| c.id() != catalog.id());
        self.overrides.push(catalog);
        self
    }

    pub fn get(&self, id: LabelSetId) -> &LabelCatalog {
        self.overrides
            .iter()
            .find(|c| c.id() == id)
            .unwrap_or_else(|| LabelCatalog::builtin(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_catalog_sizes() {
        for id in LabelSetId::ALL {
            assert_eq!(LabelCatalog::builtin(id).len(), id.expected_size());
        }
    }

    #[test]
    fn later_catalogs_extend_the_first_generation() {
        let v1 = LabelCatalog::builtin(LabelSetId::V1_104);
        let v2p = LabelCatalog::builtin(LabelSetId::V2Plus124);
        assert!(v1.labels().iter().all(|l| v2p.contains(l)));
    }

    #[test]
    fn label_pattern() {
        assert!(is_valid_label("vertebrae_l5"));
        assert!(!is_valid_label("vertebrae_L5"));
        assert!(!is_valid_label(""));
        assert!(!is_valid_label("liver "));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let err = LabelCatalog::from_text(LabelSetId::V1_104, "liver\nspleen\n").unwrap_err();
        assert!(matches!(err, IngestError::InvalidCatalog(_)));
    }

    #[test]
    fn unknown_label_set_id() {
        assert!(matches!(
            "v3_200".parse::<LabelSetId>(),
            Err(IngestError::UnknownLabelSet(_))
        ));
        assert_eq!("v2plus_124".parse::<LabelSetId>().unwrap(), LabelSetId::V2Plus124);
    }
}
