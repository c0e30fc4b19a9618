//! Series descriptors, segmentation statistics files, manifests and the
//! deterministic mock segmenter.

mod catalog;
mod manifest;
mod mock;
mod statistics;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{is_valid_label, CatalogRegistry, LabelCatalog, LabelSetId};
pub use manifest::{load_manifest, parse_manifest, write_manifest};
pub use mock::{anatomical_order, mock_segment, MockCalibration, RegionModel};
pub use statistics::{
    parse_statistics, parse_statistics_with, SegmentationStatistics, StructureStat,
};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("malformed statistics file: {0}")]
    MalformedFile(String),
    #[error("statistics schema violation: {0}")]
    SchemaViolation(String),
    #[error("label {label:?} is not in catalog {label_set}")]
    UnknownLabel { label: String, label_set: LabelSetId },
    #[error("statistics belong to series {found:?}, expected {expected:?}")]
    SeriesMismatch { expected: String, found: String },
    #[error("manifest line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("manifest line {line}: duplicate series_uid {series_uid:?}")]
    DuplicateSeriesUid { line: usize, series_uid: String },
    #[error("unknown label set id {0:?}")]
    UnknownLabelSet(String),
    #[error("invalid label catalog: {0}")]
    InvalidCatalog(String),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Which intake stream a series arrived through. Doubles as the scheduler
/// lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lane {
    Daily,
    Legacy,
}

impl Lane {
    pub fn as_str(self) -> &'static str {
        match self {
            Lane::Daily => "daily",
            Lane::Legacy => "legacy",
        }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lane {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "daily" => Ok(Lane::Daily),
            "legacy" => Ok(Lane::Legacy),
            other => Err(format!("unknown source {other:?}, expected daily|legacy")),
        }
    }
}

/// DICOM modality code. Only CT is indexed; everything else is carried so
/// that it can be rejected with a useful message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Modality {
    Ct,
    Mr,
    Pt,
    Cr,
    Dx,
    Us,
    Other(String),
}

impl Modality {
    pub fn is_ct(&self) -> bool {
        matches!(self, Modality::Ct)
    }

    pub fn code(&self) -> &str {
        match self {
            Modality::Ct => "CT",
            Modality::Mr => "MR",
            Modality::Pt => "PT",
            Modality::Cr => "CR",
            Modality::Dx => "DX",
            Modality::Us => "US",
            Modality::Other(code) => code,
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl TryFrom<String> for Modality {
    type Error = String;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        if value.is_empty() || !value.bytes().all(|b| b.is_ascii_uppercase() || b.is_ascii_digit()) {
            return Err(format!("invalid modality code {value:?}"));
        }
        Ok(match value.as_str() {
            "CT" => Modality::Ct,
            "MR" => Modality::Mr,
            "PT" => Modality::Pt,
            "CR" => Modality::Cr,
            "DX" => Modality::Dx,
            "US" => Modality::Us,
            _ => Modality::Other(value),
        })
    }
}

impl From<Modality> for String {
    fn from(m: Modality) -> Self {
        m.code().to_owned()
    }
}

impl FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::try_from(s.to_owned())
    }
}

/// Identity metadata of one imaging series.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeriesDescriptor {
    pub series_uid: String,
    pub study_uid: String,
    pub patient_pseudonym: String,
    pub acquisition_date: NaiveDate,
    pub modality: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body_region_hint: Option<String>,
    pub source: Lane,
}

impl SeriesDescriptor {
    /// Checks the per-record invariants. `today` is the ingestion date; an
    /// acquisition after it is rejected.
    pub fn validate(&self, today: NaiveDate) -> Result<(), String> {
        for (name, value) in [
            ("series_uid", &self.series_uid),
            ("study_uid", &self.study_uid),
            ("patient_pseudonym", &self.patient_pseudonym),
        ] {
            if value.trim().is_empty() {
                return Err(format!("{name} must not be empty"));
            }
            if value.contains(['|', '\n', '\r']) {
                return Err(format!("{name} contains a reserved character"));
            }
        }
        if self.acquisition_date > today {
            return Err(format!(
                "acquisition_date {} is after ingestion date {today}",
                self.acquisition_date
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn descriptor() -> SeriesDescriptor {
        SeriesDescriptor {
            series_uid: "1.2.3".into(),
            study_uid: "1.2".into(),
            patient_pseudonym: "p-1".into(),
            acquisition_date: NaiveDate::from_ymd_opt(2020, 5, 1).unwrap(),
            modality: Modality::Ct,
            body_region_hint: None,
            source: Lane::Daily,
        }
    }

    #[test]
    fn future_acquisition_is_invalid() {
        let d = descriptor();
        assert!(d.validate(NaiveDate::from_ymd_opt(2020, 5, 1).unwrap()).is_ok());
        assert!(d.validate(NaiveDate::from_ymd_opt(2020, 4, 30).unwrap()).is_err());
    }

    #[test]
    fn empty_uid_is_invalid() {
        let mut d = descriptor();
        d.series_uid = " ".into();
        assert!(d.validate(NaiveDate::MAX).is_err());
    }

    #[test]
    fn modality_serde() {
        let m: Modality = serde_json::from_str("\"MR\"").unwrap();
        assert_eq!(m, Modality::Mr);
        assert!(!m.is_ct());
        let other: Modality = serde_json::from_str("\"XA\"").unwrap();
        assert_eq!(other, Modality::Other("XA".into()));
        assert!(serde_json::from_str::<Modality>("\"ct\"").is_err());
        assert_eq!(serde_json::to_string(&Modality::Ct).unwrap(), "\"CT\"");
    }
}
