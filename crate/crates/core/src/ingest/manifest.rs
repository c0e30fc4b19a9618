//! Line-delimited series manifests:
//!
//! ```text
//! # series_uid|study_uid|patient_pseudonym|acquisition_date|modality|source[|body_region_hint]
//! 1.2.840.1|1.2.840|pat-0001|2019-03-14|CT|legacy
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use chrono::{NaiveDate, Utc};

use super::{IngestError, Lane, Modality, SeriesDescriptor};

/// Parses manifest text. Records keep file order; `today` bounds the
/// acquisition date.
pub fn parse_manifest(text: &str, today: NaiveDate) -> Result<Vec<SeriesDescriptor>, IngestError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let malformed = |reason: String| IngestError::MalformedRecord { line: line_no, reason };
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        if fields.len() != 6 && fields.len() != 7 {
            return Err(malformed(format!("expected 6 or 7 fields, found {}", fields.len())));
        }
        let acquisition_date = NaiveDate::parse_from_str(fields[3], "%Y-%m-%d")
            .map_err(|e| malformed(format!("acquisition_date {:?}: {e}", fields[3])))?;
        let modality: Modality = fields[4].parse().map_err(malformed)?;
        let source: Lane = fields[5].parse().map_err(malformed)?;
        let body_region_hint = fields
            .get(6)
            .filter(|hint| !hint.is_empty())
            .map(|hint| (*hint).to_owned());
        let descriptor = SeriesDescriptor {
            series_uid: fields[0].to_owned(),
            study_uid: fields[1].to_owned(),
            patient_pseudonym: fields[2].to_owned(),
            acquisition_date,
            modality,
            body_region_hint,
            source,
        };
        descriptor.validate(today).map_err(malformed)?;
        if !seen.insert(descriptor.series_uid.clone()) {
            return Err(IngestError::DuplicateSeriesUid {
                line: line_no,
                series_uid: descriptor.series_uid,
            });
        }
        out.push(descriptor);
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<SeriesDescriptor>, IngestError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_manifest(&text, Utc::now().date_naive())
}

/// Renders descriptors in manifest form.
pub fn write_manifest(series: &[SeriesDescriptor]) -> String {
    let mut out = String::from(
        "# series_uid|study_uid|patient_pseudonym|acquisition_date|modality|source|body_region_hint\n",
    );
    for s in series {
        out.push_str(&format!(
            "{}|{}|{}|{}|{}|{}",
            s.series_uid,
            s.study_uid,
            s.patient_pseudonym,
            s.acquisition_date.format("%Y-%m-%d"),
            s.modality,
            s.source
        ));
        if let Some(hint) = &s.body_region_hint {
            out.push('|');
            out.push_str(hint);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn today() -> NaiveDate {
        NaiveDate::from_ymd_opt(2024, 3, 1).unwrap()
    }

    #[test]
    fn keeps_file_order() {
        let text = "\
# comment
s3|st1|p1|2019-01-02|CT|legacy
s1|st1|p1|2003-05-06|CT|legacy

s2|st2|p2|2024-02-29|MR|daily|thorax
";
        let got = parse_manifest(text, today()).unwrap();
        let uids: Vec<_> = got.iter().map(|s| s.series_uid.as_str()).collect();
        assert_eq!(uids, ["s3", "s1", "s2"]);
        assert_eq!(got[2].modality, Modality::Mr);
        assert_eq!(got[2].body_region_hint.as_deref(), Some("thorax"));
    }

    #[test]
    fn duplicate_uid() {
        let text = "s1|a|p|2019-01-02|CT|daily\ns1|b|p|2019-01-03|CT|daily\n";
        match parse_manifest(text, today()) {
            Err(IngestError::DuplicateSeriesUid { line, series_uid }) => {
                assert_eq!(line, 2);
                assert_eq!(series_uid, "s1");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file() {
        assert!(parse_manifest("", today()).unwrap().is_empty());
    }

    #[test]
    fn malformed_records_carry_line_numbers() {
        for (text, expected_line) in [
            ("s1|a|p|2019-01-02|CT\n", 1),
            ("# x\ns1|a|p|2019-13-02|CT|daily\n", 2),
            ("s1|a|p|2019-01-02|CT|weekly\n", 1),
            ("s1|a|p|2030-01-02|CT|daily\n", 1),
            ("|a|p|2019-01-02|CT|daily\n", 1),
        ] {
            match parse_manifest(text, today()) {
                Err(IngestError::MalformedRecord { line, .. }) => assert_eq!(line, expected_line, "{text}"),
                other => panic!("{text}: unexpected {other:?}"),
            }
        }
    }

    #[test]
    fn write_then_parse() {
        let text = "s1|a|p|2019-01-02|CT|daily|abdomen\ns2|a|p|2018-01-02|PT|legacy\n";
        let parsed = parse_manifest(text, today()).unwrap();
        assert_eq!(parse_manifest(&write_manifest(&parsed), today()).unwrap(), parsed);
    }
}
