use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::model::{Identifier, Resource};
use super::{urn_for, FhirError, ResourceSet};

pub const BUNDLE_FILE_EXTENSION: &str = ".fhir-bundle.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleRequest {
    pub method: String,
    pub url: String,
    /// Conditional-create criteria.
    #[serde(rename = "ifNoneExist", default, skip_serializing_if = "Option::is_none")]
    pub if_none_exist: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleEntry {
    #[serde(rename = "fullUrl")]
    pub full_url: String,
    pub resource: Resource,
    pub request: BundleRequest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionBundle {
    #[serde(rename = "resourceType")]
    resource_type: String,
    #[serde(rename = "type")]
    kind: String,
    entry: Vec<BundleEntry>,
}

fn criteria(identifier: &Identifier) -> String {
    format!("identifier={}|{}", identifier.system, identifier.value)
}

fn conditional_key(resource: &Resource) -> Option<String> {
    match resource {
        Resource::Patient(p) => p.identifier.first().map(criteria),
        Resource::Device(d) => d.identifier.first().map(criteria),
        _ => None,
    }
}

fn entry(resource: Resource) -> BundleEntry {
    BundleEntry {
        full_url: urn_for(resource.id()),
        request: BundleRequest {
            method: "POST".into(),
            url: resource.resource_type().into(),
            if_none_exist: conditional_key(&resource),
        },
        resource,
    }
}

impl TransactionBundle {
    pub fn entries(&self) -> &[BundleEntry] {
        &self.entry
    }

    pub fn len(&self) -> usize {
        self.entry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_empty()
    }

    pub fn count_of(&self, resource_type: &str) -> usize {
        self.entry.iter().filter(|e| e.resource.resource_type() == resource_type).count()
    }

    /// Checks that the bundle is a well-formed, self-contained transaction.
    pub fn validate(&self) -> Result<(), FhirError> {
        let bad = |msg: String| Err(FhirError::MalformedBundle(msg));
        if self.resource_type != "Bundle" || self.kind != "transaction" {
            return bad(format!("expected a transaction Bundle, got {} {}", self.resource_type, self.kind));
        }
        let mut urls = HashSet::new();
        for e in &self.entry {
            let rt = e.resource.resource_type();
            if e.full_url != urn_for(e.resource.id()) {
                return bad(format!("{rt} fullUrl {} does not match id {}", e.full_url, e.resource.id()));
            }
            if !urls.insert(e.full_url.as_str()) {
                return bad(format!("duplicate entry {}", e.full_url));
            }
            if e.request.method != "POST" || e.request.url != rt {
                return bad(format!("{rt} entry has request {} {}", e.request.method, e.request.url));
            }
            let expected = conditional_key(&e.resource);
            if matches!(e.resource, Resource::Patient(_) | Resource::Device(_)) && expected.is_none() {
                return bad(format!("{rt} {} has no identifier", e.resource.id()));
            }
            if e.request.if_none_exist != expected {
                return bad(format!("{rt} {} has wrong conditional criteria", e.resource.id()));
            }
        }
        for e in &self.entry {
            for target in e.resource.references() {
                if !urls.contains(target) {
                    return bad(format!("unresolved reference {target}"));
                }
            }
        }
        Ok(())
    }
}

/// Batches resource sets into one transaction. Patient and Device entries
/// are emitted once per identity as conditional creates; order is all
/// patients, all devices, then ImagingStudy, BodyStructure, Provenance per
/// series.
pub fn to_transaction_bundle(sets: &[ResourceSet]) -> Result<TransactionBundle, FhirError> {
    if sets.is_empty() {
        return Err(FhirError::EmptyBundle);
    }
    let mut seen = HashSet::new();
    let mut patients = Vec::new();
    let mut devices = Vec::new();
    let mut series = Vec::with_capacity(sets.len() * 3);
    for set in sets {
        if seen.insert(urn_for(&set.patient.id)) {
            patients.push(entry(Resource::Patient(set.patient.clone())));
        }
        if seen.insert(urn_for(&set.device.id)) {
            devices.push(entry(Resource::Device(set.device.clone())));
        }
        series.push(entry(Resource::ImagingStudy(set.imaging_study.clone())));
        series.push(entry(Resource::BodyStructure(set.body_structure.clone())));
        series.push(entry(Resource::Provenance(set.provenance.clone())));
    }
    patients.append(&mut devices);
    patients.append(&mut series);
    Ok(TransactionBundle {
        resource_type: "Bundle".into(),
        kind: "transaction".into(),
        entry: patients,
    })
}

/// Canonical text form: pretty JSON with fixed key order and a trailing
/// newline. Equal bundles serialize to identical bytes.
pub fn serialize_bundle(bundle: &TransactionBundle) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(bundle).expect("bundle serialize");
    out.push(b'\n');
    out
}

pub fn parse_bundle(bytes: &[u8]) -> Result<TransactionBundle, FhirError> {
    let bundle: TransactionBundle =
        serde_json::from_slice(bytes).map_err(|e| FhirError::MalformedBundle(e.to_string()))?;
    bundle.validate()?;
    Ok(bundle)
}

/// One compact resource per line, in bundle order, for bulk loading.
pub fn to_ndjson(bundle: &TransactionBundle) -> Vec<u8> {
    let mut out = Vec::new();
    for e in &bundle.entry {
        serde_json::to_writer(&mut out, &e.resource).expect("resource serialize");
        out.push(b'\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::super::tests::{annotations, device, series};
    use super::super::{build_resources, ProfileSet};
    use super::*;

    fn set(uid: &str, patient: &str) -> ResourceSet {
        build_resources(&annotations(uid, 2), &series(uid, patient), &device(), &ProfileSet::default()).unwrap()
    }

    #[test]
    fn one_series_five_entries() {
        let b = to_transaction_bundle(&[set("1", "p")]).unwrap();
        assert_eq!(b.len(), 5);
        b.validate().unwrap();
    }

    #[test]
    fn shared_patient_and_device_dedup() {
        let b = to_transaction_bundle(&[set("1", "p"), set("2", "p")]).unwrap();
        assert_eq!(b.len(), 8);
        let types: Vec<_> = b.entries().iter().map(|e| e.resource.resource_type()).collect();
        assert_eq!(
            types,
            [
                "Patient",
                "Device",
                "ImagingStudy",
                "BodyStructure",
                "Provenance",
                "ImagingStudy",
                "BodyStructure",
                "Provenance"
            ]
        );
        assert_eq!(
            b.entries()[0].request.if_none_exist.as_deref(),
            Some("identifier=urn:ctindex:patient-pseudonym|p")
        );
        assert!(b.entries()[1].request.if_none_exist.as_deref().unwrap().starts_with("identifier=urn:ctindex:device-identity|"));
        assert!(b.entries()[2..].iter().all(|e| e.request.if_none_exist.is_none()));
    }

    #[test]
    fn two_patients_one_device() {
        let b = to_transaction_bundle(&[set("1", "p"), set("2", "q")]).unwrap();
        assert_eq!(b.len(), 9);
        assert_eq!((b.count_of("Patient"), b.count_of("Device")), (2, 1));
    }

    #[test]
    fn empty_input() {
        assert_eq!(to_transaction_bundle(&[]), Err(FhirError::EmptyBundle));
    }

    #[test]
    fn round_trip_is_canonical() {
        let b = to_transaction_bundle(&[set("1", "p"), set("2", "q")]).unwrap();
        let bytes = serialize_bundle(&b);
        assert_eq!(serialize_bundle(&b), bytes);
        let parsed = parse_bundle(&bytes).unwrap();
        assert_eq!(parsed, b);
        assert_eq!(serialize_bundle(&parsed), bytes);
    }

    #[test]
    fn parse_rejects_broken_references() {
        let mut b = to_transaction_bundle(&[set("1", "p")]).unwrap();
        b.entry.remove(0);
        assert!(matches!(parse_bundle(&serialize_bundle(&b)), Err(FhirError::MalformedBundle(_))));
        assert!(parse_bundle(b"{}").is_err());
        assert!(parse_bundle(b"\xff").is_err());
    }

    #[test]
    fn parse_rejects_missing_criteria() {
        let mut b = to_transaction_bundle(&[set("1", "p")]).unwrap();
        b.entry[0].request.if_none_exist = None;
        assert!(parse_bundle(&serialize_bundle(&b)).is_err());
    }

    #[test]
    fn ndjson_lines() {
        let b = to_transaction_bundle(&[set("1", "p"), set("2", "p")]).unwrap();
        let text = String::from_utf8(to_ndjson(&b)).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 8);
        for line in lines {
            let r: Resource = serde_json::from_str(line).unwrap();
            assert!(!r.id().is_empty());
        }
    }
}
