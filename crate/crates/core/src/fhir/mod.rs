//! FHIR R5 export: five resources per indexed series, batched into
//! transaction bundles where Patient and Device are conditional creates.

mod bundle;
pub mod model;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::AnnotationSet;
use crate::ingest::SeriesDescriptor;
use crate::termmap::SNOMED_SYSTEM;

pub use bundle::{
    parse_bundle, serialize_bundle, to_ndjson, to_transaction_bundle, BundleEntry, BundleRequest, TransactionBundle,
    BUNDLE_FILE_EXTENSION,
};
use model::{
    BodyStructure, CodeableConcept, CodeableReference, Coding, Device, DeviceVersion, Identifier, ImagingStudy,
    ImagingStudySeries, IncludedStructure, Meta, Patient, Provenance, ProvenanceAgent, Reference, Resource,
};

pub const PATIENT_IDENTIFIER_SYSTEM: &str = "urn:ctindex:patient-pseudonym";
pub const DEVICE_IDENTIFIER_SYSTEM: &str = "urn:ctindex:device-identity";
pub const DICOM_UID_SYSTEM: &str = "urn:dicom:uid";
pub const DICOM_MODALITY_SYSTEM: &str = "http://dicom.nema.org/resources/ontology/DCM";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FhirError {
    #[error("annotation set for series {0} has no annotations")]
    EmptyAnnotationSet(String),
    #[error("annotation set is for series {annotations}, descriptor is for {series}")]
    SeriesMismatch { annotations: String, series: String },
    #[error("invalid device identity: {0}")]
    InvalidDevice(String),
    #[error("invalid counts: {0}")]
    InvalidCounts(String),
    #[error("a transaction bundle needs at least one resource set")]
    EmptyBundle,
    #[error("malformed bundle: {0}")]
    MalformedBundle(String),
}

/// Canonical profile URLs stamped into `meta.profile`. Opaque strings; no
/// validation against the profiles happens here.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileSet {
    pub patient: String,
    pub imaging_study: String,
    pub body_structure: String,
    pub device: String,
    pub provenance: String,
}

impl Default for ProfileSet {
    fn default() -> Self {
        let base = "https://fhir.ctindex.dev/StructureDefinition";
        Self {
            patient: format!("{base}/ct-index-patient"),
            imaging_study: format!("{base}/ct-index-imaging-study"),
            body_structure: format!("{base}/ct-index-body-structure"),
            device: format!("{base}/ct-index-device"),
            provenance: format!("{base}/ct-index-provenance"),
        }
    }
}

/// Software versions that produced an annotation set.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceIdentity {
    pub indexer_name: String,
    pub indexer_version: String,
    pub segmenter_name: String,
    pub segmenter_version: String,
    pub mapping_version: String,
}

impl DeviceIdentity {
    pub fn validate(&self) -> Result<(), FhirError> {
        for (name, value) in [("indexer_name", &self.indexer_name), ("segmenter_name", &self.segmenter_name)] {
            if value.trim().is_empty() {
                return Err(FhirError::InvalidDevice(format!("{name} is empty")));
            }
        }
        for (name, value) in [
            ("indexer_version", &self.indexer_version),
            ("segmenter_version", &self.segmenter_version),
            ("mapping_version", &self.mapping_version),
        ] {
            semver::Version::parse(value)
                .map_err(|e| FhirError::InvalidDevice(format!("{name} {value:?}: {e}")))?;
        }
        Ok(())
    }

    /// Hex sha256 over all five fields.
    pub fn key(&self) -> String {
        let mut h = Sha256::new();
        for field in [
            &self.indexer_name,
            &self.indexer_version,
            &self.segmenter_name,
            &self.segmenter_version,
            &self.mapping_version,
        ] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// First 32 hex chars of sha256 over the natural key.
pub fn resource_id(natural_key: &str) -> String {
    let digest = hex::encode(Sha256::digest(natural_key.as_bytes()));
    digest[..32].to_owned()
}

/// `urn:uuid:` form of a 32-hex resource id.
pub fn urn_for(id: &str) -> String {
    if id.len() != 32 {
        return format!("urn:uuid:{id}");
    }
    format!(
        "urn:uuid:{}-{}-{}-{}-{}",
        &id[..8],
        &id[8..12],
        &id[12..16],
        &id[16..20],
        &id[20..]
    )
}

fn reference(id: &str) -> Reference {
    Reference { reference: urn_for(id) }
}

/// The five resources describing one indexed series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResourceSet {
    pub patient: Patient,
    pub imaging_study: ImagingStudy,
    pub body_structure: BodyStructure,
    pub device: Device,
    pub provenance: Provenance,
}

impl ResourceSet {
    pub fn resources(&self) -> [Resource; 5] {
        [
            Resource::Patient(self.patient.clone()),
            Resource::ImagingStudy(self.imaging_study.clone()),
            Resource::BodyStructure(self.body_structure.clone()),
            Resource::Device(self.device.clone()),
            Resource::Provenance(self.provenance.clone()),
        ]
    }

    pub fn series_uid(&self) -> &str {
        &self.imaging_study.series[0].uid
    }

    /// Checks the structural invariants: references resolve inside the set,
    /// profiles are declared and the BodyStructure carries codes.
    pub fn validate(&self) -> Result<(), String> {
        let resources = self.resources();
        let urns: Vec<String> = resources.iter().map(|r| urn_for(r.id())).collect();
        for r in &resources {
            if r.profiles().is_empty() {
                return Err(format!("{} declares no profile", r.resource_type()));
            }
            for target in r.references() {
                if !urns.iter().any(|u| u == target) {
                    return Err(format!("{} reference {target} does not resolve", r.resource_type()));
                }
            }
        }
        if self.body_structure.included_structure.is_empty() {
            return Err("BodyStructure has no included structure".into());
        }
        Ok(())
    }
}

pub fn build_resources(
    ann: &AnnotationSet,
    series: &SeriesDescriptor,
    device: &DeviceIdentity,
    profiles: &ProfileSet,
) -> Result<ResourceSet, FhirError> {
    if ann.series_uid != series.series_uid {
        return Err(FhirError::SeriesMismatch {
            annotations: ann.series_uid.clone(),
            series: series.series_uid.clone(),
        });
    }
    if ann.annotations.is_empty() {
        return Err(FhirError::EmptyAnnotationSet(ann.series_uid.clone()));
    }
    device.validate()?;

    let uid = &series.series_uid;
    let device_key = device.key();
    let patient_id = resource_id(&series.patient_pseudonym);
    let study_id = resource_id(uid);
    let body_id = resource_id(&format!("{uid}bs"));
    let device_id = resource_id(&device_key);
    let prov_id = resource_id(&format!("{uid}prov"));
    let modality = CodeableConcept {
        coding: vec![Coding {
            system: DICOM_MODALITY_SYSTEM.into(),
            code: series.modality.code().into(),
            display: None,
        }],
        text: None,
    };
    let series_identifier = Identifier {
        system: DICOM_UID_SYSTEM.into(),
        value: format!("urn:oid:{uid}"),
    };

    let patient = Patient {
        id: patient_id.clone(),
        meta: Meta {
            profile: vec![profiles.patient.clone()],
        },
        identifier: vec![Identifier {
            system: PATIENT_IDENTIFIER_SYSTEM.into(),
            value: series.patient_pseudonym.clone(),
        }],
    };
    let imaging_study = ImagingStudy {
        id: study_id,
        meta: Meta {
            profile: vec![profiles.imaging_study.clone()],
        },
        identifier: vec![Identifier {
            system: DICOM_UID_SYSTEM.into(),
            value: format!("urn:oid:{}", series.study_uid),
        }],
        status: "available".into(),
        modality: vec![modality.clone()],
        subject: reference(&patient_id),
        started: series.acquisition_date.format("%Y-%m-%d").to_string(),
        series: vec![ImagingStudySeries {
            uid: uid.clone(),
            modality,
            body_site: CodeableReference {
                reference: reference(&body_id),
            },
        }],
    };
    let body_structure = BodyStructure {
        id: body_id.clone(),
        meta: Meta {
            profile: vec![profiles.body_structure.clone()],
        },
        identifier: vec![series_identifier],
        included_structure: ann
            .annotations
            .iter()
            .map(|a| IncludedStructure {
                structure: CodeableConcept {
                    coding: vec![Coding {
                        system: SNOMED_SYSTEM.into(),
                        code: a.snomed_code.clone(),
                        display: Some(a.snomed_display.clone()),
                    }],
                    text: Some(a.label.clone()),
                },
            })
            .collect(),
        patient: reference(&patient_id),
    };
    let version = |kind: &str, value: &str| DeviceVersion {
        kind: CodeableConcept {
            coding: Vec::new(),
            text: Some(kind.to_owned()),
        },
        value: value.to_owned(),
    };
    let device_resource = Device {
        id: device_id.clone(),
        meta: Meta {
            profile: vec![profiles.device.clone()],
        },
        identifier: vec![Identifier {
            system: DEVICE_IDENTIFIER_SYSTEM.into(),
            value: device_key,
        }],
        display_name: device.indexer_name.clone(),
        version: vec![
            version(&device.indexer_name, &device.indexer_version),
            version(&device.segmenter_name, &device.segmenter_version),
            version("terminology-mapping", &device.mapping_version),
        ],
    };
    let provenance = Provenance {
        id: prov_id,
        meta: Meta {
            profile: vec![profiles.provenance.clone()],
        },
        target: vec![reference(&body_id)],
        recorded: ann.created_at.to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        agent: vec![ProvenanceAgent {
            who: reference(&device_id),
        }],
    };

    Ok(ResourceSet {
        patient,
        imaging_study,
        body_structure,
        device: device_resource,
        provenance,
    })
}

/// Distinct resources produced for a corpus once Patient and Device are
/// deduplicated by conditional create.
pub fn unique_resource_count(series_count: u64, patient_count: u64, device_identity_count: u64) -> Result<u64, FhirError> {
    if patient_count > series_count {
        return Err(FhirError::InvalidCounts(format!(
            "{patient_count} patients for {series_count} series"
        )));
    }
    if series_count > 0 && (patient_count == 0 || device_identity_count == 0) {
        return Err(FhirError::InvalidCounts(
            "a non-empty corpus has at least one patient and one device identity".into(),
        ));
    }
    if series_count == 0 && (patient_count > 0 || device_identity_count > 0) {
        return Err(FhirError::InvalidCounts("devices without series".into()));
    }
    series_count
        .checked_mul(3)
        .and_then(|n| n.checked_add(patient_count))
        .and_then(|n| n.checked_add(device_identity_count))
        .ok_or_else(|| FhirError::InvalidCounts("count overflows".into()))
}
