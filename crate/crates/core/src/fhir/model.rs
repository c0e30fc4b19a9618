//! The subset of FHIR R5 resource structure the exporter emits.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Meta {
    pub profile: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Identifier {
    pub system: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coding {
    pub system: String,
    pub code: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeableConcept {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub coding: Vec<Coding>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reference {
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeableReference {
    pub reference: Reference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Patient {
    pub id: String,
    pub meta: Meta,
    pub identifier: Vec<Identifier>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingStudySeries {
    pub uid: String,
    pub modality: CodeableConcept,
    #[serde(rename = "bodySite")]
    pub body_site: CodeableReference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImagingStudy {
    pub id: String,
    pub meta: Meta,
    pub identifier: Vec<Identifier>,
    pub status: String,
    pub modality: Vec<CodeableConcept>,
    pub subject: Reference,
    pub started: String,
    pub series: Vec<ImagingStudySeries>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IncludedStructure {
    pub structure: CodeableConcept,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BodyStructure {
    pub id: String,
    pub meta: Meta,
    pub identifier: Vec<Identifier>,
    #[serde(rename = "includedStructure")]
    pub included_structure: Vec<IncludedStructure>,
    pub patient: Reference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceVersion {
    #[serde(rename = "type")]
    pub kind: CodeableConcept,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Device {
    pub id: String,
    pub meta: Meta,
    pub identifier: Vec<Identifier>,
    #[serde(rename = "displayName")]
    pub display_name: String,
    pub version: Vec<DeviceVersion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProvenanceAgent {
    pub who: Reference,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub id: String,
    pub meta: Meta,
    pub target: Vec<Reference>,
    /// RFC 3339 instant.
    pub recorded: String,
    pub agent: Vec<ProvenanceAgent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "resourceType")]
pub enum Resource {
    Patient(Patient),
    ImagingStudy(ImagingStudy),
    BodyStructure(BodyStructure),
    Device(Device),
    Provenance(Provenance),
}

impl Resource {
    pub fn resource_type(&self) -> &'static str {
        match self {
            Resource::Patient(_) => "Patient",
            Resource::ImagingStudy(_) => "ImagingStudy",
            Resource::BodyStructure(_) => "BodyStructure",
            Resource::Device(_) => "Device",
            Resource::Provenance(_) => "Provenance",
        }
    }

    pub fn id(&self) -> &str {
        match self {
            Resource::Patient(r) => &r.id,
            Resource::ImagingStudy(r) => &r.id,
            Resource::BodyStructure(r) => &r.id,
            Resource::Device(r) => &r.id,
            Resource::Provenance(r) => &r.id,
        }
    }

    pub fn profiles(&self) -> &[String] {
        match self {
            Resource::Patient(r) => &r.meta.profile,
            Resource::ImagingStudy(r) => &r.meta.profile,
            Resource::BodyStructure(r) => &r.meta.profile,
            Resource::Device(r) => &r.meta.profile,
            Resource::Provenance(r) => &r.meta.profile,
        }
    }

    /// Every reference string the resource holds.
    pub fn references(&self) -> Vec<&str> {
        match self {
            Resource::Patient(_) | Resource::Device(_) => Vec::new(),
            Resource::ImagingStudy(r) => std::iter::once(r.subject.reference.as_str())
                .chain(r.series.iter().map(|s| s.body_site.reference.reference.as_str()))
                .collect(),
            Resource::BodyStructure(r) => vec![r.patient.reference.as_str()],
            Resource::Provenance(r) => r
                .target
                .iter()
                .map(|t| t.reference.as_str())
                .chain(r.agent.iter().map(|a| a.who.reference.as_str()))
                .collect(),
        }
    }
}
