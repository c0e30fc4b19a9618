//! Semantic indexing of CT series.
//!
//! Segmentation statistics ([`ingest`]) are mapped to SNOMED CT codes
//! ([`termmap`], [`annotate`]), exported as FHIR R5 transaction bundles
//! ([`fhir`]) and made searchable ([`search`]). [`scheduler`] runs the work
//! with daily series ahead of the legacy backfill; [`pipeline`] ties one
//! task's steps together.

pub mod annotate;
pub mod fhir;
pub mod ingest;
pub mod pipeline;
pub mod scheduler;
pub mod search;
pub mod termmap;
