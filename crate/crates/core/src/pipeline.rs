//! One task end to end: segmentation statistics (mocked or read from disk),
//! annotation, search indexing and FHIR resources.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::annotate::{annotate, AnnotateError, AnnotationPolicy, AnnotationSet, RunStamp};
use crate::fhir::{
    build_resources, serialize_bundle, to_ndjson, to_transaction_bundle, DeviceIdentity, FhirError, ProfileSet,
    ResourceSet, BUNDLE_FILE_EXTENSION,
};
use crate::ingest::{mock_segment, parse_statistics, IngestError, MockCalibration, SegmentationStatistics, SeriesDescriptor};
use crate::scheduler::{IndexTask, ProcessOutcome, TaskPipeline};
use crate::search::{IndexDocument, SearchError, SharedIndex};
use crate::termmap::MappingTable;

pub const INDEXER_NAME: &str = "ctindex";
pub const INDEXER_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Fhir(#[from] FhirError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error("series {0} produced no mapped annotations")]
    NoAnnotations(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("stored result {path}: {reason}")]
    CorruptResult { path: PathBuf, reason: String },
}

/// Where segmentation statistics come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticsSource {
    Mock { seed: u64, calibration: MockCalibration },
    /// `<dir>/<series_uid>.json` files written by a real segmenter.
    Directory(PathBuf),
}

/// Per-task service time declared to the virtual clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceTime {
    Fixed(Duration),
    /// Uniform in `mean * [1 - spread, 1 + spread]`, derived from the series
    /// uid so runs are reproducible.
    Jittered { mean: Duration, spread: f64 },
}

impl ServiceTime {
    pub fn for_series(&self, series_uid: &str) -> Duration {
        match *self {
            ServiceTime::Fixed(d) => d,
            ServiceTime::Jittered { mean, spread } => {
                let h = Sha256::digest(series_uid.as_bytes());
                let u = u64::from_le_bytes(h[..8].try_into().expect("8 bytes")) as f64 / u64::MAX as f64;
                let spread = spread.clamp(0.0, 1.0);
                mean.mul_f64(1.0 - spread + 2.0 * spread * u)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub source: StatisticsSource,
    pub policy: AnnotationPolicy,
    pub profiles: ProfileSet,
    pub service_time: ServiceTime,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            source: StatisticsSource::Mock {
                seed: 0,
                calibration: MockCalibration::default_v1(),
            },
            policy: AnnotationPolicy::default(),
            profiles: ProfileSet::default(),
            service_time: ServiceTime::Fixed(Duration::from_secs(144)),
        }
    }
}

/// Everything needed to rebuild a series' index document and FHIR set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredResult {
    pub series: SeriesDescriptor,
    pub annotations: AnnotationSet,
    pub device: DeviceIdentity,
}

impl StoredResult {
    pub fn resources(&self, profiles: &ProfileSet) -> Result<ResourceSet, FhirError> {
        build_resources(&self.annotations, &self.series, &self.device, profiles)
    }
}

/// Latest result per series, optionally mirrored to a directory.
#[derive(Debug, Default)]
pub struct ResultStore {
    results: RwLock<BTreeMap<String, StoredResult>>,
    dir: Option<PathBuf>,
}

fn file_name_for(series_uid: &str) -> Option<String> {
    let safe = !series_uid.is_empty()
        && series_uid != "."
        && series_uid != ".."
        && series_uid.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-'));
    safe.then(|| format!("{series_uid}.json"))
}

impl ResultStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads every `*.json` result in `dir` and writes new results there.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, PipelineError> {
        let dir = dir.into();
        let io = |path: &Path| {
            let path = path.to_owned();
            move |source| PipelineError::Io { path, source }
        };
        std::fs::create_dir_all(&dir).map_err(io(&dir))?;
        let mut results = BTreeMap::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        entries.sort();
        for path in entries {
            let bytes = std::fs::read(&path).map_err(io(&path))?;
            let result: StoredResult = serde_json::from_slice(&bytes).map_err(|e| PipelineError::CorruptResult {
                path: path.clone(),
                reason: e.to_string(),
            })?;
            results.insert(result.series.series_uid.clone(), result);
        }
        Ok(Self {
            results: RwLock::new(results),
            dir: Some(dir),
        })
    }

    pub fn insert(&self, result: StoredResult) -> Result<(), PipelineError> {
        if let Some(dir) = &self.dir {
            let name = file_name_for(&result.series.series_uid).ok_or_else(|| PipelineError::CorruptResult {
                path: dir.clone(),
                reason: format!("series uid {:?} is not usable as a file name", result.series.series_uid),
            })?;
            let path = dir.join(name);
            let tmp = path.with_extension("json.tmp");
            let bytes = serde_json::to_vec_pretty(&result).expect("result serialize");
            std::fs::write(&tmp, bytes)
                .and_then(|()| std::fs::rename(&tmp, &path))
                .map_err(|source| PipelineError::Io { path, source })?;
        }
        self.results
            .write()
            .unwrap_or_else(|e| e.into_inner())
            .insert(result.series.series_uid.clone(), result);
        Ok(())
    }

    pub fn get(&self, series_uid: &str) -> Option<StoredResult> {
        self.results.read().unwrap_or_else(|e| e.into_inner()).get(series_uid).cloned()
    }

    /// All results ordered by series uid.
    pub fn all(&self) -> Vec<StoredResult> {
        self.results.read().unwrap_or_else(|e| e.into_inner()).values().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.results.read().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub struct IndexingPipeline {
    config: PipelineConfig,
    mapping: Arc<MappingTable>,
    index: Arc<SharedIndex>,
    store: Arc<ResultStore>,
}

impl IndexingPipeline {
    pub fn new(config: PipelineConfig, mapping: Arc<MappingTable>, index: Arc<SharedIndex>, store: Arc<ResultStore>) -> Self {
        Self {
            config,
            mapping,
            index,
            store,
        }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn index(&self) -> &Arc<SharedIndex> {
        &self.index
    }

    pub fn store(&self) -> &Arc<ResultStore> {
        &self.store
    }

    pub fn segment(&self, series: &SeriesDescriptor) -> Result<SegmentationStatistics, PipelineError> {
        match &self.config.source {
            StatisticsSource::Mock { seed, calibration } => Ok(mock_segment(series, *seed, calibration)),
            StatisticsSource::Directory(dir) => {
                let path = file_name_for(&series.series_uid)
                    .map(|n| dir.join(n))
                    .ok_or_else(|| PipelineError::NoAnnotations(series.series_uid.clone()))?;
                let raw = std::fs::read(&path).map_err(|source| PipelineError::Io { path, source })?;
                Ok(parse_statistics(&raw, series)?)
            }
        }
    }

    /// Runs one series through every stage and publishes the result.
    pub fn index_series(&self, series: &SeriesDescriptor, created_at: DateTime<Utc>) -> Result<StoredResult, PipelineError> {
        let stats = self.segment(series)?;
        let stamp = RunStamp {
            indexer_version: INDEXER_VERSION.to_owned(),
            created_at,
        };
        let annotations = annotate(&stats, &self.mapping, &self.config.policy, &stamp)?;
        if annotations.annotations.is_empty() {
            return Err(PipelineError::NoAnnotations(series.series_uid.clone()));
        }
        let device = DeviceIdentity {
            indexer_name: INDEXER_NAME.to_owned(),
            indexer_version: INDEXER_VERSION.to_owned(),
            segmenter_name: stats.segmenter_name.clone(),
            segmenter_version: stats.segmenter_version.clone(),
            mapping_version: self.mapping.map_version().to_owned(),
        };
        // fail before publishing anything if the FHIR set cannot be built
        build_resources(&annotations, series, &device, &self.config.profiles)?;
        let result = StoredResult {
            series: series.clone(),
            annotations,
            device,
        };
        self.index
            .index_document(IndexDocument::from_annotations(&result.annotations, series))?;
        self.store.insert(result.clone())?;
        Ok(result)
    }
}

impl TaskPipeline for IndexingPipeline {
    fn process(&self, task: &IndexTask) -> ProcessOutcome {
        let created_at = task.started_at.unwrap_or(task.enqueued_at);
        let result = self.index_series(&task.series, created_at).map(|_| ()).map_err(|e| e.to_string());
        ProcessOutcome {
            result,
            service_time: self.config.service_time.for_series(&task.series.series_uid),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportReport {
    pub series: usize,
    pub bundles: usize,
    pub entries: usize,
    pub files: Vec<PathBuf>,
}

/// Writes results as transaction bundles of up to `bundle_size` series each,
/// in series uid order. With `ndjson`, also writes one resource per line to
/// `resources.ndjson` (Patient and Device deduplicated per bundle).
pub fn export_bundles(
    results: &[StoredResult],
    profiles: &ProfileSet,
    out_dir: &Path,
    bundle_size: usize,
    ndjson: bool,
) -> Result<ExportReport, PipelineError> {
    let io = |path: PathBuf| move |source| PipelineError::Io { path, source };
    std::fs::create_dir_all(out_dir).map_err(io(out_dir.to_owned()))?;
    let mut sorted: Vec<&StoredResult> = results.iter().collect();
    sorted.sort_by(|a, b| a.series.series_uid.cmp(&b.series.series_uid));
    let mut report = ExportReport::default();
    let mut lines = Vec::new();
    for (i, chunk) in sorted.chunks(bundle_size.max(1)).enumerate() {
        let sets = chunk
            .iter()
            .map(|r| r.resources(profiles))
            .collect::<Result<Vec<_>, _>>()?;
        let bundle = to_transaction_bundle(&sets)?;
        let path = out_dir.join(format!("bundle-{:05}{BUNDLE_FILE_EXTENSION}", i + 1));
        std::fs::write(&path, serialize_bundle(&bundle)).map_err(io(path.clone()))?;
        if ndjson {
            lines.extend(to_ndjson(&bundle));
        }
        report.series += chunk.len();
        report.bundles += 1;
        report.entries += bundle.len();
        report.files.push(path);
    }
    if ndjson {
        let path = out_dir.join("resources.ndjson");
        std::fs::write(&path, lines).map_err(io(path.clone()))?;
        report.files.push(path);
    }
    Ok(report)
}
