use std::path::Path;
use std::sync::{Arc, Mutex};

use ctindex_core::ingest::{LabelCatalog, MockCalibration, RegionModel};
use ctindex_core::pipeline::{IndexingPipeline, PipelineConfig, ResultStore, ServiceTime, StatisticsSource};
use ctindex_core::scheduler::{PoolControl, QueueConfig, RetryPolicy, TaskQueue, ThroughputReport};
use ctindex_core::search::{IndexDocument, SearchIndex, SharedIndex};
use ctindex_core::termmap::{coverage_report, load_mapping, CoverageReport, MappingTable};
use thiserror::Error;

use crate::config::ServiceConfig;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Mapping(#[from] ctindex_core::termmap::MappingError),
    #[error(transparent)]
    Scheduler(#[from] ctindex_core::scheduler::SchedulerError),
    #[error(transparent)]
    Search(#[from] ctindex_core::search::SearchError),
    #[error(transparent)]
    Pipeline(#[from] ctindex_core::pipeline::PipelineError),
    #[error("mapping table targets {table} but label_set is {configured}")]
    LabelSetMismatch { table: String, configured: String },
}

/// Everything a command or request handler needs, loaded from the data
/// directory.
pub struct AppState {
    pub config: ServiceConfig,
    pub mapping: Arc<MappingTable>,
    pub queue: Arc<TaskQueue>,
    pub index: Arc<SharedIndex>,
    pub store: Arc<ResultStore>,
    pub pipeline: Arc<IndexingPipeline>,
    pub control: Arc<PoolControl>,
    pub last_run: Mutex<Option<ThroughputReport>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StateError + '_ {
    move |source| StateError::Io {
        path: path.to_owned(),
        source,
    }
}

impl AppState {
    pub fn open(config: ServiceConfig) -> Result<Self, StateError> {
        std::fs::create_dir_all(&config.data_dir).map_err(io_err(&config.data_dir))?;
        let mapping = match &config.mapping_path {
            Some(path) => load_mapping(path)?,
            None => MappingTable::bundled_v1(),
        };
        if mapping.target_label_set_id() != config.label_set {
            return Err(StateError::LabelSetMismatch {
                table: mapping.target_label_set_id().to_string(),
                configured: config.label_set.to_string(),
            });
        }

        let queue_config = QueueConfig {
            retry: RetryPolicy {
                max_attempts: config.max_attempts,
                backoff: Vec::new(),
            },
            legacy_order: config.legacy_order,
        };
        let queue_path = config.queue_path();
        let queue = if queue_path.exists() {
            let bytes = std::fs::read(&queue_path).map_err(io_err(&queue_path))?;
            TaskQueue::from_json(&bytes)?
        } else {
            TaskQueue::new(queue_config)?
        };

        let store = ResultStore::open(config.results_dir())?;
        let index_path = config.index_path();
        let index = if index_path.exists() {
            SearchIndex::restore(&index_path)?
        } else {
            let mut index = SearchIndex::new();
            for r in store.all() {
                index.index_document(IndexDocument::from_annotations(&r.annotations, &r.series))?;
            }
            index
        };

        let source = match &config.statistics_dir {
            Some(dir) => StatisticsSource::Directory(dir.clone()),
            None => StatisticsSource::Mock {
                seed: config.mock_seed,
                calibration: MockCalibration {
                    label_set_id: config.label_set,
                    mean_structures: config.mock_mean_structures,
                    region_model: RegionModel::Hinted,
                },
            },
        };
        let mapping = Arc::new(mapping);
        let index = Arc::new(SharedIndex::new(index));
        let store = Arc::new(store);
        let pipeline = Arc::new(IndexingPipeline::new(
            PipelineConfig {
                source,
                policy: config.policy,
                service_time: ServiceTime::Fixed(config.service_time),
                ..Default::default()
            },
            mapping.clone(),
            index.clone(),
            store.clone(),
        ));
        Ok(Self {
            config,
            mapping,
            queue: Arc::new(queue),
            index,
            store,
            pipeline,
            control: Arc::new(PoolControl::new()),
            last_run: Mutex::new(None),
        })
    }

    /// Writes the queue and index snapshot back to the data directory.
    pub fn save(&self) -> Result<(), StateError> {
        let queue_path = self.config.queue_path();
        let tmp = queue_path.with_extension("json.tmp");
        std::fs::write(&tmp, self.queue.to_json())
            .and_then(|()| std::fs::rename(&tmp, &queue_path))
            .map_err(io_err(&queue_path))?;
        self.index.read().persist(self.config.index_path())?;
        Ok(())
    }

    pub fn coverage(&self) -> CoverageReport {
        coverage_report(&self.mapping, LabelCatalog::builtin(self.mapping.target_label_set_id()))
            .expect("table was validated against its catalog on load")
    }

    pub fn record_run(&self, report: ThroughputReport) {
        *self.last_run.lock().unwrap_or_else(|e| e.into_inner()) = Some(report);
    }

    pub fn last_run(&self) -> Option<ThroughputReport> {
        self.last_run.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Plain-text `key value` metrics, one per line.
    pub fn metrics_text(&self) -> String {
        let d = self.queue.depths();
        let mut lines = vec![
            ("queue_daily_queued", d.daily_queued.to_string()),
            ("queue_legacy_queued", d.legacy_queued.to_string()),
            ("queue_delayed", d.delayed.to_string()),
            ("queue_running", d.running.to_string()),
            ("tasks_done", d.done.to_string()),
            ("tasks_dead", d.dead.to_string()),
            ("tasks_total", d.total_enqueued.to_string()),
            ("tasks_failed_attempts", d.failed_attempts.to_string()),
            ("index_documents", self.index.len().to_string()),
            ("pool_workers", self.config.workers.to_string()),
            ("pool_in_flight", self.control.in_flight().to_string()),
            ("pool_succeeded", self.control.succeeded().to_string()),
        ];
        if let Some(r) = self.last_run() {
            lines.extend([
                ("run_elapsed_seconds", format!("{:.3}", r.elapsed_seconds)),
                ("run_succeeded", r.succeeded.to_string()),
                ("run_dead", r.dead.to_string()),
                ("run_series_per_hour", format!("{:.3}", r.tasks_per_hour())),
                ("run_busy_seconds", format!("{:.3}", r.busy_seconds)),
                ("run_utilization", format!("{:.4}", r.utilization())),
                ("run_daily_dispatched", r.daily_dispatched.to_string()),
                ("run_legacy_dispatched", r.legacy_dispatched.to_string()),
            ]);
        }
        let mut out = String::new();
        for (k, v) in lines {
            out.push_str(k);
            out.push(' ');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}
