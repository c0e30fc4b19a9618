use std::collections::HashMap;
use std::error::Error as StdError;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context;
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};
use ctindex_core::fhir::FhirError;
use ctindex_core::ingest::{load_manifest, IngestError, Lane, LabelCatalog};
use ctindex_core::pipeline::{export_bundles, ExportReport, PipelineError};
use ctindex_core::scheduler::{run_pool, ClockMode, DrainMode, PoolConfig, QueueDepths, SchedulerError, StopMode, ThroughputReport};
use ctindex_core::search::{parse_query, Page, SearchError};
use ctindex_core::termmap::{coverage_report, load_mapping, MappingError, MappingTable};
use serde::Serialize;

use crate::config::{ConfigError, ConfigLayer, ServiceConfig};
use crate::state::{AppState, StateError};
use crate::SearchResponse;

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_INVALID_INPUT: u8 = 3;
pub const EXIT_IO: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "ctindex", version, about = "Semantic indexing of CT series")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding the queue, index snapshot and results.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,
    /// Mapping table CSV; the bundled table is used when omitted.
    #[arg(long, global = true)]
    pub mapping: Option<PathBuf>,
    /// Read statistics files from this directory instead of the mock segmenter.
    #[arg(long, global = true)]
    pub statistics_dir: Option<PathBuf>,
    /// Mock segmenter seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Queue a manifest in the daily lane.
    Ingest { manifest: PathBuf },
    /// Queue a manifest in the legacy (backfill) lane.
    Backfill { manifest: PathBuf },
    /// Process queued tasks until the queue drains.
    Run {
        /// Worker count (default 8).
        #[arg(long)]
        workers: Option<usize>,
        /// Simulate time from declared service times instead of the wall clock.
        #[arg(long)]
        virtual_clock: bool,
        /// Stop after this many (virtual or real) hours.
        #[arg(long)]
        horizon_hours: Option<f64>,
        /// Virtual clock start, RFC 3339. Defaults to now.
        #[arg(long)]
        start: Option<DateTime<Utc>>,
    },
    /// Mapping table checks.
    Mapping {
        #[command(subcommand)]
        action: MappingCommand,
    },
    /// Write indexed series as FHIR transaction bundles.
    ExportFhir {
        /// Output directory for bundle files.
        out_dir: PathBuf,
        /// Series per bundle.
        #[arg(long)]
        bundle_size: Option<usize>,
        /// Also write resources.ndjson.
        #[arg(long)]
        ndjson: bool,
    },
    /// Search the index.
    Query {
        /// Query text, e.g. 'and(code:10200004,vol:10200004:[1000000,])'.
        text: String,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
    /// Serve the HTTP API with background workers.
    Serve {
        /// Listen address (default 127.0.0.1:8080).
        #[arg(long)]
        listen: Option<SocketAddr>,
        /// Background worker count (default 8).
        #[arg(long)]
        workers: Option<usize>,
    },
}

#[derive(Debug, Subcommand)]
pub enum MappingCommand {
    /// Validate a mapping table (the configured one when FILE is omitted).
    Validate { file: Option<PathBuf> },
    /// Report catalog coverage of a mapping table.
    Coverage { file: Option<PathBuf> },
}

impl Cli {
    fn flag_layer(&self) -> ConfigLayer {
        let mut layer = ConfigLayer {
            data_dir: self.data_dir.clone(),
            mapping_path: self.mapping.clone(),
            statistics_dir: self.statistics_dir.clone(),
            mock_seed: self.seed,
            ..Default::default()
        };
        match &self.command {
            Command::Run {
                workers, virtual_clock, ..
            } => {
                layer.workers = *workers;
                layer.virtual_clock = virtual_clock.then_some(true);
            }
            Command::Serve { listen, workers } => {
                layer.listen = *listen;
                layer.workers = *workers;
            }
            Command::ExportFhir { bundle_size, .. } => layer.bundle_size = *bundle_size,
            _ => {}
        }
        layer
    }
}

#[derive(Debug, Serialize)]
struct Rejection {
    series_uid: String,
    reason: String,
}

#[derive(Debug, Serialize)]
struct EnqueueSummary {
    lane: Lane,
    enqueued: usize,
    rejected: Vec<Rejection>,
}

#[derive(Debug, Serialize)]
struct RunSummary {
    #[serde(flatten)]
    report: ThroughputReport,
    series_per_hour: f64,
    utilization: f64,
    queue: QueueDepths,
}

#[derive(Debug, Serialize)]
struct ValidateSummary {
    valid: bool,
    label_set_id: String,
    map_version: String,
    rows: usize,
}

fn print_json(out: &mut dyn Write, value: &impl Serialize) -> anyhow::Result<()> {
    serde_json::to_writer_pretty(&mut *out, value)?;
    writeln!(out)?;
    Ok(())
}

fn load_table(config: &ServiceConfig, file: Option<PathBuf>) -> anyhow::Result<MappingTable> {
    match file.or_else(|| config.mapping_path.clone()) {
        Some(path) => Ok(load_mapping(&path)?),
        None => Ok(MappingTable::bundled_v1()),
    }
}

/// Runs one command, writing machine-readable output to `out`.
pub fn execute(cli: Cli, env: &HashMap<String, String>, out: &mut dyn Write) -> anyhow::Result<()> {
    let config = ServiceConfig::resolve(cli.config.as_deref(), env, cli.flag_layer())?;
    match cli.command {
        Command::Mapping { action } => match action {
            MappingCommand::Validate { file } => {
                let table = load_table(&config, file)?;
                print_json(
                    out,
                    &ValidateSummary {
                        valid: true,
                        label_set_id: table.target_label_set_id().to_string(),
                        map_version: table.map_version().to_owned(),
                        rows: table.len(),
                    },
                )
            }
            MappingCommand::Coverage { file } => {
                let table = load_table(&config, file)?;
                let report = coverage_report(&table, LabelCatalog::builtin(table.target_label_set_id()))?;
                print_json(out, &report)
            }
        },
        Command::Ingest { manifest } => enqueue(config, &manifest, Lane::Daily, out),
        Command::Backfill { manifest } => enqueue(config, &manifest, Lane::Legacy, out),
        Command::Run {
            horizon_hours, start, ..
        } => {
            let state = AppState::open(config)?;
            let horizon = match horizon_hours {
                Some(h) if !(h.is_finite() && h > 0.0) => {
                    return Err(ConfigError::Invalid(format!("horizon_hours {h} must be positive")).into());
                }
                Some(h) => Some(Duration::from_secs_f64(h * 3600.0)),
                None => None,
            };
            let pool = PoolConfig {
                worker_count: state.config.workers,
                clock: if state.config.virtual_clock {
                    ClockMode::Virtual {
                        start: start.unwrap_or_else(Utc::now),
                    }
                } else {
                    ClockMode::Real
                },
                horizon,
                drain: DrainMode::UntilEmpty,
                ..Default::default()
            };
            let report = run_pool(&state.queue, state.pipeline.as_ref(), &pool, &state.control)?;
            state.save()?;
            print_json(
                out,
                &RunSummary {
                    series_per_hour: report.tasks_per_hour(),
                    utilization: report.utilization(),
                    report,
                    queue: state.queue.depths(),
                },
            )
        }
        Command::ExportFhir { out_dir, ndjson, .. } => {
            let state = AppState::open(config)?;
            let report: ExportReport = export_bundles(
                &state.store.all(),
                &state.pipeline.config().profiles,
                &out_dir,
                state.config.bundle_size,
                ndjson,
            )?;
            print_json(out, &report)
        }
        Command::Query { text, offset, limit } => {
            let query = parse_query(&text)?;
            let state = AppState::open(config)?;
            let page = Page { offset, limit };
            let result = state.index.search(&query, page)?;
            print_json(out, &SearchResponse::new(&query, page, result))
        }
        Command::Serve { .. } => serve(AppState::open(config)?),
    }
}

fn enqueue(config: ServiceConfig, manifest: &std::path::Path, lane: Lane, out: &mut dyn Write) -> anyhow::Result<()> {
    let series = load_manifest(manifest)?;
    let state = AppState::open(config)?;
    let now = Utc::now();
    let mut summary = EnqueueSummary {
        lane,
        enqueued: 0,
        rejected: Vec::new(),
    };
    match lane {
        Lane::Daily => {
            for s in series {
                let uid = s.series_uid.clone();
                match state.queue.enqueue_daily(s, now) {
                    Ok(_) => summary.enqueued += 1,
                    Err(e) => summary.rejected.push(Rejection {
                        series_uid: uid,
                        reason: e.to_string(),
                    }),
                }
            }
        }
        Lane::Legacy => {
            let report = state.queue.enqueue_legacy(series, now);
            summary.enqueued = report.enqueued;
            summary.rejected = report
                .rejections
                .into_iter()
                .map(|(series_uid, e)| Rejection {
                    series_uid,
                    reason: e.to_string(),
                })
                .collect();
        }
    }
    state.save()?;
    print_json(out, &summary)
}

fn serve(state: AppState) -> anyhow::Result<()> {
    let state = Arc::new(state);
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")?;
    let worker_state = state.clone();
    let workers = std::thread::spawn(move || {
        let pool = PoolConfig {
            worker_count: worker_state.config.workers,
            clock: ClockMode::Real,
            drain: DrainMode::UntilStopped,
            idle_poll: Duration::from_millis(200),
            ..Default::default()
        };
        run_pool(&worker_state.queue, worker_state.pipeline.as_ref(), &pool, &worker_state.control)
    });

    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(state.config.listen)
            .await
            .with_context(|| format!("binding {}", state.config.listen))?;
        tracing::info!(addr = %state.config.listen, "listening");
        axum::serve(listener, crate::api::router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("serving")
    });

    state.control.stop(StopMode::Graceful);
    state.queue.notify_all();
    match workers.join() {
        Ok(Ok(report)) => state.record_run(report),
        Ok(Err(e)) => tracing::error!(error = %e, "worker pool failed"),
        Err(_) => tracing::error!("worker pool panicked"),
    }
    state.save()?;
    result
}

fn classify(e: &(dyn StdError + 'static)) -> Option<u8> {
    if let Some(e) = e.downcast_ref::<ConfigError>() {
        return Some(match e {
            ConfigError::Read { .. } => EXIT_IO,
            _ => EXIT_INVALID_INPUT,
        });
    }
    if let Some(e) = e.downcast_ref::<StateError>() {
        return match e {
            StateError::Io { .. } => Some(EXIT_IO),
            StateError::Mapping(inner) => classify(inner),
            StateError::Search(inner) => classify(inner),
            StateError::Pipeline(inner) => classify(inner),
            StateError::Scheduler(inner) => classify(inner),
            StateError::LabelSetMismatch { .. } => Some(EXIT_INVALID_INPUT),
        };
    }
    if let Some(e) = e.downcast_ref::<IngestError>() {
        return Some(if matches!(e, IngestError::Io { .. }) { EXIT_IO } else { EXIT_INVALID_INPUT });
    }
    if let Some(e) = e.downcast_ref::<MappingError>() {
        return Some(if matches!(e, MappingError::Io { .. }) { EXIT_IO } else { EXIT_INVALID_INPUT });
    }
    if let Some(e) = e.downcast_ref::<SearchError>() {
        return Some(if matches!(e, SearchError::Io { .. }) { EXIT_IO } else { EXIT_INVALID_INPUT });
    }
    if let Some(e) = e.downcast_ref::<PipelineError>() {
        return match e {
            PipelineError::Io { .. } => Some(EXIT_IO),
            PipelineError::Ingest(inner) => classify(inner),
            PipelineError::Search(inner) => classify(inner),
            _ => Some(EXIT_INVALID_INPUT),
        };
    }
    if e.downcast_ref::<FhirError>().is_some() {
        return Some(EXIT_INVALID_INPUT);
    }
    if let Some(e) = e.downcast_ref::<SchedulerError>() {
        return Some(match e {
            SchedulerError::Snapshot(_) | SchedulerError::ConfigInvalid(_) => EXIT_INVALID_INPUT,
            _ => EXIT_INTERNAL,
        });
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return Some(EXIT_IO);
    }
    None
}

/// Exit code for a failed command: 3 for invalid input, 4 for I/O, 1 for
/// anything else. Usage errors (2) are reported by argument parsing.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain().find_map(classify).unwrap_or(EXIT_INTERNAL)
}
