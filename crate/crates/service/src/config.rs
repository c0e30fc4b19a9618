//! Layered configuration: command-line flags over `CTINDEX_*` environment
//! variables over a TOML file over built-in defaults.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use ctindex_core::annotate::{AnnotationPolicy, PolicyMode};
use ctindex_core::ingest::LabelSetId;
use ctindex_core::scheduler::Chronology;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "CTINDEX_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading config file {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config file {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("environment variable {key}={value:?}: {message}")]
    Env { key: String, value: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// One configuration layer. Every field is optional so layers can be
/// stacked; the TOML file uses the same keys.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigLayer {
    pub listen: Option<SocketAddr>,
    pub data_dir: Option<PathBuf>,
    pub mapping_path: Option<PathBuf>,
    pub label_set: Option<LabelSetId>,
    pub workers: Option<usize>,
    pub virtual_clock: Option<bool>,
    pub bundle_size: Option<usize>,
    pub auth_token: Option<String>,
    pub policy_mode: Option<PolicyMode>,
    pub min_volume_mm3: Option<f64>,
    pub statistics_dir: Option<PathBuf>,
    pub mock_seed: Option<u64>,
    pub mock_mean_structures: Option<f64>,
    pub legacy_order: Option<Chronology>,
    pub max_attempts: Option<u32>,
    pub service_time_secs: Option<f64>,
    pub body_limit_bytes: Option<usize>,
}

fn env_value<T: FromStr>(env: &HashMap<String, String>, key: &str) -> Result<Option<T>, ConfigError>
where
    T::Err: std::fmt::Display,
{
    let full = format!("{ENV_PREFIX}{key}");
    match env.get(&full) {
        None => Ok(None),
        Some(raw) => raw.trim().parse().map(Some).map_err(|e: T::Err| ConfigError::Env {
            key: full,
            value: raw.clone(),
            message: e.to_string(),
        }),
    }
}

fn env_serde<T: for<'de> Deserialize<'de>>(env: &HashMap<String, String>, key: &str) -> Result<Option<T>, ConfigError> {
    let full = format!("{ENV_PREFIX}{key}");
    match env.get(&full) {
        None => Ok(None),
        Some(raw) => T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(raw.trim()))
            .map(Some)
            .map_err(|e| ConfigError::Env {
                key: full,
                value: raw.clone(),
                message: e.to_string(),
            }),
    }
}

impl ConfigLayer {
    pub fn from_toml_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_owned(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_owned(),
            message: e.to_string(),
        })
    }

    pub fn from_env(env: &HashMap<String, String>) -> Result<Self, ConfigError> {
        Ok(Self {
            listen: env_value(env, "LISTEN")?,
            data_dir: env_value(env, "DATA_DIR")?,
            mapping_path: env_value(env, "MAPPING_PATH")?,
            label_set: env_value(env, "LABEL_SET")?,
            workers: env_value(env, "WORKERS")?,
            virtual_clock: env_value(env, "VIRTUAL_CLOCK")?,
            bundle_size: env_value(env, "BUNDLE_SIZE")?,
            auth_token: env_value(env, "AUTH_TOKEN")?,
            policy_mode: env_serde(env, "POLICY_MODE")?,
            min_volume_mm3: env_value(env, "MIN_VOLUME_MM3")?,
            statistics_dir: env_value(env, "STATISTICS_DIR")?,
            mock_seed: env_value(env, "MOCK_SEED")?,
            mock_mean_structures: env_value(env, "MOCK_MEAN_STRUCTURES")?,
            legacy_order: env_serde(env, "LEGACY_ORDER")?,
            max_attempts: env_value(env, "MAX_ATTEMPTS")?,
            service_time_secs: env_value(env, "SERVICE_TIME_SECS")?,
            body_limit_bytes: env_value(env, "BODY_LIMIT_BYTES")?,
        })
    }

    /// Fields set in `higher` win.
    pub fn overlay(self, higher: ConfigLayer) -> ConfigLayer {
        ConfigLayer {
            listen: higher.listen.or(self.listen),
            data_dir: higher.data_dir.or(self.data_dir),
            mapping_path: higher.mapping_path.or(self.mapping_path),
            label_set: higher.label_set.or(self.label_set),
            workers: higher.workers.or(self.workers),
            virtual_clock: higher.virtual_clock.or(self.virtual_clock),
            bundle_size: higher.bundle_size.or(self.bundle_size),
            auth_token: higher.auth_token.or(self.auth_token),
            policy_mode: higher.policy_mode.or(self.policy_mode),
            min_volume_mm3: higher.min_volume_mm3.or(self.min_volume_mm3),
            statistics_dir: higher.statistics_dir.or(self.statistics_dir),
            mock_seed: higher.mock_seed.or(self.mock_seed),
            mock_mean_structures: higher.mock_mean_structures.or(self.mock_mean_structures),
            legacy_order: higher.legacy_order.or(self.legacy_order),
            max_attempts: higher.max_attempts.or(self.max_attempts),
            service_time_secs: higher.service_time_secs.or(self.service_time_secs),
            body_limit_bytes: higher.body_limit_bytes.or(self.body_limit_bytes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// `None` selects the bundled table.
    pub mapping_path: Option<PathBuf>,
    pub label_set: LabelSetId,
    pub workers: usize,
    pub virtual_clock: bool,
    pub bundle_size: usize,
    #[serde(skip)]
    pub auth_token: Option<String>,
    pub policy: AnnotationPolicy,
    /// Read statistics files from here instead of the mock segmenter.
    pub statistics_dir: Option<PathBuf>,
    pub mock_seed: u64,
    pub mock_mean_structures: f64,
    pub legacy_order: Chronology,
    pub max_attempts: u32,
    pub service_time: Duration,
    pub body_limit_bytes: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: SocketAddr::from(([127, 0, 0, 1], 8080)),
            data_dir: PathBuf::from("ctindex-data"),
            mapping_path: None,
            label_set: LabelSetId::V1_104,
            workers: 8,
            virtual_clock: false,
            bundle_size: 100,
            auth_token: None,
            policy: AnnotationPolicy::default(),
            statistics_dir: None,
            mock_seed: 0,
            mock_mean_structures: 37.0,
            legacy_order: Chronology::OldestFirst,
            max_attempts: 3,
            service_time: Duration::from_secs(144),
            body_limit_bytes: 1 << 20,
        }
    }
}

impl ServiceConfig {
    /// Resolves defaults < file < env < flags and validates the result.
    pub fn resolve(file: Option<&Path>, env: &HashMap<String, String>, flags: ConfigLayer) -> Result<Self, ConfigError> {
        let file_layer = match file {
            Some(path) => ConfigLayer::from_toml_file(path)?,
            None => ConfigLayer::default(),
        };
        let merged = file_layer.overlay(ConfigLayer::from_env(env)?).overlay(flags);
        let config = Self::default().apply(merged)?;
        config.validate()?;
        Ok(config)
    }

    fn apply(self, l: ConfigLayer) -> Result<Self, ConfigError> {
        let service_time = match l.service_time_secs {
            Some(s) if !(s.is_finite() && s >= 0.0) => {
                return Err(ConfigError::Invalid(format!("service_time_secs {s} must be a non-negative number")));
            }
            Some(s) => Duration::from_secs_f64(s),
            None => self.service_time,
        };
        Ok(Self {
            listen: l.listen.unwrap_or(self.listen),
            data_dir: l.data_dir.unwrap_or(self.data_dir),
            mapping_path: l.mapping_path.or(self.mapping_path),
            label_set: l.label_set.unwrap_or(self.label_set),
            workers: l.workers.unwrap_or(self.workers),
            virtual_clock: l.virtual_clock.unwrap_or(self.virtual_clock),
            bundle_size: l.bundle_size.unwrap_or(self.bundle_size),
            auth_token: l.auth_token.filter(|t| !t.is_empty()).or(self.auth_token),
            policy: AnnotationPolicy {
                mode: l.policy_mode.unwrap_or(self.policy.mode),
                min_volume_mm3: l.min_volume_mm3.unwrap_or(self.policy.min_volume_mm3),
            },
            statistics_dir: l.statistics_dir.or(self.statistics_dir),
            mock_seed: l.mock_seed.unwrap_or(self.mock_seed),
            mock_mean_structures: l.mock_mean_structures.unwrap_or(self.mock_mean_structures),
            legacy_order: l.legacy_order.unwrap_or(self.legacy_order),
            max_attempts: l.max_attempts.unwrap_or(self.max_attempts),
            service_time,
            body_limit_bytes: l.body_limit_bytes.unwrap_or(self.body_limit_bytes),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.bundle_size == 0 {
            return invalid("bundle_size must be at least 1".into());
        }
        if self.max_attempts == 0 {
            return invalid("max_attempts must be at least 1".into());
        }
        if !self.policy.min_volume_mm3.is_finite() || self.policy.min_volume_mm3 < 0.0 {
            return invalid("min_volume_mm3 must be a non-negative number".into());
        }
        if !self.mock_mean_structures.is_finite() || self.mock_mean_structures < 0.0 {
            return invalid("mock_mean_structures must be a non-negative number".into());
        }
        if let Some(p) = &self.mapping_path {
            if !p.is_file() {
                return invalid(format!("mapping table {} does not exist", p.display()));
            }
        }
        if let Some(p) = &self.statistics_dir {
            if !p.is_dir() {
                return invalid(format!("statistics directory {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn queue_path(&self) -> PathBuf {
        self.data_dir.join("queue.json")
    }

    pub fn index_path(&self) -> PathBuf {
        self.data_dir.join("index.snap")
    }

    pub fn results_dir(&self) -> PathBuf {
        self.data_dir.join("annotations")
    }
}
