//! Deterministic stand-in for the segmentation backend.
//!
//! A scan covers a contiguous craniocaudal window of the anatomy. The
//! number of structures in the window is drawn from Binomial(n, mean / n),
//! so its expectation is exactly the calibrated mean; the window is then
//! placed uniformly (or around the body-region hint). Volumes and
//! intensities are jittered around per-structure priors from
//! `data/anatomy.tsv`.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::catalog::{LabelCatalog, LabelSetId};
use super::statistics::{SegmentationStatistics, StructureStat};
use super::SeriesDescriptor;

pub const MOCK_SEGMENTER_NAME: &str = "mock-segmenter";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionModel {
    /// Window placed uniformly over the whole body.
    WholeBody,
    /// Window centred on the series' body-region hint; falls back to
    /// `WholeBody` when the hint is missing or unknown.
    Hinted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockCalibration {
    pub label_set_id: LabelSetId,
    /// Expected number of structures per series.
    pub mean_structures: f64,
    pub region_model: RegionModel,
}

impl MockCalibration {
    /// 37 structures per series over the first catalog generation.
    pub fn default_v1() -> Self {
        Self {
            label_set_id: LabelSetId::V1_104,
            mean_structures: 37.0,
            region_model: RegionModel::Hinted,
        }
    }

    pub fn segmenter_version(&self) -> &'static str {
        match self.label_set_id {
            LabelSetId::V1_104 => "1.5.7",
            LabelSetId::V2_117 => "2.0.5",
            LabelSetId::V2Plus124 => "2.2.1",
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Prior {
    position_cm: f64,
    volume_ml: f64,
    mean_hu: f64,
}

fn priors() -> &'static HashMap<&'static str, Prior> {
    static PRIORS: OnceLock<HashMap<&'static str, Prior>> = OnceLock::new();
    PRIORS.get_or_init(|| {
        include_str!("../../data/anatomy.tsv")
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .map(|l| {
                let cols: Vec<&str> = l.split('\t').collect();
                let num = |i: usize| cols[i].parse::<f64>().expect("anatomy.tsv number");
                (
                    cols[0],
                    Prior {
                        position_cm: num(1),
                        volume_ml: num(2),
                        mean_hu: num(3),
                    },
                )
            })
            .collect()
    })
}

/// Catalog labels ordered head to feet (ties broken by label).
pub fn anatomical_order(catalog: &LabelCatalog) -> Vec<&str> {
    let priors = priors();
    let mut labels: Vec<&str> = catalog.labels().iter().map(String::as_str).collect();
    labels.sort_by(|a, b| {
        let pa = priors.get(a).map_or(f64::MAX, |p| p.position_cm);
        let pb = priors.get(b).map_or(f64::MAX, |p| p.position_cm);
        pa.total_cmp(&pb).then_with(|| a.cmp(b))
    });
    labels
}

fn region_center_cm(hint: &str) -> Option<f64> {
    match hint.trim().to_ascii_lowercase().as_str() {
        "head" | "brain" | "skull" => Some(10.0),
        "neck" => Some(23.0),
        "thorax" | "chest" => Some(38.0),
        "abdomen" => Some(58.0),
        "pelvis" => Some(78.0),
        "legs" | "lower_extremity" => Some(100.0),
        _ => None,
    }
}

fn rng_for(series_uid: &str, seed: u64) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(series_uid.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Generates statistics for one series. Pure in `(series.series_uid, seed,
/// calibration)`.
pub fn mock_segment(
    series: &SeriesDescriptor,
    seed: u64,
    calibration: &MockCalibration,
) -> SegmentationStatistics {
    let catalog = LabelCatalog::builtin(calibration.label_set_id);
    let order = anatomical_order(catalog);
    let n = order.len();
    let mut rng = rng_for(&series.series_uid, seed);

    let p = if calibration.mean_structures.is_finite() {
        (calibration.mean_structures / n as f64).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let count = Binomial::new(n as u64, p)
        .expect("p is clamped to [0, 1]")
        .sample(&mut rng) as usize;

    let span = n - count;
    let hinted_center = match calibration.region_model {
        RegionModel::WholeBody => None,
        RegionModel::Hinted => series.body_region_hint.as_deref().and_then(region_center_cm),
    };
    let start = match hinted_center {
        Some(center) => {
            let priors = priors();
            let center_idx = order
                .iter()
                .position(|l| priors.get(l).is_some_and(|p| p.position_cm >= center))
                .unwrap_or(n.saturating_sub(1));
            center_idx.saturating_sub(count / 2).min(span)
        }
        None => rng.random_range(0..=span),
    };

    let window: std::collections::HashSet<&str> = order[start..start + count].iter().copied().collect();
    let edge = [order.get(start).copied(), order.get((start + count).wrapping_sub(1)).copied()];
    let jitter = Normal::new(0.0_f64, 0.2).expect("valid normal");
    let noise = Normal::new(0.0_f64, 8.0).expect("valid normal");

    let priors = priors();
    let mut structures = Vec::with_capacity(count);
    for label in catalog.labels() {
        if !window.contains(label.as_str()) {
            continue;
        }
        let prior = priors.get(label.as_str()).copied().unwrap_or(Prior {
            position_cm: 0.0,
            volume_ml: 50.0,
            mean_hu: 40.0,
        });
        let mut volume = prior.volume_ml * 1000.0 * jitter.sample(&mut rng).exp();
        if edge.contains(&Some(label.as_str())) {
            // partially covered at the window boundary
            volume *= rng.random_range(0.2..1.0);
        }
        let volume_mm3 = (volume.max(1.0) * 10.0).round() / 10.0;
        let mean_intensity = ((prior.mean_hu + noise.sample(&mut rng)) * 100.0).round() / 100.0;
        structures.push(StructureStat {
            label: label.clone(),
            volume_mm3,
            mean_intensity,
        });
    }

    SegmentationStatistics {
        series_uid: series.series_uid.clone(),
        segmenter_name: MOCK_SEGMENTER_NAME.to_owned(),
        segmenter_version: calibration.segmenter_version().to_owned(),
        label_set_id: calibration.label_set_id,
        structures,
    }
}
