//! Run configuration file. Every field is optional; command-line flags win
//! over values found here.

use std::path::{Path, PathBuf};

use opticnn::energy::{ArchTable, ElectronicParams, HybridParams, OpticalEnergyParams};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub limit: Option<usize>,
    pub sigmas: Option<Vec<f64>>,
    pub trials: Option<usize>,
    pub train: Option<TrainSection>,
    pub arch: Option<ArchTable>,
    pub optical: Option<OpticalEnergyParams>,
    pub electronic: Option<ElectronicParams>,
    pub hybrid: Option<HybridParams>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub learning_rate: Option<f64>,
    pub momentum: Option<f64>,
}

impl ExperimentConfig {
    /// Relative paths inside the file resolve against the file's directory.
    pub fn load(path: &Path) -> opticnn::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.images, &mut cfg.labels, &mut cfg.weights].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}
