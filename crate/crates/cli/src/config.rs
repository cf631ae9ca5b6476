use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use earlyflow::dataset::DEFAULT_MIN_CLASS_COUNT;
use earlyflow::eval::DEFAULT_SPLIT_RATIO;
use earlyflow::trace::DEFAULT_DEDUP_WINDOW_US;
use earlyflow::{MeterConfig, TrainConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_SPLIT_RATIO,
            seed: 0,
        }
    }
}

/// Every stage reads its defaults from here; command-line flags override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub meter: MeterConfig,
    pub rules_path: Option<PathBuf>,
    pub min_class_count: usize,
    pub dedup_window_us: i64,
    pub split: SplitConfig,
    pub train: TrainConfig,
    /// Labels counted as anomalous in binary scoring. Empty means every
    /// label other than the benign one.
    pub anomaly_labels: BTreeSet<String>,
    pub output_dir: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            meter: MeterConfig::default(),
            rules_path: None,
            min_class_count: DEFAULT_MIN_CLASS_COUNT,
            dedup_window_us: DEFAULT_DEDUP_WINDOW_US,
            split: SplitConfig::default(),
            train: TrainConfig::default(),
            anomaly_labels: BTreeSet::new(),
            output_dir: None,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text)
            .with_context(|| format!("invalid config {}", path.display()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.meter.validate()?;
        self.train.validate()?;
        if !(self.split.ratio > 0.0 && self.split.ratio < 1.0) {
            bail!("split.ratio must lie in (0, 1), got {}", self.split.ratio);
        }
        if self.dedup_window_us < 0 {
            bail!("dedup_window_us must be non-negative");
        }
        if let Some(p) = &self.rules_path {
            if !p.exists() {
                bail!("rules_path {} does not exist", p.display());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
