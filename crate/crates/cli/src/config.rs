//! Run configuration: one JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use stagerec_core::data::SynthConfig;
use stagerec_core::eval::FreshnessWindows;
use stagerec_core::seeds::derive_seed;
use stagerec_core::training::TrainConfig;

/// Where interactions come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    /// Generated in memory; the generator seed is derived from the root seed.
    Synthetic(SynthConfig),
    Files(FileSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileSource {
    /// TSV of `user_id, item_id, timestamp`.
    pub interactions: PathBuf,
    /// TSV of `item_id` followed by `feature_dim` reals.
    #[serde(default)]
    pub item_features: Option<PathBuf>,
    #[serde(default)]
    pub feature_dim: Option<usize>,
    /// Ground-truth sidecar written by `gen-data`, used for publication stages.
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Root seed; every other seed is derived from it by label.
    pub seed: u64,
    pub data: DataSource,
    pub window_seconds: u64,
    pub train: TrainConfig,
    pub freshness: FreshnessWindows,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            data: DataSource::Synthetic(SynthConfig::default()),
            window_seconds: 7 * 24 * 3600,
            train: TrainConfig::default(),
            freshness: FreshnessWindows::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Fills derived seeds from the root seed; idempotent.
    pub fn resolve(mut self) -> Result<Self> {
        if let DataSource::Synthetic(s) = &mut self.data {
            s.seed = derive_seed(self.seed, "synthetic-data");
            s.validate()?;
        }
        self.train.seed = derive_seed(self.seed, "train");
        if self.window_seconds == 0 {
            bail!("window must be positive");
        }
        self.train.validate()?;
        Ok(self)
    }

    pub fn split_seed(&self) -> u64 {
        derive_seed(self.seed, "split")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        format!("{:x}", Sha256::digest(canonical.as_bytes()))
    }

    pub fn run_id(&self) -> String {
        format!("{}-s{}-{}", self.train.model.ablation, self.seed, &self.hash()[..10])
    }
}

/// Parses `1w`, `2d`, `12h`, `30m`, `3600s` or a bare number of seconds.
pub fn parse_duration(text: &str) -> Result<u64> {
    let t = text.trim();
    let (num, unit) = match t.find(|c: char| !c.is_ascii_digit()) {
        Some(k) => t.split_at(k),
        None => (t, "s"),
    };
    let n: u64 = num.parse().with_context(|| format!("invalid duration {text:?}"))?;
    let scale = match unit {
        "s" => 1,
        "m" => 60,
        "h" => 3600,
        "d" => 86_400,
        "w" => 7 * 86_400,
        _ => bail!("invalid duration unit in {text:?} (use s, m, h, d or w)"),
    };
    if n == 0 {
        bail!("duration {text:?} must be positive");
    }
    Ok(n * scale)
}

/// Comma-separated list of reals.
pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().with_context(|| format!("invalid number {s:?}")))
        .collect()
}
