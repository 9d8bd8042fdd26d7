//! Loading interactions, features and ground truth into a split.

use std::path::Path;

use anyhow::{Context, Result};
use stagerec_core::data::{
    chronological_split, partition_stages, synth_generate, DatasetSplit, InteractionLog, ItemFeatures, SynthTruth,
};
use stagerec_core::numerics::Tensor;

use crate::config::{DataSource, RunConfig};

/// A split ready for training, with optional item features.
pub struct Dataset {
    pub split: DatasetSplit,
    pub features: Option<Tensor<f64>>,
    /// Whether publication stages come from ground truth rather than first clicks.
    pub known_publication: bool,
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

/// Stage index of a timestamp under the partition's windowing; items published
/// before the first stage map to stage 0.
fn stage_of(ts: u64, start: u64, window: u64) -> usize {
    (ts.saturating_sub(start) / window) as usize
}

/// Publication stages of `log`'s items from ground-truth timestamps, matched by item id.
fn publication_stages(log: &InteractionLog, truth: &SynthTruth, start: u64, window: u64) -> Result<Vec<usize>> {
    let by_id: std::collections::HashMap<&str, u64> = truth
        .item_ids
        .iter()
        .map(String::as_str)
        .zip(truth.item_pub_timestamp.iter().copied())
        .collect();
    log.items
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|&ts| stage_of(ts, start, window))
                .with_context(|| format!("item {id} missing from ground truth"))
        })
        .collect()
}

pub fn load(cfg: &RunConfig) -> Result<Dataset> {
    let (log, truth, features) = match &cfg.data {
        DataSource::Synthetic(s) => {
            let data = synth_generate(s)?;
            (data.log, Some(data.truth), None)
        }
        DataSource::Files(f) => {
            let log = InteractionLog::parse_tsv(&read_text(&f.interactions)?)
                .with_context(|| format!("parsing {}", f.interactions.display()))?;
            let truth = match &f.ground_truth {
                Some(p) => Some(
                    serde_json::from_str::<SynthTruth>(&read_text(p)?)
                        .with_context(|| format!("parsing {}", p.display()))?,
                ),
                None => None,
            };
            let features = match &f.item_features {
                Some(p) => {
                    let dim = f.feature_dim.context("item_features requires feature_dim")?;
                    Some(
                        ItemFeatures::parse(&read_text(p)?, dim, &log.items)
                            .with_context(|| format!("parsing {}", p.display()))?,
                    )
                }
                None => None,
            };
            (log, truth, features)
        }
    };
    let partition = partition_stages(&log, cfg.window_seconds)?;
    let (start, window) = (partition.start, partition.window);
    let mut split = chronological_split(partition, cfg.train.n_neg, cfg.split_seed())?;
    let known_publication = truth.is_some();
    if let Some(t) = &truth {
        split = split.with_publication(publication_stages(&log, t, start, window)?)?;
    }
    Ok(Dataset {
        split,
        features: features.map(|f| f.matrix),
        known_publication,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_indices() {
        assert_eq!(stage_of(5, 10, 10), 0);
        assert_eq!(stage_of(10, 10, 10), 0);
        assert_eq!(stage_of(29, 10, 10), 1);
    }
}
