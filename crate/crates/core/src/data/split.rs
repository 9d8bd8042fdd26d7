use alloc::collections::BTreeSet;
use alloc::vec::Vec;
use core::ops::Range;

use super::partition::StagePartition;
use super::sampling::negative_sample_in;
use crate::error::{mismatch, Error, Result};
use crate::seeds;

/// Candidates of one evaluation impression: a held-out click plus sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CandidateSet {
    pub user: usize,
    pub stage: usize,
    pub items: Vec<usize>,
    pub labels: Vec<bool>,
}

/// Chronological train / validation / test assignment of stages.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub partition: StagePartition,
    pub train: Range<usize>,
    pub validation_stage: usize,
    pub test_stage: usize,
    pub validation: Vec<CandidateSet>,
    pub test: Vec<CandidateSet>,
    /// Publication stage per item; defaults to the first stage the item is clicked
    /// (`n_stages` for items never clicked).
    pub item_pub_stage: Vec<usize>,
    /// First stage in which each item is clicked (`n_stages` if never).
    pub item_first_stage: Vec<usize>,
    pub degenerate_samples: usize,
}

/// Last stage → test, penultimate → validation, the rest → train.
pub fn chronological_split(partition: StagePartition, n_neg: usize, seed: u64) -> Result<DatasetSplit> {
    let t = partition.n_stages();
    if t < 3 {
        return Err(Error::TooFewStages { found: t, required: 3 });
    }
    let (validation_stage, test_stage) = (t - 2, t - 1);
    let item_first_stage = first_stages(&partition);
    let mut degenerate = 0;
    let mut sets = |stage, label| {
        let live = live_items(&item_first_stage, stage);
        impressions(&partition, stage, &live, n_neg, seed, label, &mut degenerate)
    };
    let validation = sets(validation_stage, "validation-impressions");
    let test = sets(test_stage, "test-impressions");
    Ok(DatasetSplit {
        partition,
        train: 0..validation_stage,
        validation_stage,
        test_stage,
        validation,
        test,
        item_pub_stage: item_first_stage.clone(),
        item_first_stage,
        degenerate_samples: degenerate,
    })
}

fn first_stages(p: &StagePartition) -> Vec<usize> {
    let mut first = alloc::vec![p.n_stages(); p.n_items];
    for s in 0..p.n_stages() {
        for &(_, i) in p.stage_edges(s) {
            if first[i] > s {
                first[i] = s;
            }
        }
    }
    first
}

/// Items first clicked at or before `stage`, ascending.
pub fn live_items(item_first_stage: &[usize], stage: usize) -> Vec<usize> {
    (0..item_first_stage.len()).filter(|&i| item_first_stage[i] <= stage).collect()
}

fn impressions(
    p: &StagePartition,
    stage: usize,
    live: &[usize],
    n_neg: usize,
    seed: u64,
    label: &str,
    degenerate: &mut usize,
) -> Vec<CandidateSet> {
    let mut rng = seeds::rng(seed, label);
    let mut out = Vec::new();
    let mut current: Option<(usize, BTreeSet<usize>)> = None;
    for &(u, i) in p.stage_edges(stage) {
        if current.as_ref().map(|c| c.0) != Some(u) {
            current = Some((u, p.stage_items(u, stage).into_iter().collect()));
        }
        let clicked = &current.as_ref().expect("set above").1;
        let neg = negative_sample_in(clicked, live, n_neg, &mut rng);
        if neg.degenerate {
            *degenerate += 1;
        }
        let mut items = alloc::vec![i];
        items.extend(neg.items);
        let mut labels = alloc::vec![false; items.len()];
        labels[0] = true;
        out.push(CandidateSet {
            user: u,
            stage,
            items,
            labels,
        });
    }
    out
}

impl DatasetSplit {
    /// Replaces the inferred publication stages with known ones.
    pub fn with_publication(mut self, pub_stage: Vec<usize>) -> Result<Self> {
        if pub_stage.len() != self.partition.n_items {
            return Err(mismatch("item publication stages", &[self.partition.n_items], &[pub_stage.len()]));
        }
        self.item_pub_stage = pub_stage;
        Ok(self)
    }

    pub fn n_stages(&self) -> usize {
        self.partition.n_stages()
    }

    /// Items that have appeared by `stage`: the negative pool before removing a user's clicks.
    pub fn live_items(&self, stage: usize) -> Vec<usize> {
        live_items(&self.item_first_stage, stage)
    }
}
