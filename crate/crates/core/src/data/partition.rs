use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;

use super::log::InteractionLog;
use crate::error::{Error, Result};

/// One user click after within-stage deduplication.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Click {
    pub item: usize,
    pub stage: usize,
}

/// The log cut into fixed-width stages anchored at the earliest timestamp.
///
/// Stage indices are 0-based: stage `t` covers
/// `[start + t·window, start + (t+1)·window)`.
#[derive(Clone, Debug, PartialEq)]
pub struct StagePartition {
    pub window: u64,
    pub start: u64,
    pub n_users: usize,
    pub n_items: usize,
    /// Deduplicated `(user, item)` edges per stage, sorted.
    stage_edges: Vec<Vec<(usize, usize)>>,
    /// Stage of every log record, parallel to `InteractionLog::records`.
    record_stage: Vec<usize>,
    /// Per user, deduplicated clicks in chronological order.
    clicks: Vec<Vec<Click>>,
    /// `cumulative[u][t]` = number of clicks of `u` in stages `0..=t`.
    cumulative: Vec<Vec<usize>>,
}

impl StagePartition {
    pub fn n_stages(&self) -> usize {
        self.stage_edges.len()
    }

    pub fn stage_edges(&self, stage: usize) -> &[(usize, usize)] {
        &self.stage_edges[stage]
    }

    pub fn record_stage(&self) -> &[usize] {
        &self.record_stage
    }

    pub fn clicks(&self, user: usize) -> &[Click] {
        &self.clicks[user]
    }

    pub fn cumulative(&self, user: usize) -> &[usize] {
        &self.cumulative[user]
    }

    /// Clicks of `user` in stages `0..=stage`, oldest first.
    pub fn prefix(&self, user: usize, stage: usize) -> &[Click] {
        let m = self.cumulative[user][stage];
        &self.clicks[user][..m]
    }

    /// Distinct `(user, item)` pairs over all stages.
    pub fn global_edges(&self) -> Vec<(usize, usize)> {
        self.edges_before(self.n_stages())
    }

    /// Distinct `(user, item)` pairs over stages `0..end`.
    pub fn edges_before(&self, end: usize) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self.stage_edges[..end.min(self.n_stages())]
            .iter()
            .flatten()
            .copied()
            .collect();
        set.into_iter().collect()
    }

    /// Items clicked by `user` in `stage`, sorted.
    pub fn stage_items(&self, user: usize, stage: usize) -> Vec<usize> {
        let lo = if stage == 0 { 0 } else { self.cumulative[user][stage - 1] };
        let hi = self.cumulative[user][stage];
        let mut v: Vec<usize> = self.clicks[user][lo..hi].iter().map(|c| c.item).collect();
        v.sort_unstable();
        v
    }
}

/// Assigns every record to its stage and derives per-stage edges and prefixes.
pub fn partition_stages(log: &InteractionLog, window: u64) -> Result<StagePartition> {
    if window == 0 {
        return Err(Error::InvalidWindow);
    }
    let records = log.records();
    let first = records.first().ok_or(Error::EmptyLog)?;
    let last = records.last().ok_or(Error::EmptyLog)?;
    let start = first.timestamp;
    let n_stages = ((last.timestamp - start) / window + 1) as usize;

    let (n_users, n_items) = (log.n_users(), log.n_items());
    let mut seen: Vec<BTreeSet<(usize, usize)>> = vec![BTreeSet::new(); n_stages];
    let mut record_stage = Vec::with_capacity(records.len());
    let mut clicks: Vec<Vec<Click>> = vec![Vec::new(); n_users];
    for r in records {
        let stage = ((r.timestamp - start) / window) as usize;
        record_stage.push(stage);
        if seen[stage].insert((r.user, r.item)) {
            clicks[r.user].push(Click { item: r.item, stage });
        }
    }
    let stage_edges = seen.into_iter().map(|s| s.into_iter().collect()).collect();
    let cumulative = clicks
        .iter()
        .map(|cs| {
            let mut counts = vec![0; n_stages];
            for c in cs {
                counts[c.stage] += 1;
            }
            let mut acc = 0;
            for x in counts.iter_mut() {
                acc += *x;
                *x = acc;
            }
            counts
        })
        .collect();
    Ok(StagePartition {
        window,
        start,
        n_users,
        n_items,
        stage_edges,
        record_stage,
        clicks,
        cumulative,
    })
}
