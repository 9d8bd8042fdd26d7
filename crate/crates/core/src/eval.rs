//! Ranking metrics, candidate scoring and the freshness analysis.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::data::{CandidateSet, DatasetSplit, StagePartition};
use crate::error::{mismatch, Error, Result};
use crate::model::{context_tables, ContextTables, ModelInputs, ModelParams};
use crate::numerics::Real;

/// Scored candidates of one impression.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Impression {
    pub user: usize,
    pub stage: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

impl Impression {
    pub fn new(user: usize, stage: usize, items: Vec<usize>, scores: Vec<f64>, labels: Vec<bool>) -> Result<Self> {
        if scores.len() != items.len() {
            return Err(mismatch("scores", &[items.len()], &[scores.len()]));
        }
        if labels.len() != items.len() {
            return Err(mismatch("labels", &[items.len()], &[labels.len()]));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidConfig("impression scores must be finite".into()));
        }
        if !labels.contains(&true) || !labels.contains(&false) {
            return Err(Error::InvalidConfig("an impression needs a positive and a negative".into()));
        }
        Ok(Impression {
            user,
            stage,
            items,
            scores,
            labels,
        })
    }

    /// Candidate positions ordered by descending score, ties by item index.
    pub fn ranking(&self) -> Vec<usize> {
        rank_order(&self.items, &self.scores)
    }
}

/// Positions of `items` sorted by descending score, ties broken by item index ascending.
pub fn rank_order(items: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(items[a].cmp(&items[b])));
    order
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half. `None` without at least one positive and one negative.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Walk tie groups in ascending score; every positive beats the negatives
    // below its group and splits with the negatives inside it.
    let (mut twice_wins, mut neg_below) = (0u64, 0u64);
    let mut k = 0;
    while k < order.len() {
        let mut end = k;
        while end < order.len() && scores[order[end]] == scores[order[k]] {
            end += 1;
        }
        let pos = order[k..end].iter().filter(|&&j| labels[j]).count() as u64;
        let neg = (end - k) as u64 - pos;
        twice_wins += pos * (2 * neg_below + neg);
        neg_below += neg;
        k = end;
    }
    Some(twice_wins as f64 / (2 * n_pos * n_neg) as f64)
}

/// `1 / rank` of the best-ranked positive; `None` without positives.
pub fn mrr(items: &[usize], scores: &[f64], labels: &[bool]) -> Option<f64> {
    rank_order(items, scores)
        .iter()
        .position(|&j| labels[j])
        .map(|r| 1.0 / (r + 1) as f64)
}

/// Binary-relevance nDCG at cutoff `k`; `None` without positives.
pub fn ndcg_at_k(items: &[usize], scores: &[f64], labels: &[bool], k: usize) -> Option<f64> {
    let n_pos = labels.iter().filter(|l| **l).count();
    if n_pos == 0 || k == 0 {
        return None;
    }
    let gain = |r: usize| 1.0 / libm::log2((r + 2) as f64);
    let dcg: f64 = rank_order(items, scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &j)| labels[j])
        .map(|(r, _)| gain(r))
        .sum();
    let idcg: f64 = (0..n_pos.min(k)).map(gain).sum();
    Some(dcg / idcg)
}

/// Order-independent mean: values are summed in sorted order.
fn mean(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Dataset means of the ranking metrics.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RankingMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub impressions: usize,
    /// Impressions left out for lacking a positive or a negative.
    pub skipped: usize,
}

pub fn ranking_metrics(impressions: &[Impression]) -> RankingMetrics {
    let (mut a, mut m, mut n5, mut n10) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut skipped = 0;
    for imp in impressions {
        let Some(x) = auc(&imp.scores, &imp.labels) else {
            skipped += 1;
            continue;
        };
        a.push(x);
        m.extend(mrr(&imp.items, &imp.scores, &imp.labels));
        n5.extend(ndcg_at_k(&imp.items, &imp.scores, &imp.labels, 5));
        n10.extend(ndcg_at_k(&imp.items, &imp.scores, &imp.labels, 10));
    }
    if skipped > 0 {
        log::warn!("{skipped} impressions skipped for lacking a positive or a negative");
    }
    RankingMetrics {
        impressions: a.len(),
        skipped,
        auc: mean(a),
        mrr: mean(m),
        ndcg5: mean(n5),
        ndcg10: mean(n10),
    }
}

/// Which publication stages count as new and as historical.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreshnessWindows {
    /// Items published at or after `target − new_stages` are new.
    pub new_stages: usize,
    /// Items published in the first `historical_stages` stages are historical.
    pub historical_stages: usize,
    pub top_k: usize,
}

impl Default for FreshnessWindows {
    fn default() -> Self {
        FreshnessWindows {
            new_stages: 1,
            historical_stages: 1,
            top_k: 10,
        }
    }
}

/// Share and mean 0-based position of new and historical items in top-K lists.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FreshnessReport {
    pub users: usize,
    pub new_pct: f64,
    pub historical_pct: f64,
    /// Absent when no list holds a new item.
    pub nrank: Option<f64>,
    pub orank: Option<f64>,
}

/// `lists[u]` is a ranked top-`k` list; `is_new` / `is_historical` classify items.
pub fn freshness_report(
    lists: &[Vec<usize>],
    k: usize,
    is_new: impl Fn(usize) -> bool,
    is_historical: impl Fn(usize) -> bool,
) -> FreshnessReport {
    let (mut new_share, mut old_share) = (Vec::new(), Vec::new());
    let (mut new_rank, mut old_rank) = (Vec::new(), Vec::new());
    for list in lists {
        let list = &list[..list.len().min(k)];
        for (is, share, rank) in [
            (&is_new as &dyn Fn(usize) -> bool, &mut new_share, &mut new_rank),
            (&is_historical, &mut old_share, &mut old_rank),
        ] {
            let pos: Vec<f64> = list
                .iter()
                .enumerate()
                .filter(|(_, &i)| is(i))
                .map(|(r, _)| r as f64)
                .collect();
            share.push(pos.len() as f64 / k as f64);
            if !pos.is_empty() {
                rank.push(mean(pos));
            }
        }
    }
    let opt = |v: Vec<f64>| if v.is_empty() { None } else { Some(mean(v)) };
    FreshnessReport {
        users: lists.len(),
        new_pct: mean(new_share),
        historical_pct: mean(old_share),
        nrank: opt(new_rank),
        orank: opt(old_rank),
    }
}

/// Scores candidate sets of one target stage with the given context tables.
pub fn score_candidates<T: Real>(tables: &ContextTables<T>, sets: &[CandidateSet]) -> Result<Vec<Impression>> {
    sets.iter()
        .map(|c| {
            let scores = c.items.iter().map(|&i| tables.logit(c.user, i).to_f64()).collect();
            Impression::new(c.user, c.stage, c.items.clone(), scores, c.labels.clone())
        })
        .collect()
}

/// Scores candidate sets, building the context of each distinct target stage once.
pub fn score_sets<T: Real>(
    params: &ModelParams<T>,
    inputs: &ModelInputs<'_, T>,
    sets: &[CandidateSet],
) -> Result<Vec<Impression>> {
    let stages: BTreeSet<usize> = sets.iter().map(|c| c.stage).collect();
    let mut out = Vec::with_capacity(sets.len());
    for h in stages {
        let tables = context_tables(params, inputs, h)?;
        let group: Vec<CandidateSet> = sets.iter().filter(|c| c.stage == h).cloned().collect();
        out.extend(score_candidates(&tables, &group)?);
    }
    Ok(out)
}

/// Top-`k` items for each user at the tables' target stage, over items the
/// user has not clicked before that stage.
pub fn recommend_top_k<T: Real>(
    tables: &ContextTables<T>,
    partition: &StagePartition,
    users: &[usize],
    k: usize,
) -> Vec<Vec<usize>> {
    let h = tables.target;
    let n_items = tables.fused_items.rows();
    let all: Vec<usize> = (0..n_items).collect();
    users
        .iter()
        .map(|&u| {
            let seen: BTreeSet<usize> = if h == 0 {
                BTreeSet::new()
            } else {
                partition.prefix(u, h - 1).iter().map(|c| c.item).collect()
            };
            let cand: Vec<usize> = all.iter().copied().filter(|i| !seen.contains(i)).collect();
            let scores: Vec<f64> = cand.iter().map(|&i| tables.logit(u, i).to_f64()).collect();
            rank_order(&cand, &scores).into_iter().take(k).map(|j| cand[j]).collect()
        })
        .collect()
}

/// Freshness of top-K lists for the users of `sets` at their target stage.
pub fn freshness_for<T: Real>(
    tables: &ContextTables<T>,
    partition: &StagePartition,
    sets: &[CandidateSet],
    pub_stage: &[usize],
    windows: &FreshnessWindows,
) -> Result<FreshnessReport> {
    if pub_stage.len() != partition.n_items {
        return Err(mismatch("item publication stages", &[partition.n_items], &[pub_stage.len()]));
    }
    let users: BTreeSet<usize> = sets.iter().map(|c| c.user).collect();
    let users: Vec<usize> = users.into_iter().collect();
    let lists = recommend_top_k(tables, partition, &users, windows.top_k);
    let new_from = tables.target.saturating_sub(windows.new_stages);
    Ok(freshness_report(
        &lists,
        windows.top_k,
        |i| pub_stage[i] >= new_from,
        |i| pub_stage[i] < windows.historical_stages,
    ))
}

/// Validation and test metrics of one trained model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub validation: RankingMetrics,
    pub test: RankingMetrics,
    /// Top-K freshness at the test stage.
    pub freshness: FreshnessReport,
    /// Mean `Σ_s ‖ẽ^s_u − ẽ^{s−1}_u‖²` over users in the test context.
    pub evolution_distance: f64,
}

/// Scores the split's validation and test impressions and the test-stage top-K lists.
pub fn evaluate_split<T: Real>(
    params: &ModelParams<T>,
    inputs: &ModelInputs<'_, T>,
    split: &DatasetSplit,
    windows: &FreshnessWindows,
) -> Result<EvalSummary> {
    let val_tables = context_tables(params, inputs, split.validation_stage)?;
    let validation = ranking_metrics(&score_candidates(&val_tables, &split.validation)?);
    let tables = context_tables(params, inputs, split.test_stage)?;
    let test = ranking_metrics(&score_candidates(&tables, &split.test)?);
    let freshness = freshness_for(&tables, &split.partition, &split.test, &split.item_pub_stage, windows)?;
    Ok(EvalSummary {
        validation,
        test,
        freshness,
        evolution_distance: evolution_distance(&tables, inputs.partition.n_users),
    })
}

/// Mean over users of `Σ_s ‖ẽ^s_u − ẽ^{s−1}_u‖²` across a context's evolved tables.
pub fn evolution_distance<T: Real>(tables: &ContextTables<T>, n_users: usize) -> f64 {
    if n_users == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for w in tables.evolved.windows(2) {
        for u in 0..n_users {
            total += w[1]
                .user(u)
                .iter()
                .zip(w[0].user(u))
                .map(|(a, b)| {
                    let d = (*a - *b).to_f64();
                    d * d
                })
                .sum::<f64>();
        }
    }
    total / n_users as f64
}
