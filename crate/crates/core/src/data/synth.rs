use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::log::{InteractionLog, Record, Vocabulary};
use crate::error::{Error, Result};
use crate::seeds;

/// Parameters of the drifting-interest click simulator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub n_stages: usize,
    /// Clicks per user per stage are uniform on `[clicks_min, clicks_max]`.
    pub clicks_min: usize,
    pub clicks_max: usize,
    /// Probability a click comes from the user's current dominant topic.
    pub topic_focus: f64,
    /// Probability the dominant topic is redrawn (uniformly, current topic
    /// included) at each stage boundary.
    pub drift_prob: f64,
    /// Fraction of the catalogue published at each stage after the first.
    pub new_item_frac: f64,
    /// Extra sampling weight of an item published in the current stage.
    pub fresh_boost: f64,
    /// The boost decays by this factor per stage of age.
    pub fresh_decay: f64,
    pub stage_seconds: u64,
    pub start_timestamp: u64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            n_items: 500,
            n_topics: 10,
            n_stages: 6,
            clicks_min: 2,
            clicks_max: 6,
            topic_focus: 0.9,
            drift_prob: 0.5,
            new_item_frac: 0.05,
            fresh_boost: 4.0,
            fresh_decay: 0.5,
            stage_seconds: 7 * 24 * 3600,
            start_timestamp: 1_600_000_000,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic data: {m}")));
        if self.n_users == 0 || self.n_items == 0 || self.n_stages == 0 || self.n_topics == 0 {
            return bad("users, items, topics and stages must all be positive");
        }
        for (name, p) in [
            ("topic_focus", self.topic_focus),
            ("drift_prob", self.drift_prob),
            ("new_item_frac", self.new_item_frac),
            ("fresh_decay", self.fresh_decay),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.fresh_boost >= 0.0) {
            return bad("fresh_boost must be nonnegative");
        }
        if self.clicks_min > self.clicks_max {
            return bad("clicks_min exceeds clicks_max");
        }
        if self.stage_seconds == 0 {
            return bad("stage_seconds must be positive");
        }
        if self.new_per_stage() * (self.n_stages - 1) >= self.n_items {
            return bad("new_item_frac leaves no items for the first stage");
        }
        Ok(())
    }

    pub fn new_per_stage(&self) -> usize {
        libm::round(self.new_item_frac * self.n_items as f64) as usize
    }
}

/// Latent state behind a generated log, aligned with the generator's indices
/// (`u{k}`, `i{k}`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    /// `user_topics[u][s]`: dominant topic of user `u` in stage `s`.
    pub user_topics: Vec<Vec<usize>>,
    pub item_topic: Vec<usize>,
    pub item_pub_stage: Vec<usize>,
    pub item_pub_timestamp: Vec<u64>,
    pub stage_seconds: u64,
    pub start_timestamp: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub log: InteractionLog,
    pub truth: SynthTruth,
}

/// Generates a click log in which users follow one dominant topic per stage
/// and switch topics at stage boundaries with probability `drift_prob`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut rng = seeds::rng(cfg.seed, "synth");
    let (nu, ni, nt, ns) = (cfg.n_users, cfg.n_items, cfg.n_topics, cfg.n_stages);

    let per_stage = cfg.new_per_stage();
    let initial = ni - per_stage * (ns - 1);
    let item_pub_stage: Vec<usize> = (0..ni)
        .map(|i| if i < initial { 0 } else { 1 + (i - initial) / per_stage.max(1) })
        .collect();
    let item_topic: Vec<usize> = (0..ni).map(|_| rng.random_range(0..nt)).collect();
    let stage_start = |s: usize| cfg.start_timestamp + s as u64 * cfg.stage_seconds;
    let item_pub_timestamp: Vec<u64> = item_pub_stage
        .iter()
        .map(|&s| if s == 0 { cfg.start_timestamp } else { stage_start(s) })
        .collect();

    let mut user_topics = vec![vec![0; ns]; nu];
    for topics in user_topics.iter_mut() {
        topics[0] = rng.random_range(0..nt);
        for s in 1..ns {
            topics[s] = if rng.random_bool(cfg.drift_prob) {
                rng.random_range(0..nt)
            } else {
                topics[s - 1]
            };
        }
    }

    let mut records = Vec::new();
    for s in 0..ns {
        let weight = |i: usize| -> f64 {
            let age = (s - item_pub_stage[i]) as i32;
            1.0 + cfg.fresh_boost * libm::pow(cfg.fresh_decay, age as f64)
        };
        let live: Vec<usize> = (0..ni).filter(|&i| item_pub_stage[i] <= s).collect();
        let mut by_topic: Vec<Vec<usize>> = vec![Vec::new(); nt];
        for &i in &live {
            by_topic[item_topic[i]].push(i);
        }
        let all = WeightedPool::new(&live, weight);
        let topical: Vec<WeightedPool> = by_topic.iter().map(|p| WeightedPool::new(p, weight)).collect();

        for (u, topics) in user_topics.iter().enumerate() {
            let n = rng.random_range(cfg.clicks_min..=cfg.clicks_max);
            let mut chosen: Vec<usize> = Vec::with_capacity(n);
            let mut attempts = 0;
            while chosen.len() < n && attempts < 50 * (n + 1) {
                attempts += 1;
                let pool = &topical[topics[s]];
                let from_topic = rng.random_bool(cfg.topic_focus) && !pool.is_empty();
                let item = if from_topic { pool.draw(&mut rng) } else { all.draw(&mut rng) };
                if !chosen.contains(&item) {
                    chosen.push(item);
                }
            }
            for item in chosen {
                let offset = rng.random_range(0..cfg.stage_seconds);
                records.push(Record {
                    user: u,
                    item,
                    timestamp: stage_start(s) + offset,
                });
            }
        }
    }
    // Anchor the first stage at the configured start so fixed-width windows
    // of `stage_seconds` reproduce the generator's stages.
    if let Some(first) = records.iter_mut().min_by_key(|r| (r.timestamp, r.user, r.item)) {
        first.timestamp = cfg.start_timestamp;
    }

    let user_ids: Vec<String> = (0..nu).map(|u| format!("u{u}")).collect();
    let item_ids: Vec<String> = (0..ni).map(|i| format!("i{i}")).collect();
    let log = InteractionLog::from_records(
        Vocabulary::from_ids(user_ids.clone()),
        Vocabulary::from_ids(item_ids.clone()),
        records,
    )?;
    Ok(SyntheticData {
        log,
        truth: SynthTruth {
            user_ids,
            item_ids,
            user_topics,
            item_topic,
            item_pub_stage,
            item_pub_timestamp,
            stage_seconds: cfg.stage_seconds,
            start_timestamp: cfg.start_timestamp,
        },
    })
}

/// Items with cumulative weights for inverse-CDF sampling.
struct WeightedPool {
    items: Vec<usize>,
    cumulative: Vec<f64>,
}

impl WeightedPool {
    fn new(items: &[usize], weight: impl Fn(usize) -> f64) -> Self {
        let mut acc = 0.0;
        let cumulative = items
            .iter()
            .map(|&i| {
                acc += weight(i);
                acc
            })
            .collect();
        WeightedPool {
            items: items.to_vec(),
            cumulative,
        }
    }

    fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("non-empty pool");
        let x = rng.random::<f64>() * total;
        let k = self.cumulative.partition_point(|&c| c <= x);
        self.items[k.min(self.items.len() - 1)]
    }
}
