//! Mini-batch training with Adam and early stopping on validation AUC.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{negative_sample_in, DatasetSplit};
use crate::error::{Error, Result};
use crate::eval::{ranking_metrics, score_sets};
use crate::model::{
    batch_loss, context_tables, Ablation, ModelConfig, ModelInputs, ModelParams, StageGraphs, TrainTuple, Wiring,
};
use crate::numerics::{AdamConfig, AdamState, ParamSet, Real, Tensor};
use crate::objective::LossWeights;
use crate::seeds;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Precision {
    #[default]
    #[serde(rename = "32")]
    F32,
    #[serde(rename = "64")]
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub weights: LossWeights,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Negatives per positive, for training tuples and evaluation impressions.
    pub n_neg: usize,
    pub max_epochs: usize,
    /// Epochs without a validation AUC improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            weights: LossWeights::default(),
            learning_rate: 5e-6,
            batch_size: 1024,
            n_neg: 4,
            max_epochs: 100,
            patience: 5,
            seed: 0,
            precision: Precision::F32,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be finite and nonnegative".into()));
        }
        if self.batch_size == 0 || self.n_neg == 0 {
            return Err(Error::InvalidConfig("batch size and negatives per positive must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be positive".into()));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weights.beta,
            ..AdamConfig::default()
        }
    }
}

/// Parses an ablation flag into the wiring it selects.
pub fn apply_ablation(flag: &str) -> Result<Wiring> {
    Ok(flag.parse::<Ablation>()?.wiring())
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean over batches of the weighted objective (including `β‖Θ‖²`).
    pub loss: f64,
    /// Mean over batches of the per-stage cross-entropy, unweighted.
    pub bce: f64,
    pub consistency: f64,
    pub smoothness: f64,
    pub val_auc: f64,
    pub improved: bool,
}

/// Mutable training progress.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub params: ModelParams<T>,
    pub adam: AdamState<T>,
    pub epoch: usize,
    pub best_val_auc: f64,
    pub best_epoch: usize,
    pub best_params: ModelParams<T>,
    pub since_improvement: usize,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    /// Parameters of the best validation epoch.
    pub params: ModelParams<T>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub log: Vec<EpochLog>,
    pub stopped_early: bool,
}

/// Every click of the training stages with `n_neg` fresh negatives drawn
/// from items that have appeared by that stage and that the user did not
/// click in it.
pub fn training_tuples(split: &DatasetSplit, n_neg: usize, seed: u64) -> Vec<TrainTuple> {
    let p = &split.partition;
    let mut rng = seeds::rng(seed, "train-negatives");
    let mut out = Vec::new();
    for s in split.train.clone() {
        let live = split.live_items(s);
        let mut current: Option<(usize, BTreeSet<usize>)> = None;
        for &(u, i) in p.stage_edges(s) {
            if current.as_ref().map(|c| c.0) != Some(u) {
                current = Some((u, p.stage_items(u, s).into_iter().collect()));
            }
            let clicked = &current.as_ref().expect("set above").1;
            out.push(TrainTuple {
                user: u,
                stage: s,
                positive: i,
                negatives: negative_sample_in(clicked, &live, n_neg, &mut rng).items,
            });
        }
    }
    out
}

/// Shared graph structures and inputs for one dataset.
pub struct Prepared<'a, T> {
    pub split: &'a DatasetSplit,
    pub graphs: StageGraphs<T>,
    pub features: Option<&'a Tensor<T>>,
}

impl<'a, T: Real> Prepared<'a, T> {
    pub fn new(split: &'a DatasetSplit, features: Option<&'a Tensor<T>>) -> Result<Self> {
        Ok(Prepared {
            split,
            graphs: StageGraphs::build(&split.partition)?,
            features,
        })
    }

    pub fn inputs<'b>(&'b self, config: &'b ModelConfig) -> ModelInputs<'b, T> {
        ModelInputs {
            config,
            partition: &self.split.partition,
            graphs: &self.graphs,
            features: self.features,
        }
    }
}

pub fn validation_auc<T: Real>(params: &ModelParams<T>, inputs: &ModelInputs<'_, T>, split: &DatasetSplit) -> Result<f64> {
    Ok(ranking_metrics(&score_sets(params, inputs, &split.validation)?).auc)
}

pub fn init_state<T: Real>(cfg: &TrainConfig, prepared: &Prepared<'_, T>) -> Result<TrainState<T>> {
    cfg.validate()?;
    let p = &prepared.split.partition;
    let feature_dim = prepared.features.map(|f| f.cols());
    let mut rng = seeds::rng(cfg.seed, "init");
    let params = ModelParams::init(&cfg.model, p.n_users, p.n_items, feature_dim, &mut rng)?;
    Ok(TrainState {
        adam: AdamState::new(&params, cfg.adam()),
        best_params: params.clone(),
        params,
        epoch: 0,
        best_val_auc: f64::NEG_INFINITY,
        best_epoch: 0,
        since_improvement: 0,
    })
}

/// One pass over freshly sampled training tuples. Returns the log row
/// (validation AUC not yet filled in).
pub fn train_epoch<T: Real>(cfg: &TrainConfig, prepared: &Prepared<'_, T>, state: &mut TrainState<T>) -> Result<EpochLog> {
    let epoch = state.epoch;
    let inputs = prepared.inputs(&cfg.model);
    let mut tuples = training_tuples(prepared.split, cfg.n_neg, seeds::derive_seed(cfg.seed, &format!("epoch-{epoch}")));
    tuples.shuffle(&mut seeds::rng(cfg.seed, &format!("shuffle-{epoch}")));
    let mut dropout_rng = seeds::rng(cfg.seed, &format!("dropout-{epoch}"));
    let (mut loss, mut bce, mut cl, mut sl) = (0.0, 0.0, 0.0, 0.0);
    let mut batches = 0;
    for (b, batch) in tuples.chunks(cfg.batch_size).enumerate() {
        let out = batch_loss(&state.params, &inputs, batch, &cfg.weights, Some(&mut dropout_rng))?;
        if !out.loss.total.is_finite() {
            return Err(Error::Diverged { epoch, batch: b });
        }
        state
            .adam
            .step(&mut state.params, &out.grads)
            .map_err(|_| Error::Diverged { epoch, batch: b })?;
        loss += out.loss.total;
        let n = out.loss.stage_losses.len().max(1) as f64;
        bce += out.loss.stage_losses.iter().map(|(_, l)| l).sum::<f64>() / n;
        cl += out.loss.consistency;
        sl += out.loss.smoothness;
        batches += 1;
    }
    let n = batches.max(1) as f64;
    state.epoch += 1;
    Ok(EpochLog {
        epoch,
        loss: loss / n,
        bce: bce / n,
        consistency: cl / n,
        smoothness: sl / n,
        val_auc: f64::NAN,
        improved: false,
    })
}

/// Trains until `max_epochs` or until validation AUC stalls for `patience`
/// epochs, returning the best-validation parameters.
pub fn run_training<T: Real>(cfg: &TrainConfig, split: &DatasetSplit, features: Option<&Tensor<T>>) -> Result<TrainOutcome<T>> {
    let prepared = Prepared::new(split, features)?;
    let mut state = init_state(cfg, &prepared)?;
    let inputs = prepared.inputs(&cfg.model);
    let mut log = Vec::new();
    let mut stopped_early = false;
    while state.epoch < cfg.max_epochs {
        let mut row = train_epoch(cfg, &prepared, &mut state)?;
        row.val_auc = validation_auc(&state.params, &inputs, split)?;
        if row.val_auc > state.best_val_auc {
            state.best_val_auc = row.val_auc;
            state.best_epoch = row.epoch;
            state.best_params = state.params.clone();
            state.since_improvement = 0;
            row.improved = true;
        } else {
            state.since_improvement += 1;
        }
        log::info!(
            "epoch {} loss {:.6} val_auc {:.4}{}",
            row.epoch,
            row.loss,
            row.val_auc,
            if row.improved { " *" } else { "" }
        );
        log.push(row);
        if state.since_improvement >= cfg.patience {
            stopped_early = true;
            break;
        }
    }
    if log.is_empty() {
        state.best_val_auc = validation_auc(&state.params, &inputs, split)?;
    }
    Ok(TrainOutcome {
        params: state.best_params,
        best_epoch: state.best_epoch,
        best_val_auc: state.best_val_auc,
        log,
        stopped_early,
    })
}

/// Mean over users of `Σ_s ‖ẽ^s_u − ẽ^{s−1}_u‖²` across the history of target stage `h`.
pub fn evolution_distance<T: Real>(params: &ModelParams<T>, inputs: &ModelInputs<'_, T>, h: usize) -> Result<f64> {
    let tables = context_tables(params, inputs, h)?;
    Ok(crate::eval::evolution_distance(&tables, inputs.partition.n_users))
}

/// Number of scalar parameters a configuration trains.
pub fn parameter_count<T: Real>(params: &ModelParams<T>) -> usize {
    params.param_count()
}
