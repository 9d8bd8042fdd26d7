//! The full recommender: parameters, ablation wiring, the reference forward
//! pass built from the plain tensor functions, and the differentiable forward
//! pass recorded on a [`Tape`].
//!
//! Scores for a target stage `h` are computed from the history `0..h` only:
//! the global graph holds the edges of stages `< h`, the stage encoders and the
//! LSTM run over stages `0..h`, and prefixes end with stage `h − 1`. A target
//! with no history (`h = 0`, or a user with no earlier clicks) falls back to
//! the global terms.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::StagePartition;
use crate::encoders::{
    global_encode, init_embeddings, normalize_adjacency, propagate_layers, stage_encode, EmbeddingTable, InitialEmbeddings,
    ItemEncoder, NormalizedAdjacency, TableRole,
};
use crate::error::{Error, Result};
use crate::numerics::{AttentionWeights, CsrMatrix, LstmWeights, ParamSet, Real, Segment, Tape, Tensor, Var};
use crate::objective::{
    bce_loss, consistency_loss, fused_logit, smoothness_loss, total_loss, LossBreakdown, LossWeights, BCE_EPS,
};
use crate::temporal::{build_prefix, long_range_aggregate, retained_clicks, short_term_evolve, PositionalTable};

/// Model variants: the full model and the four component ablations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// No local preference modeling: global tables only.
    NoLpm,
    /// No short-term evolution: stage tables replace the LSTM outputs.
    NoSte,
    /// No long-range aggregation: the attention branch is dropped.
    NoLra,
    /// No global preference modeling: stage encoders start from the initial
    /// table and the global terms leave the fusion and the consistency loss.
    NoGpm,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoLpm,
        Ablation::NoSte,
        Ablation::NoLra,
        Ablation::NoGpm,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoLpm => "no_lpm",
            Ablation::NoSte => "no_ste",
            Ablation::NoLra => "no_lra",
            Ablation::NoGpm => "no_gpm",
        }
    }

    pub fn wiring(self) -> Wiring {
        let all = Wiring {
            global: true,
            temporal: true,
            lstm: true,
            attention: true,
        };
        match self {
            Ablation::Full => all,
            Ablation::NoLpm => Wiring {
                temporal: false,
                lstm: false,
                attention: false,
                ..all
            },
            Ablation::NoSte => Wiring { lstm: false, ..all },
            Ablation::NoLra => Wiring {
                attention: false,
                ..all
            },
            Ablation::NoGpm => Wiring { global: false, ..all },
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownAblation(s.into()))
    }
}

/// Which components take part in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Wiring {
    /// `e^g` seeds the stage encoders and enters the fusion and consistency loss.
    pub global: bool,
    /// Stage encoders run and `ẽ` exists.
    pub temporal: bool,
    /// `ẽ` comes from the LSTM (otherwise `ẽ^t = e^t`).
    pub lstm: bool,
    /// The self-attention branch produces `ē`.
    pub attention: bool,
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub dim: usize,
    pub global_layers: usize,
    pub stage_layers: usize,
    pub attention_layers: usize,
    /// Longest click prefix fed to attention; older clicks are dropped.
    pub max_prefix: usize,
    pub dropout: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 64,
            global_layers: 2,
            stage_layers: 2,
            attention_layers: 2,
            max_prefix: 50,
            dropout: 0.2,
            ablation: Ablation::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
        }
        if self.max_prefix == 0 {
            return Err(Error::InvalidConfig("max_prefix must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Every trainable tensor. Components absent from the ablation's wiring are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub initial: InitialEmbeddings<T>,
    pub user_lstm: Option<LstmWeights<T>>,
    pub item_lstm: Option<LstmWeights<T>>,
    pub attention: Vec<AttentionWeights<T>>,
    pub positions: Option<PositionalTable<T>>,
}

impl<T: Real> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(
        cfg: &ModelConfig,
        n_users: usize,
        n_items: usize,
        feature_dim: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.dim;
        let wiring = cfg.ablation.wiring();
        let initial = init_embeddings(n_users, n_items, d, feature_dim, rng)?;
        let (user_lstm, item_lstm) = if wiring.temporal && wiring.lstm {
            (Some(LstmWeights::random(d, rng)), Some(LstmWeights::random(d, rng)))
        } else {
            (None, None)
        };
        let (attention, positions) = if wiring.temporal && wiring.attention {
            let layers = (0..cfg.attention_layers).map(|_| AttentionWeights::random(d, rng)).collect();
            (layers, Some(PositionalTable::random(cfg.max_prefix, d, rng)))
        } else {
            (Vec::new(), None)
        };
        Ok(ModelParams {
            initial,
            user_lstm,
            item_lstm,
            attention,
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    /// Same structure with every entry zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = T::ZERO);
        }
        z
    }

    /// Checks that the present components match `cfg`'s wiring and dimensions.
    pub fn validate(&self, cfg: &ModelConfig, n_users: usize, n_items: usize) -> Result<()> {
        let d = cfg.dim;
        let w = cfg.ablation.wiring();
        self.initial.users.check_shape("user_embedding", &[n_users, d])?;
        match &self.initial.items {
            ItemEncoder::Embedding(e) => e.check_shape("item_embedding", &[n_items, d])?,
            ItemEncoder::Projection(p) => p.check_shape("item_projection", &[p.rows(), d])?,
        }
        let want_lstm = w.temporal && w.lstm;
        if self.user_lstm.is_some() != want_lstm || self.item_lstm.is_some() != want_lstm {
            return Err(Error::InvalidConfig(format!("LSTM weights do not match ablation {}", cfg.ablation)));
        }
        for l in self.user_lstm.iter().chain(&self.item_lstm) {
            l.validate(d)?;
        }
        let want_att = w.temporal && w.attention;
        if want_att != self.positions.is_some() || (want_att && self.attention.len() != cfg.attention_layers) {
            return Err(Error::InvalidConfig(format!(
                "attention weights do not match ablation {}",
                cfg.ablation
            )));
        }
        if !want_att && !self.attention.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "attention weights do not match ablation {}",
                cfg.ablation
            )));
        }
        for a in &self.attention {
            a.validate(d)?;
        }
        if let Some(p) = &self.positions {
            p.matrix.check_shape("positions", &[cfg.max_prefix, d])?;
        }
        Ok(())
    }
}

impl<T: Real> ParamSet<T> for ModelParams<T> {
    fn tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![("user_embedding".into(), &self.initial.users)];
        match &self.initial.items {
            ItemEncoder::Embedding(e) => out.push(("item_embedding".into(), e)),
            ItemEncoder::Projection(p) => out.push(("item_projection".into(), p)),
        }
        for (name, l) in [("user_lstm", &self.user_lstm), ("item_lstm", &self.item_lstm)] {
            if let Some(l) = l {
                out.push((format!("{name}.input"), &l.input));
                out.push((format!("{name}.recurrent"), &l.recurrent));
                out.push((format!("{name}.bias"), &l.bias));
            }
        }
        for (k, a) in self.attention.iter().enumerate() {
            out.push((format!("attention.{k}.query"), &a.query));
            out.push((format!("attention.{k}.key"), &a.key));
            out.push((format!("attention.{k}.value"), &a.value));
        }
        if let Some(p) = &self.positions {
            out.push(("positions".into(), &p.matrix));
        }
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let mut out: Vec<(String, &mut Tensor<T>)> = vec![("user_embedding".into(), &mut self.initial.users)];
        match &mut self.initial.items {
            ItemEncoder::Embedding(e) => out.push(("item_embedding".into(), e)),
            ItemEncoder::Projection(p) => out.push(("item_projection".into(), p)),
        }
        for (name, l) in [("user_lstm", &mut self.user_lstm), ("item_lstm", &mut self.item_lstm)] {
            if let Some(l) = l {
                out.push((format!("{name}.input"), &mut l.input));
                out.push((format!("{name}.recurrent"), &mut l.recurrent));
                out.push((format!("{name}.bias"), &mut l.bias));
            }
        }
        for (k, a) in self.attention.iter_mut().enumerate() {
            out.push((format!("attention.{k}.query"), &mut a.query));
            out.push((format!("attention.{k}.key"), &mut a.key));
            out.push((format!("attention.{k}.value"), &mut a.value));
        }
        if let Some(p) = &mut self.positions {
            out.push(("positions".into(), &mut p.matrix));
        }
        out
    }
}

/// Normalized adjacencies of every stage graph and of every history prefix.
#[derive(Clone, Debug)]
pub struct StageGraphs<T> {
    /// `stages[s]`: edges of stage `s`.
    pub stages: Vec<NormalizedAdjacency<T>>,
    /// `history[h]`: distinct edges of stages `0..h`, for `h = 0..=T`.
    pub history: Vec<NormalizedAdjacency<T>>,
}

impl<T: Real> StageGraphs<T> {
    pub fn build(p: &StagePartition) -> Result<Self> {
        let (nu, ni) = (p.n_users, p.n_items);
        let stages = (0..p.n_stages())
            .map(|s| normalize_adjacency(p.stage_edges(s), nu, ni))
            .collect::<Result<Vec<_>>>()?;
        let mut history = Vec::with_capacity(p.n_stages() + 1);
        let mut acc: BTreeSet<(usize, usize)> = BTreeSet::new();
        for s in 0..=p.n_stages() {
            let edges: Vec<(usize, usize)> = acc.iter().copied().collect();
            history.push(normalize_adjacency(&edges, nu, ni)?);
            if s < p.n_stages() {
                acc.extend(p.stage_edges(s).iter().copied());
            }
        }
        Ok(StageGraphs { stages, history })
    }
}

/// Everything besides the parameters that a forward pass reads.
pub struct ModelInputs<'a, T> {
    pub config: &'a ModelConfig,
    pub partition: &'a StagePartition,
    pub graphs: &'a StageGraphs<T>,
    /// `n_items × F` item features when the item encoder is a projection.
    pub features: Option<&'a Tensor<T>>,
}

impl<T: Real> ModelInputs<'_, T> {
    fn n_users(&self) -> usize {
        self.partition.n_users
    }

    fn n_items(&self) -> usize {
        self.partition.n_items
    }

    /// Whether `user` has any click before target stage `h`.
    pub fn has_history(&self, user: usize, h: usize) -> bool {
        h > 0 && self.partition.cumulative(user)[h - 1] > 0
    }
}

/// One training example: a positive click in `stage` and its sampled negatives.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainTuple {
    pub user: usize,
    pub stage: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

/// Intermediate tables of the reference forward pass for one target stage.
#[derive(Clone, Debug)]
pub struct ContextTables<T> {
    pub target: usize,
    pub initial: EmbeddingTable<T>,
    pub global: Option<EmbeddingTable<T>>,
    pub stages: Vec<EmbeddingTable<T>>,
    /// `ẽ^s` for `s < target` (the stage tables themselves when the LSTM is ablated).
    pub evolved: Vec<EmbeddingTable<T>>,
    /// `ē_u` for users with a non-empty prefix.
    pub aggregated: Vec<Option<Tensor<T>>>,
    /// Fused user rows `ê_u` (`U×d`) and item rows `ê_i` (`I×d`).
    pub fused_users: Tensor<T>,
    pub fused_items: Tensor<T>,
}

impl<T: Real> ContextTables<T> {
    pub fn logit(&self, user: usize, item: usize) -> T {
        crate::numerics::tensor::dot(self.fused_users.row(user), self.fused_items.row(item))
    }
}

/// Reference forward pass for target stage `h`, composed from the plain
/// encoder, temporal and objective functions. No dropout.
pub fn context_tables<T: Real>(params: &ModelParams<T>, inputs: &ModelInputs<'_, T>, h: usize) -> Result<ContextTables<T>> {
    let cfg = inputs.config;
    let w = cfg.ablation.wiring();
    let (nu, ni) = (inputs.n_users(), inputs.n_items());
    if h > inputs.partition.n_stages() {
        return Err(Error::IndexOutOfRange {
            what: "target stage",
            index: h,
            len: inputs.partition.n_stages() + 1,
        });
    }
    let initial = params.initial.table(ni, inputs.features)?;
    let global = if w.global {
        Some(global_encode(&inputs.graphs.history[h], &initial, cfg.global_layers)?)
    } else {
        None
    };
    let mut stages = Vec::new();
    let mut evolved = Vec::new();
    let mut aggregated = vec![None; nu];
    if w.temporal && h > 0 {
        let seed = global.as_ref().unwrap_or(&initial);
        for s in 0..h {
            stages.push(stage_encode(s, &inputs.graphs.stages[s], seed, cfg.stage_layers)?);
        }
        evolved = match (&params.user_lstm, &params.item_lstm) {
            (Some(lu), Some(li)) if w.lstm => short_term_evolve(&stages, lu, li)?.into_iter().map(|s| s.evolved).collect(),
            _ => stages
                .iter()
                .enumerate()
                .map(|(s, t)| EmbeddingTable {
                    role: TableRole::Evolved(s),
                    ..t.clone()
                })
                .collect(),
        };
        if w.attention {
            let positions = params.positions.as_ref().ok_or(Error::InvalidConfig("missing positions".into()))?;
            let last = &evolved[h - 1];
            for (u, slot) in aggregated.iter_mut().enumerate() {
                if inputs.has_history(u, h) {
                    let prefix = build_prefix(u, h - 1, inputs.partition, last, positions)?;
                    *slot = Some(long_range_aggregate(&prefix.tokens, &params.attention)?);
                }
            }
        }
    }

    let d = cfg.dim;
    let mut fused_users = Tensor::zeros(&[nu, d]);
    let mut fused_items = Tensor::zeros(&[ni, d]);
    // Fuse through the objective's scorer on unit probes so the tables and
    // `fused_logit` cannot drift apart: ê_u·e_k recovers coordinate k.
    for u in 0..nu {
        let hist = !evolved.is_empty() && inputs.has_history(u, h);
        let ev = if hist { Some(evolved[h - 1].user(u)) } else { None };
        let ag = aggregated[u].as_ref().map(|t| t.data());
        let zero = vec![T::ZERO; d];
        let g = global.as_ref().map(|g| g.user(u)).unwrap_or(&zero);
        let row = fused_users.row_mut(u);
        for k in 0..d {
            let mut probe = vec![T::ZERO; d];
            probe[k] = T::ONE;
            row[k] = fused_logit(ev, ag, g, None, &probe)?;
        }
    }
    for i in 0..ni {
        let zero = vec![T::ZERO; d];
        let ev = evolved.last().map(|e| e.item(i));
        let g = global.as_ref().map(|g| g.item(i)).unwrap_or(&zero);
        let row = fused_items.row_mut(i);
        for k in 0..d {
            let mut probe = vec![T::ZERO; d];
            probe[k] = T::ONE;
            row[k] = fused_logit(None, None, &probe, ev, g)?;
        }
    }
    Ok(ContextTables {
        target: h,
        initial,
        global,
        stages,
        evolved,
        aggregated,
        fused_users,
        fused_items,
    })
}

/// Tuples grouped by target stage, in ascending stage order.
fn group_by_stage(tuples: &[TrainTuple]) -> Vec<(usize, Vec<&TrainTuple>)> {
    let mut stages: Vec<usize> = tuples.iter().map(|t| t.stage).collect();
    stages.sort_unstable();
    stages.dedup();
    stages
        .into_iter()
        .map(|s| (s, tuples.iter().filter(|t| t.stage == s).collect()))
        .collect()
}

fn context_users(group: &[&TrainTuple]) -> Vec<usize> {
    let set: BTreeSet<usize> = group.iter().map(|t| t.user).collect();
    set.into_iter().collect()
}

/// The objective on a batch, evaluated with the reference forward pass.
pub fn reference_loss<T: Real>(
    params: &ModelParams<T>,
    inputs: &ModelInputs<'_, T>,
    tuples: &[TrainTuple],
    weights: &LossWeights,
) -> Result<LossBreakdown> {
    let w = inputs.config.ablation.wiring();
    let groups = group_by_stage(tuples);
    let total_users: usize = groups.iter().map(|(_, g)| context_users(g).len()).sum();
    let mut stage_losses = Vec::new();
    let (mut cl, mut sl) = (0.0, 0.0);
    for (h, group) in &groups {
        let tables = context_tables(params, inputs, *h)?;
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        for t in group {
            let hist = !tables.evolved.is_empty() && inputs.has_history(t.user, *h);
            let ev_u = if hist { Some(tables.evolved[h - 1].user(t.user)) } else { None };
            let ag_u = tables.aggregated[t.user].as_ref().map(|x| x.data());
            let zero = vec![T::ZERO; inputs.config.dim];
            let g_u = tables.global.as_ref().map(|g| g.user(t.user)).unwrap_or(&zero);
            for (k, &item) in core::iter::once(&t.positive).chain(&t.negatives).enumerate() {
                let ev_i = tables.evolved.last().map(|e| e.item(item));
                let g_i = tables.global.as_ref().map(|g| g.item(item)).unwrap_or(&zero);
                preds.push(fused_logit(ev_u, ag_u, g_u, ev_i, g_i)?.sigmoid());
                labels.push(k == 0);
            }
        }
        stage_losses.push((*h, bce_loss(&preds, &labels)?));

        if !tables.evolved.is_empty() {
            let users = context_users(group);
            let share = users.len() as f64 / total_users as f64;
            let idx: Vec<Option<usize>> = users.iter().map(|&u| Some(u)).collect();
            let ev_users: Vec<Tensor<T>> = tables
                .evolved
                .iter()
                .map(|e| e.matrix.slice_rows(0, e.n_users).gather_rows(&idx))
                .collect();
            if let Some(g) = tables.global.as_ref().filter(|_| w.global) {
                let g_users = g.matrix.slice_rows(0, g.n_users).gather_rows(&idx);
                cl += share * consistency_loss(&ev_users, &g_users, weights.tau)?;
            }
            sl += share * smoothness_loss(&ev_users)?;
        }
    }
    Ok(total_loss(&stage_losses, cl, sl, weights, params))
}

/// Variables of every parameter tensor on a tape, in [`ParamSet`] order.
struct ParamVars {
    users: Var,
    items: Var,
    user_lstm: Option<[Var; 3]>,
    item_lstm: Option<[Var; 3]>,
    attention: Vec<[Var; 3]>,
    positions: Option<Var>,
    ordered: Vec<Var>,
}

impl ParamVars {
    fn register<T: Real>(tape: &mut Tape<T>, p: &ModelParams<T>) -> Self {
        let mut ordered = Vec::new();
        let mut reg = |tape: &mut Tape<T>, t: &Tensor<T>| {
            let v = tape.param(t.clone());
            ordered.push(v);
            v
        };
        let users = reg(tape, &p.initial.users);
        let items = match &p.initial.items {
            ItemEncoder::Embedding(e) | ItemEncoder::Projection(e) => reg(tape, e),
        };
        let mut lstm = |tape: &mut Tape<T>, l: &Option<LstmWeights<T>>| {
            l.as_ref()
                .map(|l| [reg(tape, &l.input), reg(tape, &l.recurrent), reg(tape, &l.bias)])
        };
        let user_lstm = lstm(tape, &p.user_lstm);
        let item_lstm = lstm(tape, &p.item_lstm);
        let attention = p
            .attention
            .iter()
            .map(|a| [reg(tape, &a.query), reg(tape, &a.key), reg(tape, &a.value)])
            .collect();
        let positions = p.positions.as_ref().map(|pos| reg(tape, &pos.matrix));
        ParamVars {
            users,
            items,
            user_lstm,
            item_lstm,
            attention,
            positions,
            ordered,
        }
    }
}

fn tape_propagate<T: Real>(tape: &mut Tape<T>, m: &Arc<CsrMatrix<T>>, x: Var, layers: usize) -> Var {
    let mut out = x;
    let mut cur = x;
    for _ in 0..layers {
        cur = tape.spmm(m.clone(), cur);
        out = tape.add(out, cur);
    }
    out
}

fn tape_lstm_step<T: Real>(tape: &mut Tape<T>, x: Var, prev: Option<(Var, Var)>, w: &[Var; 3], d: usize) -> (Var, Var) {
    let mut z = tape.matmul(x, w[0]);
    if let Some((h, _)) = prev {
        let r = tape.matmul(h, w[1]);
        z = tape.add(z, r);
    }
    z = tape.add_row(z, w[2]);
    let zi = tape.slice_cols(z, 0, d);
    let i = tape.sigmoid(zi);
    let zf = tape.slice_cols(z, d, d);
    let f = tape.sigmoid(zf);
    let zg = tape.slice_cols(z, 2 * d, d);
    let g = tape.tanh(zg);
    let zo = tape.slice_cols(z, 3 * d, d);
    let o = tape.sigmoid(zo);
    let mut c = tape.mul(i, g);
    if let Some((_, c_prev)) = prev {
        let kept = tape.mul(f, c_prev);
        c = tape.add(kept, c);
    }
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc);
    (h, c)
}

/// Inverted dropout on a tape value; identity when no generator is given.
fn dropout<T: Real, R: Rng + ?Sized>(tape: &mut Tape<T>, x: Var, rate: f64, rng: &mut Option<&mut R>) -> Var {
    let Some(rng) = rng.as_deref_mut() else {
        return x;
    };
    if rate <= 0.0 {
        return x;
    }
    let keep = T::from_f64(1.0 / (1.0 - rate));
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.random::<f64>() < rate { T::ZERO } else { keep })
        .collect();
    tape.mul_const(x, Tensor::new(shape, mask).expect("mask shape"))
}

/// Loss and data-term gradients (the `β‖Θ‖²` gradient is left to the optimizer).
/// A non-finite loss comes back with zero gradients for the caller to reject.
pub struct BatchOutcome<T> {
    pub loss: LossBreakdown,
    pub grads: ModelParams<T>,
}

/// Differentiable forward and backward pass over a batch. Dropout is active
/// iff `dropout_rng` is given.
pub fn batch_loss<T: Real, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    inputs: &ModelInputs<'_, T>,
    tuples: &[TrainTuple],
    weights: &LossWeights,
    mut dropout_rng: Option<&mut R>,
) -> Result<BatchOutcome<T>> {
    let cfg = inputs.config;
    let w = cfg.ablation.wiring();
    let (nu, ni, d) = (inputs.n_users(), inputs.n_items(), cfg.dim);
    let rate = cfg.dropout;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params);

    let item_rows = match (&params.initial.items, inputs.features) {
        (ItemEncoder::Embedding(_), _) => pv.items,
        (ItemEncoder::Projection(p), Some(f)) => {
            f.check_shape("item features", &[ni, p.rows()])?;
            let fv = tape.constant(f.clone());
            tape.matmul(fv, pv.items)
        }
        (ItemEncoder::Projection(p), None) => {
            return Err(crate::error::mismatch("item features", &[ni, p.rows()], &[]));
        }
    };
    let e0 = tape.concat_rows(&[pv.users, item_rows]);

    let groups = group_by_stage(tuples);
    let total_users: usize = groups.iter().map(|(_, g)| context_users(g).len()).sum();
    let mut stage_terms: Vec<(usize, Var)> = Vec::new();
    let mut cl_terms: Vec<(Var, T)> = Vec::new();
    let mut sl_terms: Vec<(Var, T)> = Vec::new();

    for (h, group) in &groups {
        let h = *h;
        if h >= inputs.graphs.history.len() {
            return Err(Error::IndexOutOfRange {
                what: "target stage",
                index: h,
                len: inputs.graphs.history.len(),
            });
        }
        let users = context_users(group);
        let mut user_local = vec![None; nu];
        for (k, &u) in users.iter().enumerate() {
            user_local[u] = Some(k);
        }
        let global = if w.global {
            Some(tape_propagate(&mut tape, &inputs.graphs.history[h].matrix, e0, cfg.global_layers))
        } else {
            None
        };

        // Rows scored in this context: positive first, then negatives, per tuple.
        let mut row_user = Vec::new();
        let mut row_item = Vec::new();
        let mut labels = Vec::new();
        for t in group {
            for (k, &item) in core::iter::once(&t.positive).chain(&t.negatives).enumerate() {
                row_user.push(t.user);
                row_item.push(item);
                labels.push(if k == 0 { T::ONE } else { T::ZERO });
            }
        }

        let mut user_parts: Vec<Var> = Vec::new();
        let mut item_parts: Vec<Var> = Vec::new();
        if let Some(g) = global {
            user_parts.push(tape.gather_all(g, &row_user));
            let idx: Vec<usize> = row_item.iter().map(|&i| nu + i).collect();
            item_parts.push(tape.gather_all(g, &idx));
        }

        if w.temporal && h > 0 {
            let prefixes: Vec<Vec<usize>> = if w.attention {
                users
                    .iter()
                    .map(|&u| {
                        retained_clicks(inputs.partition, u, h - 1, cfg.max_prefix)
                            .iter()
                            .map(|c| c.item)
                            .collect()
                    })
                    .collect()
            } else {
                Vec::new()
            };
            let mut needed: BTreeSet<usize> = row_item.iter().copied().collect();
            needed.extend(prefixes.iter().flatten().copied());
            let items: Vec<usize> = needed.into_iter().collect();
            let mut item_local = vec![None; ni];
            for (k, &i) in items.iter().enumerate() {
                item_local[i] = Some(k);
            }
            let item_nodes: Vec<usize> = items.iter().map(|&i| nu + i).collect();

            let seed = global.unwrap_or(e0);
            let mut ev_users = Vec::with_capacity(h);
            let mut ev_items = Vec::with_capacity(h);
            let mut state_u: Option<(Var, Var)> = None;
            let mut state_i: Option<(Var, Var)> = None;
            for s in 0..h {
                let st = tape_propagate(&mut tape, &inputs.graphs.stages[s].matrix, seed, cfg.stage_layers);
                let xu = tape.gather_all(st, &users);
                let xi = tape.gather_all(st, &item_nodes);
                match (&pv.user_lstm, &pv.item_lstm) {
                    (Some(lu), Some(li)) => {
                        let (hu, cu) = tape_lstm_step(&mut tape, xu, state_u, lu, d);
                        let (hi, ci) = tape_lstm_step(&mut tape, xi, state_i, li, d);
                        state_u = Some((hu, cu));
                        state_i = Some((hi, ci));
                        ev_users.push(hu);
                        ev_items.push(hi);
                    }
                    _ => {
                        ev_users.push(xu);
                        ev_items.push(xi);
                    }
                }
            }
            let (mut eu, mut ei) = (ev_users[h - 1], ev_items[h - 1]);
            if w.lstm {
                eu = dropout(&mut tape, eu, rate, &mut dropout_rng);
                ei = dropout(&mut tape, ei, rate, &mut dropout_rng);
            }

            let hist: Vec<Option<usize>> = row_user
                .iter()
                .map(|&u| if inputs.has_history(u, h) { user_local[u] } else { None })
                .collect();
            user_parts.push(tape.gather(eu, hist));
            let local: Vec<usize> = row_item.iter().map(|&i| item_local[i].expect("needed item")).collect();
            item_parts.push(tape.gather_all(ei, &local));

            if w.attention {
                let pos = pv.positions.ok_or(Error::InvalidConfig("missing positions".into()))?;
                let mut token_items = Vec::new();
                let mut token_pos = Vec::new();
                let mut segments = Vec::new();
                let mut segment_of_user = vec![None; users.len()];
                for (k, p) in prefixes.iter().enumerate() {
                    if p.is_empty() {
                        continue;
                    }
                    segment_of_user[k] = Some(segments.len());
                    segments.push(Segment {
                        start: token_items.len(),
                        len: p.len(),
                    });
                    for (j, &item) in p.iter().enumerate() {
                        token_items.push(item_local[item].expect("prefix item"));
                        token_pos.push(j);
                    }
                }
                if !segments.is_empty() {
                    let ti = tape.gather_all(ei, &token_items);
                    let tp = tape.gather_all(pos, &token_pos);
                    let mut s = tape.add(ti, tp);
                    for layer in &pv.attention {
                        let q = tape.matmul(s, layer[0]);
                        let k = tape.matmul(s, layer[1]);
                        let v = tape.matmul(s, layer[2]);
                        let a = tape.segment_attention(q, k, v, segments.clone());
                        let a = dropout(&mut tape, a, rate, &mut dropout_rng);
                        s = tape.add(s, a);
                    }
                    let bar = tape.segment_sum(s, segments);
                    let idx = row_user
                        .iter()
                        .map(|&u| user_local[u].and_then(|k| segment_of_user[k]))
                        .collect();
                    user_parts.push(tape.gather(bar, idx));
                }
            }

            let share = T::from_f64(users.len() as f64 / total_users as f64);
            if w.global {
                let g = global.expect("global wiring");
                let gu = tape.gather_all(g, &users);
                let mut acc: Option<Var> = None;
                for &e in &ev_users {
                    let logits = tape.matmul_t(e, gu);
                    let logits = tape.scale(logits, T::from_f64(1.0 / weights.tau));
                    let nce = tape.info_nce_diag(logits);
                    acc = Some(match acc {
                        None => nce,
                        Some(a) => tape.add(a, nce),
                    });
                }
                if let Some(a) = acc {
                    cl_terms.push((a, share));
                }
            }
            if h >= 2 {
                let mut acc: Option<Var> = None;
                for s in 1..h {
                    let diff = tape.sub(ev_users[s], ev_users[s - 1]);
                    let sq = tape.sum_squares(diff);
                    acc = Some(match acc {
                        None => sq,
                        Some(a) => tape.add(a, sq),
                    });
                }
                let inv = T::from_f64(1.0 / users.len() as f64);
                sl_terms.push((acc.expect("h >= 2"), share * inv));
            }
        }

        let n_rows = row_user.len();
        let sum_parts = |tape: &mut Tape<T>, parts: &[Var]| -> Var {
            match parts.split_first() {
                Some((&first, rest)) => rest.iter().fold(first, |a, &b| tape.add(a, b)),
                None => tape.constant(Tensor::zeros(&[n_rows, d])),
            }
        };
        let ue = sum_parts(&mut tape, &user_parts);
        let ie = sum_parts(&mut tape, &item_parts);
        let logits = tape.row_dot(ue, ie);
        let bce = tape.bce_mean(logits, (0..n_rows).collect(), labels, T::from_f64(BCE_EPS));
        stage_terms.push((h, bce));
    }

    let mut terms: Vec<(Var, T)> = stage_terms
        .iter()
        .map(|&(h, v)| (v, T::from_f64(weights.stage_weight(h))))
        .collect();
    let cl = tape.weighted_sum(&cl_terms);
    let sl = tape.weighted_sum(&sl_terms);
    terms.push((cl, T::from_f64(weights.lambda_cl)));
    terms.push((sl, T::from_f64(weights.lambda_sl)));
    let objective = tape.weighted_sum(&terms);

    let stage_losses = stage_terms.iter().map(|&(h, v)| (h, tape.scalar(v).to_f64())).collect::<Vec<_>>();
    let loss = total_loss(
        &stage_losses,
        tape.scalar(cl).to_f64(),
        tape.scalar(sl).to_f64(),
        weights,
        params,
    );
    if !loss.total.is_finite() {
        return Ok(BatchOutcome {
            loss,
            grads: params.zeros_like(),
        });
    }

    let mut g = tape.backward(objective);
    let mut grads = params.zeros_like();
    for ((_, dst), v) in grads.tensors_mut().into_iter().zip(&pv.ordered) {
        if let Some(t) = g.take(*v) {
            *dst = t;
        }
    }
    Ok(BatchOutcome { loss, grads })
}

/// Convenience: fixed-seed parameters for `inputs` under `cfg`.
pub fn init_params<T: Real>(
    cfg: &ModelConfig,
    partition: &StagePartition,
    feature_dim: Option<usize>,
    seed: u64,
) -> Result<ModelParams<T>> {
    let mut rng = crate::seeds::rng(seed, "init");
    ModelParams::init(cfg, partition.n_users, partition.n_items, feature_dim, &mut rng)
}

/// Initial table without any propagation, exposed for inspection.
pub fn initial_table<T: Real>(params: &ModelParams<T>, inputs: &ModelInputs<'_, T>) -> Result<EmbeddingTable<T>> {
    params.initial.table(inputs.n_items(), inputs.features)
}

/// `Σ_l Aˡ x` over the history graph of target stage `h`.
pub fn history_propagate<T: Real>(inputs: &ModelInputs<'_, T>, h: usize, x: &Tensor<T>, layers: usize) -> Result<Tensor<T>> {
    propagate_layers(&inputs.graphs.history[h], x, layers)
}
