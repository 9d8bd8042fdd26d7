//! Short-term evolution across stages and long-range aggregation over click prefixes.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{Click, StagePartition};
use crate::encoders::{EmbeddingTable, TableRole};
use crate::error::{Error, Result};
use crate::numerics::{self_attention_layer, AttentionWeights, LstmWeights, Real, Tensor};

/// Evolved table `ẽ^t` and the LSTM cell state after stage `t`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageState<T> {
    pub evolved: EmbeddingTable<T>,
    pub cell: Tensor<T>,
}

/// One LSTM step applied to every row of `x` at once (row-vector convention).
pub fn lstm_rows<T: Real>(x: &Tensor<T>, h: &Tensor<T>, c: &Tensor<T>, w: &LstmWeights<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = w.dim();
    w.validate(d)?;
    let n = x.rows();
    x.check_shape("x", &[n, d])?;
    h.check_shape("h_prev", &[n, d])?;
    c.check_shape("c_prev", &[n, d])?;
    let z = x.matmul(&w.input).add(&h.matmul(&w.recurrent)).add_row_vector(&w.bias);
    let mut h_out = Tensor::zeros(&[n, d]);
    let mut c_out = Tensor::zeros(&[n, d]);
    for r in 0..n {
        let zr = z.row(r);
        for j in 0..d {
            let i = zr[j].sigmoid();
            let f = zr[d + j].sigmoid();
            let g = zr[2 * d + j].tanh();
            let o = zr[3 * d + j].sigmoid();
            let cj = f * c.get(r, j) + i * g;
            c_out.set(r, j, cj);
            h_out.set(r, j, o * cj.tanh());
        }
    }
    Ok((h_out, c_out))
}

/// Runs one LSTM per node over the stage sequence: the step input at stage `t`
/// is the node's row of `e^t`, the state starts at zero, and `ẽ^t` is the
/// hidden state after step `t`. Users and items use separate weights.
pub fn short_term_evolve<T: Real>(
    stages: &[EmbeddingTable<T>],
    user_lstm: &LstmWeights<T>,
    item_lstm: &LstmWeights<T>,
) -> Result<Vec<StageState<T>>> {
    let first = stages.first().ok_or(Error::EmptySequence)?;
    let (nu, d) = (first.n_users, first.dim());
    let ni = first.n_items();
    let mut hu = Tensor::zeros(&[nu, d]);
    let mut cu = Tensor::zeros(&[nu, d]);
    let mut hi = Tensor::zeros(&[ni, d]);
    let mut ci = Tensor::zeros(&[ni, d]);
    let mut out = Vec::with_capacity(stages.len());
    for (t, table) in stages.iter().enumerate() {
        table.matrix.check_shape("stage table", &[nu + ni, d])?;
        let (h, c) = lstm_rows(&table.matrix.slice_rows(0, nu), &hu, &cu, user_lstm)?;
        hu = h;
        cu = c;
        let (h, c) = lstm_rows(&table.matrix.slice_rows(nu, ni), &hi, &ci, item_lstm)?;
        hi = h;
        ci = c;
        out.push(StageState {
            evolved: EmbeddingTable::new(TableRole::Evolved(t), nu, ni, Tensor::concat_rows(&[&hu, &hi]))?,
            cell: Tensor::concat_rows(&[&cu, &ci]),
        });
    }
    Ok(out)
}

/// Learnable `M_max × d` position rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PositionalTable<T> {
    pub matrix: Tensor<T>,
}

impl<T: Real> PositionalTable<T> {
    pub fn zeros(max_len: usize, d: usize) -> Self {
        PositionalTable {
            matrix: Tensor::zeros(&[max_len, d]),
        }
    }

    pub fn random<R: Rng + ?Sized>(max_len: usize, d: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1 / libm::sqrt(d as f64)).expect("valid std");
        PositionalTable {
            matrix: Tensor::matrix(max_len, d, (0..max_len * d).map(|_| T::from_f64(normal.sample(rng))).collect()),
        }
    }

    pub fn max_len(&self) -> usize {
        self.matrix.rows()
    }
}

/// Tokens of one user's click prefix at one stage.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixSequence<T> {
    pub user: usize,
    pub stage: usize,
    /// Retained clicks, oldest first.
    pub items: Vec<usize>,
    /// Row `j` is `ẽ^t_{items[j]} + p_j`.
    pub tokens: Tensor<T>,
}

/// The most recent `max_len` clicks of `user` through `stage`, oldest first.
pub fn retained_clicks(partition: &StagePartition, user: usize, stage: usize, max_len: usize) -> &[Click] {
    let clicks = partition.prefix(user, stage);
    &clicks[clicks.len().saturating_sub(max_len)..]
}

/// Tokenizes the prefix of `user` at `stage`; every item row comes from the
/// same evolved table `evolved` (that of `stage`).
pub fn build_prefix<T: Real>(
    user: usize,
    stage: usize,
    partition: &StagePartition,
    evolved: &EmbeddingTable<T>,
    positions: &PositionalTable<T>,
) -> Result<PrefixSequence<T>> {
    let kept = retained_clicks(partition, user, stage, positions.max_len());
    if kept.is_empty() {
        return Err(Error::EmptyPrefix { user, stage });
    }
    let d = evolved.dim();
    positions.matrix.check_shape("positions", &[positions.max_len(), d])?;
    let mut tokens = Tensor::zeros(&[kept.len(), d]);
    for (j, c) in kept.iter().enumerate() {
        let row = tokens.row_mut(j);
        for ((x, &e), &p) in row.iter_mut().zip(evolved.item(c.item)).zip(positions.matrix.row(j)) {
            *x = e + p;
        }
    }
    Ok(PrefixSequence {
        user,
        stage,
        items: kept.iter().map(|c| c.item).collect(),
        tokens,
    })
}

/// `ē = Σ_positions (SA_{L_a} ∘ … ∘ SA_1)(tokens)`.
pub fn long_range_aggregate<T: Real>(tokens: &Tensor<T>, layers: &[AttentionWeights<T>]) -> Result<Tensor<T>> {
    if tokens.rows() == 0 {
        return Err(Error::EmptyInput("prefix"));
    }
    let mut s = tokens.clone();
    for w in layers {
        s = self_attention_layer(&s, w)?;
    }
    Ok(s.sum_rows())
}
