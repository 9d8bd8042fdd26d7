//! The two neural building blocks: an LSTM cell and a residual self-attention layer.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use super::tensor::{dot, softmax_in_place, Tensor};
use crate::error::{Error, Result};

/// Gate order inside the packed LSTM matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Gate {
    Input = 0,
    Forget = 1,
    Cell = 2,
    Output = 3,
}

/// Weights of a standard single-layer LSTM cell.
///
/// The four `d×d` gate blocks are packed column-wise into `d×4d` matrices in
/// [`Gate`] order so one matrix product yields all pre-activations:
/// `z = x·W_input + h·W_recurrent + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights<T> {
    pub input: Tensor<T>,
    pub recurrent: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> LstmWeights<T> {
    pub fn zeros(d: usize) -> Self {
        LstmWeights {
            input: Tensor::zeros(&[d, 4 * d]),
            recurrent: Tensor::zeros(&[d, 4 * d]),
            bias: Tensor::zeros(&[4 * d]),
        }
    }

    /// Gaussian weights with std `1/√d`, zero bias except a forget-gate bias of one.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / libm::sqrt(d as f64)).expect("valid std");
        let mut draw = |n: usize| -> Vec<T> { (0..n).map(|_| T::from_f64(normal.sample(rng))).collect() };
        let input = Tensor::matrix(d, 4 * d, draw(4 * d * d));
        let recurrent = Tensor::matrix(d, 4 * d, draw(4 * d * d));
        let mut bias = Tensor::zeros(&[4 * d]);
        for j in 0..d {
            bias.data_mut()[Gate::Forget as usize * d + j] = T::ONE;
        }
        LstmWeights {
            input,
            recurrent,
            bias,
        }
    }

    pub fn dim(&self) -> usize {
        self.input.rows()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.input.check_shape("lstm.input", &[d, 4 * d])?;
        self.recurrent.check_shape("lstm.recurrent", &[d, 4 * d])?;
        self.bias.check_shape("lstm.bias", &[4 * d])
    }

    /// Sets the bias of one gate to a constant.
    pub fn set_gate_bias(&mut self, gate: Gate, value: T) {
        let d = self.dim();
        for j in 0..d {
            self.bias.data_mut()[gate as usize * d + j] = value;
        }
    }
}

/// One LSTM step on a single vector.
///
/// Gates use the logistic sigmoid, the candidate uses tanh;
/// `c = f⊙c_prev + i⊙g`, `h = o⊙tanh(c)`.
pub fn lstm_cell<T: Real>(
    x: &Tensor<T>,
    h_prev: &Tensor<T>,
    c_prev: &Tensor<T>,
    w: &LstmWeights<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = w.dim();
    w.validate(d)?;
    x.check_shape("x", &[d])?;
    h_prev.check_shape("h_prev", &[d])?;
    c_prev.check_shape("c_prev", &[d])?;

    let mut z = w.bias.data().to_vec();
    for k in 0..d {
        let (xk, hk) = (x.data()[k], h_prev.data()[k]);
        let wi = w.input.row(k);
        let wr = w.recurrent.row(k);
        for (j, zj) in z.iter_mut().enumerate() {
            *zj += xk * wi[j] + hk * wr[j];
        }
    }
    let mut h = Vec::with_capacity(d);
    let mut c = Vec::with_capacity(d);
    for j in 0..d {
        let i = z[j].sigmoid();
        let f = z[d + j].sigmoid();
        let g = z[2 * d + j].tanh();
        let o = z[3 * d + j].sigmoid();
        let cj = f * c_prev.data()[j] + i * g;
        c.push(cj);
        h.push(o * cj.tanh());
    }
    Ok((Tensor::vector(h), Tensor::vector(c)))
}

/// Query/key/value projections of one self-attention layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionWeights<T> {
    pub query: Tensor<T>,
    pub key: Tensor<T>,
    pub value: Tensor<T>,
}

impl<T: Real> AttentionWeights<T> {
    pub fn identity(d: usize) -> Self {
        AttentionWeights {
            query: Tensor::identity(d),
            key: Tensor::identity(d),
            value: Tensor::identity(d),
        }
    }

    /// Gaussian init with std `1/√d`.
    pub fn random<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 1.0 / libm::sqrt(d as f64)).expect("valid std");
        let mut draw = || Tensor::matrix(d, d, (0..d * d).map(|_| T::from_f64(normal.sample(rng))).collect());
        AttentionWeights {
            query: draw(),
            key: draw(),
            value: draw(),
        }
    }

    pub fn dim(&self) -> usize {
        self.query.rows()
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        self.query.check_shape("attention.query", &[d, d])?;
        self.key.check_shape("attention.key", &[d, d])?;
        self.value.check_shape("attention.value", &[d, d])
    }
}

fn check_tokens<T: Real>(s: &Tensor<T>, w: &AttentionWeights<T>) -> Result<usize> {
    let d = w.dim();
    w.validate(d)?;
    if s.shape().len() != 2 || s.cols() != d {
        return Err(crate::error::mismatch("tokens", &[s.rows(), d], s.shape()));
    }
    let n = s.rows();
    if n == 0 {
        return Err(Error::EmptyInput("attention input"));
    }
    Ok(n)
}

/// Row-stochastic matrix `softmax(Q Kᵀ / √d)` for the tokens `s`.
pub fn attention_weights<T: Real>(s: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let n = check_tokens(s, w)?;
    let d = w.dim();
    let q = s.matmul(&w.query);
    let k = s.matmul(&w.key);
    let scale = T::ONE / T::from_f64(d as f64).sqrt();
    let mut p = Tensor::zeros(&[n, n]);
    for i in 0..n {
        let row = p.row_mut(i);
        for (j, x) in row.iter_mut().enumerate() {
            *x = dot(q.row(i), k.row(j)) * scale;
        }
        softmax_in_place(row);
    }
    Ok(p)
}

/// Scaled dot-product self-attention followed by a residual connection:
/// `S + softmax(Q Kᵀ / √d) V`.
pub fn self_attention_layer<T: Real>(s: &Tensor<T>, w: &AttentionWeights<T>) -> Result<Tensor<T>> {
    let p = attention_weights(s, w)?;
    let v = s.matmul(&w.value);
    Ok(p.matmul(&v).add(s))
}
