//! Reverse-mode differentiation over whole tensors.
//!
//! Every operation appends a node holding its forward value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates adjoints. Only the handful of
//! operations the recommender needs are provided, each with a hand-derived
//! adjoint that is exercised by finite-difference tests.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::real::Real;
use super::sparse::CsrMatrix;
use super::tensor::{axpy, dot, log_sum_exp, softmax_in_place, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Contiguous run of rows `[start, start + len)` forming one attention segment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    Gather(Var, Vec<Option<usize>>),
    SpMM(Arc<CsrMatrix<T>>, Var),
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        segments: Vec<Segment>,
        probs: Vec<Vec<T>>,
        scale: T,
    },
    SegmentSum(Var, Vec<Segment>),
    RowDot(Var, Var),
    MulConst(Var, Tensor<T>),
    BceMean {
        logits: Var,
        rows: Vec<usize>,
        labels: Vec<T>,
        eps: T,
    },
    InfoNceDiag(Var),
    SumSquares(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Recording of a computation for reverse-mode differentiation.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1×1` node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value.data()[0]
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_t(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMulT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).add(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).sub(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).hadamard(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Adds a bias vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let value = self.value(a).add_row_vector(self.value(bias));
        let ng = self.ng(a) || self.ng(bias);
        self.push(value, Op::AddRow(a, bias), ng)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let value = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, s), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(T::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        let ng = self.ng(a);
        self.push(value, Op::SliceCols(a, start, len), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let value = Tensor::concat_rows(&refs);
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    /// Row gather; `None` produces a zero row.
    pub fn gather(&mut self, a: Var, idx: Vec<Option<usize>>) -> Var {
        let value = self.value(a).gather_rows(&idx);
        let ng = self.ng(a);
        self.push(value, Op::Gather(a, idx), ng)
    }

    pub fn gather_all(&mut self, a: Var, idx: &[usize]) -> Var {
        self.gather(a, idx.iter().map(|&i| Some(i)).collect())
    }

    /// Sparse constant matrix times `x`.
    pub fn spmm(&mut self, m: Arc<CsrMatrix<T>>, x: Var) -> Var {
        let value = m.spmm(self.value(x));
        let ng = self.ng(x);
        self.push(value, Op::SpMM(m, x), ng)
    }

    /// Scaled dot-product attention applied independently inside each segment:
    /// `softmax(Q Kᵀ / √d) V`.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, segments: Vec<Segment>) -> Var {
        let d = self.value(q).cols();
        let scale = T::ONE / T::from_f64(d as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Tensor::zeros(&[qv.rows(), vv.cols()]);
        let mut probs = Vec::with_capacity(segments.len());
        for seg in &segments {
            let p = attention_probs(qv, kv, *seg, scale);
            let n = seg.len;
            for i in 0..n {
                let dst = out.row_mut(seg.start + i);
                for j in 0..n {
                    axpy(p[i * n + j], vv.row(seg.start + j), dst);
                }
            }
            probs.push(p);
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::SegmentAttention {
                q,
                k,
                v,
                segments,
                probs,
                scale,
            },
            ng,
        )
    }

    /// Sums the rows of each segment into one output row per segment.
    pub fn segment_sum(&mut self, a: Var, segments: Vec<Segment>) -> Var {
        let av = self.value(a);
        let d = av.cols();
        let mut out = Tensor::zeros(&[segments.len(), d]);
        for (s, seg) in segments.iter().enumerate() {
            for r in seg.start..seg.start + seg.len {
                axpy(T::ONE, av.row(r), out.row_mut(s));
            }
        }
        let ng = self.ng(a);
        self.push(out, Op::SegmentSum(a, segments), ng)
    }

    /// Row-wise dot products → `n×1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "row_dot shape");
        let n = av.rows();
        let data = (0..n).map(|i| dot(av.row(i), bv.row(i))).collect();
        let ng = self.ng(a) || self.ng(b);
        self.push(Tensor::matrix(n, 1, data), Op::RowDot(a, b), ng)
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Tensor<T>) -> Var {
        let value = self.value(a).hadamard(&m);
        let ng = self.ng(a);
        self.push(value, Op::MulConst(a, m), ng)
    }

    /// Mean binary cross-entropy over the selected rows of an `n×1` logit column.
    /// Probabilities are clamped to `[eps, 1 − eps]`.
    pub fn bce_mean(&mut self, logits: Var, rows: Vec<usize>, labels: Vec<T>, eps: T) -> Var {
        assert_eq!(rows.len(), labels.len(), "bce labels");
        let z = self.value(logits);
        let mut total = T::ZERO;
        for (&r, &y) in rows.iter().zip(&labels) {
            let p = z.data()[r].sigmoid().max(eps).min(T::ONE - eps);
            total -= y * p.ln() + (T::ONE - y) * (T::ONE - p).ln();
        }
        let value = if rows.is_empty() {
            T::ZERO
        } else {
            total / T::from_f64(rows.len() as f64)
        };
        let ng = self.ng(logits);
        self.push(
            Tensor::scalar(value),
            Op::BceMean {
                logits,
                rows,
                labels,
                eps,
            },
            ng,
        )
    }

    /// For a square logit matrix, mean over rows of `−log softmax(row)[diag]`.
    pub fn info_nce_diag(&mut self, logits: Var) -> Var {
        let l = self.value(logits);
        let n = l.rows();
        assert_eq!(n, l.cols(), "info_nce logits must be square");
        let total: T = (0..n).map(|i| log_sum_exp(l.row(i)) - l.get(i, i)).sum();
        let value = if n == 0 {
            T::ZERO
        } else {
            total / T::from_f64(n as f64)
        };
        let ng = self.ng(logits);
        self.push(Tensor::scalar(value), Op::InfoNceDiag(logits), ng)
    }

    pub fn sum_squares(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_squares();
        let ng = self.ng(a);
        self.push(Tensor::scalar(value), Op::SumSquares(a), ng)
    }

    /// Weighted sum of scalar nodes.
    pub fn weighted_sum(&mut self, terms: &[(Var, T)]) -> Var {
        let mut acc: Option<Var> = None;
        for &(v, w) in terms {
            let s = self.scale(v, w);
            acc = Some(match acc {
                None => s,
                Some(a) => self.add(a, s),
            });
        }
        match acc {
            Some(a) => a,
            None => self.constant(Tensor::scalar(T::ZERO)),
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), T::ONE));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match &grads[idx] {
                Some(g) => g.clone(),
                None => continue,
            };
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let mut acc = |v: Var, contrib: Tensor<T>| {
            if !self.ng(v) {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => *slot = Some(contrib),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::MatMulT(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.t_matmul(self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::ONE));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.hadamard(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, g.hadamard(self.value(*a)));
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                if self.ng(*bias) {
                    let shape = self.value(*bias).shape().to_vec();
                    let s = g.sum_rows().reshape(&shape).expect("bias shape");
                    acc(*bias, s);
                }
            }
            Op::Scale(a, s) => acc(*a, g.scale(*s)),
            Op::Sigmoid(a) => {
                let y = &node.value;
                acc(*a, g.zip_map(y, |gi, yi| gi * yi * (T::ONE - yi)));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                acc(*a, g.zip_map(y, |gi, yi| gi * (T::ONE - yi * yi)));
            }
            Op::SliceCols(a, start, len) => {
                let src = self.value(*a);
                let (r, c) = (src.rows(), src.cols());
                let mut out = Tensor::zeros(&[r, c]);
                for i in 0..r {
                    out.row_mut(i)[*start..*start + *len].copy_from_slice(g.row(i));
                }
                let out = out.reshape(src.shape()).expect("slice shape");
                acc(*a, out);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.ng(p) {
                        let shape = self.value(p).shape().to_vec();
                        let part = g.slice_rows(offset, rows).reshape(&shape).expect("concat shape");
                        acc(p, part);
                    }
                    offset += rows;
                }
            }
            Op::Gather(a, idx) => {
                let src = self.value(*a);
                let mut out = Tensor::zeros(src.shape());
                for (dst, s) in idx.iter().enumerate() {
                    if let Some(s) = *s {
                        axpy(T::ONE, g.row(dst), out.row_mut(s));
                    }
                }
                acc(*a, out);
            }
            Op::SpMM(m, x) => acc(*x, m.t_spmm(g)),
            Op::SegmentAttention {
                q,
                k,
                v,
                segments,
                probs,
                scale,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let mut gq = Tensor::zeros(qv.shape());
                let mut gk = Tensor::zeros(kv.shape());
                let mut gv = Tensor::zeros(vv.shape());
                for (seg, p) in segments.iter().zip(probs) {
                    let n = seg.len;
                    let s0 = seg.start;
                    // dP = dO Vᵀ; dV = Pᵀ dO
                    let mut dp = vec![T::ZERO; n * n];
                    for i in 0..n {
                        let go = g.row(s0 + i);
                        for j in 0..n {
                            dp[i * n + j] = dot(go, vv.row(s0 + j));
                            axpy(p[i * n + j], go, gv.row_mut(s0 + j));
                        }
                    }
                    // dS = P ⊙ (dP − rowsum(dP ⊙ P)), then scaled
                    for i in 0..n {
                        let row_dot: T = (0..n).map(|j| dp[i * n + j] * p[i * n + j]).sum();
                        for j in 0..n {
                            let ds = p[i * n + j] * (dp[i * n + j] - row_dot) * *scale;
                            if ds == T::ZERO {
                                continue;
                            }
                            axpy(ds, kv.row(s0 + j), gq.row_mut(s0 + i));
                            axpy(ds, qv.row(s0 + i), gk.row_mut(s0 + j));
                        }
                    }
                }
                acc(*q, gq);
                acc(*k, gk);
                acc(*v, gv);
            }
            Op::SegmentSum(a, segments) => {
                let src = self.value(*a);
                let mut out = Tensor::zeros(src.shape());
                for (s, seg) in segments.iter().enumerate() {
                    for r in seg.start..seg.start + seg.len {
                        out.row_mut(r).copy_from_slice(g.row(s));
                    }
                }
                acc(*a, out);
            }
            Op::RowDot(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let n = av.rows();
                if self.ng(*a) {
                    let mut ga = Tensor::zeros(av.shape());
                    for i in 0..n {
                        axpy(g.data()[i], bv.row(i), ga.row_mut(i));
                    }
                    acc(*a, ga);
                }
                if self.ng(*b) {
                    let mut gb = Tensor::zeros(bv.shape());
                    for i in 0..n {
                        axpy(g.data()[i], av.row(i), gb.row_mut(i));
                    }
                    acc(*b, gb);
                }
            }
            Op::MulConst(a, m) => acc(*a, g.hadamard(m)),
            Op::BceMean {
                logits,
                rows,
                labels,
                eps,
            } => {
                if rows.is_empty() {
                    return;
                }
                let z = self.value(*logits);
                let mut out = Tensor::zeros(z.shape());
                let scale = g.data()[0] / T::from_f64(rows.len() as f64);
                for (&r, &y) in rows.iter().zip(labels) {
                    let p = z.data()[r].sigmoid();
                    if p < *eps || p > T::ONE - *eps {
                        continue;
                    }
                    out.data_mut()[r] += (p - y) * scale;
                }
                acc(*logits, out);
            }
            Op::InfoNceDiag(logits) => {
                let l = self.value(*logits);
                let n = l.rows();
                let scale = g.data()[0] / T::from_f64(n as f64);
                let mut out = Tensor::zeros(l.shape());
                for i in 0..n {
                    let dst = out.row_mut(i);
                    dst.copy_from_slice(l.row(i));
                    softmax_in_place(dst);
                    dst[i] -= T::ONE;
                    for x in dst.iter_mut() {
                        *x *= scale;
                    }
                }
                acc(*logits, out);
            }
            Op::SumSquares(a) => {
                let two_g = g.data()[0] + g.data()[0];
                acc(*a, self.value(*a).scale(two_g));
            }
        }
    }
}

/// Row-stochastic attention matrix for one segment.
fn attention_probs<T: Real>(q: &Tensor<T>, k: &Tensor<T>, seg: Segment, scale: T) -> Vec<T> {
    let n = seg.len;
    let mut p = vec![T::ZERO; n * n];
    for i in 0..n {
        let qi = q.row(seg.start + i);
        let row = &mut p[i * n..(i + 1) * n];
        for (j, x) in row.iter_mut().enumerate() {
            *x = dot(qi, k.row(seg.start + j)) * scale;
        }
        softmax_in_place(row);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec::Vec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Central-difference check of d(f)/d(leaf) for every leaf coordinate.
    fn check(leaves: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Var) {
        let mut tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars);
        let grads = tape.backward(out);
        let h = 1e-6;
        for (li, leaf) in leaves.iter().enumerate() {
            for c in 0..leaf.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = leaves
                        .iter()
                        .enumerate()
                        .map(|(j, l)| {
                            let mut l = l.clone();
                            if j == li {
                                l.data_mut()[c] += delta;
                            }
                            t.param(l)
                        })
                        .collect();
                    let o = f(&mut t, &vs);
                    t.scalar(o)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let analytic = grads.get(vars[li]).map(|g| g.data()[c]).unwrap_or(0.0);
                assert!(
                    (numeric - analytic).abs() < 1e-6 * numeric.abs().max(1.0),
                    "leaf {li}[{c}]: numeric {numeric} analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn dense_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_tensor(&mut rng, 3, 4);
        let b = rand_tensor(&mut rng, 4, 2);
        let c = rand_tensor(&mut rng, 3, 2);
        let bias = Tensor::vector((0..2).map(|_| rng.random_range(-1.0..1.0)).collect());
        check(vec![a, b, c, bias], |t, v| {
            let ab = t.matmul(v[0], v[1]);
            let s = t.sigmoid(ab);
            let th = t.tanh(v[2]);
            let m = t.mul(s, th);
            let d = t.sub(m, v[2]);
            let e = t.add_row(d, v[3]);
            let f = t.scale(e, 0.7);
            let abt = t.matmul_t(f, v[2]);
            let sl = t.slice_cols(abt, 1, 2);
            let sq = t.sum_squares(sl);
            let sq2 = t.sum_squares(f);
            t.weighted_sum(&[(sq, 1.0), (sq2, 0.5)])
        });
    }

    #[test]
    fn structural_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_tensor(&mut rng, 3, 3);
        let b = rand_tensor(&mut rng, 2, 3);
        let sp = Arc::new(CsrMatrix::from_triplets(
            5,
            5,
            vec![(0, 3, 0.5), (3, 0, 0.5), (1, 4, 0.7), (4, 1, 0.7), (2, 3, 0.2)],
        ));
        check(vec![a, b], move |t, v| {
            let cat = t.concat_rows(&[v[0], v[1]]);
            let prop = t.spmm(sp.clone(), cat);
            let g = t.gather(prop, vec![Some(0), None, Some(3), Some(3), Some(1)]);
            let mask = Tensor::matrix(5, 3, (0..15).map(|i| if i % 4 == 0 { 0.0 } else { 1.25 }).collect());
            let g = t.mul_const(g, mask);
            let rd = t.row_dot(g, cat);
            let segs = vec![Segment { start: 0, len: 2 }, Segment { start: 2, len: 3 }];
            let ss = t.segment_sum(g, segs);
            let a = t.sum_squares(ss);
            let b = t.sum_squares(rd);
            t.weighted_sum(&[(a, 1.0), (b, 0.3)])
        });
    }

    #[test]
    fn attention_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&mut rng, 5, 4);
        let wq = rand_tensor(&mut rng, 4, 4);
        let wk = rand_tensor(&mut rng, 4, 4);
        let wv = rand_tensor(&mut rng, 4, 4);
        check(vec![x, wq, wk, wv], |t, v| {
            let q = t.matmul(v[0], v[1]);
            let k = t.matmul(v[0], v[2]);
            let vv = t.matmul(v[0], v[3]);
            let segs = vec![Segment { start: 0, len: 1 }, Segment { start: 1, len: 4 }];
            let a = t.segment_attention(q, k, vv, segs);
            let r = t.add(a, v[0]);
            let w = t.tanh(r);
            t.sum_squares(w)
        });
    }

    #[test]
    fn loss_ops_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = rand_tensor(&mut rng, 6, 1);
        let l = rand_tensor(&mut rng, 4, 4);
        check(vec![z, l], |t, v| {
            let b = t.bce_mean(v[0], vec![0, 2, 3, 5], vec![1.0, 0.0, 0.0, 1.0], 1e-7);
            let b2 = t.bce_mean(v[0], vec![1, 4], vec![1.0, 0.0], 1e-7);
            let n = t.info_nce_diag(v[1]);
            t.weighted_sum(&[(b, 0.1), (b2, 0.2), (n, 0.01)])
        });
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::<f64>::new();
        let c = t.constant(Tensor::matrix(1, 2, vec![1.0, 2.0]));
        let p = t.param(Tensor::matrix(1, 2, vec![3.0, 4.0]));
        let m = t.mul(c, p);
        let s = t.sum_squares(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(p).unwrap().data(), &[2.0 * 3.0 * 1.0, 2.0 * 8.0 * 2.0]);
    }
}
