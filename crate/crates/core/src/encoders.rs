//! Global and stage-conditioned graph propagation over the user-item bipartite graph.
//!
//! Nodes are laid out users first: user `u` is row `u`, item `i` is row
//! `n_users + i`.

use alloc::collections::BTreeSet;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::numerics::{CsrMatrix, Real, Tensor};

/// Symmetrically normalized bipartite adjacency.
#[derive(Clone, Debug)]
pub struct NormalizedAdjacency<T> {
    pub n_users: usize,
    pub n_items: usize,
    /// `(user, item, 1/(√|N_u|·√|N_i|))`, sorted by `(user, item)`.
    pub edges: Vec<(usize, usize, T)>,
    pub user_degree: Vec<usize>,
    pub item_degree: Vec<usize>,
    /// The same coefficients as a symmetric `(U+I)×(U+I)` matrix.
    pub matrix: Arc<CsrMatrix<T>>,
}

impl<T: Real> NormalizedAdjacency<T> {
    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
}

/// Builds the normalized adjacency of the graph with the given `(user, item)`
/// edges; repeated pairs count once.
pub fn normalize_adjacency<T: Real>(
    edges: &[(usize, usize)],
    n_users: usize,
    n_items: usize,
) -> Result<NormalizedAdjacency<T>> {
    let mut set = BTreeSet::new();
    for &(u, i) in edges {
        if u >= n_users {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: u,
                len: n_users,
            });
        }
        if i >= n_items {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: i,
                len: n_items,
            });
        }
        set.insert((u, i));
    }
    let mut user_degree = vec![0usize; n_users];
    let mut item_degree = vec![0usize; n_items];
    for &(u, i) in &set {
        user_degree[u] += 1;
        item_degree[i] += 1;
    }
    let mut triplets = Vec::with_capacity(2 * set.len());
    let mut coef_edges = Vec::with_capacity(set.len());
    for &(u, i) in &set {
        let c = 1.0 / (libm::sqrt(user_degree[u] as f64) * libm::sqrt(item_degree[i] as f64));
        let c = T::from_f64(c);
        coef_edges.push((u, i, c));
        triplets.push((u, n_users + i, c));
        triplets.push((n_users + i, u, c));
    }
    let n = n_users + n_items;
    Ok(NormalizedAdjacency {
        n_users,
        n_items,
        edges: coef_edges,
        user_degree,
        item_degree,
        matrix: Arc::new(CsrMatrix::from_triplets(n, n, triplets)),
    })
}

/// What an [`EmbeddingTable`] holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableRole {
    Initial,
    Global,
    Stage(usize),
    Evolved(usize),
    Aggregated(usize),
}

/// One `d`-dimensional row per user and item.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable<T> {
    pub role: TableRole,
    pub n_users: usize,
    pub matrix: Tensor<T>,
}

impl<T: Real> EmbeddingTable<T> {
    pub fn new(role: TableRole, n_users: usize, n_items: usize, matrix: Tensor<T>) -> Result<Self> {
        let d = matrix.cols();
        matrix.check_shape("embedding table", &[n_users + n_items, d])?;
        Ok(EmbeddingTable { role, n_users, matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn n_items(&self) -> usize {
        self.matrix.rows() - self.n_users
    }

    pub fn user(&self, u: usize) -> &[T] {
        self.matrix.row(u)
    }

    pub fn item(&self, i: usize) -> &[T] {
        self.matrix.row(self.n_users + i)
    }
}

/// Source of the initial item rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ItemEncoder<T> {
    /// Free `I×d` embedding.
    Embedding(Tensor<T>),
    /// `F×d` single-layer linear map applied to fixed item features.
    Projection(Tensor<T>),
}

/// Trainable parameters behind the initial table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialEmbeddings<T> {
    pub users: Tensor<T>,
    pub items: ItemEncoder<T>,
}

impl<T: Real> InitialEmbeddings<T> {
    pub fn dim(&self) -> usize {
        self.users.cols()
    }

    /// Assembles the initial table; `features` is required for a projection encoder.
    pub fn table(&self, n_items: usize, features: Option<&Tensor<T>>) -> Result<EmbeddingTable<T>> {
        let d = self.dim();
        let items = match (&self.items, features) {
            (ItemEncoder::Embedding(e), _) => e.clone(),
            (ItemEncoder::Projection(w), Some(f)) => {
                f.check_shape("item features", &[n_items, w.rows()])?;
                f.matmul(w)
            }
            (ItemEncoder::Projection(w), None) => {
                return Err(mismatch("item features", &[n_items, w.rows()], &[]));
            }
        };
        items.check_shape("item embeddings", &[n_items, d])?;
        let n_users = self.users.rows();
        EmbeddingTable::new(
            TableRole::Initial,
            n_users,
            n_items,
            Tensor::concat_rows(&[&self.users, &items]),
        )
    }
}

/// Gaussian user rows (std `0.1/√d`) and either Gaussian item rows or a
/// projection of `feature_dim`-dimensional item features.
pub fn init_embeddings<T: Real, R: Rng + ?Sized>(
    n_users: usize,
    n_items: usize,
    d: usize,
    feature_dim: Option<usize>,
    rng: &mut R,
) -> Result<InitialEmbeddings<T>> {
    if d == 0 {
        return Err(Error::InvalidConfig("embedding dimension must be positive".into()));
    }
    let mut gaussian = |rows: usize, cols: usize, std: f64| -> Tensor<T> {
        let normal = Normal::new(0.0, std).expect("valid std");
        Tensor::matrix(rows, cols, (0..rows * cols).map(|_| T::from_f64(normal.sample(rng))).collect())
    };
    let std = 0.1 / libm::sqrt(d as f64);
    let users = gaussian(n_users, d, std);
    let items = match feature_dim {
        None => ItemEncoder::Embedding(gaussian(n_items, d, std)),
        Some(0) => return Err(Error::InvalidConfig("feature dimension must be positive".into())),
        Some(f) => ItemEncoder::Projection(gaussian(f, d, 1.0 / libm::sqrt(f as f64))),
    };
    Ok(InitialEmbeddings { users, items })
}

/// `Σ_{l=0}^{L} Aˡ·init`: parameter-free propagation with unweighted layer sum.
pub fn propagate_layers<T: Real>(adj: &NormalizedAdjacency<T>, init: &Tensor<T>, layers: usize) -> Result<Tensor<T>> {
    init.check_shape("propagation input", &[adj.n_nodes(), init.cols()])?;
    let mut out = init.clone();
    let mut current = init.clone();
    for _ in 0..layers {
        current = adj.matrix.spmm(&current);
        out.add_assign(&current);
    }
    Ok(out)
}

/// Global table `e^g` from the initial table.
pub fn global_encode<T: Real>(
    adj: &NormalizedAdjacency<T>,
    init: &EmbeddingTable<T>,
    layers: usize,
) -> Result<EmbeddingTable<T>> {
    Ok(EmbeddingTable {
        role: TableRole::Global,
        n_users: init.n_users,
        matrix: propagate_layers(adj, &init.matrix, layers)?,
    })
}

/// Stage table `e^t`: propagation over the stage graph seeded with the global table.
pub fn stage_encode<T: Real>(
    stage: usize,
    adj: &NormalizedAdjacency<T>,
    global: &EmbeddingTable<T>,
    layers: usize,
) -> Result<EmbeddingTable<T>> {
    Ok(EmbeddingTable {
        role: TableRole::Stage(stage),
        n_users: global.n_users,
        matrix: propagate_layers(adj, &global.matrix, layers)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn coefficients() {
        let a = normalize_adjacency::<f64>(&[(0, 0)], 1, 1).unwrap();
        assert_eq!(a.edges, [(0, 0, 1.0)]);
        let a = normalize_adjacency::<f64>(&[(0, 0), (0, 1)], 1, 2).unwrap();
        for e in &a.edges {
            assert!(close(e.2, 1.0 / 2f64.sqrt()));
        }
        // path u0 - i0 - u1
        let a = normalize_adjacency::<f64>(&[(0, 0), (1, 0)], 2, 1).unwrap();
        for e in &a.edges {
            assert!(close(e.2, 0.70710678118654752));
        }
        assert_eq!(a.matrix.get(0, 2), a.matrix.get(2, 0));
        assert!(normalize_adjacency::<f64>(&[(2, 0)], 2, 1).is_err());
    }

    #[test]
    fn single_edge_one_layer() {
        let adj = normalize_adjacency::<f64>(&[(0, 0)], 1, 1).unwrap();
        let init = Tensor::matrix(2, 2, vec![1.0, 2.0, 10.0, 20.0]);
        let out = propagate_layers(&adj, &init, 1).unwrap();
        assert_eq!(out.data(), &[11.0, 22.0, 11.0, 22.0]);
    }

    #[test]
    fn isolated_node_keeps_row() {
        let adj = normalize_adjacency::<f64>(&[(0, 0)], 2, 1).unwrap();
        let init = Tensor::matrix(3, 1, vec![1.0, 5.0, 2.0]);
        let out = propagate_layers(&adj, &init, 3).unwrap();
        assert_eq!(out.row(1), &[5.0]);
    }

    #[test]
    fn path_two_layers() {
        let adj = normalize_adjacency::<f64>(&[(0, 0), (1, 0)], 2, 1).unwrap();
        let (u1, u2, i1) = (3.0, -1.0, 2.0);
        let init = Tensor::matrix(3, 1, vec![u1, u2, i1]);
        let out = propagate_layers(&adj, &init, 2).unwrap();
        let expected = u1 + i1 / 2f64.sqrt() + (u1 + u2) / 2.0;
        assert!(close(out.get(0, 0), expected), "{} vs {expected}", out.get(0, 0));
    }

    #[test]
    fn empty_stage_returns_global() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let emb = init_embeddings::<f64, _>(2, 3, 4, None, &mut rng).unwrap();
        let init = emb.table(3, None).unwrap();
        let g = global_encode(&normalize_adjacency(&[(0, 1), (1, 2)], 2, 3).unwrap(), &init, 2).unwrap();
        let empty = normalize_adjacency::<f64>(&[], 2, 3).unwrap();
        let s = stage_encode(0, &empty, &g, 2).unwrap();
        assert_eq!(s.matrix, g.matrix);
        assert_eq!(s.role, TableRole::Stage(0));
    }

    #[test]
    fn projection_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut emb = init_embeddings::<f64, _>(1, 2, 2, Some(3), &mut rng).unwrap();
        let features = Tensor::matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        emb.items = ItemEncoder::Projection(Tensor::zeros(&[3, 2]));
        let t = emb.table(2, Some(&features)).unwrap();
        assert!(t.item(0).iter().chain(t.item(1)).all(|&x| x == 0.0));
        // identity block on the first two feature coordinates
        emb.items = ItemEncoder::Projection(Tensor::matrix(3, 2, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        let t = emb.table(2, Some(&features)).unwrap();
        assert_eq!(t.item(0), &[1.0, 0.0]);
        assert_eq!(t.item(1), &[0.0, 1.0]);
        assert!(emb.table(2, Some(&Tensor::zeros(&[2, 4]))).is_err());
    }

    #[test]
    fn seeded_init_repeats() {
        let a = init_embeddings::<f64, _>(3, 4, 8, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = init_embeddings::<f64, _>(3, 4, 8, None, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(a, b);
    }
}
