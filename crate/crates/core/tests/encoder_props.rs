mod common;

use common::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stagerec_core::encoders::{init_embeddings, normalize_adjacency, propagate_layers};
use stagerec_core::numerics::Tensor;

/// A bipartite graph with at most 8 nodes in total.
fn small_graph() -> impl Strategy<Value = (usize, usize, Vec<(usize, usize)>)> {
    (1usize..5, 1usize..5)
        .prop_filter("at most 8 nodes", |(u, i)| u + i <= 8)
        .prop_flat_map(|(nu, ni)| (Just(nu), Just(ni), prop::collection::vec((0..nu, 0..ni), 0..12)))
}

fn permutation(n: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((0..n).collect::<Vec<_>>()).prop_shuffle()
}

/// Σ_l Aˡ X with a dense adjacency built straight from the edge list.
fn dense_oracle(nu: usize, ni: usize, edges: &[(usize, usize)], x: &[Vec<f64>], layers: usize) -> Vec<Vec<f64>> {
    let n = nu + ni;
    let mut adj = vec![vec![0.0; n]; n];
    for &(u, i) in edges {
        adj[u][nu + i] = 1.0;
        adj[nu + i][u] = 1.0;
    }
    let deg: Vec<f64> = adj.iter().map(|r| r.iter().sum()).collect();
    for a in 0..n {
        for b in 0..n {
            if adj[a][b] != 0.0 {
                adj[a][b] = 1.0 / (deg[a].sqrt() * deg[b].sqrt());
            }
        }
    }
    let d = x[0].len();
    let mut power = x.to_vec();
    let mut out = x.to_vec();
    for _ in 0..layers {
        let next: Vec<Vec<f64>> = (0..n)
            .map(|a| (0..d).map(|c| (0..n).map(|b| adj[a][b] * power[b][c]).sum()).collect())
            .collect();
        for a in 0..n {
            for c in 0..d {
                out[a][c] += next[a][c];
            }
        }
        power = next;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn adjacency_coefficients_are_positive_and_symmetric((nu, ni, edges) in small_graph()) {
        let adj = normalize_adjacency::<f64>(&edges, nu, ni).unwrap();
        for &(u, i, c) in &adj.edges {
            prop_assert!(c > 0.0);
            let expect = 1.0 / ((adj.user_degree[u] as f64).sqrt() * (adj.item_degree[i] as f64).sqrt());
            prop_assert_eq!(c, expect);
            prop_assert_eq!(adj.matrix.get(u, nu + i), Some(c));
            prop_assert_eq!(adj.matrix.get(nu + i, u), Some(c));
        }
        for u in 0..nu {
            prop_assert_eq!(adj.user_degree[u] == 0, adj.matrix.row_nnz(u) == 0);
        }
        for i in 0..ni {
            prop_assert_eq!(adj.item_degree[i] == 0, adj.matrix.row_nnz(nu + i) == 0);
        }
        prop_assert_eq!(adj.matrix.nnz(), 2 * adj.n_edges());
    }

    #[test]
    fn propagation_matches_dense_matrix_powers((nu, ni, edges) in small_graph(), d in 1usize..4, layers in 0usize..5, seed in any::<u64>()) {
        let x = random_matrix(nu + ni, d, seed);
        let adj = normalize_adjacency(&edges, nu, ni).unwrap();
        let got = propagate_layers(&adj, &x, layers).unwrap();
        let rows: Vec<Vec<f64>> = (0..nu + ni).map(|r| x.row(r).to_vec()).collect();
        let want = dense_oracle(nu, ni, &edges, &rows, layers);
        for r in 0..nu + ni {
            for c in 0..d {
                prop_assert!((got.get(r, c) - want[r][c]).abs() <= 1e-12, "row {} col {}: {} vs {}", r, c, got.get(r, c), want[r][c]);
            }
        }
    }

    #[test]
    fn propagation_is_linear((nu, ni, edges) in small_graph(), layers in 0usize..4, c in -10.0f64..10.0, seed in any::<u64>()) {
        let x = random_matrix(nu + ni, 3, seed);
        let adj = normalize_adjacency(&edges, nu, ni).unwrap();
        let base = propagate_layers(&adj, &x, layers).unwrap();
        let scaled = propagate_layers(&adj, &x.scale(c), layers).unwrap();
        prop_assert!(close(&scaled, &base.scale(c), 1e-12 * (1.0 + c.abs()) * 64.0));
    }

    #[test]
    fn zero_layers_is_identity((nu, ni, edges) in small_graph(), seed in any::<u64>()) {
        let x = random_matrix(nu + ni, 2, seed);
        let adj = normalize_adjacency(&edges, nu, ni).unwrap();
        prop_assert_eq!(propagate_layers(&adj, &x, 0).unwrap(), x);
    }

    #[test]
    fn relabeling_permutes_output(
        (nu, ni, edges, pu, pi) in small_graph().prop_flat_map(|(nu, ni, e)| (Just(nu), Just(ni), Just(e), permutation(nu), permutation(ni))),
        layers in 0usize..4,
        seed in any::<u64>(),
    ) {
        let x = random_matrix(nu + ni, 3, seed);
        let adj = normalize_adjacency(&edges, nu, ni).unwrap();
        let out = propagate_layers(&adj, &x, layers).unwrap();
        // node u becomes pu[u], item i becomes pi[i]
        let relabeled: Vec<(usize, usize)> = edges.iter().map(|&(u, i)| (pu[u], pi[i])).collect();
        let mut src = vec![None; nu + ni];
        for u in 0..nu {
            src[pu[u]] = Some(u);
        }
        for i in 0..ni {
            src[nu + pi[i]] = Some(nu + i);
        }
        let xp = x.gather_rows(&src);
        let out_p = propagate_layers(&normalize_adjacency(&relabeled, nu, ni).unwrap(), &xp, layers).unwrap();
        prop_assert!(close(&out_p, &out.gather_rows(&src), 1e-12));
    }

    #[test]
    fn tables_match_vocabularies(nu in 1usize..20, ni in 1usize..20, d in 1usize..8, features in prop::option::of(1usize..5), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = init_embeddings::<f64, _>(nu, ni, d, features, &mut rng).unwrap();
        let feats = features.map(|f| random_matrix(ni, f, seed));
        let table = init.table(ni, feats.as_ref()).unwrap();
        prop_assert_eq!(table.matrix.shape(), &[nu + ni, d]);
        prop_assert_eq!(table.dim(), d);
        prop_assert_eq!(table.n_items(), ni);
        let adj = normalize_adjacency::<f64>(&[(0, 0)], nu, ni).unwrap();
        let out = propagate_layers(&adj, &table.matrix, 2).unwrap();
        prop_assert_eq!(out.shape(), table.matrix.shape());
    }
}

#[test]
fn path_graph_coefficients() {
    let adj = normalize_adjacency::<f64>(&[(0, 0), (1, 0)], 2, 1).unwrap();
    for &(_, _, c) in &adj.edges {
        assert!((c - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }
    let empty = Tensor::<f64>::zeros(&[3, 2]);
    assert_eq!(propagate_layers(&adj, &empty, 3).unwrap(), empty);
}
