mod common;

use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagerec_core::data::partition_stages;
use stagerec_core::encoders::{EmbeddingTable, TableRole};
use stagerec_core::model::{batch_loss, reference_loss, Ablation, ModelConfig, ModelInputs, ModelParams, StageGraphs, TrainTuple};
use stagerec_core::numerics::{
    adam_step, attention_weights, finite_diff_check, lstm_cell, self_attention_layer, AdamConfig, AdamState, AttentionWeights,
    LstmWeights, ParamSet, Tensor,
};
use stagerec_core::objective::LossWeights;
use stagerec_core::temporal::short_term_evolve;

fn ablation() -> impl Strategy<Value = Ablation> {
    prop::sample::select(Ablation::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tensor_length_matches_shape(rows in 0usize..6, cols in 0usize..6, extra in 0usize..3) {
        let n = rows * cols;
        prop_assert!(Tensor::new(vec![rows, cols], vec![0.0f64; n]).is_ok());
        if extra > 0 {
            prop_assert!(Tensor::new(vec![rows, cols], vec![0.0f64; n + extra]).is_err());
        }
    }

    #[test]
    fn operations_keep_values_finite(seed in any::<u64>(), n in 1usize..6, d in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_matrix(n, d, seed).scale(5.0);
        let w = AttentionWeights::random(d, &mut rng);
        let out = self_attention_layer(&s, &w).unwrap();
        prop_assert_eq!(out.len(), out.shape().iter().product::<usize>());
        prop_assert!(out.all_finite());
        let lw = LstmWeights::random(d, &mut rng);
        let x = Tensor::vector(s.row(0).to_vec());
        let (h, c) = lstm_cell(&x, &x, &x, &lw).unwrap();
        prop_assert!(h.all_finite() && c.all_finite());
    }

    #[test]
    fn lstm_weight_shapes(d in 1usize..6, seed in any::<u64>()) {
        let w = LstmWeights::<f64>::random(d, &mut ChaCha8Rng::seed_from_u64(seed));
        // four d×d gate blocks packed side by side
        prop_assert_eq!(w.input.shape(), &[d, 4 * d]);
        prop_assert_eq!(w.recurrent.shape(), &[d, 4 * d]);
        prop_assert_eq!(w.bias.shape(), &[4 * d]);
        prop_assert!(w.validate(d).is_ok());
        prop_assert!(w.validate(d + 1).is_err());
    }

    #[test]
    fn attention_weights_are_square_and_unshared(d in 1usize..6, layers in 1usize..4, seed in any::<u64>()) {
        let cfg = ModelConfig { dim: d, attention_layers: layers, max_prefix: 4, ..ModelConfig::default() };
        let p = ModelParams::<f64>::init(&cfg, 2, 3, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(p.attention.len(), layers);
        for w in &p.attention {
            for m in [&w.query, &w.key, &w.value] {
                prop_assert_eq!(m.shape(), &[d, d]);
            }
        }
        for a in 0..layers {
            for b in a + 1..layers {
                prop_assert_ne!(&p.attention[a], &p.attention[b]);
            }
        }
    }

    #[test]
    fn zero_lstm_outputs_zero(seed in any::<u64>(), n in 1usize..5, d in 1usize..5, steps in 1usize..5) {
        let w = LstmWeights::<f64>::zeros(d);
        let zero = Tensor::zeros(&[d]);
        for k in 0..steps {
            let x = Tensor::vector(random_matrix(1, d, seed ^ k as u64).scale(10.0).row(0).to_vec());
            let (h, c) = lstm_cell(&x, &zero, &zero, &w).unwrap();
            prop_assert!(h.data().iter().chain(c.data()).all(|&v| v == 0.0));
        }
        let stages: Vec<EmbeddingTable<f64>> = (0..steps)
            .map(|t| EmbeddingTable::new(TableRole::Stage(t), n, 2, random_matrix(n + 2, d, seed.wrapping_add(t as u64))).unwrap())
            .collect();
        for s in short_term_evolve(&stages, &w, &w).unwrap() {
            prop_assert!(s.evolved.matrix.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn attention_rows_sum_to_one(seed in any::<u64>(), n in 1usize..8, d in 1usize..6, scale in 0.1f64..20.0) {
        let s = random_matrix(n, d, seed).scale(scale);
        let w = AttentionWeights::random(d, &mut ChaCha8Rng::seed_from_u64(seed));
        let p = attention_weights(&s, &w).unwrap();
        for r in 0..n {
            let sum: f64 = p.row(r).iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-12, "row {} sums to {}", r, sum);
        }
    }

    #[test]
    fn attention_is_permutation_equivariant(
        seed in any::<u64>(),
        n in 1usize..7,
        d in 1usize..5,
        perm_seed in any::<u64>(),
    ) {
        // tokens are item rows plus position rows; permuting both together permutes the output
        let items = random_matrix(n, d, seed);
        let positions = random_matrix(n, d, seed ^ 0x5151);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for k in (1..n).rev() {
            perm.swap(k, rng.random_range(0..=k));
        }
        let w = AttentionWeights::random(d, &mut rng);
        let tokens = items.add(&positions);
        let permuted = tokens.gather_rows(&perm.iter().map(|&k| Some(k)).collect::<Vec<_>>());
        let out = self_attention_layer(&tokens, &w).unwrap();
        let out_p = self_attention_layer(&permuted, &w).unwrap();
        for (r, &k) in perm.iter().enumerate() {
            for j in 0..d {
                prop_assert!((out_p.get(r, j) - out.get(k, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity(seed in any::<u64>(), steps in 1usize..5, lr in 1e-6f64..1.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig { dim: 3, max_prefix: 4, ..ModelConfig::default() };
        let mut p = ModelParams::<f64>::init(&cfg, 3, 4, None, &mut rng).unwrap();
        let before = p.clone();
        let zero = p.zeros_like();
        let mut state = AdamState::new(&p, AdamConfig { learning_rate: lr, weight_decay: 0.0, ..AdamConfig::default() });
        let mut last = state.step_count();
        for _ in 0..steps {
            adam_step(&mut p, &zero, &mut state).unwrap();
            prop_assert!(state.step_count() > last);
            last = state.step_count();
        }
        prop_assert_eq!(p, before);
    }

    #[test]
    fn adam_moments_mirror_parameters(seed in any::<u64>(), ab in ablation()) {
        let cfg = ModelConfig { dim: 2, max_prefix: 3, ablation: ab, ..ModelConfig::default() };
        let mut p = ModelParams::<f64>::init(&cfg, 3, 4, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut g = p.zeros_like();
        for (_, t) in g.tensors_mut() {
            t.data_mut().iter_mut().for_each(|x| *x = 0.5);
        }
        let mut state = AdamState::new(&p, AdamConfig::default());
        adam_step(&mut p, &g, &mut state).unwrap();
        let (m, v) = state.moments();
        let shapes: Vec<Vec<usize>> = p.tensors().iter().map(|(_, t)| t.shape().to_vec()).collect();
        prop_assert_eq!(m.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(), shapes.clone());
        prop_assert_eq!(v.iter().map(|t| t.shape().to_vec()).collect::<Vec<_>>(), shapes);
    }
}

proptest! {
    // each case runs a full coordinate-wise finite-difference sweep
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn analytic_gradients_match_finite_differences(seed in any::<u64>(), ab in ablation(), cl in 0.0f64..1.0, sl in 0.0f64..1.0) {
        let log = dense_log(3, 4, 3, 2, seed);
        let p = partition_stages(&log, 100).unwrap();
        let graphs = StageGraphs::build(&p).unwrap();
        let cfg = ModelConfig { dim: 3, max_prefix: 3, ablation: ab, ..ModelConfig::default() };
        let inputs = ModelInputs { config: &cfg, partition: &p, graphs: &graphs, features: None };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut theta = ModelParams::<f64>::init(&cfg, p.n_users, p.n_items, None, &mut rng).unwrap();
        for (name, t) in theta.tensors_mut() {
            if name.ends_with("embedding") || name == "positions" {
                t.data_mut().iter_mut().for_each(|x| *x *= 8.0);
            }
        }
        let tuples: Vec<TrainTuple> = (0..6)
            .map(|k| TrainTuple {
                user: k % 3,
                stage: k % 3,
                positive: rng.random_range(0..4),
                negatives: vec![rng.random_range(0..4), rng.random_range(0..4)],
            })
            .collect();
        let w = LossWeights { lambda_cl: cl, lambda_sl: sl, ..LossWeights::default() };
        let mut grads = batch_loss::<_, ChaCha8Rng>(&theta, &inputs, &tuples, &w, None).unwrap().grads;
        for ((_, g), (_, t)) in grads.tensors_mut().into_iter().zip(theta.tensors()) {
            for (gx, tx) in g.data_mut().iter_mut().zip(t.data()) {
                *gx += 2.0 * w.beta * tx;
            }
        }
        let report = finite_diff_check(
            |q: &ModelParams<f64>| Ok(reference_loss(q, &inputs, &tuples, &w)?.total),
            &theta,
            &grads,
            1e-5,
        )
        .unwrap();
        prop_assert!(report.max_relative_error < 1e-4, "{:?}", report);
    }
}

#[test]
fn identity_attention_doubles_single_token() {
    let x = Tensor::matrix(1, 3, vec![0.5, -1.0, 2.0]);
    let out = self_attention_layer(&x, &AttentionWeights::identity(3)).unwrap();
    assert!(close(&out, &x.scale(2.0), 1e-15));
}
