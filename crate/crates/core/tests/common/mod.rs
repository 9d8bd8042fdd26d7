#![allow(dead_code)]

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stagerec_core::data::{partition_stages, InteractionLog, StagePartition};
use stagerec_core::numerics::Tensor;

/// `(user, item, timestamp)` triples over small vocabularies.
pub fn arb_triples(users: usize, items: usize, span: u64, max_len: usize) -> impl Strategy<Value = Vec<(usize, usize, u64)>> {
    prop::collection::vec((0..users, 0..items, 0..span), 1..max_len)
}

pub fn log_from(triples: &[(usize, usize, u64)]) -> InteractionLog {
    let text: String = triples.iter().map(|(u, i, t)| format!("u{u}\ti{i}\t{t}\n")).collect();
    InteractionLog::parse_tsv(&text).unwrap()
}

pub fn partition_from(triples: &[(usize, usize, u64)], window: u64) -> StagePartition {
    partition_stages(&log_from(triples), window).unwrap()
}

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect())
}

pub fn close(a: &Tensor<f64>, b: &Tensor<f64>, tol: f64) -> bool {
    a.shape() == b.shape() && a.max_abs_diff(b) <= tol
}

/// A fixed log whose every user clicks in every one of `stages` stages.
pub fn dense_log(users: usize, items: usize, stages: usize, per_stage: usize, seed: u64) -> InteractionLog {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::new();
    for t in 0..stages {
        for u in 0..users {
            for k in 0..per_stage {
                let i = rng.random_range(0..items);
                text.push_str(&format!("u{u}\ti{i}\t{}\n", t as u64 * 100 + (u * per_stage + k) as u64));
            }
        }
    }
    // every item appears somewhere so vocabularies have full size
    for i in 0..items {
        text.push_str(&format!("u0\ti{i}\t{}\n", (stages as u64 - 1) * 100 + 99));
    }
    InteractionLog::parse_tsv(&text).unwrap()
}
