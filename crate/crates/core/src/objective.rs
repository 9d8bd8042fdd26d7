//! Fusion, scoring and the loss terms, evaluated directly on tensors.
//!
//! The model's differentiable forward pass mirrors these functions op for op;
//! tests compare the two.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};
use crate::numerics::tensor::{dot, log_sum_exp};
use crate::numerics::{ParamSet, Real, Tensor};

/// Probability clamp used by the cross-entropy terms.
pub const BCE_EPS: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// Weight of every per-stage prediction loss.
    pub lambda_t: f64,
    /// Optional per-stage override of `lambda_t`, indexed by stage.
    pub lambda_t_per_stage: Option<Vec<f64>>,
    pub lambda_cl: f64,
    pub lambda_sl: f64,
    /// Coefficient of `‖Θ‖²`.
    pub beta: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_t: 0.1,
            lambda_t_per_stage: None,
            lambda_cl: 0.01,
            lambda_sl: 0.01,
            beta: 1e-5,
            tau: 0.1,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_t, self.lambda_cl, self.lambda_sl, self.beta];
        let per_stage = self.lambda_t_per_stage.iter().flatten();
        if all.iter().chain(per_stage).any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidConfig("loss weights must be finite and nonnegative".into()));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidConfig("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn stage_weight(&self, stage: usize) -> f64 {
        match &self.lambda_t_per_stage {
            Some(w) => w.get(stage).copied().unwrap_or(self.lambda_t),
            None => self.lambda_t,
        }
    }
}

/// Components of the objective and their weighted total.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// `(stage, L_t)` for every stage that contributed.
    pub stage_losses: Vec<(usize, f64)>,
    pub consistency: f64,
    pub smoothness: f64,
    /// `‖Θ‖²` (unweighted).
    pub l2: f64,
    pub total: f64,
}

/// `ê_u = ẽ_u + ē_u + e_u^g`, `ê_i = ẽ_i + e_i^g`; returns `logistic(ê_u·ê_i)`.
/// Absent temporal terms count as zero.
pub fn fuse_and_score<T: Real>(
    user_evolved: Option<&[T]>,
    user_aggregated: Option<&[T]>,
    user_global: &[T],
    item_evolved: Option<&[T]>,
    item_global: &[T],
) -> Result<T> {
    Ok(fused_logit(user_evolved, user_aggregated, user_global, item_evolved, item_global)?.sigmoid())
}

/// The dot product `ê_u·ê_i` before the logistic.
pub fn fused_logit<T: Real>(
    user_evolved: Option<&[T]>,
    user_aggregated: Option<&[T]>,
    user_global: &[T],
    item_evolved: Option<&[T]>,
    item_global: &[T],
) -> Result<T> {
    let d = user_global.len();
    let mut eu = user_global.to_vec();
    for (name, part) in [("user evolved", user_evolved), ("user aggregated", user_aggregated)] {
        if let Some(p) = part {
            if p.len() != d {
                return Err(mismatch(name, &[d], &[p.len()]));
            }
            eu.iter_mut().zip(p).for_each(|(a, &b)| *a += b);
        }
    }
    if item_global.len() != d {
        return Err(mismatch("item global", &[d], &[item_global.len()]));
    }
    let mut ei = item_global.to_vec();
    if let Some(p) = item_evolved {
        if p.len() != d {
            return Err(mismatch("item evolved", &[d], &[p.len()]));
        }
        ei.iter_mut().zip(p).for_each(|(a, &b)| *a += b);
    }
    Ok(dot(&eu, &ei))
}

/// Mean binary cross-entropy with predictions clamped to `[ε, 1−ε]`.
/// An empty set contributes zero.
pub fn bce_loss<T: Real>(predictions: &[T], labels: &[bool]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(mismatch("labels", &[predictions.len()], &[labels.len()]));
    }
    if predictions.is_empty() {
        log::warn!("empty prediction set contributes zero loss");
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        let p = p.to_f64().clamp(BCE_EPS, 1.0 - BCE_EPS);
        total -= if y { libm::log(p) } else { libm::log(1.0 - p) };
    }
    Ok(total / predictions.len() as f64)
}

/// InfoNCE alignment of each user's evolved row with their own global row,
/// the other batch users serving as negatives; summed over the stages in
/// `evolved` and averaged over the batch.
///
/// `evolved[s]` and `global` are `B×d`, row `b` belonging to the same user.
pub fn consistency_loss<T: Real>(evolved: &[Tensor<T>], global: &Tensor<T>, tau: f64) -> Result<f64> {
    let (b, d) = (global.rows(), global.cols());
    if b == 0 {
        return Err(Error::EmptyInput("consistency batch"));
    }
    let mut total = 0.0;
    for e in evolved {
        e.check_shape("evolved users", &[b, d])?;
        let logits = e.to_f64().matmul_t(&global.to_f64()).scale(1.0 / tau);
        for r in 0..b {
            total += log_sum_exp(logits.row(r)) - logits.get(r, r);
        }
    }
    Ok(total / b as f64)
}

/// `Σ_{t≥1} ‖ẽ^t − ẽ^{t−1}‖²` averaged over the rows (users) of the tables.
pub fn smoothness_loss<T: Real>(evolved: &[Tensor<T>]) -> Result<f64> {
    let Some(first) = evolved.first() else {
        return Ok(0.0);
    };
    let rows = first.rows();
    if rows == 0 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for w in evolved.windows(2) {
        w[1].check_shape("evolved users", first.shape())?;
        total += w[1].to_f64().sub(&w[0].to_f64()).sum_squares();
    }
    Ok(total / rows as f64)
}

/// Weighted objective `Σ λ_t L_t + λ_cl L_cl + λ_sl L_sl + β‖Θ‖²`.
pub fn total_loss<T: Real, P: ParamSet<T> + ?Sized>(
    stage_losses: &[(usize, f64)],
    consistency: f64,
    smoothness: f64,
    weights: &LossWeights,
    params: &P,
) -> LossBreakdown {
    let l2 = params.squared_norm();
    let mut total: f64 = stage_losses.iter().map(|&(t, l)| weights.stage_weight(t) * l).sum();
    total += weights.lambda_cl * consistency + weights.lambda_sl * smoothness + weights.beta * l2;
    LossBreakdown {
        stage_losses: stage_losses.to_vec(),
        consistency,
        smoothness,
        l2,
        total,
    }
}
