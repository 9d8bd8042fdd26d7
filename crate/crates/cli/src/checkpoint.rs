//! JSON checkpoint: the run configuration plus every parameter tensor.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stagerec_core::model::ModelParams;
use stagerec_core::numerics::{ParamSet, Real};

use crate::config::RunConfig;

pub const FORMAT: &str = "stagerec-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new<T: Real>(config: &RunConfig, params: &ModelParams<T>, best_epoch: usize, best_val_auc: f64) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|x| x.to_f64()).collect(),
            })
            .collect();
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config: config.clone(),
            best_epoch,
            best_val_auc,
            tensors,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).context("parsing checkpoint")?;
        if c.format != FORMAT {
            bail!("not a checkpoint: format tag {:?}", c.format);
        }
        if c.version != VERSION {
            bail!("unsupported checkpoint version {}", c.version);
        }
        Ok(c)
    }

    /// Copies the stored values into `params`, which must have the same tensors.
    pub fn restore<T: Real>(&self, params: &mut ModelParams<T>) -> Result<()> {
        let mut slots = params.tensors_mut();
        if slots.len() != self.tensors.len() {
            bail!("checkpoint holds {} tensors, model expects {}", self.tensors.len(), slots.len());
        }
        for ((name, dst), src) in slots.iter_mut().zip(&self.tensors) {
            if *name != src.name || dst.shape() != src.shape.as_slice() || src.values.len() != dst.len() {
                bail!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    src.name,
                    src.shape,
                    name,
                    dst.shape()
                );
            }
            for (d, s) in dst.data_mut().iter_mut().zip(&src.values) {
                *d = T::from_f64(*s);
            }
        }
        Ok(())
    }
}
