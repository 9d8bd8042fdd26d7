#![no_std]
//! Stage-wise evolving-interest news recommendation.
//!
//! A global LightGCN-style encoder over the whole click graph is combined with
//! per-stage encoders, an LSTM over stage embeddings and a self-attention
//! branch over each user's click prefix. Everything here needs only `alloc`;
//! file IO and the command line live in the `stagerec` crate.

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod data;
pub mod encoders;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod seeds;
pub mod temporal;
pub mod training;

pub use error::{Error, Result};
