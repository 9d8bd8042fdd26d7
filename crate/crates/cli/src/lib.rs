//! File formats, dataset loading and the `stagerec` subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod dataset;
