//! Click logs, stage partitioning, negative sampling, the synthetic generator
//! and the chronological split.

pub mod log;
pub mod partition;
pub mod sampling;
pub mod split;
pub mod synth;

pub use log::{InteractionLog, ItemFeatures, Record, Vocabulary};
pub use partition::{partition_stages, Click, StagePartition};
pub use sampling::{negative_sample, negative_sample_in, NegativeSample};
pub use split::{chronological_split, live_items, CandidateSet, DatasetSplit};
pub use synth::{synth_generate, SynthConfig, SynthTruth, SyntheticData};
