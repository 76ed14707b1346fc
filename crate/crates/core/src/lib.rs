//! Relational structure extraction as conditional sequence tagging.
//!
//! A passage and a condition (an event trigger, a head entity, or an intent)
//! are turned into one or more BIO tagging problems. Condition information and,
//! optionally, one relation label per subtask are appended to the encoder input
//! as verbalized words ("priming"), so self-attention makes the passage
//! representations specific to the condition and relation being queried. A
//! linear-chain CRF decodes the tags.
//!
//! Module map:
//!
//! * [`rse`]: passages, conditions, schemas, gold structures, task adapters, corpus IO
//! * [`bio`]: structure <-> BIO tag sequences (role-typed and binary schemes)
//! * [`priming`]: primed input construction and conditional-feature requests
//! * [`encoder`]: from-scratch transformer encoder with split-at-layer-k inference
//! * [`crf`]: forward algorithm, Viterbi, NLL and its gradients
//! * [`model`]: the tagger, the eight ablation variants, training, prediction, checkpoints
//! * [`metrics`]: micro-F1 scoring for the three task families
//! * [`synth`]: deterministic synthetic corpora
//! * [`experiment`]: ablation grid and split-k throughput benchmark

pub mod bio;
pub mod crf;
pub mod encoder;
mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod priming;
pub mod rse;
mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use scalar::Scalar;
