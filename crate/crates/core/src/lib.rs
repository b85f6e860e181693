//! Personalized-popularity-aware sequential recommendation.
//!
//! The crate is organised along the life of an experiment:
//!
//! * [`data`] ingests event logs and builds per-user item sequences.
//! * [`pipeline`] samples the catalog, performs the global temporal split and
//!   assigns graded relevance labels.
//! * [`popcore`] turns per-user item counts into popularity probabilities and
//!   into logits that a softmax or sigmoid head maps back onto the same
//!   probabilities.
//! * [`scorers`] defines the scorer contract and the popularity baselines.
//! * [`neural`] is a small attention-based next-item scorer trained with
//!   cross entropy, BCE or gBCE, optionally on top of popularity logits.
//! * [`eval`] computes NDCG@k, paired t-tests and comparison reports.
//! * [`synth`] generates seeded repeated-consumption logs.

pub mod data;
pub mod error;
pub mod eval;
pub mod neural;
pub mod pipeline;
pub mod popcore;
pub mod scorers;
pub mod synth;

pub use data::{Catalog, Event, EventLog, EventType, ItemId, UserId, UserSequence};
pub use error::{Error, Result};
