//! A small attention encoder for next-item scoring.

pub mod checkpoint;
mod config;
mod gradcheck;
mod loss;
mod model;
mod params;
mod train;

pub use config::{Direction, LossKind, ModelConfig, PpsSetting};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use loss::{bce_loss, ce_loss, gbce_loss, LossValue};
pub use model::{forward, ScoreMatrix, Token};
pub use params::ParameterSet;
pub use train::{train, train_with_report, training_loss, NeuralScorer, TrainReport};
