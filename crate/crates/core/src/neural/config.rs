use serde::{Deserialize, Serialize};

use crate::data::DEFAULT_MAX_LEN;
use crate::error::{Error, Result};
use crate::popcore::{PpsMode, DEFAULT_EPSILON};

/// Attention direction of the sequence encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Causal attention, every position predicts the next item.
    Unidirectional,
    /// Full attention over a sequence with randomly masked positions; the
    /// masked positions predict the hidden items.
    MaskedBidirectional,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LossKind {
    /// Cross entropy over the full catalog (softmax head).
    Ce,
    /// Binary cross entropy with sampled negatives (sigmoid head).
    Bce,
    /// BCE with the positive probability raised to `beta` (sigmoid head).
    Gbce,
}

impl LossKind {
    pub fn head(self) -> PpsMode {
        match self {
            LossKind::Ce => PpsMode::Softmax,
            LossKind::Bce | LossKind::Gbce => PpsMode::Sigmoid,
        }
    }
}

/// Whether popularity logits are added to the model scores, and in which
/// encoding.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PpsSetting {
    Off,
    On(PpsMode),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub l_max: usize,
    pub direction: Direction,
    pub loss: LossKind,
    pub negatives_per_positive: usize,
    pub beta: f64,
    pub mask_probability: f64,
    pub pps: PpsSetting,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Defaults for the given direction and loss; negatives default to 1 for
    /// BCE and 256 for gBCE.
    pub fn new(direction: Direction, loss: LossKind) -> Self {
        ModelConfig {
            embed_dim: 32,
            heads: 2,
            blocks: 1,
            l_max: DEFAULT_MAX_LEN,
            direction,
            loss,
            negatives_per_positive: if loss == LossKind::Gbce { 256 } else { 1 },
            beta: 1.0,
            mask_probability: 0.2,
            pps: PpsSetting::Off,
            epsilon: DEFAULT_EPSILON,
            learning_rate: 0.05,
            weight_decay: 0.0,
            max_epochs: 50,
            early_stop_patience: 10,
            seed: 0,
        }
    }

    /// Turns popularity logits on (in the encoding matching the loss) or off.
    pub fn with_pps(mut self, on: bool) -> Self {
        self.pps = if on { PpsSetting::On(self.loss.head()) } else { PpsSetting::Off };
        self
    }

    pub fn head(&self) -> PpsMode {
        self.loss.head()
    }

    pub fn pps_mode(&self) -> Option<PpsMode> {
        match self.pps {
            PpsSetting::Off => None,
            PpsSetting::On(mode) => Some(mode),
        }
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn ffn_dim(&self) -> usize {
        4 * self.embed_dim
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("blocks", self.blocks),
            ("l_max", self.l_max),
            ("negatives_per_positive", self.negatives_per_positive),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if self.direction == Direction::MaskedBidirectional && !(self.mask_probability > 0.0 && self.mask_probability < 1.0)
        {
            return Err(Error::invalid(format!("mask_probability must lie in (0, 1), got {}", self.mask_probability)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::invalid(format!("weight_decay must be nonnegative, got {}", self.weight_decay)));
        }
        if let PpsSetting::On(mode) = self.pps {
            if mode != self.head() {
                return Err(Error::invalid(format!(
                    "{mode:?}-compatible popularity logits do not match the {:?} head of {:?} loss",
                    self.head(),
                    self.loss
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_loss() {
        assert_eq!(ModelConfig::new(Direction::Unidirectional, LossKind::Bce).negatives_per_positive, 1);
        assert_eq!(ModelConfig::new(Direction::Unidirectional, LossKind::Gbce).negatives_per_positive, 256);
        let c = ModelConfig::new(Direction::MaskedBidirectional, LossKind::Ce).with_pps(true);
        assert_eq!(c.pps, PpsSetting::On(PpsMode::Softmax));
        assert!(c.validate().is_ok());
    }

    #[test]
    fn mismatched_pps_mode_rejected() {
        let mut c = ModelConfig::new(Direction::MaskedBidirectional, LossKind::Ce);
        c.pps = PpsSetting::On(PpsMode::Sigmoid);
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Direction::Unidirectional, LossKind::Bce);
        c.pps = PpsSetting::On(PpsMode::Softmax);
        assert!(c.validate().is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let base = ModelConfig::new(Direction::Unidirectional, LossKind::Gbce);
        let mut c = base.clone();
        c.beta = 0.0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.beta = 1.5;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.heads = 3;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::new(Direction::MaskedBidirectional, LossKind::Ce);
        c.mask_probability = 1.0;
        assert!(c.validate().is_err());
    }
}
