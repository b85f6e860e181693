//! The scorer contract and the two popularity baselines.

use crate::data::{EventLog, UserSequence};
use crate::error::{Error, Result};
use crate::popcore::{counts_vector, PpsMode};

/// Produces next-item scores (one per catalog item) from a user's history.
///
/// `history` carries the user's complete chronological item list; scorers
/// that consume bounded inputs truncate it themselves. Higher is better and
/// already-consumed items are never filtered.
pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;

    /// The probability head the scores are meant for, if any.
    fn head(&self) -> Option<PpsMode>;

    fn catalog_size(&self) -> usize;

    fn score(&self, history: &UserSequence) -> Result<Vec<f64>>;
}

/// Global interaction counts, identical for every user.
#[derive(Clone, Debug)]
pub struct MostPopular {
    counts: Vec<f64>,
}

impl MostPopular {
    pub fn new(train: &EventLog) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("most-popular needs a nonempty training log"));
        }
        Ok(MostPopular { counts: train.item_counts().into_iter().map(|c| c as f64).collect() })
    }
}

impl Scorer for MostPopular {
    fn name(&self) -> &str {
        "most-popular"
    }

    fn head(&self) -> Option<PpsMode> {
        None
    }

    fn catalog_size(&self) -> usize {
        self.counts.len()
    }

    fn score(&self, _history: &UserSequence) -> Result<Vec<f64>> {
        Ok(self.counts.clone())
    }
}

/// Ranks items by how often the user consumed them. Users without history
/// get an all-zero vector.
#[derive(Clone, Debug)]
pub struct PersonalizedMostPopular {
    n: usize,
}

impl PersonalizedMostPopular {
    pub fn new(train: &EventLog) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::invalid("personalized-most-popular needs a nonempty training log"));
        }
        Ok(PersonalizedMostPopular { n: train.catalog().len() })
    }
}

impl Scorer for PersonalizedMostPopular {
    fn name(&self) -> &str {
        "personalized-most-popular"
    }

    fn head(&self) -> Option<PpsMode> {
        None
    }

    fn catalog_size(&self) -> usize {
        self.n
    }

    fn score(&self, history: &UserSequence) -> Result<Vec<f64>> {
        let counts = counts_vector(&history.items, self.n)?;
        Ok(counts.as_slice().iter().map(|&c| c as f64).collect())
    }
}
