//! Personalized popularity: counts, probabilities and head-compatible logits.
//!
//! For a counts vector `C` over a catalog of `N` items the smoothed popularity
//! probability of item `j` is
//!
//! ```text
//! p̂_j = ((c_j + ε) / (max(C) + ε)) / Σ_z ((c_z + ε) / (max(C) + ε))
//! ```
//!
//! Two logit encodings of `p̂` are provided. Softmax-compatible logits
//! `y_j = ln((c_j + ε) / (max(C) + ε))` satisfy `softmax(y) = p̂`; sigmoid-compatible
//! logits `y_j = ln(p̂_j / (1 − p̂_j))` satisfy `sigmoid(y_j) = p̂_j`. Adding either
//! to a model's raw scores before its probability head lets the model learn the
//! deviation from the user's own popularity distribution.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default smoothing constant.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Which probability head a set of logits is meant for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PpsMode {
    Softmax,
    Sigmoid,
}

/// Per-item occurrence counts over a sequence prefix.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountsVector(Vec<u64>);

impl CountsVector {
    pub fn new(counts: Vec<u64>) -> Self {
        CountsVector(counts)
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> u64 {
        self.0.iter().copied().max().unwrap_or(0)
    }

    pub fn total(&self) -> u64 {
        self.0.iter().sum()
    }
}

/// A probability distribution over the catalog.
#[derive(Clone, Debug, PartialEq)]
pub struct PopProbability(Vec<f64>);

impl PopProbability {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Popularity scores for one position, tagged with the head they target.
#[derive(Clone, Debug, PartialEq)]
pub struct PpsLogits {
    values: Vec<f64>,
    mode: PpsMode,
    epsilon: f64,
}

impl PpsLogits {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mode(&self) -> PpsMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Causal per-position popularity scores: row `i` uses items `s_1..=s_i` only.
#[derive(Clone, Debug, PartialEq)]
pub struct PpsMatrix {
    data: Array2<f64>,
    mode: PpsMode,
    epsilon: f64,
}

impl PpsMatrix {
    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.data.ncols();
        &self.data.as_slice().expect("standard layout")[i * n..(i + 1) * n]
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn mode(&self) -> PpsMode {
        self.mode
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon > 0.0 && epsilon.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("epsilon must be positive and finite, got {epsilon}")))
    }
}

/// Tallies item occurrences in `prefix` over a catalog of size `n`.
pub fn counts_vector(prefix: &[usize], n: usize) -> Result<CountsVector> {
    let mut counts = vec![0u64; n];
    for &item in prefix {
        *counts
            .get_mut(item)
            .ok_or_else(|| Error::invalid(format!("item index {item} outside catalog of size {n}")))? += 1;
    }
    Ok(CountsVector(counts))
}

/// Unsmoothed popularity `c_j / Σ c_z`, with both terms scaled by `1 / max(C)`.
pub fn pp_probability(c: &CountsVector) -> Result<PopProbability> {
    let max = c.max();
    if max == 0 {
        return Err(Error::UndefinedProbability);
    }
    let max = max as f64;
    let scaled: Vec<f64> = c.0.iter().map(|&v| v as f64 / max).collect();
    let sum: f64 = scaled.iter().sum();
    Ok(PopProbability(scaled.into_iter().map(|v| v / sum).collect()))
}

fn smoothed_numerators(counts: &[u64], epsilon: f64) -> Vec<f64> {
    let denom = counts.iter().copied().max().unwrap_or(0) as f64 + epsilon;
    counts.iter().map(|&v| (v as f64 + epsilon) / denom).collect()
}

/// ε-smoothed popularity probability.
pub fn smoothed_pp_probability(c: &CountsVector, epsilon: f64) -> Result<PopProbability> {
    check_epsilon(epsilon)?;
    if c.is_empty() {
        return Err(Error::invalid("empty catalog"));
    }
    let num = smoothed_numerators(&c.0, epsilon);
    let sum: f64 = num.iter().sum();
    Ok(PopProbability(num.into_iter().map(|v| v / sum).collect()))
}

fn logits_from_counts(counts: &[u64], epsilon: f64, mode: PpsMode, out: &mut [f64]) {
    let num = smoothed_numerators(counts, epsilon);
    match mode {
        PpsMode::Softmax => {
            for (o, v) in out.iter_mut().zip(&num) {
                *o = v.ln();
            }
        }
        PpsMode::Sigmoid => {
            let sum: f64 = num.iter().sum();
            for (o, v) in out.iter_mut().zip(&num) {
                let p = v / sum;
                *o = (p / (1.0 - p)).ln();
            }
        }
    }
}

/// Softmax-compatible logits `ln((c_j + ε) / (max(C) + ε))`; all are ≤ 0.
pub fn softmax_pps_logits(c: &CountsVector, epsilon: f64) -> Result<PpsLogits> {
    check_epsilon(epsilon)?;
    let mut values = vec![0.0; c.len()];
    logits_from_counts(&c.0, epsilon, PpsMode::Softmax, &mut values);
    Ok(PpsLogits { values, mode: PpsMode::Softmax, epsilon })
}

/// Sigmoid-compatible logits `ln(p̂_j / (1 − p̂_j))`. Needs at least two items so
/// that every `p̂_j < 1`.
pub fn sigmoid_pps_logits(c: &CountsVector, epsilon: f64) -> Result<PpsLogits> {
    check_epsilon(epsilon)?;
    if c.len() < 2 {
        return Err(Error::invalid("sigmoid-compatible logits need a catalog of at least 2 items"));
    }
    let mut values = vec![0.0; c.len()];
    logits_from_counts(&c.0, epsilon, PpsMode::Sigmoid, &mut values);
    Ok(PpsLogits { values, mode: PpsMode::Sigmoid, epsilon })
}

/// Logits in the requested mode.
pub fn pps_logits(c: &CountsVector, epsilon: f64, mode: PpsMode) -> Result<PpsLogits> {
    match mode {
        PpsMode::Softmax => softmax_pps_logits(c, epsilon),
        PpsMode::Sigmoid => sigmoid_pps_logits(c, epsilon),
    }
}

/// Causal popularity matrix for `seq` over a catalog of size `n`.
///
/// Counts are updated one position at a time; row `i` is computed before item
/// `i + 1` is read.
pub fn pps_matrix(seq: &[usize], n: usize, epsilon: f64, mode: PpsMode) -> Result<PpsMatrix> {
    check_epsilon(epsilon)?;
    if mode == PpsMode::Sigmoid && n < 2 {
        return Err(Error::invalid("sigmoid-compatible logits need a catalog of at least 2 items"));
    }
    let mut data = Array2::zeros((seq.len(), n));
    let mut counts = vec![0u64; n];
    for (i, &item) in seq.iter().enumerate() {
        *counts
            .get_mut(item)
            .ok_or_else(|| Error::invalid(format!("item index {item} outside catalog of size {n}")))? += 1;
        let mut row = data.row_mut(i);
        logits_from_counts(&counts, epsilon, mode, row.as_slice_mut().expect("contiguous row"));
    }
    Ok(PpsMatrix { data, mode, epsilon })
}

/// Popularity scores to add to a model's score matrix.
#[derive(Clone, Copy, Debug)]
pub enum PpsInput<'a> {
    /// One vector broadcast to every position.
    Vector(&'a PpsLogits),
    /// One row per position.
    Matrix(&'a PpsMatrix),
}

impl PpsInput<'_> {
    pub fn mode(&self) -> PpsMode {
        match self {
            PpsInput::Vector(v) => v.mode,
            PpsInput::Matrix(m) => m.mode,
        }
    }
}

/// Elementwise sum of model scores (positions × N) and popularity logits.
///
/// `head` is the probability head of the model producing `scores`; logits built
/// for the other head are rejected.
pub fn combine_scores(scores: ArrayView2<'_, f64>, head: PpsMode, pps: PpsInput<'_>) -> Result<Array2<f64>> {
    if pps.mode() != head {
        return Err(Error::invalid(format!("{:?}-compatible popularity logits cannot feed a {:?} head", pps.mode(), head)));
    }
    let (rows, cols) = scores.dim();
    match pps {
        PpsInput::Vector(v) => {
            if v.len() != cols {
                return Err(Error::invalid(format!("score width {cols} does not match popularity length {}", v.len())));
            }
            let row = ndarray::ArrayView1::from(v.values());
            Ok(&scores + &row)
        }
        PpsInput::Matrix(m) => {
            if m.data.dim() != (rows, cols) {
                return Err(Error::invalid(format!(
                    "score shape {:?} does not match popularity shape {:?}",
                    (rows, cols),
                    m.data.dim()
                )));
            }
            Ok(&scores + &m.data)
        }
    }
}

/// Item indices sorted by descending value, ties by ascending index.
pub fn argsort_desc<T: PartialOrd + Copy>(values: &[T]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    idx
}
