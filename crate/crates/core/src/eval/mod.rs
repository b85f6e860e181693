//! Ranking metrics, per-user evaluation, significance tests and reports.

mod report;
mod stats;

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::data::{UserId, UserSequence};
use crate::error::{Error, Result};
use crate::pipeline::{DatasetSplit, LabeledGroundTruth, Labels};
use crate::scorers::Scorer;

pub use report::{build_report, Comparison, ComparisonPlan, MetricReport, ScorerSummary};
pub use stats::{bonferroni, paired_t_test, TTest};

/// Cutoffs reported by default.
pub const DEFAULT_CUTOFFS: [usize; 4] = [5, 10, 40, 100];

/// Gain applied to a graded label.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Gain {
    /// `2^label − 1`
    #[default]
    Exponential,
    /// `label`
    Linear,
}

impl Gain {
    fn of(self, label: u8) -> f64 {
        match self {
            Gain::Exponential => f64::from(label).exp2() - 1.0,
            Gain::Linear => f64::from(label),
        }
    }
}

fn by_score_desc(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b))
}

/// Top-`k` item indices by descending score, ties broken by ascending index.
pub fn rank_items(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k > scores.len() {
        return Err(Error::invalid(format!("cutoff {k} exceeds catalog size {}", scores.len())));
    }
    if let Some(i) = scores.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("score of item {i} is not finite")));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    let cmp = by_score_desc(scores);
    if k > 0 && k < idx.len() {
        idx.select_nth_unstable_by(k - 1, &cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(&cmp);
    idx.truncate(k);
    Ok(idx)
}

/// NDCG@k with exponential gain.
pub fn ndcg_at_k(ranking: &[usize], labels: &Labels, k: usize) -> Result<f64> {
    ndcg_at_k_with(ranking, labels, k, Gain::Exponential)
}

/// `DCG@k / IDCG@k`, with `DCG = Σ_r gain(label_r) / log2(r + 1)` over ranks
/// `r = 1..=k` and the ideal ordering taken from the label multiset.
pub fn ndcg_at_k_with(ranking: &[usize], labels: &Labels, k: usize, gain: Gain) -> Result<f64> {
    if !labels.values().any(|&l| l > 0) {
        return Err(Error::UndefinedMetric);
    }
    let discount = |rank0: usize| ((rank0 + 2) as f64).log2();
    let dcg: f64 = ranking
        .iter()
        .take(k)
        .enumerate()
        .map(|(r, item)| gain.of(labels.get(item).copied().unwrap_or(0)) / discount(r))
        .sum();
    let mut ideal: Vec<u8> = labels.values().copied().collect();
    ideal.sort_unstable_by(|a, b| b.cmp(a));
    let idcg: f64 = ideal.iter().take(k).enumerate().map(|(r, &l)| gain.of(l) / discount(r)).sum();
    Ok(dcg / idcg)
}

/// Per-user NDCG values of one scorer at a fixed list of cutoffs.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub scorer: String,
    pub cutoffs: Vec<usize>,
    /// One value per cutoff, in `cutoffs` order.
    pub per_user: BTreeMap<UserId, Vec<f64>>,
}

impl Evaluation {
    fn cutoff_index(&self, k: usize) -> Result<usize> {
        self.cutoffs.iter().position(|&c| c == k).ok_or_else(|| Error::invalid(format!("cutoff {k} not evaluated")))
    }

    /// Per-user values at cutoff `k`, ordered by user id.
    pub fn column(&self, k: usize) -> Result<Vec<f64>> {
        let i = self.cutoff_index(k)?;
        Ok(self.per_user.values().map(|v| v[i]).collect())
    }

    pub fn mean(&self, k: usize) -> Result<f64> {
        let col = self.column(k)?;
        if col.is_empty() {
            return Err(Error::invalid("no evaluated users"));
        }
        Ok(col.iter().sum::<f64>() / col.len() as f64)
    }

    /// Writes `user_id,ndcg@k…` rows.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["user_id".to_owned()];
        header.extend(self.cutoffs.iter().map(|k| format!("ndcg@{k}")));
        w.write_record(&header)?;
        for (user, values) in &self.per_user {
            let mut row = vec![user.0.clone()];
            row.extend(values.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates `scorer` against `ground_truth`, feeding each user's history as
/// returned by `history`. Users without a positive label are skipped.
pub fn evaluate_users(
    scorer: &dyn Scorer,
    ground_truth: &LabeledGroundTruth,
    history: impl Fn(&UserId) -> Vec<usize>,
    cutoffs: &[usize],
    gain: Gain,
) -> Result<Evaluation> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::invalid("cutoffs must be a nonempty list of positive integers"));
    }
    let n = scorer.catalog_size();
    let depth = cutoffs.iter().copied().max().unwrap_or(0).min(n);
    let mut per_user = BTreeMap::new();
    for (user, labels) in ground_truth {
        if !labels.values().any(|&l| l > 0) {
            continue;
        }
        if let Some(&bad) = labels.keys().find(|&&i| i >= n) {
            return Err(Error::invalid(format!("label for item {bad} outside scorer catalog of size {n}")));
        }
        let seq = UserSequence { user: user.clone(), items: history(user) };
        let scores = scorer.score(&seq)?;
        if scores.len() != n {
            return Err(Error::invalid(format!("scorer returned {} scores for a catalog of {n}", scores.len())));
        }
        let ranking = rank_items(&scores, depth)?;
        let values = cutoffs.iter().map(|&k| ndcg_at_k_with(&ranking, labels, k, gain)).collect::<Result<Vec<_>>>()?;
        per_user.insert(user.clone(), values);
    }
    Ok(Evaluation { scorer: scorer.name().to_owned(), cutoffs: cutoffs.to_vec(), per_user })
}

/// Test-partition evaluation: every test user is scored from everything they
/// did up to the test border.
pub fn evaluate(scorer: &dyn Scorer, split: &DatasetSplit, cutoffs: &[usize]) -> Result<Evaluation> {
    evaluate_with_gain(scorer, split, cutoffs, Gain::Exponential)
}

pub fn evaluate_with_gain(scorer: &dyn Scorer, split: &DatasetSplit, cutoffs: &[usize], gain: Gain) -> Result<Evaluation> {
    if scorer.catalog_size() != split.catalog().len() {
        return Err(Error::invalid(format!(
            "scorer catalog size {} does not match split catalog size {}",
            scorer.catalog_size(),
            split.catalog().len()
        )));
    }
    if split.test.is_empty() {
        return Err(Error::invalid("split has no test ground truth"));
    }
    evaluate_users(scorer, &split.test, |u| split.history_items(u), cutoffs, gain)
}
