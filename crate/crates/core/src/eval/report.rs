use std::fmt::Write as _;
use std::io::Write;

use super::stats::{bonferroni, paired_t_test};
use super::Evaluation;
use crate::error::{Error, Result};

/// Significance level for adjusted p-values.
pub const ALPHA: f64 = 0.05;

/// Pairs `(base, treatment)` of scorer names to compare at every cutoff.
pub type ComparisonPlan = Vec<(String, String)>;

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerSummary {
    pub name: String,
    /// Mean NDCG per cutoff, in report cutoff order.
    pub means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Comparison {
    pub base: String,
    pub treatment: String,
    pub cutoff: usize,
    pub base_mean: f64,
    pub treatment_mean: f64,
    /// `(treatment − base) / base × 100`.
    pub improvement_pct: f64,
    pub t: f64,
    pub p_raw: f64,
    pub p_adj: f64,
    pub significant: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub cutoffs: Vec<usize>,
    pub users: usize,
    pub scorers: Vec<ScorerSummary>,
    pub comparisons: Vec<Comparison>,
    /// Number of tests in the Bonferroni family (every comparison at every
    /// cutoff in this report).
    pub family_size: usize,
}

/// Aggregates evaluations sharing users and cutoffs, and runs a paired t-test
/// for every planned pair at every cutoff.
pub fn build_report(evaluations: &[Evaluation], plan: &[(String, String)]) -> Result<MetricReport> {
    let first = evaluations.first().ok_or_else(|| Error::invalid("no evaluations to report"))?;
    for e in &evaluations[1..] {
        if e.cutoffs != first.cutoffs {
            return Err(Error::invalid(format!("{} uses cutoffs {:?}, expected {:?}", e.scorer, e.cutoffs, first.cutoffs)));
        }
        if !e.per_user.keys().eq(first.per_user.keys()) {
            return Err(Error::invalid(format!("{} was evaluated on a different user set than {}", e.scorer, first.scorer)));
        }
    }
    if first.per_user.is_empty() {
        return Err(Error::invalid("no evaluated users"));
    }
    let find = |name: &str| {
        evaluations.iter().find(|e| e.scorer == name).ok_or_else(|| Error::invalid(format!("unknown scorer {name:?} in comparison plan")))
    };

    let scorers = evaluations
        .iter()
        .map(|e| Ok(ScorerSummary { name: e.scorer.clone(), means: e.cutoffs.iter().map(|&k| e.mean(k)).collect::<Result<_>>()? }))
        .collect::<Result<Vec<_>>>()?;

    let family_size = plan.len() * first.cutoffs.len();
    let mut comparisons = Vec::with_capacity(family_size);
    for (base, treatment) in plan {
        let b = find(base)?;
        let t = find(treatment)?;
        for &k in &first.cutoffs {
            let (bv, tv) = (b.column(k)?, t.column(k)?);
            let test = paired_t_test(&tv, &bv)?;
            let base_mean = b.mean(k)?;
            let treatment_mean = t.mean(k)?;
            let p_adj = bonferroni(test.p, family_size);
            comparisons.push(Comparison {
                base: base.clone(),
                treatment: treatment.clone(),
                cutoff: k,
                base_mean,
                treatment_mean,
                improvement_pct: improvement_pct(base_mean, treatment_mean),
                t: test.t,
                p_raw: test.p,
                p_adj,
                significant: p_adj < ALPHA,
            });
        }
    }

    Ok(MetricReport { cutoffs: first.cutoffs.clone(), users: first.per_user.len(), scorers, comparisons, family_size })
}

fn improvement_pct(base: f64, treatment: f64) -> f64 {
    if base == 0.0 {
        if treatment == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (treatment - base) / base * 100.0
    }
}

/// Formats a relative improvement the way the report prints it, e.g. `+69.8%`.
pub fn format_improvement(pct: f64) -> String {
    format!("{pct:+.1}%")
}

impl MetricReport {
    pub fn comparison(&self, base: &str, treatment: &str, cutoff: usize) -> Option<&Comparison> {
        self.comparisons.iter().find(|c| c.base == base && c.treatment == treatment && c.cutoff == cutoff)
    }

    pub fn mean(&self, scorer: &str, cutoff: usize) -> Option<f64> {
        let col = self.cutoffs.iter().position(|&k| k == cutoff)?;
        self.scorers.iter().find(|s| s.name == scorer).map(|s| s.means[col])
    }

    /// Markdown table: one row per scorer, one column per cutoff. Best values
    /// are bold and second best underlined; comparison treatments show their
    /// improvement over the base in parentheses, with † when significant.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Users: {}. Paired t-test, Bonferroni family size {} (alpha {ALPHA}).\n",
            self.users, self.family_size
        );
        out.push_str("| Model |");
        for k in &self.cutoffs {
            let _ = write!(out, " NDCG@{k} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---:|".repeat(self.cutoffs.len()));
        out.push('\n');

        let ranks: Vec<(Option<usize>, Option<usize>)> = (0..self.cutoffs.len())
            .map(|c| {
                let mut order: Vec<usize> = (0..self.scorers.len()).collect();
                order.sort_by(|&a, &b| {
                    self.scorers[b].means[c].partial_cmp(&self.scorers[a].means[c]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b))
                });
                (order.first().copied(), order.get(1).copied())
            })
            .collect();

        for (si, s) in self.scorers.iter().enumerate() {
            let _ = write!(out, "| {} |", s.name);
            for (c, &k) in self.cutoffs.iter().enumerate() {
                let mut cell = format!("{:.4}", s.means[c]);
                if ranks[c].0 == Some(si) {
                    cell = format!("**{cell}**");
                } else if ranks[c].1 == Some(si) {
                    cell = format!("<u>{cell}</u>");
                }
                for cmp in self.comparisons.iter().filter(|x| x.treatment == s.name && x.cutoff == k) {
                    let _ = write!(cell, " ({}{})", format_improvement(cmp.improvement_pct), if cmp.significant { "†" } else { "" });
                }
                let _ = write!(out, " {cell} |");
            }
            out.push('\n');
        }
        out
    }

    /// CSV with columns
    /// `scorer,cutoff,mean_ndcg,comparison,base_mean,improvement_pct,t,p_raw,p_adj,significant`.
    /// Every scorer gets one row per cutoff with empty comparison fields;
    /// every comparison adds a row under its treatment's name.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "scorer",
            "cutoff",
            "mean_ndcg",
            "comparison",
            "base_mean",
            "improvement_pct",
            "t",
            "p_raw",
            "p_adj",
            "significant",
        ])?;
        for s in &self.scorers {
            for (c, k) in self.cutoffs.iter().enumerate() {
                w.write_record([s.name.as_str(), &k.to_string(), &s.means[c].to_string(), "", "", "", "", "", "", ""])?;
            }
        }
        for c in &self.comparisons {
            w.write_record([
                c.treatment.as_str(),
                &c.cutoff.to_string(),
                &c.treatment_mean.to_string(),
                c.base.as_str(),
                &c.base_mean.to_string(),
                &c.improvement_pct.to_string(),
                &c.t.to_string(),
                &c.p_raw.to_string(),
                &c.p_adj.to_string(),
                &c.significant.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
