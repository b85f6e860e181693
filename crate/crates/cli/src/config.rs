//! Flat `key = value` experiment descriptions and model presets.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use poprec::neural::{Direction, LossKind, ModelConfig};

/// Options shared by every neural scorer of a run. `None` keeps the preset
/// default.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelOptions {
    pub epochs: Option<usize>,
    pub embed_dim: Option<usize>,
    pub heads: Option<usize>,
    pub blocks: Option<usize>,
    pub l_max: Option<usize>,
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub negatives: Option<usize>,
    pub beta: Option<f64>,
    pub mask_probability: Option<f64>,
    pub epsilon: Option<f64>,
    pub patience: Option<usize>,
}

/// Maps a model name to its direction and loss.
pub fn preset(name: &str) -> Result<(Direction, LossKind)> {
    Ok(match name {
        "bert4rec" => (Direction::MaskedBidirectional, LossKind::Ce),
        "sasrec" => (Direction::Unidirectional, LossKind::Bce),
        "gsasrec" => (Direction::Unidirectional, LossKind::Gbce),
        other => bail!("unknown model {other:?} (expected bert4rec, sasrec or gsasrec)"),
    })
}

pub fn model_config(name: &str, pps: bool, seed: u64, opts: &ModelOptions) -> Result<ModelConfig> {
    let (direction, loss) = preset(name)?;
    let mut c = ModelConfig::new(direction, loss).with_pps(pps);
    c.seed = seed;
    if let Some(v) = opts.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = opts.embed_dim {
        c.embed_dim = v;
    }
    if let Some(v) = opts.heads {
        c.heads = v;
    }
    if let Some(v) = opts.blocks {
        c.blocks = v;
    }
    if let Some(v) = opts.l_max {
        c.l_max = v;
    }
    if let Some(v) = opts.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = opts.weight_decay {
        c.weight_decay = v;
    }
    if let Some(v) = opts.negatives {
        c.negatives_per_positive = v;
    }
    if let Some(v) = opts.beta {
        c.beta = v;
    }
    if let Some(v) = opts.mask_probability {
        c.mask_probability = v;
    }
    if let Some(v) = opts.epsilon {
        c.epsilon = v;
    }
    if let Some(v) = opts.patience {
        c.early_stop_patience = v;
    }
    c.validate()?;
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ScorerSpec {
    MostPopular,
    PersonalizedMostPopular,
    Neural { model: String, pps: bool },
}

impl ScorerSpec {
    pub fn parse(token: &str) -> Result<Self> {
        Ok(match token {
            "most-popular" => ScorerSpec::MostPopular,
            "personalized-most-popular" => ScorerSpec::PersonalizedMostPopular,
            other => {
                let (model, pps) = match other.strip_suffix("+pps") {
                    Some(m) => (m, true),
                    None => (other, false),
                };
                preset(model)?;
                ScorerSpec::Neural { model: model.to_owned(), pps }
            }
        })
    }

    pub fn name(&self) -> String {
        match self {
            ScorerSpec::MostPopular => "most-popular".into(),
            ScorerSpec::PersonalizedMostPopular => "personalized-most-popular".into(),
            ScorerSpec::Neural { model, pps: true } => format!("{model}+pps"),
            ScorerSpec::Neural { model, pps: false } => model.clone(),
        }
    }
}

/// Everything `compare` needs.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub sample_items: Option<usize>,
    pub test_fraction: f64,
    pub val_fraction: f64,
    pub val_users: usize,
    pub scorers: Vec<ScorerSpec>,
    pub cutoffs: Vec<usize>,
    pub seed: u64,
    pub output: PathBuf,
    pub parallel: bool,
    pub model: ModelOptions,
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| anyhow::anyhow!("invalid value {value:?} for {key}: {e}"))
}

pub fn parse_cutoffs(value: &str) -> Result<Vec<usize>> {
    let cutoffs = value.split(',').map(|s| parse_value::<usize>("cutoffs", s.trim())).collect::<Result<Vec<_>>>()?;
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        bail!("cutoffs must be positive integers");
    }
    Ok(cutoffs)
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').with_context(|| format!("line {}: expected key = value", no + 1))?;
            let (k, v) = (k.trim().to_owned(), v.trim().to_owned());
            if entries.insert(k.clone(), v).is_some() {
                bail!("line {}: duplicate key {k}", no + 1);
            }
        }
        let mut take = |k: &str| entries.remove(k);
        let path = |v: String| if Path::new(&v).is_absolute() { PathBuf::from(v) } else { base.join(v) };

        let input = path(take("input").context("missing required key input")?);
        let scorers = take("scorers")
            .context("missing required key scorers")?
            .split(',')
            .map(|s| ScorerSpec::parse(s.trim()))
            .collect::<Result<Vec<_>>>()?;
        let mut cfg = RunConfig {
            input,
            sample_items: take("sample_items").map(|v| parse_value("sample_items", &v)).transpose()?,
            test_fraction: take("test_fraction").map(|v| parse_value("test_fraction", &v)).transpose()?.unwrap_or(0.1),
            val_fraction: take("val_fraction").map(|v| parse_value("val_fraction", &v)).transpose()?.unwrap_or(0.1),
            val_users: take("val_users").map(|v| parse_value("val_users", &v)).transpose()?.unwrap_or(0),
            scorers,
            cutoffs: take("cutoffs").map(|v| parse_cutoffs(&v)).transpose()?.unwrap_or_else(|| vec![5, 10, 40, 100]),
            seed: take("seed").map(|v| parse_value("seed", &v)).transpose()?.unwrap_or(0),
            output: path(take("output").unwrap_or_else(|| "run".into())),
            parallel: take("parallel").map(|v| parse_value("parallel", &v)).transpose()?.unwrap_or(true),
            model: ModelOptions::default(),
        };
        macro_rules! opt {
            ($field:ident) => {
                cfg.model.$field = take(stringify!($field)).map(|v| parse_value(stringify!($field), &v)).transpose()?;
            };
        }
        opt!(epochs);
        opt!(embed_dim);
        opt!(heads);
        opt!(blocks);
        opt!(l_max);
        opt!(learning_rate);
        opt!(weight_decay);
        opt!(negatives);
        opt!(beta);
        opt!(mask_probability);
        opt!(epsilon);
        opt!(patience);
        if let Some(k) = entries.keys().next() {
            bail!("unknown key {k}");
        }
        if cfg.scorers.is_empty() {
            bail!("scorers is empty");
        }
        let mut names: Vec<String> = cfg.scorers.iter().map(ScorerSpec::name).collect();
        names.sort();
        if names.windows(2).any(|w| w[0] == w[1]) {
            bail!("scorers lists a model twice");
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read run config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        RunConfig::parse(&text, base).with_context(|| format!("in run config {}", path.display()))
    }

    /// Planned `(base, treatment)` pairs: popularity baselines against each
    /// other, and every neural model against its `+pps` variant.
    pub fn comparisons(&self) -> Vec<(String, String)> {
        let has = |s: &ScorerSpec| self.scorers.contains(s);
        let mut plan = Vec::new();
        if has(&ScorerSpec::MostPopular) && has(&ScorerSpec::PersonalizedMostPopular) {
            plan.push((ScorerSpec::MostPopular.name(), ScorerSpec::PersonalizedMostPopular.name()));
        }
        for s in &self.scorers {
            if let ScorerSpec::Neural { model, pps: false } = s {
                let with = ScorerSpec::Neural { model: model.clone(), pps: true };
                if has(&with) {
                    plan.push((s.name(), with.name()));
                }
            }
        }
        plan
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_config() {
        let text = "
            # experiment
            input = events.csv
            scorers = most-popular, personalized-most-popular, bert4rec, bert4rec+pps
            cutoffs = 5,10
            val_users = 10
            epochs = 3
            learning_rate = 0.01
        ";
        let c = RunConfig::parse(text, Path::new("/tmp/x")).unwrap();
        assert_eq!(c.input, PathBuf::from("/tmp/x/events.csv"));
        assert_eq!(c.scorers.len(), 4);
        assert_eq!(c.cutoffs, vec![5, 10]);
        assert_eq!(c.model.epochs, Some(3));
        assert_eq!(c.model.learning_rate, Some(0.01));
        assert_eq!(
            c.comparisons(),
            vec![
                ("most-popular".into(), "personalized-most-popular".into()),
                ("bert4rec".into(), "bert4rec+pps".into())
            ]
        );
    }

    #[test]
    fn rejects_bad_configs() {
        let base = Path::new(".");
        assert!(RunConfig::parse("scorers = most-popular", base).is_err());
        assert!(RunConfig::parse("input = a\nscorers = nope", base).is_err());
        assert!(RunConfig::parse("input = a\nscorers = most-popular\ncolour = red", base).is_err());
        assert!(RunConfig::parse("input = a\ninput = b\nscorers = most-popular", base).is_err());
        assert!(RunConfig::parse("input = a\nscorers = sasrec,sasrec", base).is_err());
        assert!(RunConfig::parse("input = a\nscorers = sasrec\nepochs = many", base).is_err());
    }

    #[test]
    fn presets_follow_heads() {
        let c = model_config("gsasrec", true, 1, &ModelOptions::default()).unwrap();
        assert_eq!(c.loss, LossKind::Gbce);
        assert!(model_config("bert4rec", false, 1, &ModelOptions { embed_dim: Some(7), ..Default::default() }).is_err());
    }
}
