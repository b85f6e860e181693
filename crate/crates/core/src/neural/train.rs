//! Example construction, per-sequence SGD and the trained scorer.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Direction, LossKind, ModelConfig};
use super::loss::{bce_loss, ce_loss, gbce_loss};
use super::model::{backward, encode, forward_last, Token};
use super::params::{Gradients, ParameterSet};
use crate::data::{EventLog, UserId, UserSequence};
use crate::error::{Error, Result};
use crate::eval::{evaluate_users, Gain};
use crate::pipeline::LabeledGroundTruth;
use crate::popcore::{counts_vector, pps_logits, pps_matrix, PpsMode};
use crate::scorers::Scorer;

const TRAIN_STREAM: u64 = 0x7261_696e;
const VALIDATION_CUTOFF: usize = 10;

/// One training sequence with its supervised positions fixed.
#[derive(Clone, Debug)]
pub(crate) struct Example {
    pub tokens: Vec<Token>,
    /// Supervised input positions.
    pub rows: Vec<usize>,
    pub targets: Vec<usize>,
    /// Sampled negatives per supervised row; empty lists for cross entropy.
    pub negatives: Vec<Vec<usize>>,
    /// Popularity logits per supervised row.
    pub pps: Option<Array2<f64>>,
}

fn sample_negatives(rng: &mut ChaCha8Rng, n: usize, positive: usize, k: usize) -> Vec<usize> {
    (0..k)
        .map(|_| {
            let r = rng.gen_range(0..n - 1);
            if r >= positive {
                r + 1
            } else {
                r
            }
        })
        .collect()
}

/// Builds a training example from a user's chronological items, or `None`
/// when the sequence is too short to supervise anything.
pub(crate) fn build_example(items: &[usize], n: usize, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Option<Example>> {
    let (tokens, rows, targets, pps) = match config.direction {
        Direction::Unidirectional => {
            if items.len() < 2 {
                return Ok(None);
            }
            let window = &items[items.len().saturating_sub(config.l_max + 1)..];
            let inputs = &window[..window.len() - 1];
            let pps = match config.pps_mode() {
                Some(mode) => Some(pps_matrix(inputs, n, config.epsilon, mode)?.view().to_owned()),
                None => None,
            };
            (inputs.iter().map(|&i| Token::Item(i)).collect::<Vec<_>>(), (0..inputs.len()).collect::<Vec<_>>(), window[1..].to_vec(), pps)
        }
        Direction::MaskedBidirectional => {
            if items.is_empty() {
                return Ok(None);
            }
            let window = &items[items.len().saturating_sub(config.l_max)..];
            let mut rows: Vec<usize> = (0..window.len()).filter(|_| rng.gen_bool(config.mask_probability)).collect();
            if rows.is_empty() {
                rows.push(rng.gen_range(0..window.len()));
            }
            let mut tokens: Vec<Token> = window.iter().map(|&i| Token::Item(i)).collect();
            for &r in &rows {
                tokens[r] = Token::Mask;
            }
            let pps = match config.pps_mode() {
                Some(mode) => {
                    let visible: Vec<usize> = tokens.iter().filter_map(|t| if let Token::Item(i) = t { Some(*i) } else { None }).collect();
                    let v = pps_logits(&counts_vector(&visible, n)?, config.epsilon, mode)?;
                    let row = ndarray::ArrayView1::from(v.values());
                    Some(row.broadcast((rows.len(), n)).expect("broadcast to rows").to_owned())
                }
                None => None,
            };
            let targets = rows.iter().map(|&r| window[r]).collect();
            (tokens, rows, targets, pps)
        }
    };
    let negatives = match config.loss {
        LossKind::Ce => vec![Vec::new(); targets.len()],
        LossKind::Bce | LossKind::Gbce => {
            if n < 2 {
                return Err(Error::invalid("sampled negatives need a catalog of at least 2 items"));
            }
            targets.iter().map(|&t| sample_negatives(rng, n, t, config.negatives_per_positive)).collect()
        }
    };
    Ok(Some(Example { tokens, rows, targets, negatives, pps }))
}

/// Loss of one example; accumulates `∂loss/∂θ` into `grads` when given.
/// Popularity logits are constants and receive no gradient.
pub(crate) fn example_loss(params: &ParameterSet, config: &ModelConfig, ex: &Example, grads: Option<&mut Gradients>) -> Result<f64> {
    let enc = encode(params, config, &ex.tokens)?;
    let emb = params.mat(params.layout.item_emb);
    let hidden = enc.hidden.select(Axis(0), &ex.rows);
    let rows = ex.rows.len();

    let (value, d_h, grads) = match config.loss {
        LossKind::Ce => {
            let mut scores = hidden.dot(&emb.t());
            if let Some(p) = &ex.pps {
                scores += p;
            }
            let l = ce_loss(scores.view(), &ex.targets)?;
            let Some(grads) = grads else { return Ok(l.value) };
            let mut ge = grads.mat(params.layout.item_emb);
            general_mat_mul(1.0, &l.grad.t(), &hidden, 1.0, &mut ge);
            (l.value, l.grad.dot(&emb), grads)
        }
        LossKind::Bce | LossKind::Gbce => {
            let k = config.negatives_per_positive;
            let candidates = |r: usize| std::iter::once(ex.targets[r]).chain(ex.negatives[r].iter().copied());
            let mut cand = Array2::zeros((rows, 1 + k));
            for r in 0..rows {
                let h = hidden.row(r);
                for (c, item) in candidates(r).enumerate() {
                    let prior = ex.pps.as_ref().map_or(0.0, |p| p[[r, item]]);
                    cand[[r, c]] = h.dot(&emb.row(item)) + prior;
                }
            }
            let positives = vec![0; rows];
            let negs: Vec<Vec<usize>> = vec![(1..=k).collect(); rows];
            let l = if config.loss == LossKind::Bce {
                bce_loss(cand.view(), &positives, &negs)?
            } else {
                gbce_loss(cand.view(), &positives, &negs, config.beta)?
            };
            let Some(grads) = grads else { return Ok(l.value) };
            let mut d_h = Array2::zeros((rows, config.embed_dim));
            let mut ge = grads.mat(params.layout.item_emb);
            for r in 0..rows {
                for (c, item) in candidates(r).enumerate() {
                    let g = l.grad[[r, c]];
                    d_h.row_mut(r).scaled_add(g, &emb.row(item));
                    ge.row_mut(item).scaled_add(g, &hidden.row(r));
                }
            }
            (l.value, d_h, grads)
        }
    };
    let mut full = Array2::zeros(enc.hidden.raw_dim());
    for (r, &pos) in ex.rows.iter().enumerate() {
        full.row_mut(pos).assign(&d_h.row(r));
    }
    backward(params, config, &enc, &full, grads);
    Ok(value)
}

fn sgd_step(params: &mut ParameterSet, grads: &Gradients, lr: f64, wd: f64) {
    for (w, g) in params.values.iter_mut().zip(&grads.values) {
        *w -= lr * (g + wd * *w);
    }
}

/// What happened during training.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainReport {
    pub epochs_run: usize,
    /// Mean training loss per epoch.
    pub losses: Vec<f64>,
    /// Validation NDCG@10 per epoch; empty without validation users.
    pub validation_ndcg: Vec<f64>,
    /// Epoch whose parameters were kept (0 = initial parameters).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains a scorer on `train_log`, early-stopping on `validation` scored from
/// the training histories. An empty `validation` disables early stopping.
pub fn train(train_log: &EventLog, config: &ModelConfig, validation: &LabeledGroundTruth) -> Result<NeuralScorer> {
    train_with_report(train_log, config, validation).map(|(s, _)| s)
}

pub fn train_with_report(
    train_log: &EventLog,
    config: &ModelConfig,
    validation: &LabeledGroundTruth,
) -> Result<(NeuralScorer, TrainReport)> {
    config.validate()?;
    if train_log.is_empty() {
        return Err(Error::invalid("training log is empty"));
    }
    let n = train_log.catalog().len();
    let mut params = ParameterSet::init(config, n)?;
    let users: Vec<UserId> = train_log.users().cloned().collect();
    let histories: Vec<Vec<usize>> = users.iter().map(|u| train_log.user_items(u)).collect();
    let validation_users = validation.keys().filter(|u| train_log.user_events(u).next().is_some()).count();
    let validate = |p: &ParameterSet| -> Result<f64> {
        let scorer = NeuralScorer::new("validation", config.clone(), p.clone())?;
        let eval = evaluate_users(&scorer, validation, |u| train_log.user_items(u), &[VALIDATION_CUTOFF], Gain::Exponential)?;
        if eval.per_user.is_empty() {
            return Ok(0.0);
        }
        eval.mean(VALIDATION_CUTOFF)
    };

    let mut report = TrainReport::default();
    let use_validation = validation_users > 0 && config.max_epochs > 0;
    let mut best = if use_validation { Some((validate(&params)?, params.values.clone())) } else { None };
    let mut since_best = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ TRAIN_STREAM);
    let mut grads = Gradients::zeros_like(&params);
    let mut order: Vec<usize> = (0..users.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut count = 0usize;
        for &u in &order {
            let Some(ex) = build_example(&histories[u], n, config, &mut rng)? else { continue };
            grads.clear();
            let loss = example_loss(&params, config, &ex, Some(&mut grads))?;
            if !loss.is_finite() {
                return Err(Error::Training { epoch, message: format!("non-finite loss for user {}", users[u]) });
            }
            sgd_step(&mut params, &grads, config.learning_rate, config.weight_decay);
            total += loss;
            count += 1;
        }
        if !params.is_finite() {
            return Err(Error::Training { epoch, message: "parameters diverged".into() });
        }
        if count == 0 {
            return Err(Error::Training { epoch, message: "no user has enough history to supervise".into() });
        }
        report.losses.push(total / count as f64);
        report.epochs_run = epoch;

        if let Some((best_score, best_values)) = best.as_mut() {
            let score = validate(&params)?;
            report.validation_ndcg.push(score);
            if score > *best_score {
                *best_score = score;
                best_values.clone_from(&params.values);
                report.best_epoch = epoch;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= config.early_stop_patience {
                    report.stopped_early = epoch < config.max_epochs;
                    break;
                }
            }
        } else {
            report.best_epoch = epoch;
        }
    }
    if let Some((_, values)) = best {
        params.values = values;
    }
    Ok((NeuralScorer::new(default_name(config), config.clone(), params)?, report))
}

/// Mean loss over every user's example with the given parameters, using a
/// fresh generator seeded like the training stream.
pub fn training_loss(params: &ParameterSet, train_log: &EventLog, config: &ModelConfig) -> Result<f64> {
    let n = train_log.catalog().len();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ TRAIN_STREAM);
    let mut total = 0.0;
    let mut count = 0usize;
    for u in train_log.users() {
        if let Some(ex) = build_example(&train_log.user_items(u), n, config, &mut rng)? {
            total += example_loss(params, config, &ex, None)?;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("no user has enough history to supervise"));
    }
    Ok(total / count as f64)
}

fn default_name(config: &ModelConfig) -> String {
    let base = match (config.direction, config.loss) {
        (Direction::MaskedBidirectional, LossKind::Ce) => "bert4rec",
        (Direction::Unidirectional, LossKind::Bce) => "sasrec",
        (Direction::Unidirectional, LossKind::Gbce) => "gsasrec",
        (Direction::Unidirectional, LossKind::Ce) => "sasrec-ce",
        (Direction::MaskedBidirectional, LossKind::Bce) => "bert4rec-bce",
        (Direction::MaskedBidirectional, LossKind::Gbce) => "bert4rec-gbce",
    };
    if config.pps_mode().is_some() {
        format!("{base}+pps")
    } else {
        base.to_owned()
    }
}

/// A neural next-item scorer, optionally combined with popularity logits
/// computed from the whole history it is given.
#[derive(Clone, Debug)]
pub struct NeuralScorer {
    name: String,
    config: ModelConfig,
    params: ParameterSet,
}

impl NeuralScorer {
    pub fn new(name: impl Into<String>, config: ModelConfig, params: ParameterSet) -> Result<Self> {
        config.validate()?;
        if !params.matches(&config) {
            return Err(Error::invalid("parameter layout does not match the model configuration"));
        }
        Ok(NeuralScorer { name: name.into(), config, params })
    }

    /// A freshly initialized, untrained scorer.
    pub fn untrained(config: ModelConfig, items: usize) -> Result<Self> {
        let params = ParameterSet::init(&config, items)?;
        NeuralScorer::new(default_name(&config), config, params)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }

    fn input_tokens(&self, items: &[usize]) -> Vec<Token> {
        match self.config.direction {
            Direction::Unidirectional => {
                items[items.len().saturating_sub(self.config.l_max)..].iter().map(|&i| Token::Item(i)).collect()
            }
            Direction::MaskedBidirectional => {
                let keep = self.config.l_max - 1;
                let mut t: Vec<Token> = items[items.len().saturating_sub(keep)..].iter().map(|&i| Token::Item(i)).collect();
                t.push(Token::Mask);
                t
            }
        }
    }
}

impl Scorer for NeuralScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn head(&self) -> Option<PpsMode> {
        Some(self.config.head())
    }

    fn catalog_size(&self) -> usize {
        self.params.items()
    }

    fn score(&self, history: &UserSequence) -> Result<Vec<f64>> {
        let n = self.params.items();
        let mut scores = forward_last(&self.params, &self.config, &self.input_tokens(&history.items))?;
        if let Some(mode) = self.config.pps_mode() {
            let prior = pps_logits(&counts_vector(&history.items, n)?, self.config.epsilon, mode)?;
            for (s, p) in scores.iter_mut().zip(prior.values()) {
                *s += p;
            }
        }
        Ok(scores)
    }
}
