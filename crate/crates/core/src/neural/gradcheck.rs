//! Central finite-difference check of the analytic gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use super::params::{Gradients, ParameterSet};
use super::train::{build_example, example_loss};
use crate::error::{Error, Result};

const STEP: f64 = 1e-5;
/// Entries whose analytic and numeric gradients are both below this are
/// treated as vanishing.
const VANISHING: f64 = 1e-7;
const MAX_ITEMS: usize = 20;
const MAX_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_parameter: Option<String>,
    pub checked: usize,
    /// Parameters whose gradient vanished on both sides.
    pub skipped: usize,
}

/// Compares the gradient of the configured loss on `seq` against central
/// differences for every parameter. Masking and negatives are drawn from a
/// generator seeded with `config.seed`.
pub fn gradient_check(params: &ParameterSet, seq: &[usize], config: &ModelConfig, tolerance: f64) -> Result<GradCheckReport> {
    config.validate()?;
    let n = params.items();
    if n > MAX_ITEMS || config.embed_dim > MAX_DIM {
        return Err(Error::invalid(format!(
            "gradient check needs a tiny model (N ≤ {MAX_ITEMS}, d ≤ {MAX_DIM}), got N = {n}, d = {}",
            config.embed_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let ex = build_example(seq, n, config, &mut rng)?.ok_or_else(|| Error::invalid("sequence too short to supervise"))?;

    let mut grads = Gradients::zeros_like(params);
    example_loss(params, config, &ex, Some(&mut grads))?;
    if grads.values.iter().any(|g| !g.is_finite()) {
        return Err(Error::GradientCheck { parameter: "non-finite analytic gradient".into(), rel_error: f64::INFINITY });
    }

    let mut probe = params.clone();
    let mut report = GradCheckReport { max_rel_error: 0.0, worst_parameter: None, checked: 0, skipped: 0 };
    for i in 0..params.len() {
        let orig = probe.values[i];
        probe.values[i] = orig + STEP;
        let up = example_loss(&probe, config, &ex, None)?;
        probe.values[i] = orig - STEP;
        let down = example_loss(&probe, config, &ex, None)?;
        probe.values[i] = orig;

        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads.values[i];
        let scale = analytic.abs().max(numeric.abs());
        if scale < VANISHING {
            report.skipped += 1;
            continue;
        }
        report.checked += 1;
        let rel = (analytic - numeric).abs() / scale;
        if rel.is_nan() || rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_parameter = Some(params.layout.describe(i));
        }
    }
    if report.max_rel_error.is_nan() || report.max_rel_error >= tolerance {
        return Err(Error::GradientCheck {
            parameter: report.worst_parameter.unwrap_or_default(),
            rel_error: report.max_rel_error,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::config::{Direction, LossKind};

    fn tiny(direction: Direction, loss: LossKind) -> ModelConfig {
        let mut c = ModelConfig::new(direction, loss);
        c.embed_dim = 4;
        c.heads = 2;
        c.l_max = 6;
        c.negatives_per_positive = 3;
        c.seed = 5;
        c
    }

    #[test]
    fn ce_on_small_catalog() {
        let c = tiny(Direction::Unidirectional, LossKind::Ce);
        let p = ParameterSet::init(&c, 5).unwrap();
        let r = gradient_check(&p, &[0, 1, 2, 1, 4, 3, 1], &c, 1e-4).unwrap();
        assert!(r.checked > 0);
    }

    #[test]
    fn zero_parameters_pass() {
        let c = tiny(Direction::MaskedBidirectional, LossKind::Gbce);
        let p = ParameterSet::zeros(&c, 5).unwrap();
        gradient_check(&p, &[0, 1, 2, 3], &c, 1e-4).unwrap();
    }

    #[test]
    fn oversized_models_rejected() {
        let mut c = tiny(Direction::Unidirectional, LossKind::Ce);
        let p = ParameterSet::init(&c, 21).unwrap();
        assert!(gradient_check(&p, &[0, 1], &c, 1e-4).is_err());
        c.embed_dim = 16;
        let p = ParameterSet::init(&c, 5).unwrap();
        assert!(gradient_check(&p, &[0, 1], &c, 1e-4).is_err());
    }
}
