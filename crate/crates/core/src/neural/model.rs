//! Forward and backward passes of the attention encoder.
//!
//! Per block (pre-norm): `x += MHA(LN₁(x))`, then `x += W₂·gelu(W₁·LN₂(x) + b₁) + b₂`.
//! A final layer norm yields the hidden states `H`, and the scores are
//! `H·Eᵀ` with `E` the item embedding table.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::config::{Direction, ModelConfig};
use super::params::{Gradients, ParameterSet};
use crate::error::{Error, Result};

/// Logits, one row per input position and one column per catalog item.
pub type ScoreMatrix = Array2<f64>;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// One encoder input position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Token {
    Item(usize),
    Mask,
}

pub(crate) struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<'_, f64>, bias: ArrayView1<'_, f64>) -> (Array2<f64>, LnCache) {
    let d = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, inv) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / d;
        row -= mean;
        let var = row.iter().map(|v| v * v).sum::<f64>() / d;
        *inv = 1.0 / (var + LN_EPS).sqrt();
        row *= *inv;
    }
    let y = &xhat * &gain + bias;
    (y, LnCache { xhat, inv_std })
}

fn layer_norm_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: ArrayView1<'_, f64>,
    grads: &mut Gradients,
    gain_slot: super::params::Slot,
    bias_slot: super::params::Slot,
) -> Array2<f64> {
    {
        let mut dg = grads.vector(gain_slot);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut db = grads.vector(bias_slot);
        db += &dy.sum_axis(Axis(0));
    }
    let d = dy.ncols() as f64;
    let dxhat = dy * &gain;
    let mut dx = Array2::zeros(dy.raw_dim());
    for i in 0..dy.nrows() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / d;
        let mean_gx = g.dot(&xh) / d;
        let inv = cache.inv_std[i];
        Zip::from(dx.row_mut(i)).and(&g).and(&xh).for_each(|o, &gv, &xv| *o = inv * (gv - mean_g - xv * mean_gx));
    }
    dx
}

fn gelu(z: f64) -> f64 {
    0.5 * z * (1.0 + (GELU_C * (z + GELU_A * z * z * z)).tanh())
}

fn gelu_grad(z: f64) -> f64 {
    let t = (GELU_C * (z + GELU_A * z * z * z)).tanh();
    0.5 * (1.0 + t) + 0.5 * z * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * z * z)
}

pub(crate) struct BlockCache {
    ln1: LnCache,
    a: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    b: Array2<f64>,
    z: Array2<f64>,
    g: Array2<f64>,
}

/// Activations kept from a forward pass for the backward pass.
pub(crate) struct Encoded {
    tokens: Vec<Token>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    pub hidden: Array2<f64>,
}

fn check_tokens(params: &ParameterSet, config: &ModelConfig, tokens: &[Token]) -> Result<()> {
    if !params.matches(config) {
        return Err(Error::invalid("parameter layout does not match the model configuration"));
    }
    if tokens.len() > config.l_max {
        return Err(Error::invalid(format!("sequence length {} exceeds l_max {}", tokens.len(), config.l_max)));
    }
    for t in tokens {
        match *t {
            Token::Item(i) if i >= params.items() => {
                return Err(Error::invalid(format!("item index {i} outside catalog of size {}", params.items())))
            }
            Token::Mask if config.direction == Direction::Unidirectional => {
                return Err(Error::invalid("mask tokens need the masked-bidirectional direction"))
            }
            _ => {}
        }
    }
    Ok(())
}

pub(crate) fn encode(params: &ParameterSet, config: &ModelConfig, tokens: &[Token]) -> Result<Encoded> {
    check_tokens(params, config, tokens)?;
    let layout = &params.layout;
    let len = tokens.len();
    let d = config.embed_dim;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let causal = config.direction == Direction::Unidirectional;

    let item_emb = params.mat(layout.item_emb);
    let pos_emb = params.mat(layout.pos_emb);
    let mask_emb = layout.mask_emb.map(|m| params.mat(m));
    let mut x = Array2::zeros((len, d));
    for (i, t) in tokens.iter().enumerate() {
        let emb = match *t {
            Token::Item(j) => item_emb.row(j),
            Token::Mask => mask_emb.as_ref().expect("masked layout").row(0),
        };
        let mut row = x.row_mut(i);
        row.assign(&emb);
        row += &pos_emb.row(i);
    }

    let mut blocks = Vec::with_capacity(layout.blocks.len());
    for bs in &layout.blocks {
        let (a, ln1) = layer_norm(&x, params.vector(bs.ln1_gain), params.vector(bs.ln1_bias));
        let q = a.dot(&params.mat(bs.wq));
        let k = a.dot(&params.mat(bs.wk));
        let v = a.dot(&params.mat(bs.wv));
        let mut o = Array2::zeros((len, d));
        let mut probs = Vec::with_capacity(config.heads);
        for h in 0..config.heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut sc = q.slice(cols).dot(&k.slice(cols).t());
            for (i, mut row) in sc.rows_mut().into_iter().enumerate() {
                let limit = if causal { i + 1 } else { len };
                let mut max = f64::NEG_INFINITY;
                for v in row.iter_mut().take(limit) {
                    *v *= scale;
                    max = max.max(*v);
                }
                let mut sum = 0.0;
                for (j, v) in row.iter_mut().enumerate() {
                    if j < limit {
                        *v = (*v - max).exp();
                        sum += *v;
                    } else {
                        *v = 0.0;
                    }
                }
                row /= sum;
            }
            o.slice_mut(cols).assign(&sc.dot(&v.slice(cols)));
            probs.push(sc);
        }
        x = &x + &o.dot(&params.mat(bs.wo));

        let (b, ln2) = layer_norm(&x, params.vector(bs.ln2_gain), params.vector(bs.ln2_bias));
        let z = b.dot(&params.mat(bs.w1)) + params.vector(bs.b1);
        let g = z.mapv(gelu);
        x = x + g.dot(&params.mat(bs.w2)) + params.vector(bs.b2);
        blocks.push(BlockCache { ln1, a, q, k, v, probs, o, ln2, b, z, g });
    }

    let (hidden, lnf) = layer_norm(&x, params.vector(layout.lnf_gain), params.vector(layout.lnf_bias));
    Ok(Encoded { tokens: tokens.to_vec(), blocks, lnf, hidden })
}

fn add_product(grads: &mut Gradients, slot: super::params::Slot, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) {
    let mut g = grads.mat(slot);
    general_mat_mul(1.0, &a, &b, 1.0, &mut g);
}

/// Accumulates parameter gradients given `d_hidden = ∂loss/∂H`. The tied
/// output projection's contribution to the item embeddings is handled by the
/// caller.
pub(crate) fn backward(
    params: &ParameterSet,
    config: &ModelConfig,
    enc: &Encoded,
    d_hidden: &Array2<f64>,
    grads: &mut Gradients,
) {
    let layout = &params.layout;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let mut dx = layer_norm_backward(d_hidden, &enc.lnf, params.vector(layout.lnf_gain), grads, layout.lnf_gain, layout.lnf_bias);

    for (bs, cache) in layout.blocks.iter().zip(&enc.blocks).rev() {
        // feed-forward branch
        add_product(grads, bs.w2, cache.g.t(), dx.view());
        {
            let mut db2 = grads.vector(bs.b2);
            db2 += &dx.sum_axis(Axis(0));
        }
        let mut dz = dx.dot(&params.mat(bs.w2).t());
        Zip::from(&mut dz).and(&cache.z).for_each(|d, &z| *d *= gelu_grad(z));
        add_product(grads, bs.w1, cache.b.t(), dz.view());
        {
            let mut db1 = grads.vector(bs.b1);
            db1 += &dz.sum_axis(Axis(0));
        }
        let db = dz.dot(&params.mat(bs.w1).t());
        dx += &layer_norm_backward(&db, &cache.ln2, params.vector(bs.ln2_gain), grads, bs.ln2_gain, bs.ln2_bias);

        // attention branch
        add_product(grads, bs.wo, cache.o.t(), dx.view());
        let d_o = dx.dot(&params.mat(bs.wo).t());
        let mut dq = Array2::zeros(cache.q.raw_dim());
        let mut dk = Array2::zeros(cache.k.raw_dim());
        let mut dv = Array2::zeros(cache.v.raw_dim());
        for (h, p) in cache.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let d_oh = d_o.slice(cols);
            let dp = d_oh.dot(&cache.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&d_oh));
            let mut ds = dp;
            for (mut ds_row, p_row) in ds.rows_mut().into_iter().zip(p.rows()) {
                let inner = ds_row.dot(&p_row);
                Zip::from(&mut ds_row).and(&p_row).for_each(|d, &pv| *d = pv * (*d - inner) * scale);
            }
            dq.slice_mut(cols).assign(&ds.dot(&cache.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&cache.q.slice(cols)));
        }
        add_product(grads, bs.wq, cache.a.t(), dq.view());
        add_product(grads, bs.wk, cache.a.t(), dk.view());
        add_product(grads, bs.wv, cache.a.t(), dv.view());
        let da = dq.dot(&params.mat(bs.wq).t()) + dk.dot(&params.mat(bs.wk).t()) + dv.dot(&params.mat(bs.wv).t());
        dx += &layer_norm_backward(&da, &cache.ln1, params.vector(bs.ln1_gain), grads, bs.ln1_gain, bs.ln1_bias);
    }

    for (i, t) in enc.tokens.iter().enumerate() {
        let row = dx.row(i);
        {
            let mut pe = grads.mat(layout.pos_emb);
            let mut r = pe.row_mut(i);
            r += &row;
        }
        let (slot, idx) = match *t {
            Token::Item(j) => (layout.item_emb, j),
            Token::Mask => (layout.mask_emb.expect("masked layout"), 0),
        };
        let mut m = grads.mat(slot);
        let mut r = m.row_mut(idx);
        r += &row;
    }
}

/// Scores for every input position: `H·Eᵀ`.
pub fn forward(params: &ParameterSet, config: &ModelConfig, tokens: &[Token]) -> Result<ScoreMatrix> {
    let enc = encode(params, config, tokens)?;
    Ok(enc.hidden.dot(&params.mat(params.layout.item_emb).t()))
}

/// Scores for the last input position only.
pub(crate) fn forward_last(params: &ParameterSet, config: &ModelConfig, tokens: &[Token]) -> Result<Vec<f64>> {
    if tokens.is_empty() {
        return Ok(vec![0.0; params.items()]);
    }
    let enc = encode(params, config, tokens)?;
    let last = enc.hidden.row(tokens.len() - 1);
    Ok(params.mat(params.layout.item_emb).dot(&last).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::config::LossKind;

    fn tiny(direction: Direction) -> ModelConfig {
        let mut c = ModelConfig::new(direction, LossKind::Ce);
        c.embed_dim = 4;
        c.heads = 2;
        c.l_max = 8;
        c.seed = 3;
        c
    }

    fn items(v: &[usize]) -> Vec<Token> {
        v.iter().map(|&i| Token::Item(i)).collect()
    }

    #[test]
    fn single_item_shape() {
        let c = tiny(Direction::Unidirectional);
        let p = ParameterSet::init(&c, 7).unwrap();
        let s = forward(&p, &c, &items(&[3])).unwrap();
        assert_eq!(s.dim(), (1, 7));
        assert!(s.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zero_parameters_give_zero_scores() {
        for dir in [Direction::Unidirectional, Direction::MaskedBidirectional] {
            let c = tiny(dir);
            let p = ParameterSet::zeros(&c, 5).unwrap();
            let s = forward(&p, &c, &items(&[0, 1, 2])).unwrap();
            assert!(s.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn causal_rows_ignore_later_items() {
        let c = tiny(Direction::Unidirectional);
        let p = ParameterSet::init(&c, 9).unwrap();
        let a = forward(&p, &c, &items(&[1, 2, 3, 4])).unwrap();
        let b = forward(&p, &c, &items(&[1, 7, 0, 8])).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_ne!(a.row(1), b.row(1));
    }

    #[test]
    fn bidirectional_rows_see_the_whole_sequence() {
        let c = tiny(Direction::MaskedBidirectional);
        let p = ParameterSet::init(&c, 9).unwrap();
        let a = forward(&p, &c, &[Token::Item(1), Token::Mask, Token::Item(3)]).unwrap();
        let b = forward(&p, &c, &[Token::Item(1), Token::Mask, Token::Item(4)]).unwrap();
        assert_ne!(a.row(0), b.row(0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let c = tiny(Direction::Unidirectional);
        let p = ParameterSet::init(&c, 5).unwrap();
        assert!(forward(&p, &c, &items(&[0; 9])).is_err());
        assert!(forward(&p, &c, &items(&[5])).is_err());
        assert!(forward(&p, &c, &[Token::Mask]).is_err());
        let other = tiny(Direction::MaskedBidirectional);
        assert!(forward(&p, &other, &items(&[0])).is_err());
    }

    #[test]
    fn last_row_matches_full_forward() {
        let c = tiny(Direction::MaskedBidirectional);
        let p = ParameterSet::init(&c, 6).unwrap();
        let toks = [Token::Item(1), Token::Item(2), Token::Mask];
        let full = forward(&p, &c, &toks).unwrap();
        let last = forward_last(&p, &c, &toks).unwrap();
        for (a, b) in full.row(2).iter().zip(&last) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
