use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{Direction, ModelConfig};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Init {
    Uniform,
    Ones,
    Zeros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Slot {
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Slot {
    fn len(&self) -> usize {
        self.rows * self.cols
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct BlockSlots {
    pub ln1_gain: Slot,
    pub ln1_bias: Slot,
    pub wq: Slot,
    pub wk: Slot,
    pub wv: Slot,
    pub wo: Slot,
    pub ln2_gain: Slot,
    pub ln2_bias: Slot,
    pub w1: Slot,
    pub b1: Slot,
    pub w2: Slot,
    pub b2: Slot,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub items: usize,
    pub item_emb: Slot,
    pub pos_emb: Slot,
    pub mask_emb: Option<Slot>,
    pub blocks: Vec<BlockSlots>,
    pub lnf_gain: Slot,
    pub lnf_bias: Slot,
    pub total: usize,
    names: Vec<(String, Slot, Init)>,
}

impl Layout {
    pub fn new(config: &ModelConfig, items: usize) -> Self {
        let d = config.embed_dim;
        let f = config.ffn_dim();
        let mut names = Vec::new();
        let mut offset = 0;
        let mut slot = |name: String, rows: usize, cols: usize, init: Init| {
            let s = Slot { offset, rows, cols };
            offset += rows * cols;
            names.push((name, s, init));
            s
        };
        let item_emb = slot("item_emb".into(), items, d, Init::Uniform);
        let pos_emb = slot("pos_emb".into(), config.l_max, d, Init::Uniform);
        let mask_emb =
            (config.direction == Direction::MaskedBidirectional).then(|| slot("mask_emb".into(), 1, d, Init::Uniform));
        let blocks = (0..config.blocks)
            .map(|b| BlockSlots {
                ln1_gain: slot(format!("block{b}.ln1_gain"), 1, d, Init::Ones),
                ln1_bias: slot(format!("block{b}.ln1_bias"), 1, d, Init::Zeros),
                wq: slot(format!("block{b}.wq"), d, d, Init::Uniform),
                wk: slot(format!("block{b}.wk"), d, d, Init::Uniform),
                wv: slot(format!("block{b}.wv"), d, d, Init::Uniform),
                wo: slot(format!("block{b}.wo"), d, d, Init::Uniform),
                ln2_gain: slot(format!("block{b}.ln2_gain"), 1, d, Init::Ones),
                ln2_bias: slot(format!("block{b}.ln2_bias"), 1, d, Init::Zeros),
                w1: slot(format!("block{b}.w1"), d, f, Init::Uniform),
                b1: slot(format!("block{b}.b1"), 1, f, Init::Zeros),
                w2: slot(format!("block{b}.w2"), f, d, Init::Uniform),
                b2: slot(format!("block{b}.b2"), 1, d, Init::Zeros),
            })
            .collect();
        let lnf_gain = slot("final_ln_gain".into(), 1, d, Init::Ones);
        let lnf_bias = slot("final_ln_bias".into(), 1, d, Init::Zeros);
        Layout { items, item_emb, pos_emb, mask_emb, blocks, lnf_gain, lnf_bias, total: offset, names }
    }

    /// Human-readable name of the scalar at flat index `idx`.
    pub fn describe(&self, idx: usize) -> String {
        for (name, slot, _) in &self.names {
            if slot.range().contains(&idx) {
                let local = idx - slot.offset;
                return format!("{name}[{},{}]", local / slot.cols, local % slot.cols);
            }
        }
        format!("#{idx}")
    }
}

/// All trainable weights of the attention scorer, stored contiguously.
///
/// The output projection is tied to the item embeddings.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSet {
    pub(crate) layout: Layout,
    pub(crate) values: Vec<f64>,
}

impl ParameterSet {
    /// Embeddings and projections uniform in `[-0.5/√d, 0.5/√d]`; layer-norm
    /// gains 1; biases 0.
    pub fn init(config: &ModelConfig, items: usize) -> Result<Self> {
        config.validate()?;
        if items == 0 {
            return Err(Error::invalid("catalog is empty"));
        }
        let layout = Layout::new(config, items);
        let bound = 0.5 / (config.embed_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut values = vec![0.0; layout.total];
        for (_, slot, init) in &layout.names {
            for v in &mut values[slot.range()] {
                *v = match init {
                    Init::Uniform => rng.gen_range(-bound..=bound),
                    Init::Ones => 1.0,
                    Init::Zeros => 0.0,
                };
            }
        }
        Ok(ParameterSet { layout, values })
    }

    /// Every parameter set to zero, gains included.
    pub fn zeros(config: &ModelConfig, items: usize) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, items);
        Ok(ParameterSet { values: vec![0.0; layout.total], layout })
    }

    pub fn from_values(config: &ModelConfig, items: usize, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config, items);
        if values.len() != layout.total {
            return Err(Error::invalid(format!("expected {} parameters, found {}", layout.total, values.len())));
        }
        Ok(ParameterSet { layout, values })
    }

    pub fn items(&self) -> usize {
        self.layout.items
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub(crate) fn matches(&self, config: &ModelConfig) -> bool {
        self.layout == Layout::new(config, self.layout.items)
    }

    pub(crate) fn mat(&self, s: Slot) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((s.rows, s.cols), &self.values[s.range()]).expect("slot shape")
    }

    pub(crate) fn vector(&self, s: Slot) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.values[s.range()])
    }
}

/// Gradient buffer with the same layout as a [`ParameterSet`].
pub(crate) struct Gradients {
    pub values: Vec<f64>,
}

impl Gradients {
    pub fn zeros_like(p: &ParameterSet) -> Self {
        Gradients { values: vec![0.0; p.values.len()] }
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mat(&mut self, s: Slot) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((s.rows, s.cols), &mut self.values[s.range()]).expect("slot shape")
    }

    pub fn vector(&mut self, s: Slot) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.values[s.range()])
    }
}
