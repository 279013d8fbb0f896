//! Self-attention building blocks shared by the generator and the
//! discriminators: positional embedding sum, scaled dot-product attention
//! with optional causal and padding masks, multi-head wrapping, and the
//! position-wise feed-forward network.

use rand::Rng;

use crate::autodiff::{Parameterized, Tape, Tensor, ValueId};
use crate::error::{Error, Result};

/// Hyperparameters of an attention stack.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionConfig {
    /// Embedding width d.
    pub dim: usize,
    /// Head count h; must divide `dim`.
    pub heads: usize,
    /// Number of stacked blocks.
    pub blocks: usize,
    /// Fixed window length n.
    pub window: usize,
    /// Causal (uni-directional) attention.
    pub causal: bool,
    pub dropout: f32,
    /// Residual branches are always on; this toggles the layer norms.
    pub layer_norm: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.heads == 0 || self.dim % self.heads != 0 {
            return Err(Error::contract(format!(
                "dim {} must be a positive multiple of heads {}",
                self.dim, self.heads
            )));
        }
        if self.window == 0 {
            return Err(Error::contract("window must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// Per-head query/key/value projections, each `d × d/h`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query: Tensor,
    pub key: Tensor,
    pub value: Tensor,
}

/// Learned gain/shift of one layer norm.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gain: Tensor,
    pub bias: Tensor,
}

impl LayerNormParams {
    fn identity(dim: usize) -> Self {
        LayerNormParams { gain: Tensor::full(vec![dim], 1.0), bias: Tensor::zeros(vec![dim]) }
    }
}

/// Weights of one attention block: heads, output projection, feed-forward,
/// and the optional per-sub-layer norms. Weights are not shared across
/// blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub heads: Vec<HeadParams>,
    pub output_proj: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub norm_attn: Option<LayerNormParams>,
    pub norm_ffn: Option<LayerNormParams>,
}

impl BlockParams {
    /// Scaled-uniform init in `[-1/sqrt(d), 1/sqrt(d)]`; norms start as the
    /// identity. The feed-forward hidden width equals `d`.
    pub fn init(config: &AttentionConfig, rng: &mut impl Rng) -> Self {
        let d = config.dim;
        let hd = config.head_dim();
        let bound = 1.0 / (d as f32).sqrt();
        let mut mat = |shape: Vec<usize>| Tensor::uniform(shape, -bound, bound, rng);
        let heads = (0..config.heads)
            .map(|_| HeadParams {
                query: mat(vec![d, hd]),
                key: mat(vec![d, hd]),
                value: mat(vec![d, hd]),
            })
            .collect();
        BlockParams {
            heads,
            output_proj: mat(vec![d, d]),
            ffn_w1: mat(vec![d, d]),
            ffn_b1: Tensor::zeros(vec![d]),
            ffn_w2: mat(vec![d, d]),
            ffn_b2: Tensor::zeros(vec![d]),
            norm_attn: config.layer_norm.then(|| LayerNormParams::identity(d)),
            norm_ffn: config.layer_norm.then(|| LayerNormParams::identity(d)),
        }
    }

    pub fn for_each_param_prefixed(
        &self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &Tensor),
    ) {
        for (i, h) in self.heads.iter().enumerate() {
            f(&format!("{prefix}.head{i}.query"), &h.query);
            f(&format!("{prefix}.head{i}.key"), &h.key);
            f(&format!("{prefix}.head{i}.value"), &h.value);
        }
        f(&format!("{prefix}.attn_out"), &self.output_proj);
        f(&format!("{prefix}.ffn_w1"), &self.ffn_w1);
        f(&format!("{prefix}.ffn_b1"), &self.ffn_b1);
        f(&format!("{prefix}.ffn_w2"), &self.ffn_w2);
        f(&format!("{prefix}.ffn_b2"), &self.ffn_b2);
        if let Some(n) = &self.norm_attn {
            f(&format!("{prefix}.norm_attn.gain"), &n.gain);
            f(&format!("{prefix}.norm_attn.bias"), &n.bias);
        }
        if let Some(n) = &self.norm_ffn {
            f(&format!("{prefix}.norm_ffn.gain"), &n.gain);
            f(&format!("{prefix}.norm_ffn.bias"), &n.bias);
        }
    }

    pub fn for_each_param_mut_prefixed(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor),
    ) {
        for (i, h) in self.heads.iter_mut().enumerate() {
            f(&format!("{prefix}.head{i}.query"), &mut h.query);
            f(&format!("{prefix}.head{i}.key"), &mut h.key);
            f(&format!("{prefix}.head{i}.value"), &mut h.value);
        }
        f(&format!("{prefix}.attn_out"), &mut self.output_proj);
        f(&format!("{prefix}.ffn_w1"), &mut self.ffn_w1);
        f(&format!("{prefix}.ffn_b1"), &mut self.ffn_b1);
        f(&format!("{prefix}.ffn_w2"), &mut self.ffn_w2);
        f(&format!("{prefix}.ffn_b2"), &mut self.ffn_b2);
        if let Some(n) = &mut self.norm_attn {
            f(&format!("{prefix}.norm_attn.gain"), &mut n.gain);
            f(&format!("{prefix}.norm_attn.bias"), &mut n.bias);
        }
        if let Some(n) = &mut self.norm_ffn {
            f(&format!("{prefix}.norm_ffn.gain"), &mut n.gain);
            f(&format!("{prefix}.norm_ffn.bias"), &mut n.bias);
        }
    }

    /// Register every weight on a tape under `prefix`.
    pub fn register(&self, tape: &mut Tape, prefix: &str) -> BlockVars {
        let heads = self
            .heads
            .iter()
            .enumerate()
            .map(|(i, h)| HeadVars {
                query: tape.param(&format!("{prefix}.head{i}.query"), &h.query),
                key: tape.param(&format!("{prefix}.head{i}.key"), &h.key),
                value: tape.param(&format!("{prefix}.head{i}.value"), &h.value),
            })
            .collect();
        let norm = |tape: &mut Tape, n: &Option<LayerNormParams>, which: &str| {
            n.as_ref().map(|n| {
                (
                    tape.param(&format!("{prefix}.{which}.gain"), &n.gain),
                    tape.param(&format!("{prefix}.{which}.bias"), &n.bias),
                )
            })
        };
        BlockVars {
            heads,
            output_proj: tape.param(&format!("{prefix}.attn_out"), &self.output_proj),
            ffn_w1: tape.param(&format!("{prefix}.ffn_w1"), &self.ffn_w1),
            ffn_b1: tape.param(&format!("{prefix}.ffn_b1"), &self.ffn_b1),
            ffn_w2: tape.param(&format!("{prefix}.ffn_w2"), &self.ffn_w2),
            ffn_b2: tape.param(&format!("{prefix}.ffn_b2"), &self.ffn_b2),
            norm_attn: norm(tape, &self.norm_attn, "norm_attn"),
            norm_ffn: norm(tape, &self.norm_ffn, "norm_ffn"),
        }
    }
}

/// Tape handles for one block's registered weights.
pub struct HeadVars {
    pub query: ValueId,
    pub key: ValueId,
    pub value: ValueId,
}

pub struct BlockVars {
    pub heads: Vec<HeadVars>,
    pub output_proj: ValueId,
    pub ffn_w1: ValueId,
    pub ffn_b1: ValueId,
    pub ffn_w2: ValueId,
    pub ffn_b2: ValueId,
    pub norm_attn: Option<(ValueId, ValueId)>,
    pub norm_ffn: Option<(ValueId, ValueId)>,
}

/// Flattened n×n attention mask; `true` forbids query row i attending to
/// key column j.
#[derive(Clone, Debug)]
pub struct AttentionMask {
    n: usize,
    masked: Vec<bool>,
}

impl AttentionMask {
    /// Combine the causal triangle (key position after query position) with
    /// key padding (`pad[j]` true for padding slots).
    pub fn build(n: usize, causal: bool, pad: &[bool]) -> Self {
        assert_eq!(pad.len(), n);
        let mut masked = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                masked[i * n + j] = (causal && j > i) || pad[j];
            }
        }
        AttentionMask { n, masked }
    }

    pub fn none(n: usize) -> Self {
        AttentionMask { n, masked: vec![false; n * n] }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.masked
    }

    pub fn is_all_clear(&self) -> bool {
        self.masked.iter().all(|&m| !m)
    }
}

/// `E + P`: item/factor embeddings plus positional encodings.
pub fn positional_sum(tape: &mut Tape, embed: ValueId, positions: ValueId) -> Result<ValueId> {
    tape.add(embed, positions)
}

/// `softmax(QKᵀ/√d_head + mask) · V` for one head.
pub fn scaled_dot_attention_masked(
    tape: &mut Tape,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    mask: &AttentionMask,
) -> Result<ValueId> {
    let head_dim = tape.value(q).cols();
    if tape.value(q).rows() != mask.n {
        return Err(Error::shape(format!(
            "attention rows {} vs mask {}",
            tape.value(q).rows(),
            mask.n
        )));
    }
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scaled = tape.scale(scores, 1.0 / (head_dim as f32).sqrt());
    let masked = if mask.is_all_clear() {
        scaled
    } else {
        tape.masked_fill(scaled, mask.as_slice())?
    };
    let probs = tape.softmax_rows(masked)?;
    tape.matmul(probs, v)
}

/// Convenience wrapper building the plain causal (or unmasked) triangle.
pub fn scaled_dot_attention(
    tape: &mut Tape,
    q: ValueId,
    k: ValueId,
    v: ValueId,
    causal: bool,
) -> Result<ValueId> {
    let n = tape.value(q).rows();
    let mask = AttentionMask::build(n, causal, &vec![false; n]);
    scaled_dot_attention_masked(tape, q, k, v, &mask)
}

/// Concatenated per-head attention followed by the output projection.
pub fn multi_head_attention(
    tape: &mut Tape,
    input: ValueId,
    block: &BlockVars,
    mask: &AttentionMask,
) -> Result<ValueId> {
    let mut head_outputs = Vec::with_capacity(block.heads.len());
    for head in &block.heads {
        let q = tape.matmul(input, head.query)?;
        let k = tape.matmul(input, head.key)?;
        let v = tape.matmul(input, head.value)?;
        head_outputs.push(scaled_dot_attention_masked(tape, q, k, v, mask)?);
    }
    let concat = tape.concat_cols(&head_outputs)?;
    tape.matmul(concat, block.output_proj)
}

/// Position-wise feed-forward: `max(0, xW1 + b1)W2 + b2` per row.
pub fn pffn(tape: &mut Tape, input: ValueId, block: &BlockVars) -> Result<ValueId> {
    let h = tape.matmul(input, block.ffn_w1)?;
    let h = tape.add_bias(h, block.ffn_b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, block.ffn_w2)?;
    tape.add_bias(out, block.ffn_b2)
}

/// One block: attention sub-layer and feed-forward sub-layer, each wrapped
/// as `norm(x + dropout(sublayer(x)))` with the norm switchable.
pub fn block_forward(
    tape: &mut Tape,
    input: ValueId,
    block: &BlockVars,
    mask: &AttentionMask,
    dropout: f32,
) -> Result<ValueId> {
    let attn = multi_head_attention(tape, input, block, mask)?;
    let attn = tape.dropout(attn, dropout)?;
    let mut x = tape.add(input, attn)?;
    if let Some((gain, bias)) = block.norm_attn {
        x = tape.layer_norm_rows(x, gain, bias)?;
    }
    let ff = pffn(tape, x, block)?;
    let ff = tape.dropout(ff, dropout)?;
    let mut out = tape.add(x, ff)?;
    if let Some((gain, bias)) = block.norm_ffn {
        out = tape.layer_norm_rows(out, gain, bias)?;
    }
    Ok(out)
}

/// A free-standing stack of blocks with its parameter naming, reused by the
/// generator and each discriminator.
pub fn stack_forward(
    tape: &mut Tape,
    mut x: ValueId,
    blocks: &[BlockParams],
    prefix: &str,
    mask: &AttentionMask,
    dropout: f32,
) -> Result<ValueId> {
    for (l, block) in blocks.iter().enumerate() {
        let vars = block.register(tape, &format!("{prefix}block{l}"));
        x = block_forward(tape, x, &vars, mask, dropout)?;
    }
    Ok(x)
}

/// Helper used in tests and by models: a standalone Parameterized wrapper
/// over a slice of blocks.
pub struct BlockStack(pub Vec<BlockParams>);

impl Parameterized for BlockStack {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (l, b) in self.0.iter().enumerate() {
            b.for_each_param_prefixed(&format!("block{l}"), f);
        }
    }
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (l, b) in self.0.iter_mut().enumerate() {
            b.for_each_param_mut_prefixed(&format!("block{l}"), f);
        }
    }
}
