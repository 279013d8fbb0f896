//! The prediction component: stacked causal attention blocks over item and
//! position embeddings, emitting a next-item distribution at every position.
//! Item embeddings are tied between the input layer and the prediction layer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{positional_sum, stack_forward, AttentionConfig, AttentionMask, BlockParams};
use crate::autodiff::{Parameterized, Tape, Tensor, ValueId};
use crate::data::window_pad;
use crate::error::{Error, Result};

/// Generator hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorConfig {
    /// Real item count `|I|`; dense ids run 1..=items, 0 is padding.
    pub items: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub window: usize,
    pub dropout: f32,
    pub layer_norm: bool,
}

impl GeneratorConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            dim: self.dim,
            heads: self.heads,
            blocks: self.blocks,
            window: self.window,
            causal: true,
            dropout: self.dropout,
            layer_norm: self.layer_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.items == 0 {
            return Err(Error::contract("generator needs at least one item"));
        }
        self.attention().validate()
    }
}

/// Trainable generator state: tied item embeddings (row 0 reserved for
/// padding), learned positional encodings, and the block stack.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub item_embed: Tensor,
    pub pos_embed: Tensor,
    pub blocks: Vec<BlockParams>,
}

impl Parameterized for GeneratorParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("item_embed", &self.item_embed);
        f("pos_embed", &self.pos_embed);
        for (l, b) in self.blocks.iter().enumerate() {
            b.for_each_param_prefixed(&format!("block{l}"), f);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("item_embed", &mut self.item_embed);
        f("pos_embed", &mut self.pos_embed);
        for (l, b) in self.blocks.iter_mut().enumerate() {
            b.for_each_param_mut_prefixed(&format!("block{l}"), f);
        }
    }
}

/// Deterministic scaled-uniform initialization.
pub fn init_generator(config: &GeneratorConfig, seed: u64) -> Result<GeneratorParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 1.0 / (config.dim as f32).sqrt();
    let attention = config.attention();
    Ok(GeneratorParams {
        item_embed: Tensor::uniform(vec![config.items + 1, config.dim], -bound, bound, &mut rng),
        pos_embed: Tensor::uniform(vec![config.window, config.dim], -bound, bound, &mut rng),
        blocks: (0..config.blocks)
            .map(|_| BlockParams::init(&attention, &mut rng))
            .collect(),
    })
}

fn check_window(window: &[usize], config: &GeneratorConfig) -> Result<()> {
    if window.len() != config.window {
        return Err(Error::shape(format!(
            "window length {} != configured {}",
            window.len(),
            config.window
        )));
    }
    if let Some(&bad) = window.iter().find(|&&id| id > config.items) {
        return Err(Error::index(format!("item id {bad} > |I| = {}", config.items)));
    }
    Ok(())
}

/// Index of the first non-padding slot, if any.
fn first_real(window: &[usize]) -> Option<usize> {
    window.iter().position(|&id| id != 0)
}

/// Full teacher-forced forward pass: returns `[n × |I|]` logits where row t
/// scores the item at position t+1 given the (causally masked) prefix.
pub fn forward_all_positions(
    tape: &mut Tape,
    params: &GeneratorParams,
    window: &[usize],
    config: &GeneratorConfig,
) -> Result<ValueId> {
    check_window(window, config)?;
    let pad: Vec<bool> = window.iter().map(|&id| id == 0).collect();
    let table = tape.param("item_embed", &params.item_embed);
    let embedded = tape.lookup(table, window)?;
    let positions = tape.param("pos_embed", &params.pos_embed);
    let x = positional_sum(tape, embedded, positions)?;
    let mask = AttentionMask::build(config.window, true, &pad);
    let hidden = stack_forward(tape, x, &params.blocks, "", &mask, config.dropout)?;
    // tied prediction weights: rows 1..=|I| of the same embedding table
    let real_rows = tape.slice_rows(table, 1, config.items)?;
    let prediction = tape.transpose(real_rows)?;
    tape.matmul(hidden, prediction)
}

/// A next-item probability vector over real items; index `i` holds the
/// probability of item id `i + 1`.
#[derive(Clone, Debug)]
pub struct DistributionVector {
    probs: Vec<f32>,
}

impl DistributionVector {
    /// Normalize a logits row into a distribution (stable f64 softmax).
    pub fn from_logits(logits: &[f32]) -> Self {
        let max = logits.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b)) as f64;
        let exps: Vec<f64> = logits.iter().map(|&v| ((v as f64) - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        DistributionVector { probs: exps.iter().map(|&e| (e / denom) as f32).collect() }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Probability of a real item id (>= 1).
    pub fn prob(&self, item_id: usize) -> f32 {
        self.probs[item_id - 1]
    }

    pub fn probs(&self) -> &[f32] {
        &self.probs
    }

    /// Item id with the highest probability (lowest id wins ties).
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best + 1
    }

    /// Draw an item id by inverse-cdf sampling.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        sample_index(&self.probs, rng) + 1
    }
}

/// Inverse-cdf draw from unnormalized nonnegative weights; returns an index.
pub(crate) fn sample_index(weights: &[f32], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().map(|&w| w as f64).sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0f64;
    for (i, &w) in weights.iter().enumerate() {
        acc += w as f64;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// A non-empty item prefix, windowed to the configured length.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prefix {
    window: Vec<usize>,
}

impl Prefix {
    /// Window the most recent items of a raw prefix. Errors when no real
    /// item remains.
    pub fn new(items: &[usize], window_len: usize) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::contract("empty prefix"));
        }
        if items.contains(&0) {
            return Err(Error::index("prefix contains the padding id 0"));
        }
        Ok(Prefix { window: window_pad(items, window_len) })
    }

    pub fn window(&self) -> &[usize] {
        &self.window
    }

    /// Index of the row whose logits predict the next item.
    pub fn last_index(&self) -> usize {
        self.window.len() - 1
    }
}

/// Next-item distribution at the last real position of the prefix.
pub fn next_item_distribution(
    params: &GeneratorParams,
    prefix: &Prefix,
    config: &GeneratorConfig,
) -> Result<DistributionVector> {
    let mut tape = Tape::inference();
    let logits = forward_all_positions(&mut tape, params, prefix.window(), config)?;
    Ok(DistributionVector::from_logits(tape.value(logits).row(prefix.last_index())))
}

/// Draw the next item from the generator policy.
pub fn sample_next(
    params: &GeneratorParams,
    prefix: &Prefix,
    config: &GeneratorConfig,
    rng: &mut impl Rng,
) -> Result<usize> {
    Ok(next_item_distribution(params, prefix, config)?.sample(rng))
}

/// Teacher-forced MLE loss on one padded window: the mean over real target
/// positions of `-log G(i_{t+1} | i_{1:t})`. Padding targets are excluded.
pub fn mle_loss(
    tape: &mut Tape,
    params: &GeneratorParams,
    window: &[usize],
    config: &GeneratorConfig,
) -> Result<ValueId> {
    check_window(window, config)?;
    let start = first_real(window)
        .ok_or_else(|| Error::contract("window holds no real items"))?;
    if window.len() - start < 2 {
        return Err(Error::contract("MLE loss needs at least 2 real items"));
    }
    let logits = forward_all_positions(tape, params, window, config)?;
    let log_probs = tape.log_softmax_rows(logits)?;
    let coords: Vec<(usize, usize)> = (start..window.len() - 1)
        .map(|j| (j, window[j + 1] - 1))
        .collect();
    let picked = tape.select_entries(log_probs, &coords)?;
    let mean = tape.mean(picked);
    Ok(tape.scale(mean, -1.0))
}
