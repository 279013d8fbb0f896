//! Factor-specific evaluation components. Each discriminator embeds a
//! sequence through one factor's bin table, runs a single (by default
//! bidirectional) attention block, and maps the last position through a
//! small MLP to a rationality score in (0,1). Discriminators never share
//! parameters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{positional_sum, stack_forward, AttentionConfig, AttentionMask, BlockParams};
use crate::autodiff::{Parameterized, Tape, Tensor, ValueId};
use crate::error::{Error, Result};

/// What kind of item context a factor carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FactorKind {
    Categorical,
    Numeric,
    /// The item id itself, one bin per item.
    ItemId,
}

/// Declaration of one factor.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorSpec {
    pub name: String,
    pub kind: FactorKind,
    /// Requested bin count (numeric factors only).
    pub bins: usize,
}

/// A total mapping from dense item ids to factor bins.
///
/// `map[0] = 0` is the padding bin; real bins are `1..=bins`, where the last
/// bin is reserved for unknown/missing values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FactorTable {
    pub name: String,
    bins: usize,
    map: Vec<usize>,
}

impl FactorTable {
    /// Build from zero-based bin assignments per item id (index 0 = pad,
    /// `None` = unknown). `value_bins` is the number of real value bins.
    pub fn new(name: &str, assignments: &[Option<usize>], value_bins: usize) -> Result<Self> {
        let bins = value_bins + 1; // final bin id is the unknown bin
        let mut map = Vec::with_capacity(assignments.len());
        map.push(0);
        for (item, a) in assignments.iter().enumerate().skip(1) {
            let bin = match a {
                Some(b) if *b < value_bins => b + 1,
                Some(b) => {
                    return Err(Error::index(format!(
                        "factor {name}: item {item} bin {b} >= {value_bins}"
                    )))
                }
                None => bins,
            };
            map.push(bin);
        }
        if assignments.is_empty() || assignments[0].is_some() {
            return Err(Error::contract(format!(
                "factor {name}: assignments must start with the padding slot"
            )));
        }
        Ok(FactorTable { name: name.to_string(), bins, map })
    }

    /// The identity table over item ids (the item-id factor).
    pub fn item_identity(name: &str, items: usize) -> Self {
        FactorTable {
            name: name.to_string(),
            bins: items + 1,
            map: (0..=items).collect(),
        }
    }

    /// Rebuild from a serialized bin map (`map[0]` must be the padding bin).
    pub fn from_bin_map(name: &str, bins: usize, map: Vec<usize>) -> Result<Self> {
        if map.is_empty() || map[0] != 0 {
            return Err(Error::Data(format!("factor {name}: bin map must start with pad 0")));
        }
        if let Some(&bad) = map.iter().skip(1).find(|&&b| b == 0 || b > bins) {
            return Err(Error::Data(format!("factor {name}: bin {bad} outside 1..={bins}")));
        }
        Ok(FactorTable { name: name.to_string(), bins, map })
    }

    /// Bin count including the reserved unknown bin.
    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn items(&self) -> usize {
        self.map.len() - 1
    }

    /// Bin id of an item (0 only for the padding id).
    pub fn bin_of_item(&self, item: usize) -> Result<usize> {
        self.map
            .get(item)
            .copied()
            .ok_or_else(|| Error::Data(format!("factor {}: item {item} unmapped", self.name)))
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }
}

/// Discriminator hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorConfig {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub dropout: f32,
    pub layer_norm: bool,
    /// The uni-directional variant masks future positions like the
    /// generator; the default bidirectional form sees the whole sequence.
    pub causal: bool,
}

impl DiscriminatorConfig {
    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            dim: self.dim,
            heads: self.heads,
            blocks: 1,
            window: self.window,
            causal: self.causal,
            dropout: self.dropout,
            layer_norm: self.layer_norm,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.attention().validate()
    }

    fn mlp_hidden(&self) -> usize {
        (self.dim / 2).max(1)
    }
}

/// Trainable state of one discriminator: per-factor bin embeddings (several
/// only in the all-factors-concatenated variant, which then also carries the
/// projection back to width d), its own positional encodings, exactly one
/// attention block, and the scoring MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub factor_embeds: Vec<Tensor>,
    pub input_proj: Option<Tensor>,
    pub pos_embed: Tensor,
    pub block: BlockParams,
    pub mlp_hidden_w: Tensor,
    pub mlp_hidden_b: Tensor,
    pub mlp_out_w: Tensor,
    pub mlp_out_b: Tensor,
}

impl Parameterized for DiscriminatorParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (j, e) in self.factor_embeds.iter().enumerate() {
            f(&format!("factor{j}.embed"), e);
        }
        if let Some(p) = &self.input_proj {
            f("input_proj", p);
        }
        f("pos_embed", &self.pos_embed);
        self.block.for_each_param_prefixed("block", f);
        f("mlp.hidden_w", &self.mlp_hidden_w);
        f("mlp.hidden_b", &self.mlp_hidden_b);
        f("mlp.out_w", &self.mlp_out_w);
        f("mlp.out_b", &self.mlp_out_b);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (j, e) in self.factor_embeds.iter_mut().enumerate() {
            f(&format!("factor{j}.embed"), e);
        }
        if let Some(p) = &mut self.input_proj {
            f("input_proj", p);
        }
        f("pos_embed", &mut self.pos_embed);
        self.block.for_each_param_mut_prefixed("block", f);
        f("mlp.hidden_w", &mut self.mlp_hidden_w);
        f("mlp.hidden_b", &mut self.mlp_hidden_b);
        f("mlp.out_w", &mut self.mlp_out_w);
        f("mlp.out_b", &mut self.mlp_out_b);
    }
}

/// Deterministic init. One embedding table per factor table; several tables
/// imply the concatenation variant and add the `m·d → d` projection.
pub fn init_discriminator(
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
    seed: u64,
) -> Result<DiscriminatorParams> {
    config.validate()?;
    if tables.is_empty() {
        return Err(Error::contract("discriminator needs at least one factor"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.dim;
    let bound = 1.0 / (d as f32).sqrt();
    let factor_embeds: Vec<Tensor> = tables
        .iter()
        .map(|t| Tensor::uniform(vec![t.bins() + 1, d], -bound, bound, &mut rng))
        .collect();
    let input_proj = (tables.len() > 1)
        .then(|| Tensor::uniform(vec![tables.len() * d, d], -bound, bound, &mut rng));
    let pos_embed = Tensor::uniform(vec![config.window, d], -bound, bound, &mut rng);
    let block = BlockParams::init(&config.attention(), &mut rng);
    let hidden = config.mlp_hidden();
    Ok(DiscriminatorParams {
        factor_embeds,
        input_proj,
        pos_embed,
        block,
        mlp_hidden_w: Tensor::uniform(vec![d, hidden], -bound, bound, &mut rng),
        mlp_hidden_b: Tensor::zeros(vec![hidden]),
        mlp_out_w: Tensor::uniform(vec![hidden, 1], -bound, bound, &mut rng),
        mlp_out_b: Tensor::zeros(vec![1]),
    })
}

/// A rationality score: the probability-like judgment that the sequence came
/// from real data. Strictly inside (0,1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RationalityScore(f64);

impl RationalityScore {
    /// Squash a logit; the result is clamped inside the open interval so
    /// that extreme logits never round to exactly 0 or 1.
    pub fn from_logit(logit: f32) -> Self {
        let p = 1.0 / (1.0 + (-(logit as f64)).exp());
        RationalityScore(p.clamp(f64::MIN_POSITIVE, 1.0 - 1e-12))
    }

    pub fn value(&self) -> f64 {
        self.0
    }
}

fn check_window(window: &[usize], tables: &[FactorTable], config: &DiscriminatorConfig) -> Result<()> {
    if window.len() != config.window {
        return Err(Error::shape(format!(
            "window length {} != configured {}",
            window.len(),
            config.window
        )));
    }
    for t in tables {
        for &item in window {
            t.bin_of_item(item)?;
        }
    }
    Ok(())
}

/// Per-position factor-bin embeddings plus positional encodings
/// (`E_D = C + P`). Pad positions embed each table's pad row.
pub fn factor_sequence_embed(
    tape: &mut Tape,
    params: &DiscriminatorParams,
    window: &[usize],
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
) -> Result<ValueId> {
    check_window(window, tables, config)?;
    if tables.len() != params.factor_embeds.len() {
        return Err(Error::contract(format!(
            "{} factor tables vs {} embedding tables",
            tables.len(),
            params.factor_embeds.len()
        )));
    }
    let mut parts = Vec::with_capacity(tables.len());
    for (j, table) in tables.iter().enumerate() {
        let bins: Vec<usize> = window
            .iter()
            .map(|&item| table.bin_of_item(item))
            .collect::<Result<_>>()?;
        let embed = tape.param(&format!("factor{j}.embed"), &params.factor_embeds[j]);
        parts.push(tape.lookup(embed, &bins)?);
    }
    let factors = if parts.len() == 1 {
        parts[0]
    } else {
        let concat = tape.concat_cols(&parts)?;
        let proj = params
            .input_proj
            .as_ref()
            .ok_or_else(|| Error::contract("multi-factor discriminator missing projection"))?;
        let proj = tape.param("input_proj", proj);
        tape.matmul(concat, proj)?
    };
    let positions = tape.param("pos_embed", &params.pos_embed);
    positional_sum(tape, factors, positions)
}

/// Block output for a window: `H = PFFN(MultiHeadAtt(E_D))` with padding
/// keys masked (and the causal triangle too in the uni-directional variant).
fn block_hidden(
    tape: &mut Tape,
    params: &DiscriminatorParams,
    window: &[usize],
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
) -> Result<ValueId> {
    let embedded = factor_sequence_embed(tape, params, window, tables, config)?;
    let pad: Vec<bool> = window.iter().map(|&id| id == 0).collect();
    let mask = AttentionMask::build(config.window, config.causal, &pad);
    stack_forward(
        tape,
        embedded,
        std::slice::from_ref(&params.block),
        "",
        &mask,
        config.dropout,
    )
}

/// MLP head applied to one position's hidden row, producing the pre-sigmoid
/// logit as a `[1×1]` tape value.
fn mlp_logit(
    tape: &mut Tape,
    params: &DiscriminatorParams,
    hidden: ValueId,
    position: usize,
) -> Result<ValueId> {
    let row = tape.slice_rows(hidden, position, 1)?;
    let w1 = tape.param("mlp.hidden_w", &params.mlp_hidden_w);
    let b1 = tape.param("mlp.hidden_b", &params.mlp_hidden_b);
    let w2 = tape.param("mlp.out_w", &params.mlp_out_w);
    let b2 = tape.param("mlp.out_b", &params.mlp_out_b);
    let h = tape.matmul(row, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.relu(h);
    let out = tape.matmul(h, w2)?;
    tape.add_bias(out, b2)
}

/// Index of the last real (non-pad) position of a window.
fn last_real_index(window: &[usize]) -> Result<usize> {
    window
        .iter()
        .rposition(|&id| id != 0)
        .ok_or_else(|| Error::contract("window holds no real items"))
}

/// Pre-sigmoid rationality logit of a window, read at the last real
/// position. The training losses work on this directly for stability.
pub fn rationality_logit(
    tape: &mut Tape,
    params: &DiscriminatorParams,
    window: &[usize],
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
) -> Result<ValueId> {
    let position = last_real_index(window)?;
    let hidden = block_hidden(tape, params, window, tables, config)?;
    mlp_logit(tape, params, hidden, position)
}

/// Pre-sigmoid logit read at an arbitrary position (prefix-invariance checks
/// for the uni-directional variant).
pub fn rationality_logit_at(
    tape: &mut Tape,
    params: &DiscriminatorParams,
    window: &[usize],
    position: usize,
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
) -> Result<ValueId> {
    if position >= config.window {
        return Err(Error::index(format!("position {position} outside window")));
    }
    let hidden = block_hidden(tape, params, window, tables, config)?;
    mlp_logit(tape, params, hidden, position)
}

/// Rationality score of a window in evaluation mode.
pub fn rationality_score(
    params: &DiscriminatorParams,
    window: &[usize],
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
) -> Result<RationalityScore> {
    let mut tape = Tape::inference();
    let logit = rationality_logit(&mut tape, params, window, tables, config)?;
    Ok(RationalityScore::from_logit(tape.value(logit).item()))
}

/// Binary cross-entropy with real label 1 and fake label 0, formed as the
/// sum of the two expectation terms (each a batch mean):
/// `-E_real[log D] - E_fake[log(1 - D)]`.
pub fn discriminator_loss(
    tape: &mut Tape,
    params: &DiscriminatorParams,
    real_batch: &[Vec<usize>],
    fake_batch: &[Vec<usize>],
    tables: &[FactorTable],
    config: &DiscriminatorConfig,
) -> Result<ValueId> {
    if real_batch.is_empty() || fake_batch.is_empty() {
        return Err(Error::contract("discriminator loss needs non-empty batches"));
    }
    let mut real_term: Option<ValueId> = None;
    for window in real_batch {
        let logit = rationality_logit(tape, params, window, tables, config)?;
        let log_p = tape.log_sigmoid(logit);
        real_term = Some(match real_term {
            Some(acc) => tape.add(acc, log_p)?,
            None => log_p,
        });
    }
    let mut fake_term: Option<ValueId> = None;
    for window in fake_batch {
        let logit = rationality_logit(tape, params, window, tables, config)?;
        let neg = tape.scale(logit, -1.0);
        let log_1mp = tape.log_sigmoid(neg); // log(1 - σ(z)) = log σ(-z)
        fake_term = Some(match fake_term {
            Some(acc) => tape.add(acc, log_1mp)?,
            None => log_1mp,
        });
    }
    let real_mean = tape.scale(real_term.unwrap(), -1.0 / real_batch.len() as f32);
    let fake_mean = tape.scale(fake_term.unwrap(), -1.0 / fake_batch.len() as f32);
    tape.add(real_mean, fake_mean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_config() -> DiscriminatorConfig {
        DiscriminatorConfig {
            dim: 8,
            heads: 2,
            window: 5,
            dropout: 0.0,
            layer_norm: true,
            causal: false,
        }
    }

    fn id_table(items: usize) -> Vec<FactorTable> {
        vec![FactorTable::item_identity("item_id", items)]
    }

    #[test]
    fn identity_table_maps_items_to_their_own_bins() {
        let t = FactorTable::item_identity("item_id", 6);
        assert_eq!(t.bin_of_item(0).unwrap(), 0);
        assert_eq!(t.bin_of_item(4).unwrap(), 4);
        assert_eq!(t.bins(), 7);
    }

    #[test]
    fn unknown_values_fall_into_reserved_bin() {
        // 3 items: item 1 in bin 0, item 2 unknown, item 3 in bin 1
        let t = FactorTable::new("genre", &[None, Some(0), None, Some(1)], 2).unwrap();
        assert_eq!(t.bins(), 3);
        assert_eq!(t.bin_of_item(1).unwrap(), 1);
        assert_eq!(t.bin_of_item(2).unwrap(), 3); // unknown bin
        assert_eq!(t.bin_of_item(3).unwrap(), 2);
        assert!(t.bin_of_item(9).is_err());
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = toy_config();
        let a = init_discriminator(&id_table(10), &cfg, 5).unwrap();
        let b = init_discriminator(&id_table(10), &cfg, 5).unwrap();
        assert_eq!(a, b);
        let c = init_discriminator(&id_table(10), &cfg, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn single_factor_has_no_projection_but_concatenation_does() {
        let cfg = toy_config();
        let single = init_discriminator(&id_table(10), &cfg, 1).unwrap();
        assert!(single.input_proj.is_none());

        let tables = vec![
            FactorTable::item_identity("item_id", 10),
            FactorTable::new("cat", &[None, Some(0), Some(1), Some(0), Some(1), Some(0), Some(1), Some(0), Some(1), Some(0), Some(1)], 2).unwrap(),
        ];
        let multi = init_discriminator(&tables, &cfg, 1).unwrap();
        let proj = multi.input_proj.as_ref().expect("projection present");
        assert_eq!(proj.shape(), &[2 * cfg.dim, cfg.dim]);
    }

    #[test]
    fn shared_bin_embeds_identically_across_positions() {
        // all items in one bin: every non-pad embedded row equals that bin's
        // embedding plus the position row
        let cfg = toy_config();
        let assignments: Vec<Option<usize>> =
            std::iter::once(None).chain((1..=9).map(|_| Some(0))).collect();
        let tables = vec![FactorTable::new("const", &assignments, 1).unwrap()];
        let params = init_discriminator(&tables, &cfg, 3).unwrap();
        let window = [0, 0, 3, 8, 1];
        let mut tape = Tape::inference();
        let embedded =
            factor_sequence_embed(&mut tape, &params, &window, &tables, &cfg).unwrap();
        let bin_row = 1usize; // all real items share bin 1
        for pos in 2..5 {
            for j in 0..cfg.dim {
                let want = params.factor_embeds[0].at2(bin_row, j) + params.pos_embed.at2(pos, j);
                assert_abs_diff_eq!(tape.value(embedded).at2(pos, j), want, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn lookup_oracle_equality_with_zero_positions() {
        let mut cfg = toy_config();
        cfg.layer_norm = false;
        let tables = id_table(6);
        let mut params = init_discriminator(&tables, &cfg, 4).unwrap();
        params.pos_embed = Tensor::zeros(vec![cfg.window, cfg.dim]);
        let window = [0, 2, 5, 1, 6];
        let mut tape = Tape::inference();
        let embedded =
            factor_sequence_embed(&mut tape, &params, &window, &tables, &cfg).unwrap();
        for (pos, &item) in window.iter().enumerate() {
            for j in 0..cfg.dim {
                assert_eq!(
                    tape.value(embedded).at2(pos, j),
                    params.factor_embeds[0].at2(item, j),
                    "loop-oracle lookup at pos {pos}"
                );
            }
        }
    }

    #[test]
    fn pad_positions_embed_pad_row_regardless_of_factors() {
        let cfg = toy_config();
        let tables = id_table(9);
        let params = init_discriminator(&tables, &cfg, 7).unwrap();
        let w1 = [0, 0, 3, 8, 1];
        let w2 = [0, 0, 9, 8, 1]; // different real item at position 2
        let embed = |w: &[usize]| {
            let mut tape = Tape::inference();
            let e = factor_sequence_embed(&mut tape, &params, w, &tables, &cfg).unwrap();
            tape.value(e).clone()
        };
        let (e1, e2) = (embed(&w1), embed(&w2));
        assert_eq!(e1.row(0), e2.row(0));
        assert_eq!(e1.row(1), e2.row(1));
        assert_ne!(e1.row(2), e2.row(2));
    }

    #[test]
    fn zero_mlp_scores_exactly_half() {
        let cfg = toy_config();
        let tables = id_table(10);
        let mut params = init_discriminator(&tables, &cfg, 9).unwrap();
        params.mlp_out_w = Tensor::zeros(vec![cfg.mlp_hidden(), 1]);
        params.mlp_out_b = Tensor::zeros(vec![1]);
        let score = rationality_score(&params, &[0, 0, 2, 5, 7], &tables, &cfg).unwrap();
        assert_eq!(score.value(), 0.5);
    }

    #[test]
    fn score_strictly_inside_unit_interval() {
        let cfg = toy_config();
        let tables = id_table(10);
        let mut params = init_discriminator(&tables, &cfg, 10).unwrap();
        // enormous output bias drives the sigmoid toward saturation
        params.mlp_out_b = Tensor::new(vec![1], vec![75.0]).unwrap();
        let hi = rationality_score(&params, &[0, 0, 2, 5, 7], &tables, &cfg).unwrap();
        assert!(hi.value() < 1.0 && hi.value() > 0.5);
        params.mlp_out_b = Tensor::new(vec![1], vec![-75.0]).unwrap();
        let lo = rationality_score(&params, &[0, 0, 2, 5, 7], &tables, &cfg).unwrap();
        assert!(lo.value() > 0.0 && lo.value() < 0.5);
    }

    #[test]
    fn bidirectional_score_reacts_to_early_positions() {
        let cfg = toy_config();
        let tables = id_table(10);
        let params = init_discriminator(&tables, &cfg, 11).unwrap();
        let a = rationality_score(&params, &[1, 2, 3, 4, 5], &tables, &cfg).unwrap();
        let b = rationality_score(&params, &[9, 2, 3, 4, 5], &tables, &cfg).unwrap();
        assert_ne!(a.value(), b.value(), "first-position change must move the score");
    }

    #[test]
    fn unidirectional_variant_restores_prefix_invariance() {
        let mut cfg = toy_config();
        cfg.causal = true;
        let tables = id_table(10);
        let params = init_discriminator(&tables, &cfg, 12).unwrap();
        let read_at_2 = |w: &[usize]| {
            let mut tape = Tape::inference();
            let logit = rationality_logit_at(&mut tape, &params, w, 2, &tables, &cfg).unwrap();
            tape.value(logit).item()
        };
        let base = read_at_2(&[1, 2, 3, 4, 5]);
        let moved = read_at_2(&[1, 2, 3, 9, 8]);
        assert_eq!(base.to_bits(), moved.to_bits());

        // while the bidirectional form does depend on the future
        let mut bidir = cfg.clone();
        bidir.causal = false;
        let params = init_discriminator(&tables, &bidir, 12).unwrap();
        let read_at_2 = |w: &[usize]| {
            let mut tape = Tape::inference();
            let logit = rationality_logit_at(&mut tape, &params, w, 2, &tables, &bidir).unwrap();
            tape.value(logit).item()
        };
        assert_ne!(read_at_2(&[1, 2, 3, 4, 5]), read_at_2(&[1, 2, 3, 9, 8]));
    }

    #[test]
    fn indifferent_scores_cost_two_log_two() {
        let cfg = toy_config();
        let tables = id_table(10);
        let mut params = init_discriminator(&tables, &cfg, 13).unwrap();
        params.mlp_out_w = Tensor::zeros(vec![cfg.mlp_hidden(), 1]);
        params.mlp_out_b = Tensor::zeros(vec![1]);
        let real = vec![vec![0, 0, 1, 2, 3], vec![0, 1, 2, 3, 4]];
        let fake = vec![vec![0, 0, 1, 2, 9], vec![0, 1, 2, 3, 8]];
        let mut tape = Tape::inference();
        let loss =
            discriminator_loss(&mut tape, &params, &real, &fake, &tables, &cfg).unwrap();
        assert_abs_diff_eq!(tape.value(loss).item(), 2.0 * (2.0f32).ln(), epsilon = 1e-4);
    }

    #[test]
    fn near_perfect_scores_cost_vanishes() {
        // build a discriminator that reads the last item's embedding straight
        // through: real windows end in item 3 (score 1-eps), fakes in item 9
        // (score eps); the two-term loss must then be below 2*eps*(1+eps)
        let mut cfg = toy_config();
        cfg.layer_norm = false;
        let tables = id_table(9);
        let mut params = init_discriminator(&tables, &cfg, 14).unwrap();
        params.block = BlockParams {
            heads: params
                .block
                .heads
                .iter()
                .map(|_| crate::attention::HeadParams {
                    query: Tensor::zeros(vec![cfg.dim, cfg.dim / cfg.heads]),
                    key: Tensor::zeros(vec![cfg.dim, cfg.dim / cfg.heads]),
                    value: Tensor::zeros(vec![cfg.dim, cfg.dim / cfg.heads]),
                })
                .collect(),
            output_proj: Tensor::zeros(vec![cfg.dim, cfg.dim]),
            ffn_w1: Tensor::zeros(vec![cfg.dim, cfg.dim]),
            ffn_b1: Tensor::zeros(vec![cfg.dim]),
            ffn_w2: Tensor::zeros(vec![cfg.dim, cfg.dim]),
            ffn_b2: Tensor::zeros(vec![cfg.dim]),
            norm_attn: None,
            norm_ffn: None,
        };
        params.pos_embed = Tensor::zeros(vec![cfg.window, cfg.dim]);
        params.factor_embeds[0] = Tensor::zeros(vec![tables[0].bins() + 1, cfg.dim]);
        params.factor_embeds[0].data_mut()[3 * cfg.dim] = 1.0; // item 3 -> +e0
        params.factor_embeds[0].data_mut()[9 * cfg.dim] = -1.0; // item 9 -> -e0
        // h0 = relu(x0), h1 = relu(-x0); logit = L*(h0 - h1) = L*x0
        let eps = 1e-3f64;
        let strength = ((1.0 - eps) / eps).ln() as f32;
        params.mlp_hidden_w = Tensor::zeros(vec![cfg.dim, cfg.mlp_hidden()]);
        params.mlp_hidden_w.data_mut()[0] = 1.0;
        params.mlp_hidden_w.data_mut()[1] = -1.0;
        params.mlp_hidden_b = Tensor::zeros(vec![cfg.mlp_hidden()]);
        params.mlp_out_w = Tensor::zeros(vec![cfg.mlp_hidden(), 1]);
        params.mlp_out_w.data_mut()[0] = strength;
        params.mlp_out_w.data_mut()[1] = -strength;
        params.mlp_out_b = Tensor::zeros(vec![1]);

        let real = vec![vec![0, 0, 1, 2, 3]];
        let fake = vec![vec![0, 0, 1, 2, 9]];
        assert_abs_diff_eq!(
            rationality_score(&params, &real[0], &tables, &cfg).unwrap().value(),
            1.0 - eps,
            epsilon = 1e-6
        );
        let mut tape = Tape::inference();
        let loss =
            discriminator_loss(&mut tape, &params, &real, &fake, &tables, &cfg).unwrap();
        let loss = tape.value(loss).item() as f64;
        assert!(loss < 2.0 * eps * 1.01, "loss {loss} vs 2*eps = {}", 2.0 * eps);
    }

    #[test]
    fn empty_batch_rejected() {
        let cfg = toy_config();
        let tables = id_table(4);
        let params = init_discriminator(&tables, &cfg, 15).unwrap();
        let mut tape = Tape::inference();
        assert!(matches!(
            discriminator_loss(&mut tape, &params, &[], &[vec![0, 0, 1, 2, 3]], &tables, &cfg),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn unmapped_item_is_a_data_error() {
        let cfg = toy_config();
        let tables = id_table(4);
        let params = init_discriminator(&tables, &cfg, 16).unwrap();
        let mut tape = Tape::inference();
        assert!(matches!(
            factor_sequence_embed(&mut tape, &params, &[0, 0, 1, 2, 77], &tables, &cfg),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn independence_between_discriminators() {
        let cfg = toy_config();
        let tables = id_table(10);
        let a = init_discriminator(&tables, &cfg, 20).unwrap();
        let mut b = init_discriminator(&tables, &cfg, 21).unwrap();
        let window = [0, 0, 2, 5, 7];
        let before = rationality_score(&a, &window, &tables, &cfg).unwrap();
        // training/updating b must not move a
        for v in b.mlp_out_b.data_mut() {
            *v += 3.0;
        }
        let after = rationality_score(&a, &window, &tables, &cfg).unwrap();
        assert_eq!(before.value().to_bits(), after.value().to_bits());
    }
}
