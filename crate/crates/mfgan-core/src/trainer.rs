//! The full training loop: MLE pretraining of the generator, negative
//! generation, discriminator pretraining, then alternating policy-gradient
//! generator rounds against discriminator rounds, with validation-based
//! best-checkpoint tracking and early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::{GradientSet, Parameterized, Tape, ValueId};
use crate::data::{window_pad, DatasetSplit};
use crate::discriminator::{
    init_discriminator, rationality_score, DiscriminatorConfig, DiscriminatorParams, FactorTable,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, EvalProtocol, EvalSplit, GeneratorScorer};
use crate::generator::{
    forward_all_positions, init_generator, mle_loss, sample_index, DistributionVector,
    GeneratorConfig, GeneratorParams, Prefix,
};
use crate::optimizer::Adam;
use crate::reward::{q_value, LambdaMode};

/// Everything the training loop needs to know.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub lambda: LambdaMode,
    pub learning_rate: f32,
    pub batch_g: usize,
    pub batch_d: usize,
    pub mle_epochs: usize,
    pub d_pretrain_epochs: usize,
    pub adv_rounds: usize,
    pub g_epochs_per_round: usize,
    pub d_epochs_per_round: usize,
    pub early_stop_patience: usize,
    /// Optional mean-reward baseline subtracted from Q (off by default:
    /// the estimator is used raw).
    pub reward_baseline: bool,
    pub seed: u64,
    pub eval_seed: u64,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        if self.generator.window != self.discriminator.window {
            return Err(Error::contract("generator and discriminator window lengths differ"));
        }
        if self.batch_g == 0 || self.batch_d == 0 {
            return Err(Error::contract("batch sizes must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::contract("learning rate must be positive"));
        }
        if self.g_epochs_per_round == 0 || self.d_epochs_per_round == 0 {
            return Err(Error::contract("alternation ratio needs >= 1 epoch per side"));
        }
        Ok(())
    }

    /// Canonical text used for the checkpoint digest.
    pub fn fingerprint_text(&self, tables: &[(String, Vec<usize>)]) -> String {
        let g = &self.generator;
        let d = &self.discriminator;
        let mut text = format!(
            "items={} dim={} heads={} gen_blocks={} window={} dropout={} layer_norm={} \
             d_causal={} lambda={} lr={} batch_g={} batch_d={} mle={} d_pre={} rounds={} \
             g_per={} d_per={} patience={} baseline={} seed={} eval_seed={}",
            g.items,
            g.dim,
            g.heads,
            g.blocks,
            g.window,
            g.dropout,
            g.layer_norm,
            d.causal,
            self.lambda.label(),
            self.learning_rate,
            self.batch_g,
            self.batch_d,
            self.mle_epochs,
            self.d_pretrain_epochs,
            self.adv_rounds,
            self.g_epochs_per_round,
            self.d_epochs_per_round,
            self.early_stop_patience,
            self.reward_baseline,
            self.seed,
            self.eval_seed,
        );
        for (name, bins) in tables {
            text.push_str(&format!(
                " factor:{name}:{}",
                bins.iter().map(|b| b.to_string()).collect::<Vec<_>>().join(",")
            ));
        }
        text
    }
}

/// One factor-specific discriminator with its bin tables (several tables
/// only in the all-factors-concatenated variant).
#[derive(Clone, Debug)]
pub struct FactorDiscriminator {
    pub name: String,
    pub tables: Vec<FactorTable>,
    pub params: DiscriminatorParams,
}

/// Training phases as they appear in the log.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Mle,
    GStep,
    DStep,
    Eval,
}

impl Phase {
    fn label(&self) -> &'static str {
        match self {
            Phase::Mle => "MLE",
            Phase::GStep => "G",
            Phase::DStep => "D",
            Phase::Eval => "EVAL",
        }
    }
}

/// One log record; rendered as a `key=value` line.
#[derive(Clone, Debug)]
pub struct TrainRecord {
    pub phase: Phase,
    pub round: u64,
    pub epoch: u64,
    pub loss: f64,
    pub mean_reward: Option<f64>,
    pub disc_losses: Vec<f64>,
    pub val_ndcg: Option<f64>,
}

impl TrainRecord {
    pub fn render(&self) -> String {
        let mut line = format!("phase={}", self.phase.label());
        if self.round > 0 {
            line.push_str(&format!(" round={}", self.round));
        }
        line.push_str(&format!(" epoch={}", self.epoch));
        match self.phase {
            Phase::GStep => line.push_str(&format!(" objective={:.6}", self.loss)),
            Phase::Eval => {}
            _ => line.push_str(&format!(" loss={:.6}", self.loss)),
        }
        if let Some(r) = self.mean_reward {
            line.push_str(&format!(" mean_reward={r:.6}"));
        }
        for (j, l) in self.disc_losses.iter().enumerate() {
            line.push_str(&format!(" d{j}_loss={l:.6}"));
        }
        if let Some(v) = self.val_ndcg {
            line.push_str(&format!(" val_ndcg10={v:.6}"));
        }
        line
    }
}

/// Progress counters; part of the checkpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counters {
    pub mle_epochs_done: u64,
    pub d_pretrain_epochs_done: u64,
    pub adv_rounds_done: u64,
}

/// Best-validation snapshot of the generator (round 0 = after pretraining).
#[derive(Clone, Debug)]
pub struct BestSnapshot {
    pub params: GeneratorParams,
    pub val_ndcg: f64,
    pub round: u64,
}

/// Negative-generation output: matched t-length real prefixes and their
/// fakes, which differ from the real window only at the final position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NegativePairs {
    pub real: Vec<Vec<usize>>,
    pub fake: Vec<Vec<usize>>,
}

/// Per-round statistics handed to the `adversarial_train` callback.
#[derive(Clone, Debug)]
pub struct RoundStats {
    pub round: u64,
    pub g_objective: f64,
    pub mean_reward: f64,
    pub disc_losses: Vec<f64>,
    pub val_ndcg: f64,
    pub stopped_early: bool,
}

pub struct Trainer {
    pub config: TrainingConfig,
    pub generator: GeneratorParams,
    pub discriminators: Vec<FactorDiscriminator>,
    pub counters: Counters,
    pub best: BestSnapshot,
    pub history: Vec<TrainRecord>,
    adam_gen: Adam,
    adam_disc: Vec<Adam>,
    rng: ChaCha8Rng,
    log_sink: Option<Box<dyn Write + Send>>,
}

/// SplitMix64 mixing for deriving independent init seeds from the master.
pub(crate) fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Padded train windows with at least two real items.
pub fn train_windows(split: &DatasetSplit, window: usize) -> Vec<Vec<usize>> {
    split
        .users
        .iter()
        .filter(|u| u.train.len() >= 2)
        .map(|u| window_pad(&u.train, window))
        .collect()
}

impl Trainer {
    /// Fresh initialization from factor tables (one `FactorDiscriminator`
    /// per entry; an entry with several tables concatenates them).
    pub fn init(
        config: TrainingConfig,
        factor_groups: Vec<(String, Vec<FactorTable>)>,
    ) -> Result<Self> {
        config.validate()?;
        if factor_groups.is_empty() {
            return Err(Error::contract("training needs at least one discriminator"));
        }
        let generator = init_generator(&config.generator, derive_seed(config.seed, 1))?;
        let discriminators = factor_groups
            .into_iter()
            .enumerate()
            .map(|(j, (name, tables))| {
                let params = init_discriminator(
                    &tables,
                    &config.discriminator,
                    derive_seed(config.seed, 100 + j as u64),
                )?;
                Ok(FactorDiscriminator { name, tables, params })
            })
            .collect::<Result<Vec<_>>>()?;
        let adam_disc = discriminators
            .iter()
            .map(|_| Adam::new(config.learning_rate))
            .collect();
        let best = BestSnapshot { params: generator.clone(), val_ndcg: f64::NEG_INFINITY, round: 0 };
        Ok(Trainer {
            adam_gen: Adam::new(config.learning_rate),
            adam_disc,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2)),
            generator,
            discriminators,
            counters: Counters::default(),
            best,
            history: Vec::new(),
            log_sink: None,
            config,
        })
    }

    pub fn set_log_sink(&mut self, sink: Box<dyn Write + Send>) {
        self.log_sink = Some(sink);
    }

    fn record(&mut self, record: TrainRecord) {
        if let Some(sink) = &mut self.log_sink {
            let _ = writeln!(sink, "{}", record.render());
            let _ = sink.flush();
        }
        self.history.push(record);
    }

    /// Mean MLE loss over one shuffled pass; one optimizer step per batch.
    pub fn mle_epoch(&mut self, windows: &[Vec<usize>]) -> Result<f64> {
        if windows.is_empty() {
            return Err(Error::contract("MLE epoch over empty data"));
        }
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut self.rng);
        let mut epoch_loss = 0.0f64;
        for chunk in order.chunks(self.config.batch_g) {
            let mut tape = Tape::training(self.rng.next_u64());
            let mut total: Option<ValueId> = None;
            for &idx in chunk {
                let l = mle_loss(&mut tape, &self.generator, &windows[idx], &self.config.generator)?;
                total = Some(match total {
                    Some(t) => tape.add(t, l)?,
                    None => l,
                });
            }
            let loss = tape.scale(total.unwrap(), 1.0 / chunk.len() as f32);
            let loss_value = tape.scalar_value(loss);
            if !loss_value.is_finite() {
                return Err(Error::contract("non-finite MLE loss"));
            }
            epoch_loss += loss_value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            self.adam_gen.step(&mut self.generator, &grads);
        }
        Ok(epoch_loss / windows.len() as f64)
    }

    /// Algorithm line "Pre-train G using MLE".
    pub fn pretrain_generator(&mut self, windows: &[Vec<usize>]) -> Result<()> {
        for e in 0..self.config.mle_epochs {
            let loss = self.mle_epoch(windows)?;
            self.counters.mle_epochs_done += 1;
            self.record(TrainRecord {
                phase: Phase::Mle,
                round: 0,
                epoch: e as u64 + 1,
                loss,
                mean_reward: None,
                disc_losses: vec![],
                val_ndcg: None,
            });
        }
        Ok(())
    }

    /// Generate matched (real prefix, fake) pairs for discriminator batches.
    pub fn generate_negatives(&mut self, windows: &[Vec<usize>]) -> Result<NegativePairs> {
        let seed = self.rng.next_u64();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate_negatives_with(&self.generator, &self.config.generator, windows, &mut rng)
    }

    /// One optimizer step for every discriminator on a real/fake batch.
    /// Discriminators are parameter-disjoint, so they update in parallel.
    pub fn d_step(&mut self, real: &[Vec<usize>], fake: &[Vec<usize>]) -> Result<Vec<f64>> {
        if real.is_empty() || fake.is_empty() {
            return Err(Error::contract("d_step needs non-empty batches"));
        }
        let seeds: Vec<u64> = (0..self.discriminators.len())
            .map(|_| self.rng.next_u64())
            .collect();
        let disc_config = self.config.discriminator.clone();
        self.discriminators
            .par_iter_mut()
            .zip(self.adam_disc.par_iter_mut())
            .zip(seeds.par_iter())
            .map(|((disc, adam), &seed)| {
                let mut tape = Tape::training(seed);
                let loss = crate::discriminator::discriminator_loss(
                    &mut tape,
                    &disc.params,
                    real,
                    fake,
                    &disc.tables,
                    &disc_config,
                )?;
                let value = tape.scalar_value(loss);
                if !value.is_finite() {
                    return Err(Error::contract("non-finite discriminator loss"));
                }
                let grads = tape.backward(loss)?;
                adam.step(&mut disc.params, &grads);
                Ok(value)
            })
            .collect()
    }

    /// One shuffled pass of discriminator training over the data.
    pub fn d_epoch(&mut self, windows: &[Vec<usize>]) -> Result<Vec<f64>> {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sums = vec![0.0f64; self.discriminators.len()];
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_d) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let pairs = self.generate_negatives(&batch)?;
            let losses = self.d_step(&pairs.real, &pairs.fake)?;
            for (s, l) in sums.iter_mut().zip(&losses) {
                *s += l;
            }
            batches += 1;
        }
        Ok(sums.into_iter().map(|s| s / batches as f64).collect())
    }

    /// Algorithm line "Pre-train D via minimizing cross-entropy"; logs the
    /// post-training real/fake accuracy of every discriminator.
    pub fn pretrain_discriminators(&mut self, windows: &[Vec<usize>]) -> Result<Vec<f64>> {
        for e in 0..self.config.d_pretrain_epochs {
            let losses = self.d_epoch(windows)?;
            self.counters.d_pretrain_epochs_done += 1;
            self.record(TrainRecord {
                phase: Phase::DStep,
                round: 0,
                epoch: e as u64 + 1,
                loss: losses.iter().sum::<f64>() / losses.len() as f64,
                mean_reward: None,
                disc_losses: losses,
                val_ndcg: None,
            });
        }
        self.discriminator_accuracy(windows)
    }

    /// Held-out style accuracy: fresh fakes, score threshold 0.5.
    pub fn discriminator_accuracy(&mut self, windows: &[Vec<usize>]) -> Result<Vec<f64>> {
        let sample: Vec<Vec<usize>> = windows.iter().take(256).cloned().collect();
        let pairs = self.generate_negatives(&sample)?;
        let cfg = &self.config.discriminator;
        let mut accs = Vec::with_capacity(self.discriminators.len());
        for disc in &self.discriminators {
            let mut correct = 0usize;
            for w in &pairs.real {
                if rationality_score(&disc.params, w, &disc.tables, cfg)?.value() > 0.5 {
                    correct += 1;
                }
            }
            for w in &pairs.fake {
                if rationality_score(&disc.params, w, &disc.tables, cfg)?.value() <= 0.5 {
                    correct += 1;
                }
            }
            accs.push(correct as f64 / (pairs.real.len() + pairs.fake.len()) as f64);
        }
        Ok(accs)
    }

    /// One policy-gradient step over a batch of windows. For every real
    /// position: sample an action from the teacher-forced policy, score the
    /// resulting sub-sequence with every discriminator, combine the scores
    /// into Q, and ascend `Q · ∇log G`. Rewards are constants on the tape.
    pub fn g_step(&mut self, batch: &[Vec<usize>]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::contract("g_step over an empty batch"));
        }
        let lambda = self.config.lambda.lambda();
        let gen_cfg = self.config.generator.clone();
        let disc_cfg = self.config.discriminator.clone();
        let mut tape = Tape::training(self.rng.next_u64());

        struct SeqPlan {
            logits: ValueId,
            coords: Vec<(usize, usize)>,
            rewards: Vec<f64>,
        }
        let mut plans = Vec::with_capacity(batch.len());
        let mut all_rewards = Vec::new();
        for window in batch {
            let start = window
                .iter()
                .position(|&id| id != 0)
                .ok_or_else(|| Error::contract("empty window in g_step"))?;
            if window.len() - start < 2 {
                return Err(Error::contract("g_step window needs >= 2 real items"));
            }
            let logits = forward_all_positions(&mut tape, &self.generator, window, &gen_cfg)?;
            let mut coords = Vec::new();
            let mut rewards = Vec::new();
            for j in start..window.len() - 1 {
                let dist = DistributionVector::from_logits(tape.value(logits).row(j));
                let action = sample_index(dist.probs(), &mut self.rng) + 1;
                // the generated sub-sequence {i_1..i_{t-1}, î_t}
                let mut generated: Vec<usize> = window[start..=j].to_vec();
                generated.push(action);
                let padded = window_pad(&generated, disc_cfg.window);
                let scores: Vec<f64> = self
                    .discriminators
                    .iter()
                    .map(|d| {
                        rationality_score(&d.params, &padded, &d.tables, &disc_cfg)
                            .map(|s| s.value())
                    })
                    .collect::<Result<_>>()?;
                let q = q_value(&scores, lambda);
                coords.push((j, action - 1));
                rewards.push(q);
                all_rewards.push(q);
            }
            plans.push(SeqPlan { logits, coords, rewards });
        }

        let positions: usize = plans.iter().map(|p| p.coords.len()).sum();
        let mean_reward = all_rewards.iter().sum::<f64>() / positions as f64;
        let baseline = if self.config.reward_baseline { mean_reward } else { 0.0 };

        let mut total: Option<ValueId> = None;
        for plan in &plans {
            let log_probs = tape.log_softmax_rows(plan.logits)?;
            let picked = tape.select_entries(log_probs, &plan.coords)?;
            let weights: Vec<f32> =
                plan.rewards.iter().map(|&q| (q - baseline) as f32).collect();
            let weighted = tape.dot_const(picked, &weights)?;
            total = Some(match total {
                Some(t) => tape.add(t, weighted)?,
                None => weighted,
            });
        }
        let objective = tape.scale(total.unwrap(), -1.0 / positions as f32);
        let objective_value = tape.scalar_value(objective);
        if !objective_value.is_finite() {
            return Err(Error::contract("non-finite policy objective"));
        }
        let grads = tape.backward(objective)?;
        self.adam_gen.step(&mut self.generator, &grads);
        Ok((objective_value, mean_reward))
    }

    /// One shuffled generator pass; returns (mean objective, mean reward).
    pub fn g_epoch(&mut self, windows: &[Vec<usize>]) -> Result<(f64, f64)> {
        let mut order: Vec<usize> = (0..windows.len()).collect();
        order.shuffle(&mut self.rng);
        let mut obj = 0.0f64;
        let mut reward = 0.0f64;
        let mut batches = 0usize;
        for chunk in order.chunks(self.config.batch_g) {
            let batch: Vec<Vec<usize>> = chunk.iter().map(|&i| windows[i].clone()).collect();
            let (o, r) = self.g_step(&batch)?;
            obj += o;
            reward += r;
            batches += 1;
        }
        Ok((obj / batches as f64, reward / batches as f64))
    }

    /// Validation NDCG@10 of the current generator.
    pub fn validation_ndcg(&self, split: &DatasetSplit) -> Result<f64> {
        let protocol = EvalProtocol {
            negatives: 100,
            cutoff: 10,
            seed: derive_seed(self.config.eval_seed, 3),
        };
        let scorer = GeneratorScorer { params: &self.generator, config: &self.config.generator };
        Ok(evaluate_model(&scorer, split, &protocol, EvalSplit::Validation)?.ndcg10)
    }

    fn consider_best(&mut self, val_ndcg: f64, round: u64) {
        if val_ndcg > self.best.val_ndcg {
            self.best = BestSnapshot { params: self.generator.clone(), val_ndcg, round };
        }
    }

    /// Alternating adversarial rounds: `g_epochs_per_round` generator passes
    /// then `d_epochs_per_round` discriminator passes, with a validation
    /// check per round, best-snapshot tracking (the post-pretraining state
    /// is the round-0 candidate), and patience-based early stop. The
    /// callback fires after each round's checkpointable state is current.
    pub fn adversarial_train(
        &mut self,
        windows: &[Vec<usize>],
        split: &DatasetSplit,
        mut on_round: impl FnMut(&mut Trainer, &RoundStats) -> Result<()>,
    ) -> Result<()> {
        if self.counters.adv_rounds_done == 0 && self.best.val_ndcg == f64::NEG_INFINITY {
            let val = self.validation_ndcg(split)?;
            self.consider_best(val, 0);
            self.record(TrainRecord {
                phase: Phase::Eval,
                round: 0,
                epoch: 0,
                loss: 0.0,
                mean_reward: None,
                disc_losses: vec![],
                val_ndcg: Some(val),
            });
        }
        let first = self.counters.adv_rounds_done + 1;
        for round in first..=self.config.adv_rounds as u64 {
            let mut g_obj = 0.0;
            let mut g_rew = 0.0;
            for e in 0..self.config.g_epochs_per_round {
                let (o, r) = self.g_epoch(windows)?;
                g_obj = o;
                g_rew = r;
                self.record(TrainRecord {
                    phase: Phase::GStep,
                    round,
                    epoch: e as u64 + 1,
                    loss: o,
                    mean_reward: Some(r),
                    disc_losses: vec![],
                    val_ndcg: None,
                });
            }
            let mut d_losses = vec![];
            for e in 0..self.config.d_epochs_per_round {
                let losses = self.d_epoch(windows)?;
                self.record(TrainRecord {
                    phase: Phase::DStep,
                    round,
                    epoch: e as u64 + 1,
                    loss: losses.iter().sum::<f64>() / losses.len() as f64,
                    mean_reward: None,
                    disc_losses: losses.clone(),
                    val_ndcg: None,
                });
                d_losses = losses;
            }
            self.counters.adv_rounds_done = round;
            let val = self.validation_ndcg(split)?;
            self.consider_best(val, round);
            self.record(TrainRecord {
                phase: Phase::Eval,
                round,
                epoch: 0,
                loss: 0.0,
                mean_reward: None,
                disc_losses: vec![],
                val_ndcg: Some(val),
            });
            let stopped = round.saturating_sub(self.best.round)
                >= self.config.early_stop_patience as u64;
            let stats = RoundStats {
                round,
                g_objective: g_obj,
                mean_reward: g_rew,
                disc_losses: d_losses,
                val_ndcg: val,
                stopped_early: stopped,
            };
            on_round(self, &stats)?;
            if stopped {
                break;
            }
        }
        Ok(())
    }

    pub fn rng_state(&self) -> (Vec<u8>, u64, u128) {
        (
            self.rng.get_seed().to_vec(),
            self.rng.get_stream(),
            self.rng.get_word_pos(),
        )
    }

    pub fn restore_rng(&mut self, seed: &[u8], stream: u64, word_pos: u128) -> Result<()> {
        let seed: [u8; 32] = seed
            .try_into()
            .map_err(|_| Error::Checkpoint("rng seed must be 32 bytes".into()))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);
        self.rng = rng;
        Ok(())
    }

    pub fn adam_gen(&self) -> &Adam {
        &self.adam_gen
    }

    pub fn adam_disc(&self) -> &[Adam] {
        &self.adam_disc
    }

    pub fn replace_optimizers(&mut self, gen: Adam, disc: Vec<Adam>) {
        self.adam_gen = gen;
        self.adam_disc = disc;
    }
}

/// Free-standing negative generation (the trainer delegates here): for each
/// window, pick a target position t uniformly over the real positions with a
/// non-empty prefix, emit the true t-length prefix and the fake that swaps
/// the final item for a draw from the generator.
pub fn generate_negatives_with(
    generator: &GeneratorParams,
    config: &GeneratorConfig,
    windows: &[Vec<usize>],
    rng: &mut ChaCha8Rng,
) -> Result<NegativePairs> {
    let mut real = Vec::with_capacity(windows.len());
    let mut fake = Vec::with_capacity(windows.len());
    for window in windows {
        let start = window
            .iter()
            .position(|&id| id != 0)
            .ok_or_else(|| Error::contract("empty window"))?;
        let len = window.len() - start;
        if len < 2 {
            return Err(Error::contract("negative generation needs >= 2 real items"));
        }
        // target index within the window: prefix must hold >= 1 real item
        let target = start + 1 + rng.random_range(0..len - 1);
        let prefix_items = &window[start..target];
        let prefix = Prefix::new(prefix_items, config.window)?;
        let dist_draw = {
            let dist = crate::generator::next_item_distribution(generator, &prefix, config)?;
            dist.sample(rng)
        };
        let mut real_seq = prefix_items.to_vec();
        real_seq.push(window[target]);
        let mut fake_seq = prefix_items.to_vec();
        fake_seq.push(dist_draw);
        real.push(window_pad(&real_seq, config.window));
        fake.push(window_pad(&fake_seq, config.window));
    }
    Ok(NegativePairs { real, fake })
}

/// Exact policy objective and gradient at one state by enumerating every
/// action: `J = Σ_a G(a|s) · Q(s,a)` with the full-catalog sum. The test
/// oracle for the sampled estimator; refuses catalogs above 64 items.
pub fn exact_policy_gradient(
    generator: &GeneratorParams,
    gen_config: &GeneratorConfig,
    discriminators: &[FactorDiscriminator],
    disc_config: &DiscriminatorConfig,
    prefix_items: &[usize],
    lambda: f64,
) -> Result<(GradientSet, f64)> {
    if gen_config.items > 64 {
        return Err(Error::contract(format!(
            "exact enumeration over {} items refused (max 64)",
            gen_config.items
        )));
    }
    let prefix = Prefix::new(prefix_items, gen_config.window)?;
    let rewards: Vec<f32> = (1..=gen_config.items)
        .map(|action| {
            let mut sub = prefix_items.to_vec();
            sub.push(action);
            let padded = window_pad(&sub, disc_config.window);
            let scores: Vec<f64> = discriminators
                .iter()
                .map(|d| {
                    rationality_score(&d.params, &padded, &d.tables, disc_config)
                        .map(|s| s.value())
                })
                .collect::<Result<_>>()?;
            Ok(q_value(&scores, lambda) as f32)
        })
        .collect::<Result<_>>()?;

    let mut tape = Tape::inference();
    let logits = forward_all_positions(&mut tape, generator, prefix.window(), gen_config)?;
    let last = tape.slice_rows(logits, prefix.last_index(), 1)?;
    let probs = tape.softmax_rows(last)?;
    let j_value = tape.dot_const(probs, &rewards)?;
    let j = tape.scalar_value(j_value);
    let grads = tape.backward(j_value)?;
    Ok((grads, j))
}

/// Exact expected reward only (no gradient).
pub fn exact_expected_reward(
    generator: &GeneratorParams,
    gen_config: &GeneratorConfig,
    discriminators: &[FactorDiscriminator],
    disc_config: &DiscriminatorConfig,
    prefix_items: &[usize],
    lambda: f64,
) -> Result<f64> {
    exact_policy_gradient(
        generator,
        gen_config,
        discriminators,
        disc_config,
        prefix_items,
        lambda,
    )
    .map(|(_, j)| j)
}

/// Interactions a generator assigns to each item of a set of windows; used
/// by tests that need bitwise comparisons of parameter state.
pub fn params_digest(params: &dyn Parameterized) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    params.for_each_param(&mut |name, tensor| {
        for b in name.as_bytes() {
            hash = (hash ^ *b as u64).wrapping_mul(0x100000001b3);
        }
        for v in tensor.data() {
            hash = (hash ^ v.to_bits() as u64).wrapping_mul(0x100000001b3);
        }
    });
    hash
}
