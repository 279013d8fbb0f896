//! Ranking evaluation: each test user's held-out positive is ranked against
//! 100 sampled items the user never interacted with; NDCG@10, HR@10 and MRR
//! are averaged over users. Includes the popularity baseline.

use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::autodiff::Tape;
use crate::data::{window_pad, DatasetSplit};
use crate::error::{Error, Result};
use crate::generator::{forward_all_positions, GeneratorConfig, GeneratorParams};

/// The sampled-negatives protocol.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalProtocol {
    pub negatives: usize,
    pub cutoff: usize,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol { negatives: 100, cutoff: 10, seed: 0 }
    }
}

/// Which held-out target to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalSplit {
    Validation,
    Test,
}

/// Scores a candidate set given a prefix. Implementations must be pure.
pub trait Scorer: Sync {
    fn scores(&self, prefix: &[usize], candidates: &[usize]) -> Vec<f32>;
}

/// Per-user evaluation detail.
#[derive(Clone, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub rank: usize,
    pub ndcg: f64,
    pub hr: f64,
    pub rr: f64,
}

/// Aggregated report.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub ndcg10: f64,
    pub hr10: f64,
    pub mrr: f64,
    pub users: usize,
    pub detail: Vec<UserMetrics>,
}

impl MetricsReport {
    /// Machine-readable key=value serialization, one record per line.
    pub fn to_key_value(&self) -> String {
        let mut out = format!(
            "users={} ndcg10={:.6} hr10={:.6} mrr={:.6}\n",
            self.users, self.ndcg10, self.hr10, self.mrr
        );
        for d in &self.detail {
            out.push_str(&format!(
                "user={} rank={} ndcg10={:.6} hr10={} rr={:.6}\n",
                d.user, d.rank, d.ndcg, d.hr as u8, d.rr
            ));
        }
        out
    }

    /// Parse the key=value form back (round-trip checks).
    pub fn parse_key_value(text: &str) -> Result<(f64, f64, f64, usize)> {
        let first = text
            .lines()
            .next()
            .ok_or_else(|| Error::Data("empty metrics report".into()))?;
        let mut users = 0usize;
        let (mut ndcg, mut hr, mut mrr) = (f64::NAN, f64::NAN, f64::NAN);
        for field in first.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::Data(format!("bad metrics field {field:?}")))?;
            match k {
                "users" => users = v.parse().map_err(|_| Error::Data("bad users".into()))?,
                "ndcg10" => ndcg = v.parse().map_err(|_| Error::Data("bad ndcg".into()))?,
                "hr10" => hr = v.parse().map_err(|_| Error::Data("bad hr".into()))?,
                "mrr" => mrr = v.parse().map_err(|_| Error::Data("bad mrr".into()))?,
                _ => {}
            }
        }
        Ok((ndcg, hr, mrr, users))
    }

    /// Human-readable table.
    pub fn to_table(&self, label: &str) -> String {
        format!(
            "{label:<12} users {:>6}   NDCG@10 {:.4}   HR@10 {:.4}   MRR {:.4}\n",
            self.users, self.ndcg10, self.hr10, self.mrr
        )
    }
}

/// Per-user deterministic RNG: one stream per user off the protocol seed.
fn user_rng(seed: u64, user: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);
    rng
}

/// Uniform sample without replacement from the items the user never
/// interacted with. Falls short only when the candidate pool is smaller
/// than `count` (every candidate is then returned).
pub fn sample_negatives(
    catalog: usize,
    interacted: &HashSet<usize>,
    count: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<usize> {
    let eligible: Vec<usize> = (1..=catalog).filter(|id| !interacted.contains(id)).collect();
    if eligible.len() <= count {
        return eligible;
    }
    rand::seq::index::sample(rng, eligible.len(), count)
        .into_iter()
        .map(|i| eligible[i])
        .collect()
}

/// Rank of the positive among the negatives: `1 + #(neg > pos) + #(neg == pos)`.
/// Ties count against the positive.
pub fn rank_of_positive(pos: f32, negs: &[f32]) -> Result<usize> {
    if !pos.is_finite() || negs.iter().any(|s| !s.is_finite()) {
        return Err(Error::contract("non-finite score in ranking"));
    }
    let above = negs.iter().filter(|&&s| s > pos).count();
    let tied = negs.iter().filter(|&&s| s == pos).count();
    Ok(1 + above + tied)
}

/// Single-relevant-item metrics at cutoff `k`:
/// `hr = [rank <= k]`, `ndcg = 1/log2(rank+1)` under the cutoff, `rr = 1/rank`
/// (uncut).
pub fn compute_metrics(rank: usize, k: usize) -> (f64, f64, f64) {
    assert!(rank >= 1);
    let hr = if rank <= k { 1.0 } else { 0.0 };
    let ndcg = if rank <= k {
        1.0 / ((rank + 1) as f64).log2()
    } else {
        0.0
    };
    let rr = 1.0 / rank as f64;
    (ndcg, hr, rr)
}

/// Evaluate a scorer over every user of the chosen split.
pub fn evaluate_model(
    scorer: &dyn Scorer,
    split: &DatasetSplit,
    protocol: &EvalProtocol,
    which: EvalSplit,
) -> Result<MetricsReport> {
    let catalog = split.item_count();
    let detail: Vec<UserMetrics> = split
        .users
        .par_iter()
        .enumerate()
        .map(|(idx, u)| {
            let (prefix, target) = match which {
                EvalSplit::Validation => (u.valid_prefix().to_vec(), u.valid_target),
                EvalSplit::Test => (u.test_prefix(), u.test_target),
            };
            let mut rng = user_rng(protocol.seed, idx);
            let negatives =
                sample_negatives(catalog, &u.interacted(), protocol.negatives, &mut rng);
            let mut candidates = Vec::with_capacity(negatives.len() + 1);
            candidates.push(target);
            candidates.extend_from_slice(&negatives);
            let scores = scorer.scores(&prefix, &candidates);
            let rank = rank_of_positive(scores[0], &scores[1..])?;
            let (ndcg, hr, rr) = compute_metrics(rank, protocol.cutoff);
            Ok(UserMetrics { user: idx, rank, ndcg, hr, rr })
        })
        .collect::<Result<_>>()?;

    let users = detail.len();
    let sum = |f: fn(&UserMetrics) -> f64| detail.iter().map(f).sum::<f64>() / users as f64;
    Ok(MetricsReport {
        ndcg10: sum(|d| d.ndcg),
        hr10: sum(|d| d.hr),
        mrr: sum(|d| d.rr),
        users,
        detail,
    })
}

/// Rank-by-train-popularity baseline: a constant per-item score.
pub struct PopRecScorer {
    counts: Vec<usize>,
}

impl Scorer for PopRecScorer {
    fn scores(&self, _prefix: &[usize], candidates: &[usize]) -> Vec<f32> {
        candidates.iter().map(|&c| self.counts[c] as f32).collect()
    }
}

impl PopRecScorer {
    pub fn counts(&self) -> &[usize] {
        &self.counts
    }
}

/// Build the popularity baseline from the train split.
pub fn poprec_baseline(split: &DatasetSplit) -> PopRecScorer {
    PopRecScorer { counts: split.train_popularity() }
}

/// Scores candidates with the generator's logits at the last real position.
pub struct GeneratorScorer<'a> {
    pub params: &'a GeneratorParams,
    pub config: &'a GeneratorConfig,
}

impl Scorer for GeneratorScorer<'_> {
    fn scores(&self, prefix: &[usize], candidates: &[usize]) -> Vec<f32> {
        let window = window_pad(prefix, self.config.window);
        let mut tape = Tape::inference();
        let logits = forward_all_positions(&mut tape, self.params, &window, self.config)
            .expect("generator forward on evaluation prefix");
        let row = tape.value(logits).row(self.config.window - 1);
        candidates.iter().map(|&c| row[c - 1]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_user_sequences, leave_one_out_split, InteractionRecord};
    use approx::assert_abs_diff_eq;

    fn toy_split(users: usize, items: usize, len: usize) -> DatasetSplit {
        let mut records = Vec::new();
        for u in 0..users {
            for t in 0..len {
                records.push(InteractionRecord {
                    user: format!("u{u:03}"),
                    item: format!("i{:03}", (u * 7 + t * 3) % items),
                    timestamp: t as i64,
                });
            }
        }
        leave_one_out_split(&build_user_sequences(&records)).unwrap()
    }

    #[test]
    fn negatives_are_distinct_and_non_interacted() {
        let interacted: HashSet<usize> = (1..=50).collect();
        let mut rng = user_rng(7, 3);
        let negs = sample_negatives(200, &interacted, 100, &mut rng);
        assert_eq!(negs.len(), 100);
        let distinct: HashSet<_> = negs.iter().collect();
        assert_eq!(distinct.len(), 100);
        assert!(negs.iter().all(|n| !interacted.contains(n)));
    }

    #[test]
    fn negatives_deterministic_per_seed_and_user() {
        let interacted: HashSet<usize> = [3, 9].into_iter().collect();
        let a = sample_negatives(30, &interacted, 10, &mut user_rng(5, 2));
        let b = sample_negatives(30, &interacted, 10, &mut user_rng(5, 2));
        let c = sample_negatives(30, &interacted, 10, &mut user_rng(5, 3));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn insufficient_candidates_returns_all() {
        let interacted: HashSet<usize> = (1..=45).collect();
        let negs = sample_negatives(50, &interacted, 100, &mut user_rng(1, 1));
        assert_eq!(negs, vec![46, 47, 48, 49, 50]);
    }

    #[test]
    fn marginal_inclusion_rate_is_uniform() {
        // catalog 15, 5 interacted, draw 4 of 10 eligible: inclusion 0.4
        let interacted: HashSet<usize> = (1..=5).collect();
        let reps = 10_000usize;
        let mut counts = vec![0usize; 16];
        for r in 0..reps {
            for n in sample_negatives(15, &interacted, 4, &mut user_rng(r as u64, 0)) {
                counts[n] += 1;
            }
        }
        let p = 0.4f64;
        let sigma = (p * (1.0 - p) / reps as f64).sqrt();
        for id in 6..=15 {
            let freq = counts[id] as f64 / reps as f64;
            assert!(
                (freq - p).abs() < 3.0 * sigma,
                "item {id}: inclusion {freq} outside 3 sigma"
            );
        }
    }

    #[test]
    fn rank_rules() {
        assert_eq!(rank_of_positive(0.9, &[0.1, 0.5]).unwrap(), 1);
        assert_eq!(rank_of_positive(0.5, &[0.9, 0.1]).unwrap(), 2);
        // pessimistic ties: 3 tied negatives, none above
        assert_eq!(rank_of_positive(0.5, &[0.5, 0.5, 0.5, 0.1]).unwrap(), 4);
        assert!(rank_of_positive(f32::NAN, &[0.1]).is_err());
    }

    #[test]
    fn metric_values_at_known_ranks() {
        assert_eq!(compute_metrics(1, 10), (1.0, 1.0, 1.0));
        let (ndcg, hr, rr) = compute_metrics(3, 10);
        assert_eq!(ndcg, 0.5); // 1/log2(4)
        assert_eq!(hr, 1.0);
        assert_abs_diff_eq!(rr, 1.0 / 3.0, epsilon = 1e-12);
        let (ndcg, hr, rr) = compute_metrics(11, 10);
        assert_eq!((ndcg, hr), (0.0, 0.0));
        assert_abs_diff_eq!(rr, 1.0 / 11.0, epsilon = 1e-12);
    }

    #[test]
    fn metric_monotone_in_rank() {
        let mut prev = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        for rank in 1..=30 {
            let m = compute_metrics(rank, 10);
            assert!(m.0 <= prev.0 && m.1 <= prev.1 && m.2 <= prev.2);
            prev = m;
        }
    }

    struct OracleScorer {
        target_sign: f32,
    }
    impl Scorer for OracleScorer {
        fn scores(&self, _prefix: &[usize], candidates: &[usize]) -> Vec<f32> {
            // first candidate is the positive by construction
            candidates
                .iter()
                .enumerate()
                .map(|(i, _)| if i == 0 { self.target_sign * 1e9 } else { 0.0 })
                .collect()
        }
    }

    #[test]
    fn oracle_and_adversarial_scorers() {
        let split = toy_split(20, 150, 6);
        let protocol = EvalProtocol { negatives: 100, cutoff: 10, seed: 3 };
        let perfect =
            evaluate_model(&OracleScorer { target_sign: 1.0 }, &split, &protocol, EvalSplit::Test)
                .unwrap();
        assert_eq!((perfect.ndcg10, perfect.hr10, perfect.mrr), (1.0, 1.0, 1.0));

        let adversarial =
            evaluate_model(&OracleScorer { target_sign: -1.0 }, &split, &protocol, EvalSplit::Test)
                .unwrap();
        assert_eq!(adversarial.ndcg10, 0.0);
        assert_eq!(adversarial.hr10, 0.0);
        assert_abs_diff_eq!(adversarial.mrr, 1.0 / 101.0, epsilon = 1e-12);
    }

    #[test]
    fn hr_at_least_ndcg_always() {
        let split = toy_split(30, 40, 7);
        let protocol = EvalProtocol { negatives: 20, cutoff: 10, seed: 11 };
        struct Hashy;
        impl Scorer for Hashy {
            fn scores(&self, prefix: &[usize], candidates: &[usize]) -> Vec<f32> {
                candidates
                    .iter()
                    .map(|&c| {
                        let h = (c as u64)
                            .wrapping_mul(2654435761)
                            .wrapping_add(prefix.len() as u64 * 97);
                        (h % 1000) as f32
                    })
                    .collect()
            }
        }
        let report = evaluate_model(&Hashy, &split, &protocol, EvalSplit::Test).unwrap();
        assert!(report.hr10 >= report.ndcg10);
        for d in &report.detail {
            assert!(d.hr >= d.ndcg);
        }
    }

    #[test]
    fn report_is_deterministic_and_round_trips() {
        let split = toy_split(10, 12, 5);
        let protocol = EvalProtocol { negatives: 6, cutoff: 10, seed: 2 };
        let pop = poprec_baseline(&split);
        let a = evaluate_model(&pop, &split, &protocol, EvalSplit::Test).unwrap();
        let b = evaluate_model(&pop, &split, &protocol, EvalSplit::Test).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_key_value(), b.to_key_value());
        let (ndcg, hr, mrr, users) = MetricsReport::parse_key_value(&a.to_key_value()).unwrap();
        assert_abs_diff_eq!(ndcg, a.ndcg10, epsilon = 1e-6);
        assert_abs_diff_eq!(hr, a.hr10, epsilon = 1e-6);
        assert_abs_diff_eq!(mrr, a.mrr, epsilon = 1e-6);
        assert_eq!(users, a.users);
    }

    #[test]
    fn poprec_counts_match_direct_recount() {
        let split = toy_split(12, 9, 6);
        let pop = poprec_baseline(&split);
        let mut direct = vec![0usize; split.item_count() + 1];
        for u in &split.users {
            for &it in &u.train {
                direct[it] += 1;
            }
        }
        assert_eq!(pop.counts(), &direct[..]);
        // most frequent item ranked first among candidates containing it
        let top = (1..=split.item_count()).max_by_key(|&i| direct[i]).unwrap();
        let others: Vec<usize> =
            (1..=split.item_count()).filter(|&i| i != top && direct[i] < direct[top]).collect();
        let mut candidates = vec![top];
        candidates.extend(&others);
        let scores = pop.scores(&[1], &candidates);
        let rank = rank_of_positive(scores[0], &scores[1..]).unwrap();
        assert_eq!(rank, 1);
    }

    #[test]
    fn random_scorer_hr_calibration() {
        // E[HR@10] = 10/101 under random scores with 100 negatives
        let split = toy_split(2000, 300, 5);
        let protocol = EvalProtocol { negatives: 100, cutoff: 10, seed: 42 };
        struct RandScorer;
        impl Scorer for RandScorer {
            fn scores(&self, prefix: &[usize], candidates: &[usize]) -> Vec<f32> {
                // distinct pseudo-random score per (user prefix, candidate, slot)
                candidates
                    .iter()
                    .enumerate()
                    .map(|(slot, &c)| {
                        let mut h = (c as u64)
                            .wrapping_mul(0x9E3779B97F4A7C15)
                            .wrapping_add((slot as u64).wrapping_mul(0x2545F4914F6CDD1D));
                        for &p in prefix {
                            h = h.wrapping_mul(6364136223846793005).wrapping_add(p as u64);
                        }
                        (h >> 40) as f32
                    })
                    .collect()
            }
        }
        let report = evaluate_model(&RandScorer, &split, &protocol, EvalSplit::Test).unwrap();
        let p = 10.0 / 101.0;
        let sigma = (p * (1.0 - p) / split.user_count() as f64).sqrt();
        assert!(
            (report.hr10 - p).abs() < 3.0 * sigma,
            "HR@10 {} vs expected {p} (3σ = {})",
            report.hr10,
            3.0 * sigma
        );
    }
}
