//! Combining the per-discriminator rationality scores into the expected
//! return used as the policy-gradient reward: a λ-parameterized softmax over
//! the scores weights their own average, so λ sweeps mean (λ=0), soft
//! mixtures, and the min/max limits (λ → ∓∞). Computed in f64; rewards are
//! constants with respect to the generator's tape.

/// Reward-combination regime. The min/max limits are realized with |λ| = 40,
/// which drives the weights within 1e-6 of the hard extremes for any
/// meaningfully separated scores.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaMode {
    /// λ = 0: the simple average over discriminators (default).
    Mean,
    /// λ = -40: effectively the minimum score.
    Min,
    /// λ = +40: effectively the maximum score.
    Max,
    /// Any other fixed λ.
    Soft(f64),
}

impl LambdaMode {
    pub fn lambda(&self) -> f64 {
        match self {
            LambdaMode::Mean => 0.0,
            LambdaMode::Min => -40.0,
            LambdaMode::Max => 40.0,
            LambdaMode::Soft(l) => *l,
        }
    }

    pub fn parse(text: &str) -> Option<LambdaMode> {
        match text {
            "mean" => Some(LambdaMode::Mean),
            "min" => Some(LambdaMode::Min),
            "max" => Some(LambdaMode::Max),
            other => other
                .strip_prefix("soft:")
                .and_then(|v| v.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .map(LambdaMode::Soft),
        }
    }

    pub fn label(&self) -> String {
        match self {
            LambdaMode::Mean => "mean".into(),
            LambdaMode::Min => "min".into(),
            LambdaMode::Max => "max".into(),
            LambdaMode::Soft(l) => format!("soft:{l}"),
        }
    }
}

/// `ω_j = exp(λ·ŷ_j) / Σ_j' exp(λ·ŷ_j')`, stabilized by subtracting the
/// largest exponent. Weights are strictly positive and sum to 1.
pub fn combination_weights(scores: &[f64], lambda: f64) -> Vec<f64> {
    assert!(!scores.is_empty(), "need at least one score");
    let max = scores
        .iter()
        .map(|&y| lambda * y)
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|&y| (lambda * y - max).exp()).collect();
    let denom: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / denom).collect()
}

/// The expected return `Q(s, a) = Σ_j ω_j ŷ_j`.
pub fn q_value(scores: &[f64], lambda: f64) -> f64 {
    combination_weights(scores, lambda)
        .iter()
        .zip(scores)
        .map(|(w, y)| w * y)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_lambda_is_uniform_and_mean() {
        let y = [0.2, 0.8];
        let w = combination_weights(&y, 0.0);
        assert_eq!(w, vec![0.5, 0.5]);
        assert!((q_value(&y, 0.0) - 0.5).abs() < 1e-12);
        for m in 1..6 {
            let y: Vec<f64> = (0..m).map(|i| 0.1 + 0.13 * i as f64).collect();
            for w in combination_weights(&y, 0.0) {
                assert!((w - 1.0 / m as f64).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equal_scores_weigh_uniformly_for_any_lambda() {
        for lambda in [-40.0, -3.0, 0.0, 1.7, 40.0] {
            let w = combination_weights(&[0.37; 4], lambda);
            for v in w {
                assert!((v - 0.25).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn two_score_soft_weights_match_direct_formula() {
        // ω = softmax(0.2, 0.8) at λ=1
        let w = combination_weights(&[0.2, 0.8], 1.0);
        assert!((w[0] - 0.354).abs() < 1e-3, "w0 = {}", w[0]);
        assert!((w[1] - 0.646).abs() < 1e-3, "w1 = {}", w[1]);
    }

    #[test]
    fn lambda_forty_forces_extremes() {
        let y = [0.2, 0.8];
        assert!((q_value(&y, 40.0) - 0.8).abs() < 1e-6);
        assert!((q_value(&y, -40.0) - 0.2).abs() < 1e-6);
    }

    #[test]
    fn q_matches_high_precision_reference() {
        // independent reference: unstabilized formula evaluated termwise
        let mut state = 0x2545F4914F6CDD1Du64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..2000 {
            let m = 1 + (next() * 6.0) as usize;
            let y: Vec<f64> = (0..m).map(|_| 0.001 + 0.998 * next()).collect();
            let lambda = -20.0 + 40.0 * next();
            let direct: f64 = {
                let denom: f64 = y.iter().map(|&v| (lambda * v).exp()).sum();
                y.iter().map(|&v| (lambda * v).exp() / denom * v).sum()
            };
            assert!((q_value(&y, lambda) - direct).abs() < 1e-9);
        }
    }

    #[test]
    fn default_mode_is_mean() {
        assert_eq!(LambdaMode::Mean.lambda(), 0.0);
        assert_eq!(LambdaMode::parse("mean"), Some(LambdaMode::Mean));
        assert_eq!(LambdaMode::parse("min"), Some(LambdaMode::Min));
        assert_eq!(LambdaMode::parse("max"), Some(LambdaMode::Max));
        assert_eq!(LambdaMode::parse("soft:2.5"), Some(LambdaMode::Soft(2.5)));
        assert_eq!(LambdaMode::parse("loud"), None);
    }

    proptest! {
        #[test]
        fn envelope_and_weight_normalization(
            y in proptest::collection::vec(0.0001f64..0.9999, 1..6),
            lambda in -50.0f64..50.0,
        ) {
            let w = combination_weights(&y, lambda);
            let total: f64 = w.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert!(w.iter().all(|&v| v > 0.0));
            let q = q_value(&y, lambda);
            let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(q >= lo - 1e-12 && q <= hi + 1e-12);
            // zero-reward robustness: Q is at least the smallest score
            prop_assert!(q >= lo - 1e-12);
        }

        #[test]
        fn permutation_invariance(
            y in proptest::collection::vec(0.01f64..0.99, 2..6),
            lambda in -40.0f64..40.0,
        ) {
            let mut reversed = y.clone();
            reversed.reverse();
            prop_assert!((q_value(&y, lambda) - q_value(&reversed, lambda)).abs() < 1e-12);
        }

        #[test]
        fn monotone_in_lambda(
            y in proptest::collection::vec(0.01f64..0.99, 2..5),
        ) {
            // Q(y, λ) is non-decreasing in λ over a grid
            let mut prev = f64::NEG_INFINITY;
            for i in 0..=40 {
                let lambda = -40.0 + 2.0 * i as f64;
                let q = q_value(&y, lambda);
                prop_assert!(q >= prev - 1e-12, "Q dropped at λ={lambda}");
                prev = q;
            }
        }
    }
}
