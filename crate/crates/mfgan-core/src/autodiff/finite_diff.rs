//! Central-difference gradient oracle.
//!
//! Independent of the tape: evaluates a black-box scalar function under
//! coordinate perturbations. Used to cross-check every differentiable path.
//! The divisor is the realized f32 coordinate delta, not the nominal 2ε, so
//! rounding of the perturbed coordinate does not bias the estimate.

use super::params::Parameterized;
use super::tape::GradientSet;
use super::tensor::Tensor;
use crate::error::Result;

/// Central-difference gradient estimate `(f(θ+ε) - f(θ-ε)) / (θ₊ - θ₋)` for
/// every coordinate of every parameter. `f` must be deterministic.
pub fn finite_diff_grad<P, F>(params: &mut P, eps: f32, mut f: F) -> Result<GradientSet>
where
    P: Parameterized,
    F: FnMut(&P) -> Result<f64>,
{
    let mut set = GradientSet::new();
    let specs: Vec<(String, Vec<usize>, usize)> = {
        let mut v = Vec::new();
        params.for_each_param(&mut |name, t| {
            v.push((name.to_string(), t.shape().to_vec(), t.numel()));
        });
        v
    };
    for (name, shape, numel) in specs {
        let mut grad = vec![0.0f32; numel];
        for i in 0..numel {
            let original = params.param_coord(&name, i);
            let plus_at = original + eps;
            let minus_at = original - eps;

            params.set_param_coord(&name, i, plus_at);
            let realized_plus = params.param_coord(&name, i);
            let f_plus = f(params)?;

            params.set_param_coord(&name, i, minus_at);
            let realized_minus = params.param_coord(&name, i);
            let f_minus = f(params)?;

            params.set_param_coord(&name, i, original);

            let delta = realized_plus as f64 - realized_minus as f64;
            grad[i] = ((f_plus - f_minus) / delta) as f32;
        }
        set.accumulate(&name, Tensor::new(shape, grad)?);
    }
    Ok(set)
}

/// Largest relative mismatch between two gradient sets over the given
/// parameter names. The denominator is floored at 1 so that near-zero
/// gradients are compared absolutely.
pub fn max_relative_error(a: &GradientSet, b: &GradientSet, names: &[String]) -> f64 {
    let mut worst = 0.0f64;
    for name in names {
        // An absent gradient means zero; compare against the present side.
        let missing_magnitude = |g: &Tensor| {
            g.data().iter().map(|&v| v.abs() as f64).fold(0.0, f64::max)
        };
        let (ga, gb) = match (a.get(name), b.get(name)) {
            (Some(x), Some(y)) => (x, y),
            (Some(x), None) => {
                worst = worst.max(missing_magnitude(x));
                continue;
            }
            (None, Some(y)) => {
                worst = worst.max(missing_magnitude(y));
                continue;
            }
            (None, None) => continue,
        };
        assert_eq!(ga.shape(), gb.shape(), "gradient shape mismatch for {name}");
        for (&x, &y) in ga.data().iter().zip(gb.data()) {
            let denom = (x.abs() as f64).max(y.abs() as f64).max(1.0);
            worst = worst.max(((x as f64) - (y as f64)).abs() / denom);
        }
    }
    worst
}
