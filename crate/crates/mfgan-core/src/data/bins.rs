//! Factor-value discretization into embedding bins.

use crate::error::{Error, Result};

/// A raw factor value before binning.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorValue {
    Num(f32),
    Cat(String),
}

/// Binning rule of one factor.
#[derive(Clone, Debug, PartialEq)]
pub enum BinKind {
    /// Distinct values mapped to bins in first-appearance order.
    Categorical { values: Vec<String> },
    /// Equal-frequency boundaries; `bin(v)` counts boundaries `<= v`.
    Numeric { boundaries: Vec<f32> },
}

/// A named factor's binning specification.
#[derive(Clone, Debug, PartialEq)]
pub struct BinSpec {
    pub name: String,
    pub kind: BinKind,
    pub warning: Option<String>,
}

impl BinSpec {
    /// Number of value bins (excluding the reserved unknown bin).
    pub fn bin_count(&self) -> usize {
        match &self.kind {
            BinKind::Categorical { values } => values.len(),
            BinKind::Numeric { boundaries } => boundaries.len() + 1,
        }
    }

    /// Zero-based bin of a value; `None` for unseen categorical values.
    pub fn bin_of(&self, value: &FactorValue) -> Option<usize> {
        match (&self.kind, value) {
            (BinKind::Categorical { values }, FactorValue::Cat(v)) => {
                values.iter().position(|x| x == v)
            }
            (BinKind::Numeric { boundaries }, FactorValue::Num(v)) => {
                Some(boundaries.iter().filter(|&&b| *v >= b).count())
            }
            _ => None,
        }
    }
}

/// Build a binning rule from the train-visible values of one factor.
///
/// Numeric factors get equal-frequency boundaries cut at ranks `k·N/B`;
/// categorical factors map each distinct value to its own bin in
/// first-appearance order (`num_bins` is ignored for them).
pub fn bin_factor_values(
    name: &str,
    values: &[FactorValue],
    num_bins: usize,
) -> Result<BinSpec> {
    if values.is_empty() {
        return Err(Error::Data(format!("factor {name}: no values to bin")));
    }
    let numeric = matches!(values[0], FactorValue::Num(_));
    if values
        .iter()
        .any(|v| matches!(v, FactorValue::Num(_)) != numeric)
    {
        return Err(Error::Data(format!("factor {name}: mixed numeric and categorical values")));
    }

    if !numeric {
        let mut seen = Vec::new();
        for v in values {
            if let FactorValue::Cat(s) = v {
                if !seen.iter().any(|x: &String| x == s) {
                    seen.push(s.clone());
                }
            }
        }
        return Ok(BinSpec {
            name: name.to_string(),
            kind: BinKind::Categorical { values: seen },
            warning: None,
        });
    }

    if num_bins < 2 {
        return Err(Error::contract(format!("factor {name}: num_bins must be >= 2")));
    }
    let mut sorted: Vec<f32> = values
        .iter()
        .map(|v| match v {
            FactorValue::Num(x) => *x,
            FactorValue::Cat(_) => unreachable!(),
        })
        .collect();
    if sorted.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(format!("factor {name}: non-finite value")));
    }
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len();
    let mut boundaries: Vec<f32> = (1..num_bins)
        .map(|k| sorted[k * n / num_bins])
        .collect();
    boundaries.dedup();
    // a boundary equal to the minimum would leave bin 0 empty
    boundaries.retain(|&b| b > sorted[0]);
    let warning = if boundaries.is_empty() {
        Some(format!("factor {name}: constant values, collapsed to a single bin"))
    } else if boundaries.len() + 1 < num_bins {
        Some(format!(
            "factor {name}: duplicates reduced {num_bins} requested bins to {}",
            boundaries.len() + 1
        ))
    } else {
        None
    };
    Ok(BinSpec { name: name.to_string(), kind: BinKind::Numeric { boundaries }, warning })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartile_boundaries_on_one_to_hundred() {
        let values: Vec<FactorValue> = (1..=100).map(|v| FactorValue::Num(v as f32)).collect();
        let spec = bin_factor_values("price", &values, 4).unwrap();
        // quantile oracle: cuts at sorted ranks 25, 50, 75
        assert_eq!(
            spec.kind,
            BinKind::Numeric { boundaries: vec![26.0, 51.0, 76.0] }
        );
        assert_eq!(spec.bin_of(&FactorValue::Num(10.0)), Some(0));
        assert_eq!(spec.bin_of(&FactorValue::Num(26.0)), Some(1));
        assert_eq!(spec.bin_of(&FactorValue::Num(99.0)), Some(3));
        assert!(spec.warning.is_none());
    }

    #[test]
    fn equal_frequency_within_one_for_distinct_values() {
        for (n, bins) in [(100usize, 4usize), (97, 5), (31, 3), (50, 7)] {
            let values: Vec<FactorValue> =
                (0..n).map(|v| FactorValue::Num(v as f32 * 1.5 + 3.0)).collect();
            let spec = bin_factor_values("f", &values, bins).unwrap();
            // counting oracle
            let mut counts = vec![0usize; spec.bin_count()];
            for v in &values {
                counts[spec.bin_of(v).unwrap()] += 1;
            }
            let target = n as f64 / bins as f64;
            for (b, &c) in counts.iter().enumerate() {
                assert!(
                    (c as f64 - target).abs() <= 1.0,
                    "n={n} bins={bins}: bin {b} holds {c}, target {target}"
                );
            }
        }
    }

    #[test]
    fn categorical_bins_in_first_appearance_order() {
        let values = vec![
            FactorValue::Cat("rock".into()),
            FactorValue::Cat("pop".into()),
            FactorValue::Cat("rock".into()),
        ];
        let spec = bin_factor_values("genre", &values, 10).unwrap();
        assert_eq!(spec.bin_count(), 2);
        assert_eq!(spec.bin_of(&FactorValue::Cat("rock".into())), Some(0));
        assert_eq!(spec.bin_of(&FactorValue::Cat("pop".into())), Some(1));
        assert_eq!(spec.bin_of(&FactorValue::Cat("jazz".into())), None);
    }

    #[test]
    fn constant_numeric_factor_collapses_with_warning() {
        let values = vec![FactorValue::Num(7.0); 20];
        let spec = bin_factor_values("flat", &values, 4).unwrap();
        assert_eq!(spec.bin_count(), 1);
        assert!(spec.warning.is_some());
        assert_eq!(spec.bin_of(&FactorValue::Num(7.0)), Some(0));
    }

    #[test]
    fn mixed_kinds_rejected() {
        let values = vec![FactorValue::Num(1.0), FactorValue::Cat("x".into())];
        assert!(bin_factor_values("bad", &values, 4).is_err());
    }
}
