use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::schema::Label;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightScheme {
    None,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub scheme: WeightScheme,
    pub weights: BTreeMap<Label, f64>,
}

impl ClassWeights {
    pub fn uniform(labels: &[Label]) -> ClassWeights {
        ClassWeights { scheme: WeightScheme::None, weights: labels.iter().map(|l| (*l, 1.0)).collect() }
    }

    pub fn get(&self, label: Label) -> f64 {
        self.weights.get(&label).copied().unwrap_or(1.0)
    }

    /// Weights in the order of `labels`.
    pub fn vector(&self, labels: &[Label]) -> Vec<f64> {
        labels.iter().map(|l| self.get(*l)).collect()
    }
}

/// LOG: weight_c = ln(1 + N / N_c), where N is the total count over
/// `labels`; classes with no examples get the largest computed weight; the
/// result is rescaled to mean 1 over `labels`.
pub fn class_weights(counts: &BTreeMap<Label, usize>, labels: &[Label], scheme: WeightScheme) -> Result<ClassWeights, Error> {
    let n: usize = labels.iter().map(|l| counts.get(l).copied().unwrap_or(0)).sum();
    if n == 0 {
        return Err(Error::InvalidInput("cannot compute class weights: all class counts are zero".into()));
    }
    if scheme == WeightScheme::None {
        return Ok(ClassWeights::uniform(labels));
    }
    let raw: Vec<Option<f64>> = labels
        .iter()
        .map(|l| match counts.get(l).copied().unwrap_or(0) {
            0 => None,
            c => Some((1.0 + n as f64 / c as f64).ln()),
        })
        .collect();
    let max = raw.iter().flatten().copied().fold(f64::MIN, f64::max);
    let filled: Vec<f64> = raw.into_iter().map(|w| w.unwrap_or(max)).collect();
    let mean = filled.iter().sum::<f64>() / filled.len() as f64;
    Ok(ClassWeights {
        scheme,
        weights: labels.iter().zip(filled).map(|(l, w)| (*l, w / mean)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{Factor, Polarity};

    fn two() -> (Label, Label) {
        (Label::NoAnnotation, Label::new(Factor::Anhedonia, Polarity::Positive))
    }

    #[test]
    fn ninety_ten_ratio() {
        let (a, b) = two();
        let counts = BTreeMap::from([(a, 90), (b, 10)]);
        let w = class_weights(&counts, &[a, b], WeightScheme::Log).unwrap();
        let expected = (1.0f64 + 100.0 / 10.0).ln() / (1.0f64 + 100.0 / 90.0).ln();
        assert!((w.get(b) / w.get(a) - expected).abs() < 1e-12);
        assert!((w.get(a) + w.get(b) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn equal_counts_and_none() {
        let (a, b) = two();
        let counts = BTreeMap::from([(a, 7), (b, 7)]);
        for scheme in [WeightScheme::Log, WeightScheme::None] {
            let w = class_weights(&counts, &[a, b], scheme).unwrap();
            assert!((w.get(a) - 1.0).abs() < 1e-12 && (w.get(b) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_count_gets_max_and_all_zero_errors() {
        let (a, b) = two();
        let c = Label::new(Factor::Abuse, Polarity::Positive);
        let counts = BTreeMap::from([(a, 90), (b, 10)]);
        let w = class_weights(&counts, &[a, b, c], WeightScheme::Log).unwrap();
        assert_eq!(w.get(c), w.get(b));
        assert!(class_weights(&BTreeMap::new(), &[a, b], WeightScheme::Log).is_err());
    }
}
