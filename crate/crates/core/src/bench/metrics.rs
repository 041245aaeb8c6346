//! Accuracy and correlation metrics.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Accuracy,
    Pearson,
    Spearman,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::Pearson => "pearson",
            Metric::Spearman => "spearman",
        }
    }

    /// Decimal places used in reports.
    pub fn decimals(self) -> usize {
        match self {
            Metric::Accuracy => 2,
            _ => 3,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Correlation flavour used for regression tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Correlation {
    #[default]
    Pearson,
    Spearman,
}

impl Correlation {
    pub fn metric(self) -> Metric {
        match self {
            Correlation::Pearson => Metric::Pearson,
            Correlation::Spearman => Metric::Spearman,
        }
    }
}

impl std::str::FromStr for Correlation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(Correlation::Pearson),
            "spearman" => Ok(Correlation::Spearman),
            _ => Err(format!("unknown correlation {s:?} (expected pearson or spearman)")),
        }
    }
}

/// A metric result; undefined correlations are explicit, never NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricValue {
    Value(f64),
    ZeroVariance,
    NoSamples,
}

impl MetricValue {
    pub fn value(self) -> Option<f64> {
        match self {
            MetricValue::Value(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v}"),
            MetricValue::ZeroVariance => f.write_str("ZeroVariance"),
            MetricValue::NoSamples => f.write_str("NoSamples"),
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `100 * correct / n`.
pub fn accuracy(predicted: &[usize], target: &[usize]) -> MetricValue {
    assert_eq!(predicted.len(), target.len());
    if target.is_empty() {
        return MetricValue::NoSamples;
    }
    let correct = predicted.iter().zip(target).filter(|(p, t)| p == t).count();
    MetricValue::Value(100.0 * correct as f64 / target.len() as f64)
}

/// Two-pass Pearson correlation (means first, then co-moments), clamped to
/// `[-1, 1]`. A constant input on either side is `ZeroVariance`.
pub fn pearson(x: &[f64], y: &[f64]) -> MetricValue {
    assert_eq!(x.len(), y.len());
    if x.is_empty() {
        return MetricValue::NoSamples;
    }
    let constant = |v: &[f64]| v.iter().all(|&a| a == v[0]);
    if constant(x) || constant(y) {
        return MetricValue::ZeroVariance;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return MetricValue::ZeroVariance;
    }
    MetricValue::Value((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Ranks starting at 1, ties share their mean rank.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

pub fn spearman(x: &[f64], y: &[f64]) -> MetricValue {
    pearson(&ranks(x), &ranks(y))
}

pub fn correlation(kind: Correlation, x: &[f64], y: &[f64]) -> MetricValue {
    match kind {
        Correlation::Pearson => pearson(x, y),
        Correlation::Spearman => spearman(x, y),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    fn two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let mut num = 0.0;
        let mut dx2 = 0.0;
        let mut dy2 = 0.0;
        for (a, b) in x.iter().zip(y) {
            num += (a - mx) * (b - my);
            dx2 += (a - mx) * (a - mx);
            dy2 += (b - my) * (b - my);
        }
        num / (dx2 * dy2).sqrt()
    }

    #[test]
    fn perfect_and_inverse() {
        let t: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin() * 10.0).collect();
        assert_eq!(pearson(&t, &t), MetricValue::Value(1.0));
        let neg: Vec<f64> = t.iter().map(|v| -v).collect();
        assert_eq!(pearson(&neg, &t), MetricValue::Value(-1.0));
    }

    #[test]
    fn constant_inputs_are_zero_variance() {
        assert_eq!(pearson(&[2.5; 6], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), MetricValue::ZeroVariance);
        assert_eq!(pearson(&[1.0, 2.0], &[0.1, 0.1]), MetricValue::ZeroVariance);
        assert_eq!(pearson(&[1.0], &[2.0]), MetricValue::ZeroVariance);
        assert_eq!(pearson(&[], &[]), MetricValue::NoSamples);
    }

    #[test]
    fn matches_two_pass_formula() {
        let mut rng = SplitMix64::new(77);
        for _ in 0..200 {
            let n = 2 + rng.below(200) as usize;
            let x: Vec<f64> = (0..n).map(|_| rng.normal() * 3.0 + 1.0).collect();
            let y: Vec<f64> = x.iter().map(|v| 0.4 * v + rng.normal()).collect();
            let got = pearson(&x, &y).value().unwrap();
            assert!((got - two_pass(&x, &y)).abs() < 1e-12);
        }
    }

    #[test]
    fn accuracy_cases() {
        let t: Vec<usize> = (0..20).map(|i| i % 3).collect();
        assert_eq!(accuracy(&t, &t), MetricValue::Value(100.0));
        assert_eq!(accuracy(&[0, 1, 1, 0], &[0, 1, 0, 0]), MetricValue::Value(75.0));
        assert_eq!(accuracy(&[], &[]), MetricValue::NoSamples);
        assert_eq!(argmax(&[0.5, 2.0, 2.0, 1.0]), 1);
        assert_eq!(argmax(&[3.0, 3.0]), 0);
    }

    #[test]
    fn spearman_with_ties() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 5.0]), vec![2.5, 4.0, 2.5, 1.0]);
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y = [1.0, 8.0, 27.0, 64.0, 125.0];
        assert_eq!(spearman(&x, &y), MetricValue::Value(1.0));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(seed in any::<u64>(), n in 3usize..100, a in 0.01f64..100.0, b in -100.0f64..100.0) {
            let mut rng = SplitMix64::new(seed);
            let p: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let t: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
            let q: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            let (r1, r2) = (pearson(&p, &t).value().unwrap(), pearson(&q, &t).value().unwrap());
            prop_assert!((r1 - r2).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&r1));
        }

        #[test]
        fn accuracy_relabel_invariance(seed in any::<u64>(), n in 1usize..60, c in 2usize..6) {
            let mut rng = SplitMix64::new(seed);
            let p: Vec<usize> = (0..n).map(|_| rng.below(c as u64) as usize).collect();
            let t: Vec<usize> = (0..n).map(|_| rng.below(c as u64) as usize).collect();
            let mut perm: Vec<usize> = (0..c).collect();
            rng.shuffle(&mut perm);
            let pp: Vec<usize> = p.iter().map(|&v| perm[v]).collect();
            let tp: Vec<usize> = t.iter().map(|&v| perm[v]).collect();
            prop_assert_eq!(accuracy(&p, &t), accuracy(&pp, &tp));
            let v = accuracy(&p, &t).value().unwrap();
            prop_assert!((0.0..=100.0).contains(&v));
        }
    }
}
