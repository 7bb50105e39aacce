use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Counts after flipping every prediction.
    pub fn inverted(&self) -> Self {
        Self::new(self.fn_, self.fp, self.tn, self.tp)
    }

    /// Counts for predicted positives `(tp, fp)` out of `pos` true positives
    /// and `neg` true negatives.
    fn from_predicted(tp: u64, fp: u64, pos: u64, neg: u64) -> Self {
        Self::new(tp, neg - fp, fp, pos - tp)
    }
}

/// Matthews correlation, exact numerator and 0 whenever a marginal is 0.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    let (tp, tn, fp, fn_) = (c.tp as u128, c.tn as u128, c.fp as u128, c.fn_ as u128);
    let p1 = (tp + fp) * (tp + fn_);
    let p2 = (tn + fp) * (tn + fn_);
    if p1 == 0 || p2 == 0 {
        return 0.0;
    }
    let num = (tp * tn) as i128 - (fp * fn_) as i128;
    (num as f64 / ((p1 as f64).sqrt() * (p2 as f64).sqrt())).clamp(-1.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Polarity {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

impl std::fmt::Display for Polarity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Polarity::Positive => "+1",
            Polarity::Negative => "-1",
        })
    }
}

fn check_mask(values_shape: (usize, usize), mask: &Array2<u8>) -> Result<()> {
    if values_shape != mask.dim() {
        return Err(Error::Shape {
            expected: values_shape,
            actual: mask.dim(),
        });
    }
    if mask.iter().any(|&m| m > 1) {
        return Err(Error::Data("mask must be binary 0/1".into()));
    }
    Ok(())
}

/// Prediction is `polarity * value >= threshold`; forged is mask value 1.
pub fn confusion_counts(values: &Array2<f32>, mask: &Array2<u8>, threshold: f64, polarity: Polarity) -> Result<ConfusionCounts> {
    check_mask(values.dim(), mask)?;
    let s = polarity.sign();
    let mut c = ConfusionCounts::default();
    for (&v, &m) in values.iter().zip(mask.iter()) {
        match (s * f64::from(v) >= threshold, m == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "levels")]
pub enum ThresholdMode {
    /// Evenly spaced quantile levels of the values.
    Quantile(usize),
    /// Every distinct value.
    Exhaustive,
}

impl Default for ThresholdMode {
    fn default() -> Self {
        ThresholdMode::Quantile(256)
    }
}

/// MCC at each candidate cut value `v` for both polarities: `+1` predicts
/// `h >= v`, `-1` predicts `h <= v` (threshold `-v`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MccCurve {
    pub cuts: Vec<f64>,
    pub mcc_positive: Vec<f64>,
    pub mcc_negative: Vec<f64>,
    pub best_mcc: f64,
    /// In the `polarity * h >= threshold` convention.
    pub best_threshold: f64,
    pub polarity: Polarity,
}

/// Sorted values with prefix counts of forged pixels.
struct Sorted {
    values: Vec<f64>,
    forged_prefix: Vec<u64>,
}

impl Sorted {
    fn new(pairs: impl Iterator<Item = (f64, bool)>) -> Self {
        let mut pairs: Vec<(f64, bool)> = pairs.collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut forged_prefix = Vec::with_capacity(pairs.len() + 1);
        forged_prefix.push(0);
        let mut acc = 0;
        for &(_, m) in &pairs {
            acc += u64::from(m);
            forged_prefix.push(acc);
        }
        Self {
            values: pairs.into_iter().map(|p| p.0).collect(),
            forged_prefix,
        }
    }

    fn n(&self) -> usize {
        self.values.len()
    }

    fn positives(&self) -> u64 {
        *self.forged_prefix.last().expect("prefix starts non-empty")
    }

    /// Counts for `h >= v`.
    fn at_least(&self, v: f64) -> ConfusionCounts {
        let i = self.values.partition_point(|&x| x < v);
        let (pos, neg) = (self.positives(), self.n() as u64 - self.positives());
        let tp = pos - self.forged_prefix[i];
        let fp = (self.n() - i) as u64 - tp;
        ConfusionCounts::from_predicted(tp, fp, pos, neg)
    }

    /// Counts for `h <= v`.
    fn at_most(&self, v: f64) -> ConfusionCounts {
        let i = self.values.partition_point(|&x| x <= v);
        let (pos, neg) = (self.positives(), self.n() as u64 - self.positives());
        let tp = self.forged_prefix[i];
        let fp = i as u64 - tp;
        ConfusionCounts::from_predicted(tp, fp, pos, neg)
    }
}

/// Candidate cuts. Quantile indices are closed under `j -> n-1-j`, so
/// negating the values yields the same set of predictions.
fn candidate_cuts(sorted: &Sorted, mode: ThresholdMode) -> Result<Vec<f64>> {
    let n = sorted.n();
    let mut cuts = vec![f64::NEG_INFINITY, f64::INFINITY];
    match mode {
        ThresholdMode::Quantile(levels) => {
            if levels < 2 {
                return Err(Error::Config(format!("need at least 2 threshold levels, got {levels}")));
            }
            if n > 0 {
                for k in 0..levels {
                    let j = ((k as f64) * (n - 1) as f64 / (levels - 1) as f64).round() as usize;
                    cuts.push(sorted.values[j]);
                    cuts.push(sorted.values[n - 1 - j]);
                }
            }
        }
        ThresholdMode::Exhaustive => cuts.extend_from_slice(&sorted.values),
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    Ok(cuts)
}

fn sweep(sorted: &Sorted, mode: ThresholdMode) -> Result<MccCurve> {
    let cuts = candidate_cuts(sorted, mode)?;
    let mcc_positive: Vec<f64> = cuts.iter().map(|&v| mcc(&sorted.at_least(v))).collect();
    let mcc_negative: Vec<f64> = cuts.iter().map(|&v| mcc(&sorted.at_most(v))).collect();
    let mut best = (f64::NEG_INFINITY, 0.0, Polarity::Positive);
    for (i, &v) in cuts.iter().enumerate() {
        if mcc_positive[i] > best.0 {
            best = (mcc_positive[i], v, Polarity::Positive);
        }
        if mcc_negative[i] > best.0 {
            best = (mcc_negative[i], -v, Polarity::Negative);
        }
    }
    Ok(MccCurve {
        cuts,
        mcc_positive,
        mcc_negative,
        best_mcc: best.0,
        best_threshold: best.1,
        polarity: best.2,
    })
}

pub fn max_mcc(values: &Array2<f32>, mask: &Array2<u8>, mode: ThresholdMode) -> Result<MccCurve> {
    check_mask(values.dim(), mask)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("heatmap contains non-finite values".into()));
    }
    let sorted = Sorted::new(values.iter().zip(mask.iter()).map(|(&v, &m)| (f64::from(v), m == 1)));
    sweep(&sorted, mode)
}

/// One sweep over the pixels of several images together.
pub fn max_mcc_pooled(items: &[(&Array2<f32>, &Array2<u8>)], mode: ThresholdMode) -> Result<MccCurve> {
    for (v, m) in items {
        check_mask(v.dim(), m)?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("heatmap contains non-finite values".into()));
        }
    }
    let sorted = Sorted::new(
        items
            .iter()
            .flat_map(|(v, m)| v.iter().zip(m.iter()).map(|(&x, &b)| (f64::from(x), b == 1))),
    );
    sweep(&sorted, mode)
}
