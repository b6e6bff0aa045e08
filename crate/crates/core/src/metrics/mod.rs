//! Classification metrics, rank-based ROC-AUC and chip-level aggregation.

use serde::{Deserialize, Serialize};

use crate::num::Scalar;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("ROC-AUC needs at least one positive and one negative sample")]
    SingleClass,
    #[error("every pixel of the mask is ignored")]
    EmptyMask,
    #[error("map has {map} pixels but mask has {mask}")]
    SizeMismatch { map: usize, mask: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    /// Counts for scores thresholded at `threshold` (score >= threshold is class 1).
    pub fn from_scores<T: Scalar>(samples: &[ScoredSample<T>], threshold: f64) -> Self {
        let mut c = Self::default();
        for s in samples {
            match (s.score.as_f64() >= threshold, s.label == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    /// Counts with class 0 treated as the positive class.
    pub fn flipped(&self) -> Self {
        Self {
            tp: self.tn,
            fp: self.fn_,
            tn: self.tp,
            fn_: self.fp,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Positive class (breeding) only.
    Binary,
    /// Unweighted mean over both classes.
    Macro,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when any ratio had a zero denominator and was reported as 0.
    pub zero_division: bool,
}

fn ratio(num: u64, den: u64, flag: &mut bool) -> f64 {
    if den == 0 {
        *flag = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn positive_class(c: &ConfusionCounts, flag: &mut bool) -> (f64, f64, f64) {
    let p = ratio(c.tp, c.tp + c.fp, flag);
    let r = ratio(c.tp, c.tp + c.fn_, flag);
    let f = if p + r == 0.0 {
        *flag = true;
        0.0
    } else {
        2.0 * p * r / (p + r)
    };
    (p, r, f)
}

pub fn classification_metrics(c: &ConfusionCounts, averaging: Averaging) -> ClassificationMetrics {
    let mut flag = false;
    let accuracy = ratio(c.tp + c.tn, c.total(), &mut flag);
    let (precision, recall, f1) = match averaging {
        Averaging::Binary => positive_class(c, &mut flag),
        Averaging::Macro => {
            let (p1, r1, f1) = positive_class(c, &mut flag);
            let (p0, r0, f0) = positive_class(&c.flipped(), &mut flag);
            ((p0 + p1) / 2.0, (r0 + r1) / 2.0, (f0 + f1) / 2.0)
        }
    };
    ClassificationMetrics {
        accuracy,
        precision,
        recall,
        f1,
        zero_division: flag,
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredSample<T> {
    /// Probability of class 1.
    pub score: T,
    pub label: u8,
}

impl<T> ScoredSample<T> {
    pub fn new(score: T, label: u8) -> Self {
        Self { score, label }
    }
}

/// Mann-Whitney estimate of P(score of a positive > score of a negative), ties counted as one half.
pub fn roc_auc<T: Scalar>(samples: &[ScoredSample<T>]) -> Result<f64, MetricsError> {
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.sort_by(|&a, &b| {
        samples[a]
            .score
            .partial_cmp(&samples[b].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let n_pos = samples.iter().filter(|s| s.label == 1).count() as f64;
    let n_neg = samples.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(MetricsError::SingleClass);
    }
    // average 1-based ranks over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && samples[idx[j]].score == samples[idx[i]].score {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos = idx[i..j].iter().filter(|&&k| samples[k].label == 1).count();
        rank_sum_pos += avg_rank * pos as f64;
        i = j;
    }
    let u = rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0;
    Ok(u / (n_pos * n_neg))
}

/// ROC points `(fpr, tpr)` from the strictest threshold down, one point per distinct score.
pub fn roc_curve<T: Scalar>(samples: &[ScoredSample<T>]) -> Result<Vec<(f64, f64)>, MetricsError> {
    let n_pos = samples.iter().filter(|s| s.label == 1).count();
    let n_neg = samples.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricsError::SingleClass);
    }
    let mut sorted: Vec<&ScoredSample<T>> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut pts = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j < sorted.len() && sorted[j].score == sorted[i].score {
            if sorted[j].label == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        pts.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
        i = j;
    }
    Ok(pts)
}

/// Trapezoidal area under a piecewise-linear curve.
pub fn trapezoid_area(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

/// Mean class-1 probability over the labelled pixels of `mask` (`-1` = ignore).
/// The label of the returned sample is the disk's label.
pub fn chip_level_prediction<T: Scalar>(
    p_breeding: &[T],
    mask: &[i8],
) -> Result<ScoredSample<T>, MetricsError> {
    if p_breeding.len() != mask.len() {
        return Err(MetricsError::SizeMismatch {
            map: p_breeding.len(),
            mask: mask.len(),
        });
    }
    let mut sum = T::zero();
    let mut n = 0usize;
    let mut positives = 0usize;
    for (&p, &m) in p_breeding.iter().zip(mask) {
        if m >= 0 {
            sum += p;
            n += 1;
            positives += (m == 1) as usize;
        }
    }
    if n == 0 {
        return Err(MetricsError::EmptyMask);
    }
    Ok(ScoredSample {
        score: sum / T::of(n as f64),
        label: (2 * positives >= n && positives > 0) as u8,
    })
}

/// One split's metric row with both averaging modes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub n: usize,
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub binary: ClassificationMetrics,
    #[serde(rename = "macro")]
    pub macro_: ClassificationMetrics,
    /// `None` when the split holds a single class.
    pub roc_auc: Option<f64>,
}

impl MetricsReport {
    pub fn from_scores<T: Scalar>(split: &str, samples: &[ScoredSample<T>], threshold: f64) -> Self {
        let counts = ConfusionCounts::from_scores(samples, threshold);
        Self {
            split: split.to_string(),
            n: samples.len(),
            threshold,
            binary: classification_metrics(&counts, Averaging::Binary),
            macro_: classification_metrics(&counts, Averaging::Macro),
            roc_auc: roc_auc(samples).ok(),
            counts,
        }
    }

    pub fn get(&self, averaging: Averaging) -> &ClassificationMetrics {
        match averaging {
            Averaging::Binary => &self.binary,
            Averaging::Macro => &self.macro_,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_counts() {
        let c = ConfusionCounts {
            tp: 1,
            fp: 0,
            tn: 1,
            fn_: 0,
        };
        for a in [Averaging::Binary, Averaging::Macro] {
            let m = classification_metrics(&c, a);
            assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 1.0, 1.0, 1.0));
            assert!(!m.zero_division);
        }
    }

    #[test]
    fn no_predicted_positives_flags_zero_division() {
        let c = ConfusionCounts {
            tp: 0,
            fp: 0,
            tn: 3,
            fn_: 2,
        };
        let m = classification_metrics(&c, Averaging::Binary);
        assert_eq!(m.precision, 0.0);
        assert!(m.zero_division);
    }
}
