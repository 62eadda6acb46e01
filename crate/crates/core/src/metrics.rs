//! Threshold metrics and rank-based ROC AUC.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(scores: &[f64], labels: &[u8]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} scores for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    Ok(())
}

/// Predicts positive iff `score >= threshold`.
pub fn confusion_at_threshold(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_lengths(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (&s, &y) in scores.iter().zip(labels) {
        match (s >= threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrecisionRecallF1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl PrecisionRecallF1 {
    pub fn flags(&self) -> Vec<String> {
        let mut f = Vec::new();
        if self.precision_undefined {
            f.push("precision_undefined".to_string());
        }
        if self.recall_undefined {
            f.push("recall_undefined".to_string());
        }
        if self.f1_undefined {
            f.push("f1_undefined".to_string());
        }
        f
    }
}

/// Zero denominators yield 0 with the matching `*_undefined` flag set.
pub fn precision_recall_f1(c: &ConfusionCounts) -> PrecisionRecallF1 {
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            (0.0, true)
        } else {
            (num as f64 / den as f64, false)
        }
    };
    let (precision, pu) = ratio(c.tp, c.tp + c.fp);
    let (recall, ru) = ratio(c.tp, c.tp + c.fn_);
    let (f1, fu) = if precision + recall == 0.0 {
        (0.0, true)
    } else {
        (2.0 * precision * recall / (precision + recall), false)
    };
    PrecisionRecallF1 {
        precision,
        recall,
        f1,
        precision_undefined: pu,
        recall_undefined: ru,
        f1_undefined: fu,
    }
}

fn class_sizes(labels: &[u8]) -> Result<(usize, usize)> {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid("ROC analysis needs both classes present"));
    }
    Ok((pos, neg))
}

/// Mann–Whitney AUC with midranks for ties, O(n log n).
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_sizes(labels)?;

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of positive ranks, doubled so midranks stay integral.
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j+1 share the midrank (i + j + 2) / 2
        let twice_mid = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as u128;
        rank_sum2 += twice_mid * pos_in_group;
        i = j + 1;
    }
    let np = n_pos as u128;
    // 2U = 2R − n_pos(n_pos + 1)
    let twice_u = rank_sum2 - np * (np + 1);
    Ok(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`.
    pub points: Vec<(f64, f64)>,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }
}

/// One point per distinct score threshold, highest threshold first.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    check_lengths(scores, labels)?;
    let (n_pos, n_neg) = class_sizes(labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / n_neg as f64, tp as f64 / n_pos as f64));
    }
    Ok(RocCurve { points })
}

/// Metrics document written as JSON by the CLI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub auc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub confusion: ConfusionCounts,
    pub flags: Vec<String>,
}

impl MetricsReport {
    pub fn compute(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Self> {
        let confusion = confusion_at_threshold(scores, labels, threshold)?;
        let prf = precision_recall_f1(&confusion);
        Ok(MetricsReport {
            auc: roc_auc(scores, labels)?,
            precision: prf.precision,
            recall: prf.recall,
            f1: prf.f1,
            threshold,
            confusion,
            flags: prf.flags(),
        })
    }
}
