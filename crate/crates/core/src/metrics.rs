//! Point-wise detection metrics and ROC analysis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Precision, recall and F1 over time steps. An undefined ratio is
/// reported as 0 with its flag set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub confusion: Confusion,
    /// No alarms were raised.
    pub precision_undefined: bool,
    /// No attacked steps exist.
    pub recall_undefined: bool,
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::contract(format!(
            "length mismatch: {a} predictions vs {b} labels"
        )));
    }
    Ok(())
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

pub fn compute_metrics(alarms: &[bool], labels: &[bool]) -> Result<Prf> {
    check_lengths(alarms.len(), labels.len())?;
    let mut c = Confusion::default();
    for (&a, &l) in alarms.iter().zip(labels) {
        match (a, l) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Ok(Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
        confusion: c,
        precision_undefined: c.tp + c.fp == 0,
        recall_undefined: c.tp + c.fn_ == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Roc {
    /// `(false-positive rate, true-positive rate)` from the strictest
    /// threshold to the loosest, starting at `(0, 0)`.
    pub points: Vec<(f64, f64)>,
    /// `None` when only one class is present.
    pub auc: Option<f64>,
}

/// Sweeps a threshold over every distinct score (alarm when
/// `score >= threshold`). The trapezoid area is accumulated in integer
/// counts, so it equals the pairwise (Mann-Whitney) estimate exactly.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<Roc> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("NaN score"));
    }
    let pos = labels.iter().filter(|l| **l).count() as u128;
    let neg = labels.len() as u128 - pos;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0u128, 0u128);
    let mut twice_area = 0u128;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let (tp0, fp0) = (tp, fp);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        twice_area += (fp - fp0) * (tp + tp0);
        let rate = |n: u128, d: u128| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        points.push((rate(fp, neg), rate(tp, pos)));
    }
    let auc = (pos > 0 && neg > 0).then(|| twice_area as f64 / (2 * pos * neg) as f64);
    Ok(Roc { points, auc })
}

/// Threshold with the highest F1 when alarming on `score > threshold`,
/// cutting midway between consecutive distinct scores. Returns
/// `(threshold, f1)`, or `None` without positive labels.
pub fn best_f1_threshold(scores: &[f64], labels: &[bool]) -> Result<Option<(f64, f64)>> {
    check_lengths(scores.len(), labels.len())?;
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::numeric("NaN score"));
    }
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 {
        return Ok(None);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut alarms) = (0usize, 0usize);
    let mut best: Option<(f64, f64)> = None;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            tp += labels[order[i]] as usize;
            alarms += 1;
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (alarms + pos) as f64;
        let cut = match order.get(i) {
            Some(&next) => 0.5 * (s + scores[next]),
            None => s - 1.0_f64.max(s.abs()),
        };
        if best.is_none_or(|b| f1 > b.1) {
            best = Some((cut, f1));
        }
    }
    Ok(best)
}

/// Per-detector evaluation row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub detector: String,
    pub prf: Prf,
    pub roc: Option<Roc>,
}

impl MetricsReport {
    pub fn new(
        detector: &str,
        alarms: &[bool],
        scores: Option<&[f64]>,
        labels: &[bool],
    ) -> Result<Self> {
        Ok(Self {
            detector: detector.to_string(),
            prf: compute_metrics(alarms, labels)?,
            roc: scores.map(|s| roc_auc(s, labels)).transpose()?,
        })
    }

    pub fn auc(&self) -> Option<f64> {
        self.roc.as_ref().and_then(|r| r.auc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn best_threshold_beats_every_cut(
            data in prop::collection::vec((0u8..6, any::<bool>()), 1..60),
        ) {
            let scores: Vec<f64> = data.iter().map(|d| d.0 as f64 * 0.25).collect();
            let labels: Vec<bool> = data.iter().map(|d| d.1).collect();
            let Some((cut, f1)) = best_f1_threshold(&scores, &labels).unwrap() else {
                prop_assert!(labels.iter().all(|l| !l));
                return Ok(());
            };
            let at = |t: f64| {
                let alarms: Vec<bool> = scores.iter().map(|s| *s > t).collect();
                compute_metrics(&alarms, &labels).unwrap().f1
            };
            prop_assert!((at(cut) - f1).abs() < 1e-12);
            for &s in &scores {
                prop_assert!(at(s) <= f1 + 1e-12);
                prop_assert!(at(s - 0.1) <= f1 + 1e-12);
            }
        }
    }

    #[test]
    fn perfect_alarms() {
        let l = [true, false, true, false];
        let m = compute_metrics(&l, &l).unwrap();
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn known_counts() {
        // TP=9, FP=1, FN=3
        let mut alarms = vec![true; 10];
        let mut labels = vec![true; 9];
        labels.push(false);
        alarms.extend([false; 3]);
        labels.extend([true; 3]);
        let m = compute_metrics(&alarms, &labels).unwrap();
        assert_eq!(
            m.confusion,
            Confusion {
                tp: 9,
                fp: 1,
                tn: 0,
                fn_: 3
            }
        );
        assert!((m.precision - 0.9).abs() < 1e-15);
        assert!((m.recall - 0.75).abs() < 1e-15);
        assert!((m.f1 - 2.0 * 0.9 * 0.75 / 1.65).abs() < 1e-15);
        assert!((m.f1 - 0.8182).abs() < 5e-5);
    }

    #[test]
    fn silent_detector_on_attacked_data() {
        let m = compute_metrics(&[false; 4], &[true, true, false, false]).unwrap();
        assert_eq!((m.recall, m.f1, m.precision), (0.0, 0.0, 0.0));
        assert!(m.precision_undefined);
    }

    #[test]
    fn mismatched_lengths_error() {
        assert!(compute_metrics(&[true], &[]).is_err());
        assert!(roc_auc(&[0.1], &[]).is_err());
    }

    #[test]
    fn scores_equal_labels_give_unit_auc() {
        let labels = [true, false, false, true, false];
        let scores: Vec<f64> = labels.iter().map(|l| f64::from(u8::from(*l))).collect();
        let roc = roc_auc(&scores, &labels).unwrap();
        assert_eq!(roc.auc, Some(1.0));
        assert_eq!(*roc.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn single_class_is_flagged() {
        assert_eq!(roc_auc(&[0.3, 0.2], &[true, true]).unwrap().auc, None);
    }
}
