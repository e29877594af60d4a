use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub recall: f64,
    pub precision: f64,
}

/// Cumulative confusion counts when predicting positive for `score >= threshold`,
/// one entry per distinct score in descending order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cutoff {
    pub threshold: f64,
    pub tp: u64,
    pub fp: u64,
}

fn check(scores: &[f64], labels: &[u8]) -> Result<(u64, u64)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::UndefinedCurve(format!("score {} is not a number", s)));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::UndefinedCurve(format!("label {} is not binary", l)));
    }
    let pos = labels.iter().filter(|l| **l == 1).count() as u64;
    Ok((pos, labels.len() as u64 - pos))
}

/// Distinct-score cutoffs with tied scores grouped.
pub fn cutoffs(scores: &[f64], labels: &[u8]) -> Result<Vec<Cutoff>> {
    check(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out: Vec<Cutoff> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &i) in order.iter().enumerate() {
        if labels[i] == 1 {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(k + 1).is_none_or(|&j| scores[j] != scores[i]);
        if last_of_group {
            out.push(Cutoff { threshold: scores[i], tp, fp });
        }
    }
    Ok(out)
}

/// Exact ROC curve: the `+inf` threshold at (0, 0), then one point per
/// distinct score, ending at (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<RocPoint>> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedCurve(format!("ROC needs both classes, found {} positive and {} negative", pos, neg)));
    }
    let mut pts = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    pts.extend(cutoffs(scores, labels)?.into_iter().map(|c| RocPoint { threshold: c.threshold, fpr: c.fp as f64 / neg as f64, tpr: c.tp as f64 / pos as f64 }));
    Ok(pts)
}

/// Trapezoidal area under an ROC curve.
pub fn auc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Trapezoidal ROC area computed on integer counts, avoiding any rounding
/// before the final division.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedCurve(format!("AUC needs both classes, found {} positive and {} negative", pos, neg)));
    }
    let (mut area, mut prev) = (0u128, Cutoff { threshold: f64::INFINITY, tp: 0, fp: 0 });
    for c in cutoffs(scores, labels)? {
        area += (c.fp - prev.fp) as u128 * (c.tp + prev.tp) as u128;
        prev = c;
    }
    Ok(area as f64 / (2.0 * pos as f64 * neg as f64))
}

/// Precision/recall at every distinct-score threshold. Precision with no
/// predicted positives would be 1, which never arises at these thresholds.
pub fn pr_curve(scores: &[f64], labels: &[u8]) -> Result<Vec<PrPoint>> {
    let (pos, _) = check(scores, labels)?;
    if pos == 0 {
        return Err(Error::UndefinedCurve("PR curve needs at least one positive label".into()));
    }
    Ok(cutoffs(scores, labels)?
        .into_iter()
        .map(|c| PrPoint {
            threshold: c.threshold,
            recall: c.tp as f64 / pos as f64,
            precision: if c.tp + c.fp == 0 { 1.0 } else { c.tp as f64 / (c.tp + c.fp) as f64 },
        })
        .collect())
}

/// Area under the PR curve as the recall-weighted sum of precisions
/// (average precision), starting from recall 0.
pub fn pr_area(points: &[PrPoint]) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in points {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xy(p: &[RocPoint]) -> Vec<(f64, f64)> {
        p.iter().map(|p| (p.fpr, p.tpr)).collect()
    }

    #[test]
    fn perfect_classifier() {
        let labels = [1, 0, 1, 0];
        let scores = [1.0, 0.0, 1.0, 0.0];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!(xy(&roc), vec![(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        assert_eq!(auc(&roc), 1.0);
        let pr = pr_curve(&scores, &labels).unwrap();
        assert_eq!((pr[0].recall, pr[0].precision), (1.0, 1.0));
    }

    #[test]
    fn identical_scores() {
        let labels = [1, 0, 0, 0];
        let scores = [0.3; 4];
        let roc = roc_curve(&scores, &labels).unwrap();
        assert_eq!(xy(&roc), vec![(0.0, 0.0), (1.0, 1.0)]);
        assert_eq!(auc(&roc), 0.5);
        assert_eq!(roc_auc(&scores, &labels).unwrap(), 0.5);
        let pr = pr_curve(&scores, &labels).unwrap();
        assert_eq!(pr.len(), 1);
        assert_eq!((pr[0].recall, pr[0].precision), (1.0, 0.25));
        assert_eq!(pr_area(&pr), 0.25);
    }

    #[test]
    fn single_class_is_undefined() {
        assert!(matches!(roc_curve(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedCurve(_))));
        assert!(matches!(pr_curve(&[0.1, 0.2], &[0, 0]), Err(Error::UndefinedCurve(_))));
        assert!(pr_curve(&[0.1, 0.2], &[1, 1]).is_ok());
    }
}
