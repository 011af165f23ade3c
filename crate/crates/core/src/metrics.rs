//! Image-level evaluation: rank AUROC, max-F1 threshold, precision/recall/F1.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricError {
    #[error("AUROC undefined: labels contain a single class")]
    SingleClass,
    #[error("{scores} scores but {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("label {0} is not 0 or 1")]
    BadLabel(u8),
    #[error("non-finite score at index {0}")]
    NonFinite(usize),
}

pub type Result<T> = std::result::Result<T, MetricError>;

pub const THRESHOLD_POLICY: &str = "max-f1-midpoint";

fn validate(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    let mut pos = 0;
    for &l in labels {
        match l {
            0 => {}
            1 => pos += 1,
            other => return Err(MetricError::BadLabel(other)),
        }
    }
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok((pos, neg))
}

/// Mann-Whitney AUROC with midranks for ties.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut pos_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tie group i..=j shares their mean.
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] == 1 {
                pos_rank_sum += midrank;
            }
        }
        i = j + 1;
    }
    let u = pos_rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Predicts anomalous when `score > tau`; empty denominators give 0.
pub fn precision_recall_f1(scores: &[f64], labels: &[u8], tau: f64) -> Result<Prf> {
    validate(scores, labels)?;
    let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s > tau, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    Ok(prf_from_counts(tp, fp, fn_))
}

fn prf_from_counts(tp: usize, fp: usize, fn_: usize) -> Prf {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Prf { precision, recall, f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdChoice {
    pub tau: f64,
    pub prf: Prf,
}

/// Threshold maximizing F1 over the midpoints between adjacent distinct
/// scores; ties go to the larger threshold. When every score is equal there
/// is no midpoint: `tau` is that score and the reported metrics are those of
/// flagging every sample.
pub fn select_threshold(scores: &[f64], labels: &[u8]) -> Result<ThresholdChoice> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    let mut sorted: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Sweep upward: everything strictly above the current midpoint is
    // predicted anomalous.
    let mut tp = n_pos;
    let mut fp = n_neg;
    let mut best: Option<ThresholdChoice> = None;
    let mut i = 0;
    while i < sorted.len() {
        let v = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == v {
            if sorted[i].1 == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        if i == sorted.len() {
            break;
        }
        let tau = 0.5 * (v + sorted[i].0);
        let prf = prf_from_counts(tp, fp, n_pos - tp);
        if best.is_none_or(|b| prf.f1 >= b.prf.f1) {
            best = Some(ThresholdChoice { tau, prf });
        }
    }
    Ok(best.unwrap_or_else(|| ThresholdChoice {
        tau: sorted[0].0,
        prf: prf_from_counts(n_pos, n_neg, 0),
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub i_auroc: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
    pub threshold_policy: String,
    pub n_pos: usize,
    pub n_neg: usize,
}

pub fn evaluate(scores: &[f64], labels: &[u8]) -> Result<EvalResult> {
    let (n_pos, n_neg) = validate(scores, labels)?;
    let i_auroc = auroc(scores, labels)?;
    let choice = select_threshold(scores, labels)?;
    Ok(EvalResult {
        i_auroc,
        precision: choice.prf.precision,
        recall: choice.prf.recall,
        f1: choice.prf.f1,
        threshold: choice.tau,
        threshold_policy: THRESHOLD_POLICY.to_string(),
        n_pos,
        n_neg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.9], &[0, 0, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.9, 0.2, 0.1], &[0, 0, 1]).unwrap(), 0.0);
        assert_eq!(auroc(&[0.5, 0.5], &[0, 1]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.2], &[1, 1]).unwrap_err(), MetricError::SingleClass);
        assert_eq!(
            auroc(&[0.1], &[1, 0]).unwrap_err(),
            MetricError::LengthMismatch { scores: 1, labels: 2 }
        );
        assert_eq!(auroc(&[0.1, 0.3], &[2, 0]).unwrap_err(), MetricError::BadLabel(2));
    }

    #[test]
    fn prf_examples() {
        let s = [0.1, 0.4, 0.6, 0.9];
        let l = [0, 0, 1, 1];
        let p = precision_recall_f1(&s, &l, 0.5).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        let p = precision_recall_f1(&s, &l, 1.0).unwrap();
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        let p = precision_recall_f1(&s, &l, 0.0).unwrap();
        assert_eq!((p.precision, p.recall), (0.5, 1.0));
    }

    #[test]
    fn threshold_separated() {
        let c = select_threshold(&[0.1, 0.4, 0.6, 0.9], &[0, 0, 1, 1]).unwrap();
        assert_eq!(c.tau, 0.5);
        assert_eq!(c.prf.f1, 1.0);
    }

    #[test]
    fn threshold_degenerate() {
        let c = select_threshold(&[0.3, 0.3, 0.3], &[0, 1, 1]).unwrap();
        assert_eq!(c.tau, 0.3);
        assert_eq!(c.prf.precision, 2.0 / 3.0);
        assert_eq!(c.prf.recall, 1.0);
    }

    #[test]
    fn threshold_tie_prefers_larger() {
        // Candidates 1.5 and 4.5 both give F1 = 2/3; the larger one wins.
        let scores = [1.0, 2.0, 3.0, 4.0, 5.0];
        let labels = [0, 1, 0, 0, 1];
        let f_low = precision_recall_f1(&scores, &labels, 1.5).unwrap().f1;
        let f_high = precision_recall_f1(&scores, &labels, 4.5).unwrap().f1;
        assert_eq!(f_low, f_high);
        assert_eq!(select_threshold(&scores, &labels).unwrap().tau, 4.5);
        let reversed = [5.0, 4.0, 3.0, 2.0, 1.0];
        let rl = [1, 0, 0, 1, 0];
        assert_eq!(select_threshold(&reversed, &rl).unwrap().tau, 4.5);
    }

    #[test]
    fn selected_f1_matches_direct_count() {
        let scores = [0.2, 0.5, 0.5, 0.7, 0.1, 0.9, 0.3];
        let labels = [0, 1, 0, 1, 0, 1, 1];
        let c = select_threshold(&scores, &labels).unwrap();
        let direct = precision_recall_f1(&scores, &labels, c.tau).unwrap();
        assert_eq!(c.prf, direct);
    }
}
