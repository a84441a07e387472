//! Threshold metrics and rank-based AUC.

use serde::{Deserialize, Serialize};

use crate::cohort::Label;

/// Mann-Whitney AUC: the probability that a random LosNec record scores
/// above a random Healthy one, ties counted as one half. `None` when either
/// class is absent.
pub fn auc(scores: &[f64], labels: &[Label]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|l| l.is_positive()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // ranks are 1-based; tied groups share the average rank
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        let pos_in_group = order[i..=j].iter().filter(|&&k| labels[k].is_positive()).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos as f64 * n_neg as f64))
}

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Classification at a threshold; a score equal to the threshold is LosNec.
pub fn classify(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::LosNec
    } else {
        Label::Healthy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub threshold: f64,
    pub accuracy: f64,
    /// `None` without LosNec records.
    pub sensitivity: Option<f64>,
    /// `None` without Healthy records.
    pub specificity: Option<f64>,
    /// `None` when the test set holds a single class.
    pub auc: Option<f64>,
    pub confusion: Confusion,
}

pub fn report(scores: &[f64], labels: &[Label], threshold: f64) -> EvalReport {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&s, &l) in scores.iter().zip(labels) {
        match (classify(s, threshold), l) {
            (Label::LosNec, Label::LosNec) => c.tp += 1,
            (Label::LosNec, Label::Healthy) => c.fp += 1,
            (Label::Healthy, Label::Healthy) => c.tn += 1,
            (Label::Healthy, Label::LosNec) => c.fn_ += 1,
        }
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { None } else { Some(a as f64 / (a + b) as f64) };
    EvalReport {
        n: scores.len(),
        threshold,
        accuracy: (c.tp + c.tn) as f64 / c.total().max(1) as f64,
        sensitivity: ratio(c.tp, c.fn_),
        specificity: ratio(c.tn, c.fp),
        auc: auc(scores, labels),
        confusion: c,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Label::*;

    #[test]
    fn four_score_example() {
        let scores = [0.9, 0.6, 0.7, 0.2];
        let labels = [LosNec, LosNec, Healthy, Healthy];
        assert_eq!(auc(&scores, &labels), Some(0.75));
    }

    #[test]
    fn ties_get_half_credit() {
        assert_eq!(auc(&[0.5, 0.5], &[LosNec, Healthy]), Some(0.5));
        assert_eq!(auc(&[0.5, 0.5, 0.1], &[LosNec, Healthy, Healthy]), Some(0.75));
    }

    #[test]
    fn perfect_separation() {
        let r = report(&[0.9, 0.8, 0.1, 0.3], &[LosNec, LosNec, Healthy, Healthy], 0.5);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.sensitivity, Some(1.0));
        assert_eq!(r.specificity, Some(1.0));
        assert_eq!(r.auc, Some(1.0));
        assert_eq!(r.confusion.total(), 4);
    }

    #[test]
    fn single_class_has_no_auc() {
        let r = report(&[0.9, 0.2], &[Healthy, Healthy], 0.5);
        assert_eq!(r.auc, None);
        assert_eq!(r.sensitivity, None);
        assert_eq!(r.specificity, Some(0.5));
        assert_eq!(r.accuracy, 0.5);
    }

    #[test]
    fn threshold_tie_is_positive() {
        let r = report(&[0.5], &[LosNec], 0.5);
        assert_eq!(r.confusion.tp, 1);
    }
}
