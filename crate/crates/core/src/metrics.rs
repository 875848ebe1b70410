//! Multi-label evaluation. Ratio metrics are micro-averaged: counts are
//! pooled over every (sample, label) cell before dividing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl MicroCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

fn check_shape<A, B>(a: &[Vec<A>], b: &[Vec<B>]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows vs {} rows",
            a.len(),
            b.len()
        )));
    }
    let m = b.first().map_or(0, Vec::len);
    for (i, (ra, rb)) in a.iter().zip(b).enumerate() {
        if ra.len() != m || rb.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "row {i} has {} and {} columns, expected {m}",
                ra.len(),
                rb.len()
            )));
        }
    }
    Ok(m)
}

pub fn micro_counts(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<MicroCounts> {
    check_shape(pred, truth)?;
    let mut c = MicroCounts::default();
    for (p, t) in pred.iter().flatten().zip(truth.iter().flatten()) {
        match (p, t) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Fraction of rows predicted exactly.
pub fn subset_accuracy(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    check_shape(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let exact = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(exact as f64 / pred.len() as f64)
}

/// Fraction of disagreeing cells.
pub fn hamming_loss(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    let c = micro_counts(pred, truth)?;
    if c.total() == 0 {
        return Ok(0.0);
    }
    Ok((c.fp + c.fn_) as f64 / c.total() as f64)
}

/// Mean per-row intersection over union; a row where both sets are empty scores 1.
pub fn jaccard(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    check_shape(pred, truth)?;
    if pred.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| {
            let inter = p.iter().zip(t).filter(|(a, b)| **a && **b).count();
            let union = p.iter().zip(t).filter(|(a, b)| **a || **b).count();
            if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            }
        })
        .sum();
    Ok(total / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

pub fn prf_from_counts(c: &MicroCounts) -> Prf {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    Prf {
        precision,
        recall,
        f1: f1_score(precision, recall),
    }
}

pub fn micro_prf(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<(Prf, MicroCounts)> {
    let c = micro_counts(pred, truth)?;
    Ok((prf_from_counts(&c), c))
}

/// Unweighted mean of per-label precision, recall and F1.
pub fn macro_prf(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<Prf> {
    let m = check_shape(pred, truth)?;
    if m == 0 {
        return Ok(Prf { precision: 0.0, recall: 0.0, f1: 0.0 });
    }
    let mut sum = (0.0, 0.0, 0.0);
    for j in 0..m {
        let col = |x: &[Vec<bool>]| x.iter().map(|r| vec![r[j]]).collect::<Vec<_>>();
        let c = micro_counts(&col(pred), &col(truth))?;
        let prf = prf_from_counts(&c);
        sum.0 += prf.precision;
        sum.1 += prf.recall;
        sum.2 += prf.f1;
    }
    let k = m as f64;
    Ok(Prf {
        precision: sum.0 / k,
        recall: sum.1 / k,
        f1: sum.2 / k,
    })
}

pub fn mcc_from_counts(c: &MicroCounts) -> f64 {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if den == 0.0 {
        0.0
    } else {
        (tp * tn - fp * fn_) / den.sqrt()
    }
}

/// Matthews correlation over flattened cells.
pub fn mcc(pred: &[Vec<bool>], truth: &[Vec<bool>]) -> Result<f64> {
    Ok(mcc_from_counts(&micro_counts(pred, truth)?))
}

/// Micro ROC AUC as the Mann–Whitney statistic over flattened cells; ties count one half.
pub fn auc(scores: &[Vec<f64>], truth: &[Vec<bool>]) -> Result<f64> {
    check_shape(scores, truth)?;
    let mut cells: Vec<(f64, bool)> = scores
        .iter()
        .flatten()
        .copied()
        .zip(truth.iter().flatten().copied())
        .collect();
    if cells.iter().any(|c| c.0.is_nan()) {
        return Err(Error::ShapeMismatch("NaN score".into()));
    }
    let n_pos = cells.iter().filter(|c| c.1).count() as f64;
    let n_neg = cells.len() as f64 - n_pos;
    if n_pos == 0.0 || n_neg == 0.0 {
        return Err(Error::DegenerateAuc);
    }
    cells.sort_by(|a, b| a.0.total_cmp(&b.0));
    // Count (positive, negative) pairs ordered correctly, tie groups contributing 1/2.
    let mut wins = 0.0;
    let mut neg_below = 0.0;
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        while j < cells.len() && cells[j].0 == cells[i].0 {
            j += 1;
        }
        let group = &cells[i..j];
        let pos = group.iter().filter(|c| c.1).count() as f64;
        let neg = group.len() as f64 - pos;
        wins += pos * neg_below + 0.5 * pos * neg;
        neg_below += neg;
        i = j;
    }
    Ok(wins / (n_pos * n_neg))
}

/// Thresholds one score row; when nothing clears the threshold the single
/// highest-scoring label (lowest index on ties) is switched on.
pub fn threshold_with_fallback(scores: &[f64], threshold: f64) -> Vec<bool> {
    let mut row: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    if !row.iter().any(|&b| b) {
        if let Some(best) = scores
            .iter()
            .enumerate()
            .fold(None, |best: Option<(usize, f64)>, (i, &s)| match best {
                Some((_, b)) if b >= s => best,
                _ => Some((i, s)),
            })
        {
            row[best.0] = true;
        }
    }
    row
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Micro,
    Macro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub subset_accuracy: f64,
    pub hamming_loss: f64,
    pub jaccard: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub mcc: f64,
    pub auc: f64,
    pub sample_count: usize,
    pub label_count: usize,
}

impl EvalReport {
    pub const COLUMNS: [&'static str; 8] = [
        "Accuracy",
        "Hamming Loss",
        "Jaccard",
        "F1",
        "Precision",
        "Recall",
        "MCC",
        "AUC",
    ];

    pub fn values(&self) -> [f64; 8] {
        [
            self.subset_accuracy,
            self.hamming_loss,
            self.jaccard,
            self.f1,
            self.precision,
            self.recall,
            self.mcc,
            self.auc,
        ]
    }

    /// Markdown table with a header and one row of percentages.
    pub fn table(&self) -> String {
        let header = format!("| {} |", Self::COLUMNS.join(" | "));
        let rule = format!("|{}", "---|".repeat(Self::COLUMNS.len()));
        let row: Vec<String> = self.values().iter().map(|v| format!("{:.2}", v * 100.0)).collect();
        format!("{header}\n{rule}\n| {} |\n", row.join(" | "))
    }
}

pub fn evaluate(scores: &[Vec<f64>], threshold: f64, truth: &[Vec<bool>]) -> Result<EvalReport> {
    evaluate_with(scores, threshold, truth, Averaging::Micro)
}

pub fn evaluate_with(
    scores: &[Vec<f64>],
    threshold: f64,
    truth: &[Vec<bool>],
    averaging: Averaging,
) -> Result<EvalReport> {
    let m = check_shape(scores, truth)?;
    let pred: Vec<Vec<bool>> = scores
        .iter()
        .map(|row| threshold_with_fallback(row, threshold))
        .collect();
    let (micro, counts) = micro_prf(&pred, truth)?;
    let prf = match averaging {
        Averaging::Micro => micro,
        Averaging::Macro => macro_prf(&pred, truth)?,
    };
    Ok(EvalReport {
        subset_accuracy: subset_accuracy(&pred, truth)?,
        hamming_loss: hamming_loss(&pred, truth)?,
        jaccard: jaccard(&pred, truth)?,
        f1: prf.f1,
        precision: prf.precision,
        recall: prf.recall,
        mcc: mcc_from_counts(&counts),
        auc: auc(scores, truth)?,
        sample_count: scores.len(),
        label_count: m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(rows: &[&[u8]]) -> Vec<Vec<bool>> {
        rows.iter().map(|r| r.iter().map(|&x| x == 1).collect()).collect()
    }

    #[test]
    fn subset_accuracy_examples() {
        let t = b(&[&[1, 0, 1], &[0, 1, 0]]);
        assert_eq!(subset_accuracy(&t, &t).unwrap(), 1.0);
        let p = b(&[&[1, 0, 1], &[0, 1, 1]]);
        assert_eq!(subset_accuracy(&p, &t).unwrap(), 0.5);
        let flipped: Vec<Vec<bool>> = t.iter().map(|r| r.iter().map(|x| !x).collect()).collect();
        assert_eq!(subset_accuracy(&flipped, &t).unwrap(), 0.0);
        assert!(subset_accuracy(&t[..1], &t).is_err());
    }

    #[test]
    fn hamming_and_jaccard_examples() {
        let t = b(&[&[1, 0, 1, 0]]);
        let p = b(&[&[1, 1, 0, 0]]);
        assert_eq!(hamming_loss(&p, &t).unwrap(), 0.5);
        assert_eq!(hamming_loss(&t, &t).unwrap(), 0.0);

        let j = jaccard(&b(&[&[1, 1, 0]]), &b(&[&[0, 1, 1]])).unwrap();
        assert!((j - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&t, &t).unwrap(), 1.0);
        assert_eq!(jaccard(&b(&[&[0, 0]]), &b(&[&[0, 0]])).unwrap(), 1.0);
    }

    #[test]
    fn prf_examples() {
        let t = b(&[&[1, 0], &[0, 1]]);
        let (prf, _) = micro_prf(&t, &t).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
        let c = MicroCounts { tp: 1, fp: 1, fn_: 1, tn: 0 };
        let prf = prf_from_counts(&c);
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.5, 0.5, 0.5));
        let empty = prf_from_counts(&MicroCounts::default());
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn published_precision_recall_imply_published_f1() {
        let f1 = f1_score(0.8683, 0.8530);
        assert!((f1 - 0.86058).abs() < 5e-6, "{f1}");
        assert!((f1 * 100.0 - 86.06).abs() < 0.005);
    }

    #[test]
    fn mcc_examples() {
        let t = b(&[&[1, 0], &[0, 1]]);
        assert_eq!(mcc(&t, &t).unwrap(), 1.0);
        let flipped: Vec<Vec<bool>> = t.iter().map(|r| r.iter().map(|x| !x).collect()).collect();
        assert_eq!(mcc(&flipped, &t).unwrap(), -1.0);
        assert_eq!(mcc(&b(&[&[1, 0, 1, 0]]), &b(&[&[1, 1, 0, 0]])).unwrap(), 0.0);
        assert_eq!(mcc(&b(&[&[1, 1]]), &b(&[&[1, 1]])).unwrap(), 0.0);
    }

    #[test]
    fn auc_examples() {
        let truth = b(&[&[1, 0], &[1, 0]]);
        assert_eq!(auc(&[vec![0.9, 0.1], vec![0.8, 0.2]], &truth).unwrap(), 1.0);
        assert_eq!(auc(&[vec![0.5, 0.5], vec![0.5, 0.5]], &truth).unwrap(), 0.5);
        let a = auc(&[vec![0.9, 0.6], vec![0.4, 0.1]], &truth).unwrap();
        assert_eq!(a, 0.75);
        assert!(matches!(
            auc(&[vec![0.9, 0.6]], &b(&[&[1, 1]])),
            Err(Error::DegenerateAuc)
        ));
    }

    #[test]
    fn fallback_picks_argmax() {
        assert_eq!(threshold_with_fallback(&[0.9, 0.1, 0.6], 0.5), vec![true, false, true]);
        assert_eq!(threshold_with_fallback(&[0.2, 0.4, 0.3], 0.5), vec![false, true, false]);
        assert_eq!(threshold_with_fallback(&[0.4, 0.4], 0.5), vec![true, false]);
        assert_eq!(threshold_with_fallback(&[0.5, 0.5], 0.5), vec![true, false]);
    }

    #[test]
    fn evaluate_perfect_scores() {
        let truth = b(&[&[1, 0, 1], &[0, 1, 0], &[1, 1, 0]]);
        let scores: Vec<Vec<f64>> = truth
            .iter()
            .map(|r| r.iter().map(|&x| if x { 0.95 } else { 0.05 }).collect())
            .collect();
        let r = evaluate(&scores, 0.5, &truth).unwrap();
        assert_eq!(r.hamming_loss, 0.0);
        for v in [r.subset_accuracy, r.jaccard, r.f1, r.precision, r.recall, r.mcc, r.auc] {
            assert_eq!(v, 1.0);
        }
        assert_eq!((r.sample_count, r.label_count), (3, 3));
        let json = serde_json::to_string(&r).unwrap();
        assert_eq!(serde_json::from_str::<EvalReport>(&json).unwrap(), r);
        assert!(r.table().starts_with("| Accuracy | Hamming Loss | Jaccard | F1 | Precision | Recall | MCC | AUC |"));
    }

    #[test]
    fn macro_averaging_differs_from_micro_on_skewed_labels() {
        let truth = b(&[&[1, 0], &[1, 0], &[1, 0], &[0, 1]]);
        let pred = b(&[&[1, 0], &[1, 0], &[1, 0], &[1, 0]]);
        let (micro, _) = micro_prf(&pred, &truth).unwrap();
        let mac = macro_prf(&pred, &truth).unwrap();
        assert!((micro.f1 - 0.75).abs() < 1e-12);
        assert!((mac.f1 - (2.0 * 0.75 / 1.75) / 2.0).abs() < 1e-12);
    }
}
