//! Binary classification metrics for rare-event scoring.
//!
//! Thresholds are inclusive everywhere: a row is predicted positive when
//! `score >= threshold`.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Probability clip bound used only when evaluating log-loss.
pub const LOSS_CLIP: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiftRow {
    pub decile: usize,
    pub n_rows: usize,
    pub n_positives: usize,
    pub cumulative_capture: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LiftTable {
    pub rows: Vec<LiftRow>,
}

fn check_lengths(scores: usize, labels: usize) -> Result<()> {
    if scores != labels {
        return Err(Error::LengthMismatch {
            left: scores,
            right: labels,
        });
    }
    Ok(())
}

fn class_counts(labels: &[u8]) -> (usize, usize) {
    let pos = labels.iter().filter(|&&y| y == 1).count();
    (pos, labels.len() - pos)
}

/// Per-row binary cross-entropy with the standard clip.
pub fn row_log_loss(p: f64, y: u8) -> f64 {
    let p = p.clamp(LOSS_CLIP, 1.0 - LOSS_CLIP);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean binary cross-entropy.
pub fn log_loss(p: &[f64], y: &[u8]) -> Result<f64> {
    check_lengths(p.len(), y.len())?;
    if p.is_empty() {
        return Err(Error::EmptyInput);
    }
    let total: f64 = p.iter().zip(y).map(|(&p, &y)| row_log_loss(p, y)).sum();
    Ok(total / p.len() as f64)
}

/// Area under the ROC curve as the normalised Mann-Whitney statistic, with
/// average ranks for tied scores.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    check_lengths(scores.len(), labels.len())?;
    let (n_pos, n_neg) = class_counts(labels);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1 ..= j share their mean
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        let pos_in_group = order[i..j].iter().filter(|&&r| labels[r] == 1).count();
        rank_sum_pos += avg_rank * pos_in_group as f64;
        i = j;
    }
    let n_pos = n_pos as f64;
    let n_neg = n_neg as f64;
    Ok((rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<Confusion> {
    check_lengths(scores.len(), labels.len())?;
    let mut c = Confusion::default();
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

/// Matthews correlation coefficient; 0 when any marginal is empty.
pub fn mcc(c: &Confusion) -> f64 {
    let (tp, fp, tn, fn_) = (c.tp as f64, c.fp as f64, c.tn as f64, c.fn_ as f64);
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return 0.0;
    }
    (tp * tn - fp * fn_) / denom.sqrt()
}

/// Order two confusion matrices by their MCC. Exact in integer arithmetic
/// whenever the products fit in 128 bits, so equal coefficients compare equal.
pub fn mcc_cmp(a: &Confusion, b: &Confusion) -> Ordering {
    fn parts(c: &Confusion) -> (i128, i128) {
        let (tp, fp, tn, fn_) = (c.tp as i128, c.fp as i128, c.tn as i128, c.fn_ as i128);
        let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
        if den == 0 {
            (0, 1)
        } else {
            (tp * tn - fp * fn_, den)
        }
    }
    let ((na, da), (nb, db)) = (parts(a), parts(b));
    let sign = na.signum().cmp(&nb.signum());
    if sign != Ordering::Equal || na == 0 {
        return sign;
    }
    let lhs = na.checked_mul(na).and_then(|v| v.checked_mul(db));
    let rhs = nb.checked_mul(nb).and_then(|v| v.checked_mul(da));
    match (lhs, rhs) {
        (Some(l), Some(r)) if na > 0 => l.cmp(&r),
        (Some(l), Some(r)) => r.cmp(&l),
        _ => mcc(a).total_cmp(&mcc(b)),
    }
}

/// Cumulative share of positives captured by each score decile, best first.
pub fn decile_lift(scores: &[f64], labels: &[u8]) -> Result<LiftTable> {
    check_lengths(scores.len(), labels.len())?;
    let n = scores.len();
    if n < 10 {
        return Err(Error::TooFewRows(n));
    }
    let total_pos = labels.iter().filter(|&&y| y == 1).count();
    if total_pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ascending original index among ties
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let base = n / 10;
    let extra = n % 10;
    let mut rows = Vec::with_capacity(10);
    let mut start = 0;
    let mut captured = 0;
    for d in 0..10 {
        let size = base + usize::from(d < extra);
        let n_positives = order[start..start + size]
            .iter()
            .filter(|&&i| labels[i] == 1)
            .count();
        captured += n_positives;
        start += size;
        rows.push(LiftRow {
            decile: d + 1,
            n_rows: size,
            n_positives,
            cumulative_capture: captured as f64 / total_pos as f64,
        });
    }
    Ok(LiftTable { rows })
}
