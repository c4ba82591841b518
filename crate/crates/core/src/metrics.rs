//! Confusion counts and the rates derived from them.
//!
//! Every ratio with a zero denominator is defined as 0.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("predictions ({predictions}) and labels ({labels}) differ in length")]
    LengthMismatch { predictions: usize, labels: usize },
    #[error("nothing to evaluate")]
    Empty,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Confusion { tp, fp, fn_, tn }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// The same counts seen from the negative class.
    pub fn flipped(&self) -> Confusion {
        Confusion {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
        }
    }
}

impl std::ops::Add for Confusion {
    type Output = Confusion;
    fn add(self, o: Confusion) -> Confusion {
        Confusion {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn div(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Counts with probabilities thresholded at `decision_threshold`
/// (`p >= threshold` is positive).
pub fn confusion(
    probabilities: &[f64],
    labels: &[u8],
    decision_threshold: f64,
) -> Result<Confusion, MetricsError> {
    if probabilities.len() != labels.len() {
        return Err(MetricsError::LengthMismatch {
            predictions: probabilities.len(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut c = Confusion::default();
    for (&p, &y) in probabilities.iter().zip(labels) {
        match (p >= decision_threshold, y == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn prf1(c: &Confusion) -> Prf1 {
    let precision = div(c.tp, c.tp + c.fp);
    let recall = div(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf1 {
        precision,
        recall,
        f1,
    }
}

/// Micro F1 over pooled counts and macro F1 as the mean of per-class F1.
pub fn micro_macro_f1(per_class: &[Confusion]) -> Result<(f64, f64), MetricsError> {
    if per_class.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pooled = per_class.iter().copied().fold(Confusion::default(), |a, b| a + b);
    let micro = prf1(&pooled).f1;
    let macro_ = per_class.iter().map(|c| prf1(c).f1).sum::<f64>() / per_class.len() as f64;
    Ok((micro, macro_))
}

pub fn tpr_tnr(c: &Confusion) -> (f64, f64) {
    (div(c.tp, c.tp + c.fn_), div(c.tn, c.tn + c.fp))
}

/// Evaluation of one one-vs-rest model on its test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodeMetrics {
    pub code: String,
    pub model: String,
    pub confusion: Confusion,
}

impl CodeMetrics {
    /// Micro/macro F1 over the model's two classes.
    pub fn class_averaged(&self) -> (f64, f64) {
        micro_macro_f1(&[self.confusion, self.confusion.flipped()]).expect("two classes")
    }
}

/// Table with one row per (code, model), an average row per model, and
/// a pooled row over positive classes.
pub fn metrics_table(rows: &[CodeMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:>8} {:>8} {:>8} {:>6} {:>6} {:>6}",
        "code", "model", "micro_f1", "macro_f1", "f1", "tpr", "tnr", "n"
    );
    for r in rows {
        let (micro, macro_) = r.class_averaged();
        let (tpr, tnr) = tpr_tnr(&r.confusion);
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>8.4} {:>8.4} {:>8.4} {:>6.2} {:>6.2} {:>6}",
            r.code,
            r.model,
            micro,
            macro_,
            prf1(&r.confusion).f1,
            tpr,
            tnr,
            r.confusion.total()
        );
    }
    let mut models: Vec<&str> = rows.iter().map(|r| r.model.as_str()).collect();
    models.sort_unstable();
    models.dedup();
    for model in models {
        let sel: Vec<&CodeMetrics> = rows.iter().filter(|r| r.model == model).collect();
        let n = sel.len() as f64;
        let (micro, macro_) = sel.iter().fold((0.0, 0.0), |(a, b), r| {
            let (m, mm) = r.class_averaged();
            (a + m, b + mm)
        });
        let positives: Vec<Confusion> = sel.iter().map(|r| r.confusion).collect();
        let (pooled_micro, pooled_macro) = micro_macro_f1(&positives).unwrap_or((0.0, 0.0));
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>8.4} {:>8.4}",
            "average", model, micro / n, macro_ / n
        );
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>8.4} {:>8.4}",
            "pooled", model, pooled_micro, pooled_macro
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_by_enumeration() {
        let c = confusion(&[1.0, 1.0, 0.0], &[1, 0, 0], 0.5).unwrap();
        assert_eq!(c, Confusion::new(1, 1, 0, 1));
        let c = confusion(&[0.9, 0.1], &[1, 0], 0.5).unwrap();
        assert_eq!((c.fp, c.fn_), (0, 0));
        assert_eq!(confusion(&[], &[], 0.5), Err(MetricsError::Empty));
        assert!(matches!(
            confusion(&[0.1], &[1, 0], 0.5),
            Err(MetricsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = confusion(&[0.5], &[1], 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn prf1_values() {
        let m = prf1(&Confusion::new(1, 1, 0, 0));
        assert_eq!(m.precision, 0.5);
        assert_eq!(m.recall, 1.0);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let m = prf1(&Confusion::new(0, 0, 3, 0));
        assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
        let m = prf1(&Confusion::new(5, 0, 0, 0));
        assert_eq!((m.precision, m.recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rates() {
        assert_eq!(tpr_tnr(&Confusion::new(3, 0, 1, 0)).0, 0.75);
        assert_eq!(tpr_tnr(&Confusion::new(3, 0, 1, 0)).1, 0.0);
        assert_eq!(tpr_tnr(&Confusion::new(4, 0, 0, 6)), (1.0, 1.0));
    }

    #[test]
    fn micro_macro() {
        let c = Confusion::new(2, 1, 1, 5);
        let (mi, ma) = micro_macro_f1(&[c, c]).unwrap();
        assert!((mi - ma).abs() < 1e-15);
        let (mi, ma) = micro_macro_f1(&[c]).unwrap();
        assert_eq!(mi, prf1(&c).f1);
        assert_eq!(ma, prf1(&c).f1);
        assert_eq!(micro_macro_f1(&[]), Err(MetricsError::Empty));
    }

    #[test]
    fn flipped_swaps_roles() {
        let c = Confusion::new(1, 2, 3, 4);
        assert_eq!(c.flipped(), Confusion::new(4, 3, 2, 1));
        assert_eq!(c.flipped().flipped(), c);
    }

    #[test]
    fn table_has_average_rows() {
        let rows = vec![
            CodeMetrics { code: "2859".into(), model: "bigru_attn".into(), confusion: Confusion::new(8, 2, 1, 9) },
            CodeMetrics { code: "2875".into(), model: "bigru_attn".into(), confusion: Confusion::new(5, 0, 0, 5) },
        ];
        let t = metrics_table(&rows);
        assert!(t.lines().next().unwrap().contains("micro_f1"));
        assert!(t.contains("average      bigru_attn"));
        assert!(t.contains("pooled       bigru_attn"));
    }
}
