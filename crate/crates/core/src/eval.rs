//! Confusion matrices and accuracy / precision / recall / F1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
    /// Class counted as positive (0 or 1).
    pub positive: usize,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Same predictions, other class positive.
    pub fn swapped(&self) -> Self {
        Self {
            tp: self.tn,
            tn: self.tp,
            fp: self.fn_,
            fn_: self.fp,
            positive: 1 - self.positive,
        }
    }
}

pub fn confusion(preds: &[usize], labels: &[usize], positive: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::invalid(
            "confusion",
            format!("{} predictions for {} labels", preds.len(), labels.len()),
        ));
    }
    if positive > 1 {
        return Err(Error::invalid("confusion", format!("positive class {positive} is not 0 or 1")));
    }
    let mut cm = ConfusionMatrix {
        positive,
        ..Default::default()
    };
    for (i, (&p, &y)) in preds.iter().zip(labels).enumerate() {
        if p > 1 || y > 1 {
            return Err(Error::LabelOutOfRange {
                index: i,
                label: p.max(y),
                classes: 2,
            });
        }
        match (p == positive, y == positive) {
            (true, true) => cm.tp += 1,
            (false, false) => cm.tn += 1,
            (true, false) => cm.fp += 1,
            (false, true) => cm.fn_ += 1,
        }
    }
    Ok(cm)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Averaging {
    PositiveClass,
    #[default]
    Macro,
}

impl Averaging {
    pub fn name(self) -> &'static str {
        match self {
            Averaging::PositiveClass => "positive-class",
            Averaging::Macro => "macro",
        }
    }
}

impl fmt::Display for Averaging {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "macro" => Ok(Averaging::Macro),
            "positive-class" | "positive" => Ok(Averaging::PositiveClass),
            _ => Err(Error::Config(format!("unknown averaging `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub averaging: Averaging,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// (precision, recall, f1) treating `cm.positive` as positive.
fn positive_prf(cm: &ConfusionMatrix) -> (f64, f64, f64) {
    let p = ratio(cm.tp, cm.tp + cm.fp);
    let r = ratio(cm.tp, cm.tp + cm.fn_);
    (p, r, harmonic(p, r))
}

/// Zero denominators make the affected component 0. Errors on an empty matrix.
pub fn metrics(cm: &ConfusionMatrix, averaging: Averaging) -> Result<Metrics> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::invalid("metrics", "confusion matrix is empty"));
    }
    let accuracy = (cm.tp + cm.tn) as f64 / total as f64;
    let (precision, recall, f1) = match averaging {
        Averaging::PositiveClass => positive_prf(cm),
        Averaging::Macro => {
            let (p1, r1, f1) = positive_prf(cm);
            let (p0, r0, f0) = positive_prf(&cm.swapped());
            ((p0 + p1) / 2.0, (r0 + r1) / 2.0, (f0 + f1) / 2.0)
        }
    };
    Ok(Metrics {
        accuracy,
        precision,
        recall,
        f1,
        averaging,
    })
}

/// Confusion (class 1 positive) then metrics.
pub fn evaluate(preds: &[usize], labels: &[usize], averaging: Averaging) -> Result<Metrics> {
    metrics(&confusion(preds, labels, 1)?, averaging)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cm(tp: u64, tn: u64, fp: u64, fn_: u64) -> ConfusionMatrix {
        ConfusionMatrix {
            tp,
            tn,
            fp,
            fn_,
            positive: 1,
        }
    }

    #[test]
    fn counts_by_definition() {
        assert_eq!(confusion(&[1, 1, 0], &[1, 1, 0], 1).unwrap(), cm(2, 1, 0, 0));
        assert_eq!(confusion(&[1, 1], &[1, 0], 1).unwrap(), cm(1, 0, 1, 0));
        assert_eq!(confusion(&[], &[], 1).unwrap(), cm(0, 0, 0, 0));
        assert!(confusion(&[1], &[], 1).is_err());
        assert!(confusion(&[2], &[1], 1).is_err());
    }

    #[test]
    fn worked_example() {
        let m = metrics(&cm(3, 4, 1, 2), Averaging::PositiveClass).unwrap();
        assert!((m.accuracy - 0.7).abs() < 1e-12);
        assert!((m.precision - 0.75).abs() < 1e-12);
        assert!((m.recall - 0.6).abs() < 1e-12);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
        let macro_ = metrics(&cm(3, 4, 1, 2), Averaging::Macro).unwrap();
        assert!((macro_.precision - (0.75 + 4.0 / 6.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_matrices() {
        assert!(metrics(&cm(0, 0, 0, 0), Averaging::Macro).is_err());
        let m = metrics(&cm(0, 5, 0, 0), Averaging::PositiveClass).unwrap();
        assert_eq!((m.accuracy, m.precision, m.recall, m.f1), (1.0, 0.0, 0.0, 0.0));
        let perfect = metrics(&cm(4, 6, 0, 0), Averaging::Macro).unwrap();
        assert_eq!((perfect.precision, perfect.recall, perfect.f1), (1.0, 1.0, 1.0));
    }
}
