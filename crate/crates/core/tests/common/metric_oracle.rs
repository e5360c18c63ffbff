//! Brute-force metrics: materialise the prediction and label vectors, count
//! agreements element by element, and apply the textbook formulas in f64.

use misinfo::eval::{confusion, metrics, Averaging};

pub struct Expected {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn div(n: f64, d: f64) -> f64 {
    if d == 0.0 {
        0.0
    } else {
        n / d
    }
}

/// Per-class precision, recall and F1 computed from the raw vectors.
fn class_scores(preds: &[usize], labels: &[usize], class: usize) -> (f64, f64, f64) {
    let hit = preds.iter().zip(labels).filter(|&(&p, &y)| p == class && y == class).count() as f64;
    let predicted = preds.iter().filter(|&&p| p == class).count() as f64;
    let actual = labels.iter().filter(|&&y| y == class).count() as f64;
    let p = div(hit, predicted);
    let r = div(hit, actual);
    // 2TP / (2TP + FP + FN), algebraically equal to the harmonic mean of P and R
    let f = div(2.0 * hit, predicted + actual);
    (p, r, f)
}

/// Vectors realising a confusion matrix with class 1 positive.
pub fn vectors(tp: usize, tn: usize, fp: usize, fn_: usize) -> (Vec<usize>, Vec<usize>) {
    let mut preds = Vec::new();
    let mut labels = Vec::new();
    for (p, y, n) in [(1, 1, tp), (0, 0, tn), (1, 0, fp), (0, 1, fn_)] {
        preds.extend(std::iter::repeat_n(p, n));
        labels.extend(std::iter::repeat_n(y, n));
    }
    (preds, labels)
}

pub fn expected(preds: &[usize], labels: &[usize], averaging: Averaging) -> Expected {
    let correct = preds.iter().zip(labels).filter(|(p, y)| p == y).count() as f64;
    let accuracy = correct / preds.len() as f64;
    let (p, r, f1) = match averaging {
        Averaging::PositiveClass => class_scores(preds, labels, 1),
        Averaging::Macro => {
            let a = class_scores(preds, labels, 0);
            let b = class_scores(preds, labels, 1);
            ((a.0 + b.0) / 2.0, (a.1 + b.1) / 2.0, (a.2 + b.2) / 2.0)
        }
    };
    Expected {
        accuracy,
        precision: p,
        recall: r,
        f1,
    }
}

pub struct Sweep {
    pub cases: usize,
    pub worst: f64,
}

/// Every matrix with components in `0..=max` (the all-zero matrix excluded,
/// since metrics of nothing are undefined), under both averaging modes.
pub fn exhaustive(max: usize) -> Sweep {
    let mut sweep = Sweep { cases: 0, worst: 0.0 };
    for tp in 0..=max {
        for tn in 0..=max {
            for fp in 0..=max {
                for fn_ in 0..=max {
                    if tp + tn + fp + fn_ == 0 {
                        continue;
                    }
                    let (preds, labels) = vectors(tp, tn, fp, fn_);
                    let cm = confusion(&preds, &labels, 1).unwrap();
                    assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (tp as u64, tn as u64, fp as u64, fn_ as u64));
                    for averaging in [Averaging::PositiveClass, Averaging::Macro] {
                        let got = metrics(&cm, averaging).unwrap();
                        let want = expected(&preds, &labels, averaging);
                        for (g, w) in [
                            (got.accuracy, want.accuracy),
                            (got.precision, want.precision),
                            (got.recall, want.recall),
                            (got.f1, want.f1),
                        ] {
                            sweep.worst = sweep.worst.max((g - w).abs());
                        }
                    }
                    sweep.cases += 1;
                }
            }
        }
    }
    sweep
}
